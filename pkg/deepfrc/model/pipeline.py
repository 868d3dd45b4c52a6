"""The DeepFRC model: warp -> align -> SRVF -> project -> classify -> loss, as one graph."""

import logging
import typing as t
from dataclasses import dataclass, field

import numpy as np

from ..core import tensor as T
from ..core.graph import Graph
from ..core.tensor import Tensor
from ..data.fdata import Dataset, Standardizer, TimeGrid, impute_dataset
from ..errors import InconsistentGridError, ShapeError
from ..states import SeparationGradient
from .basis_registry import build_basis, get_registry
from .classifier import Classifier
from .losses import LossBreakdown, alignment_loss, cross_entropy, total_loss
from .spectral import BasisSet, project
from .srvf import srvf_transform, warped_srvf
from .warpnet import WarpNet

logger = logging.getLogger(__name__)


@dataclass
class Diagnostics:
    """Numerical repairs that engaged during one forward pass."""

    guarded: t.List[str] = field(default_factory=list)
    ramped: int = 0
    degenerate_means: bool = False

    @classmethod
    def collect(cls, graph: Graph) -> "Diagnostics":
        found = cls()
        for current in graph.nodes:
            if current.guarded:
                found.guarded.append(current.label)
                if current._op == "reciprocal":
                    found.degenerate_means = True
            found.ramped += int(current.meta.get("ramped", 0))
        return found

    @property
    def clean(self) -> bool:
        return not self.guarded and not self.ramped


@dataclass
class ForwardResult:
    gamma: Tensor
    aligned: Tensor
    srvfs: Tensor
    coefficients: Tensor
    probabilities: Tensor
    l1_intra: Tensor
    l1_sep: Tensor
    l2: Tensor
    total: Tensor
    breakdown: LossBreakdown
    diagnostics: Diagnostics

    def graph(self) -> Graph:
        return Graph(self.total, evaluated=True)


class DeepFRC:
    """Warp network, spectral basis and classifier with the loss settings that join them.

    ``standardizer`` is fitted on the training split and reused for any data the
    model sees later; ``smooth_K`` is passed to imputation when inputs have gaps.
    """

    def __init__(
        self,
        grid: TimeGrid,
        n_channels: int,
        n_classes: int,
        K: int = 100,
        basis_family: t.Optional[str] = None,
        alpha: float = 100.0,
        beta: float = 10.0,
        separation_gradient: str = SeparationGradient.DIFFERENTIATE,
        freeze_warp: bool = False,
        smooth_K: int = 0,
        rng: t.Optional[np.random.Generator] = None,
        config: t.Optional[t.Any] = None,
    ) -> None:
        rng = rng if rng is not None else np.random.default_rng(0)
        self.grid = grid
        self.n_channels = int(n_channels)
        self.n_classes = int(n_classes)
        self.basis_family = basis_family or get_registry().default_family
        self.basis: BasisSet = build_basis(K, grid, self.basis_family)
        self.alpha = float(alpha)
        self.beta = float(beta)
        if separation_gradient not in SeparationGradient:
            raise ValueError(f"unknown separation_gradient {separation_gradient!r}")
        self.separation_gradient = next(
            m.value for m in SeparationGradient if separation_gradient in (m.name, m.value)
        )
        self.freeze_warp = bool(freeze_warp)
        self.smooth_K = int(smooth_K)
        self.standardizer: t.Optional[Standardizer] = None
        self.warpnet = WarpNet(len(grid), self.n_channels, rng=rng, config=config)
        self.classifier = Classifier(self.basis.K * self.n_channels, self.n_classes, rng=rng, config=config)

    @property
    def K(self) -> int:
        return self.basis.K

    @property
    def srvf_width(self) -> int:
        return self.n_channels * len(self.grid)

    def parameter_groups(self) -> t.Dict[str, t.Dict[str, Tensor]]:
        """Warp parameters ("reg") and classifier parameters ("class")."""
        return {"reg": dict(self.warpnet.params), "class": dict(self.classifier.params)}

    def parameters(self) -> t.Dict[str, Tensor]:
        return {**self.warpnet.params, **self.classifier.params}

    def train(self) -> None:
        self.warpnet.train()

    def eval(self) -> None:
        self.warpnet.eval()

    def fit_standardizer(self, dataset: Dataset) -> None:
        self.standardizer = Standardizer.fit(self.complete(dataset))

    def complete(self, dataset: Dataset) -> Dataset:
        """``dataset`` with gaps imputed (smoothed with ``smooth_K`` terms when positive)."""
        return dataset if dataset.is_complete else impute_dataset(dataset, self.smooth_K)

    def prepare(self, dataset: Dataset) -> np.ndarray:
        """Imputed, standardized values (N, d, n + 1) ready for ``forward``."""
        if not dataset.grid.equals(self.grid):
            raise InconsistentGridError("dataset grid differs from the grid the model was built on")
        if dataset.n_channels != self.n_channels:
            raise ShapeError(f"dataset has {dataset.n_channels} channels, model expects {self.n_channels}", node="input")
        complete = self.complete(dataset)
        if self.standardizer is not None:
            complete = self.standardizer.transform(complete)
        return complete.values

    def identity_warps(self, batch: int) -> Tensor:
        return T.constant(np.broadcast_to(self.grid.points, (batch, len(self.grid))).copy())

    def forward(self, values: np.ndarray, labels: t.Sequence[int], class_means: np.ndarray) -> ForwardResult:
        return deepfrc_forward(self, values, labels, class_means)

    def represent(self, values: np.ndarray) -> "Representation":
        return represent(self, values)


@dataclass
class Representation:
    """The differentiable chain from curves to class probabilities for one batch."""

    gamma: Tensor
    aligned: Tensor
    srvfs: Tensor
    coefficients: Tensor
    probabilities: Tensor


def represent(model: "DeepFRC", values: np.ndarray) -> Representation:
    """Warp, align, SRVF, project and classify a standardized batch (B, d, n + 1)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3:
        raise ShapeError(f"expected a (B, d, n + 1) batch, got {values.shape}", node="input")
    batch = values.shape[0]
    points = model.grid.points

    x = T.constant(values)
    q = T.constant(srvf_transform(values, points))
    if model.freeze_warp:
        gamma = model.identity_warps(batch)
    else:
        gamma = model.warpnet.warp(x)
    aligned = model.warpnet.align(x, gamma, points)
    srvfs = T.reshape(warped_srvf(q, gamma, points), (batch, model.srvf_width))
    coefficients = T.reshape(project(aligned, model.basis), (batch, model.n_channels * model.K))
    probabilities = model.classifier.classify(coefficients)
    return Representation(gamma, aligned, srvfs, coefficients, probabilities)


def deepfrc_forward(
    model: "DeepFRC",
    values: np.ndarray,
    labels: t.Sequence[int],
    class_means: np.ndarray,
) -> ForwardResult:
    """One differentiable pass over a standardized batch (B, d, n + 1).

    ``class_means`` (C, d (n + 1)) are the cached warped-SRVF means used as
    constants by the intra-class term.
    """
    rep = represent(model, values)
    labels = np.asarray(labels, dtype=np.int64)

    intra, separation = alignment_loss(rep.srvfs, labels, class_means, model.separation_gradient)
    l2 = cross_entropy(rep.probabilities, labels)
    total = total_loss(intra, separation, l2, model.alpha, model.beta)
    breakdown = LossBreakdown.from_terms(intra, separation, l2, model.alpha, model.beta)

    diagnostics = Diagnostics.collect(Graph(total, evaluated=True))
    if diagnostics.guarded:
        logger.warning(f"Guards engaged during forward: {sorted(set(diagnostics.guarded))}")
    return ForwardResult(
        rep.gamma,
        rep.aligned,
        rep.srvfs,
        rep.coefficients,
        rep.probabilities,
        intra,
        separation,
        l2,
        total,
        breakdown,
        diagnostics,
    )
