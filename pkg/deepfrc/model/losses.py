"""Alignment loss, cross-entropy and the joint objective."""

import logging
import typing as t
from dataclasses import asdict, dataclass

import numpy as np

from ..core import tensor as T
from ..core.tensor import EPS_DIV, Tensor
from ..errors import ShapeError
from ..states import SeparationGradient

logger = logging.getLogger(__name__)

Number = t.Union[float, Tensor]


@dataclass(frozen=True)
class LossBreakdown:
    l1_intra: float
    l1_sep: float
    l2: float
    total: float
    alpha: float
    beta: float

    @classmethod
    def from_terms(cls, l1_intra: Number, l1_sep: Number, l2: Number, alpha: float, beta: float) -> "LossBreakdown":
        values = [x.item() if isinstance(x, Tensor) else float(x) for x in (l1_intra, l1_sep, l2)]
        return cls(values[0], values[1], values[2], total_loss(*values, alpha, beta), alpha, beta)

    @property
    def is_finite(self) -> bool:
        return bool(np.isfinite([self.l1_intra, self.l1_sep, self.l2, self.total]).all())

    def to_dict(self) -> t.Dict[str, float]:
        return asdict(self)


def _one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    encoded = np.zeros((labels.size, n_classes))
    encoded[np.arange(labels.size), labels] = 1.0
    return encoded


def pair_selector(n_classes: int) -> np.ndarray:
    """Rows e_u - e_v for every pair u < v, in lexicographic order."""
    pairs = [(u, v) for u in range(n_classes) for v in range(u + 1, n_classes)]
    selector = np.zeros((len(pairs), n_classes))
    for row, (u, v) in enumerate(pairs):
        selector[row, u] = 1.0
        selector[row, v] = -1.0
    return selector


def alignment_loss(
    srvfs: Tensor,
    labels: t.Sequence[int],
    class_means: t.Union[np.ndarray, Tensor],
    separation_gradient: str = SeparationGradient.DIFFERENTIATE,
) -> t.Tuple[Tensor, Tensor]:
    """Intra-class spread and inverse class-mean separation of warped SRVFs.

    ``srvfs`` is (B, D) with channels concatenated and ``class_means`` the
    (C, D) means cached from the previous iteration.

    - intra: sum over classes j present in the batch of the average of
      ||Q_i - mean_j|| over the batch samples of class j; the cached means are
      constants.
    - separation: sum over pairs u < v of 1 / ||M_u - M_v||, where M_j is the
      batch mean of class j (the cached mean for classes absent from the batch).
      Distances below EPS_DIV are floored; the node is then flagged.

    ``separation_gradient="detach"`` stops gradients through the batch means.
    """
    srvfs = T.as_tensor(srvfs)
    labels = np.asarray(labels, dtype=np.int64)
    means = T.as_tensor(class_means)
    if srvfs.data.ndim != 2 or labels.shape != (srvfs.shape[0],) or means.data.ndim != 2:
        raise ShapeError(
            f"SRVFs {srvfs.shape}, labels {labels.shape}, means {means.shape}", node="alignment_loss"
        )
    if means.shape[1] != srvfs.shape[1]:
        raise ShapeError(f"means of width {means.shape[1]} vs SRVFs {srvfs.shape[1]}", node="alignment_loss")
    n_classes = means.shape[0]
    one_hot = _one_hot(labels, n_classes)
    counts = one_hot.sum(axis=0)

    cached = T.stop_gradient(means)
    deviations = T.subtract(srvfs, T.matmul(one_hot, cached))
    weights = 1.0 / counts[labels]
    intra = T.sum(T.multiply(T.norm(deviations, axis=-1), weights))

    if n_classes < 2:
        return intra, T.constant(np.zeros(1))
    present = counts > 0
    averaging = np.where(present[:, None], one_hot.T / np.where(present, counts, 1.0)[:, None], 0.0)
    fill = T.matmul(np.diag((~present).astype(np.float64)), cached)
    batch_means = T.add(T.matmul(averaging, srvfs), fill)
    if separation_gradient == SeparationGradient.DETACH:
        batch_means = T.stop_gradient(batch_means)
    distances = T.norm(T.matmul(pair_selector(n_classes), batch_means), axis=-1)
    if np.any(distances.data < EPS_DIV):
        logger.warning(f"Class means closer than {EPS_DIV}; separation term evaluated with the floor")
    separation = T.sum(T.reciprocal(distances))
    return intra, separation


def cross_entropy(probabilities: Tensor, labels: t.Sequence[int]) -> Tensor:
    """Mean over the batch of -log psi at the true class."""
    probabilities = T.as_tensor(probabilities)
    labels = np.asarray(labels, dtype=np.int64)
    if probabilities.data.ndim != 2 or labels.shape != (probabilities.shape[0],):
        raise ShapeError(f"probabilities {probabilities.shape} vs labels {labels.shape}", node="cross_entropy")
    one_hot = _one_hot(labels, probabilities.shape[1])
    picked = T.sum(T.multiply(T.log(probabilities), one_hot))
    return T.multiply(picked, -1.0 / labels.size)


def total_loss(l1_intra: Number, l1_sep: Number, l2: Number, alpha: float, beta: float) -> Number:
    """(intra + alpha * separation) + beta * cross-entropy."""
    if alpha < 0 or beta < 0:
        raise ValueError(f"loss weights must be nonnegative, got alpha={alpha}, beta={beta}")
    return (l1_intra + alpha * l1_sep) + beta * l2
