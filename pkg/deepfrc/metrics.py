"""Registration, reconstruction and classification metrics."""

import csv
import io
import json
import logging
import typing as t
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, stats
from sklearn import metrics as skm

from .data.fdata import Dataset
from .errors import DataError, DegenerateError, ShapeError
from .model.basis_registry import build_basis
from .model.spectral import project
from .model.srvf import class_means, srvf_transform, warped_srvf

logger = logging.getLogger(__name__)


def _srvf_vectors(warps: np.ndarray, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    q = srvf_transform(values, points)
    warped = warped_srvf(q, np.asarray(warps, dtype=np.float64), points)
    return warped.reshape(warped.shape[0], -1)


def q_reg(warps: np.ndarray, dataset: Dataset) -> float:
    """Sum over classes of the mean distance between warped SRVFs and their class mean.

    Class means are taken from the same warps.
    """
    values = dataset.values
    warps = np.asarray(warps, dtype=np.float64)
    if warps.shape != (len(dataset), values.shape[-1]):
        raise ShapeError(f"warps {warps.shape} for {len(dataset)} samples of {values.shape[-1]} points", node="q_reg")
    labels = dataset.labels
    vectors = _srvf_vectors(warps, values, dataset.grid.points)
    means = class_means(vectors, labels, dataset.n_classes)
    distances = np.linalg.norm(vectors - means[labels], axis=1)
    counts = np.bincount(labels, minlength=dataset.n_classes)
    return float(np.sum(distances / counts[labels]))


def registration_error(
    reference_warps: t.Optional[np.ndarray],
    learned_warps: np.ndarray,
    dataset: Dataset,
) -> float:
    """|q_reg(reference) - q_reg(learned)|; the reference warps must be given."""
    if reference_warps is None:
        raise DataError("registration error needs ground-truth warps")
    return abs(q_reg(reference_warps, dataset) - q_reg(learned_warps, dataset))


def atv(aligned: np.ndarray, labels: t.Sequence[int], grid: t.Any, n_classes: t.Optional[int] = None) -> float:
    """Average over class pairs of pooled within-class variance over mean separation.

    For a pair (u, v): TV is the time integral of the pooled within-class
    variance of the aligned curves (summed over channels) and the separation is
    the L2 distance between the two class-mean curves. Both integrals use the
    trapezoidal rule on ``grid``.
    """
    points = np.asarray(getattr(grid, "points", grid), dtype=np.float64)
    aligned = np.asarray(aligned, dtype=np.float64)
    if aligned.ndim == 2:
        aligned = aligned[:, None, :]
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    if n_classes < 2:
        raise DegenerateError("ATV needs at least two classes")
    means, spreads = [], []
    for j in range(n_classes):
        members = aligned[labels == j]
        if members.shape[0] == 0:
            raise DegenerateError(f"class {j} has no aligned curves")
        means.append(members.mean(axis=0))
        spreads.append(((members - means[-1]) ** 2).sum(axis=0))
    counts = np.bincount(labels, minlength=n_classes)
    ratios = []
    for u in range(n_classes):
        for v in range(u + 1, n_classes):
            pooled = (spreads[u] + spreads[v]).sum(axis=0) / (counts[u] + counts[v])
            variation = integrate.trapezoid(pooled, x=points)
            gap = np.sqrt(integrate.trapezoid(((means[u] - means[v]) ** 2).sum(axis=0), x=points))
            if gap < 1e-12:
                raise DegenerateError(f"class means {u} and {v} coincide")
            ratios.append(variation / gap)
    return float(np.mean(ratios))


def coeff_correlation(true_coefficients: np.ndarray, estimated: np.ndarray) -> float:
    """Pearson correlation of all (sample, coefficient) pairs pooled together."""
    true_coefficients = np.asarray(true_coefficients, dtype=np.float64)
    estimated = np.asarray(estimated, dtype=np.float64)
    if true_coefficients.shape != estimated.shape:
        raise ShapeError(f"coefficients {true_coefficients.shape} vs {estimated.shape}", node="coeff_correlation")
    a, b = true_coefficients.reshape(-1), estimated.reshape(-1)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DegenerateError("correlation is undefined for constant coefficients")
    return float(stats.pearsonr(a, b)[0])


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float
    macro_f1: float
    per_class: t.List[t.Dict[str, float]]


def classification_metrics(
    predicted: t.Sequence[int],
    true: t.Sequence[int],
    n_classes: t.Optional[int] = None,
) -> ClassificationMetrics:
    """Accuracy, macro-averaged F1 and per-class precision / recall / F1 / support.

    A class with precision + recall = 0 scores F1 = 0.
    """
    predicted = np.asarray(predicted, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if predicted.shape != true.shape or predicted.size == 0:
        raise ShapeError(f"{predicted.size} predictions for {true.size} labels", node="classification_metrics")
    if n_classes is None:
        n_classes = int(max(predicted.max(), true.max())) + 1
    classes = list(range(n_classes))
    precision, recall, f1, support = skm.precision_recall_fscore_support(
        true, predicted, labels=classes, zero_division=0
    )
    per_class = [
        {"class": j, "precision": float(p), "recall": float(r), "f1": float(f), "support": int(s)}
        for j, p, r, f, s in zip(classes, precision, recall, f1, support)
    ]
    return ClassificationMetrics(float(skm.accuracy_score(true, predicted)), float(np.mean(f1)), per_class)


CSV_FIELDS = ["split", "n_samples", "accuracy", "macro_f1", "atv", "rho", "dq_reg", "loss_total"]


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    per_class: t.List[t.Dict[str, float]]
    atv: t.Optional[float] = None
    rho: t.Optional[float] = None
    dq_reg: t.Optional[float] = None
    loss: t.Optional[t.Dict[str, float]] = None
    n_samples: int = 0
    split: str = ""
    meta: t.Dict[str, t.Any] = field(default_factory=dict)

    def to_dict(self) -> t.Dict[str, t.Any]:
        return asdict(self)

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def csv_row(self) -> t.Dict[str, t.Any]:
        row = {name: getattr(self, name, None) for name in CSV_FIELDS}
        row["loss_total"] = self.loss["total"] if self.loss else None
        return row

    def csv_line(self, header: bool = False) -> str:
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=CSV_FIELDS, lineterminator="\n")
        if header:
            writer.writeheader()
        writer.writerow({k: "" if v is None else v for k, v in self.csv_row().items()})
        return buffer.getvalue()


def _guarded(name: str, compute: t.Callable[[], float]) -> t.Optional[float]:
    try:
        return compute()
    except DegenerateError as e:
        logger.warning(f"{name} undefined: {e}")
        return None


def evaluate_report(model: t.Any, dataset: Dataset, ground_truth: t.Optional[t.Any] = None, split: str = "") -> MetricsReport:
    """Run the model on ``dataset`` and collect every metric that applies.

    Registration metrics use the raw (imputed, unstandardized) curves; ATV is
    computed on those curves aligned by the learned warps. With ground truth,
    the report adds the registration error and the coefficient correlation.
    """
    from .training.trainer import evaluate

    result = evaluate(model, dataset)
    scores = classification_metrics(result.predictions, dataset.labels, dataset.n_classes)
    report = MetricsReport(
        scores.accuracy,
        scores.macro_f1,
        scores.per_class,
        loss=result.loss.to_dict(),
        n_samples=len(dataset),
        split=split,
    )
    if dataset.n_classes >= 2:
        report.atv = _guarded("ATV", lambda: atv(result.aligned_raw, dataset.labels, dataset.grid, dataset.n_classes))
    if ground_truth is not None:
        report.dq_reg = registration_error(ground_truth.optimal_warps, result.warps, result.raw_dataset)
        truth = np.asarray(ground_truth.coefficients)
        basis = build_basis(truth.shape[-1], dataset.grid, model.basis_family)
        estimated = project(result.aligned_raw, basis).reshape(truth.shape)
        report.rho = _guarded("rho", lambda: coeff_correlation(truth, estimated))
    return report
