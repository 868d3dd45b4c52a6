"""Functional samples, datasets, standardization and missing-value imputation."""

import logging
import typing as t
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, EmptyClassError, InconsistentGridError, MissingDataError

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing points on [0, 1] with both endpoints included."""

    points: np.ndarray

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim != 1 or points.size < 2:
            raise DataError(f"time grid needs at least two points, got shape {points.shape}")
        if points[0] != 0.0 or points[-1] != 1.0:
            raise DataError(f"time grid must start at 0 and end at 1, got [{points[0]}, {points[-1]}]")
        if np.any(np.diff(points) <= 0.0):
            raise DataError("time grid must be strictly increasing")
        object.__setattr__(self, "points", _frozen(points))

    @classmethod
    def uniform(cls, n_points: int) -> "TimeGrid":
        return cls(np.linspace(0.0, 1.0, n_points))

    @classmethod
    def from_timestamps(cls, raw: t.Sequence[float]) -> "TimeGrid":
        """Affinely map raw timestamps onto [0, 1]."""
        raw = np.asarray(raw, dtype=np.float64)
        if raw.size < 2 or raw[-1] <= raw[0]:
            raise DataError("timestamps must span a positive interval")
        points = (raw - raw[0]) / (raw[-1] - raw[0])
        points[0], points[-1] = 0.0, 1.0
        return cls(points)

    def __len__(self) -> int:
        return int(self.points.size)

    @property
    def n(self) -> int:
        """Index of the last grid point (the grid holds n + 1 points)."""
        return len(self) - 1

    def equals(self, other: "TimeGrid") -> bool:
        return len(self) == len(other) and bool(np.array_equal(self.points, other.points))


@dataclass(frozen=True, eq=False)
class FunctionalSample:
    """One observed curve: per-channel values on a grid plus its class label.

    ``values`` has shape (d, n + 1); missing entries hold NaN and are flagged
    in ``missing_mask``.
    """

    grid: TimeGrid
    values: np.ndarray
    label: int
    missing_mask: t.Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2 or values.shape[1] != len(self.grid):
            raise InconsistentGridError(
                f"sample values {values.shape} do not match a grid of {len(self.grid)} points"
            )
        mask = np.isnan(values) if self.missing_mask is None else np.asarray(self.missing_mask, dtype=bool)
        if mask.shape != values.shape:
            raise DataError(f"missing mask {mask.shape} does not match values {values.shape}")
        if int(self.label) < 0:
            raise DataError(f"labels are 0-based integers, got {self.label}")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "missing_mask", _frozen(mask))
        object.__setattr__(self, "label", int(self.label))

    @property
    def n_channels(self) -> int:
        return int(self.values.shape[0])

    @property
    def is_complete(self) -> bool:
        return not bool(self.missing_mask.any())

    def with_values(self, values: np.ndarray) -> "FunctionalSample":
        return FunctionalSample(self.grid, values, self.label)


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable collection of samples with ``n_classes`` classes.

    ``splits`` maps split names to sample indices; ``label_names`` keeps the
    original labels when a file used something other than 0..C-1.
    """

    samples: t.Tuple[FunctionalSample, ...]
    n_classes: int
    splits: t.Dict[str, t.List[int]] = field(default_factory=dict)
    label_names: t.Optional[t.List[str]] = None
    meta: t.Dict[str, t.Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        if not samples:
            raise DataError("dataset has no samples")
        if self.n_classes < 1:
            raise DataError(f"dataset needs at least one class, got {self.n_classes}")
        channels = {s.n_channels for s in samples}
        if len(channels) != 1:
            raise InconsistentGridError(f"samples disagree on channel count: {sorted(channels)}")
        for index, sample in enumerate(samples):
            if sample.label >= self.n_classes:
                raise DataError(f"sample {index} has label {sample.label} but C = {self.n_classes}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def n_channels(self) -> int:
        return self.samples[0].n_channels

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    @property
    def n_points(self) -> int:
        lengths = {len(s.grid) for s in self.samples}
        if len(lengths) != 1:
            raise InconsistentGridError(f"samples have different grid lengths: {sorted(lengths)}")
        return lengths.pop()

    @property
    def grid(self) -> TimeGrid:
        """The grid shared by every sample."""
        first = self.samples[0].grid
        for sample in self.samples[1:]:
            if not sample.grid.equals(first):
                raise InconsistentGridError("samples do not share a common grid")
        return first

    @property
    def values(self) -> np.ndarray:
        """All sample values stacked as (N, d, n + 1)."""
        _ = self.n_points  # ragged grids raise here
        return np.stack([s.values for s in self.samples])

    @property
    def is_complete(self) -> bool:
        return all(s.is_complete for s in self.samples)

    def check_classes(self) -> None:
        """Raise EmptyClassError unless every class 0..C-1 occurs."""
        empty = [j for j, count in enumerate(self.class_counts) if count == 0]
        if empty:
            raise EmptyClassError(f"classes without samples: {empty}")

    def subset(self, indices: t.Sequence[int]) -> "Dataset":
        """Samples at ``indices``; the result carries no split table."""
        return Dataset(
            tuple(self.samples[i] for i in indices),
            self.n_classes,
            label_names=self.label_names,
            meta=dict(self.meta),
        )

    def split(self, name: str) -> "Dataset":
        if name not in self.splits:
            raise DataError(f"dataset has no split named {name!r}; known: {sorted(self.splits)}")
        return self.subset(self.splits[name])

    def with_samples(self, samples: t.Sequence[FunctionalSample]) -> "Dataset":
        return Dataset(tuple(samples), self.n_classes, dict(self.splits), self.label_names, dict(self.meta))

    @classmethod
    def from_arrays(
        cls,
        values: np.ndarray,
        labels: t.Sequence[int],
        grid: t.Optional[TimeGrid] = None,
        n_classes: t.Optional[int] = None,
        **kwargs: t.Any,
    ) -> "Dataset":
        """Build a dataset from an (N, d, L) or (N, L) array."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 2:
            values = values[:, None, :]
        grid = grid if grid is not None else TimeGrid.uniform(values.shape[-1])
        labels = [int(y) for y in labels]
        if n_classes is None:
            n_classes = max(labels) + 1
        samples = tuple(FunctionalSample(grid, v, y) for v, y in zip(values, labels))
        return cls(samples, n_classes, **kwargs)


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Per-channel, per-grid-index mean and (population) standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, dataset: Dataset) -> "Standardizer":
        if not dataset.is_complete:
            raise MissingDataError("standardize needs complete data; impute missing values first")
        values = dataset.values
        mean = values.mean(axis=0)
        std = np.maximum(values.std(axis=0), STD_FLOOR)
        return cls(_frozen(mean), _frozen(std))

    def transform(self, dataset: Dataset) -> Dataset:
        if not dataset.is_complete:
            raise MissingDataError("standardize needs complete data; impute missing values first")
        values = dataset.values
        if values.shape[1:] != self.mean.shape:
            raise InconsistentGridError(f"dataset entries {values.shape[1:]} vs fitted {self.mean.shape}")
        scaled = (values - self.mean) / self.std
        return dataset.with_samples([s.with_values(v) for s, v in zip(dataset.samples, scaled)])

    def inverse_transform(self, dataset: Dataset) -> Dataset:
        restored = dataset.values * self.std + self.mean
        return dataset.with_samples([s.with_values(v) for s, v in zip(dataset.samples, restored)])

    def to_dict(self) -> t.Dict[str, t.Any]:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, payload: t.Mapping[str, t.Any]) -> "Standardizer":
        return cls(_frozen(np.asarray(payload["mean"], dtype=np.float64)), _frozen(np.asarray(payload["std"], dtype=np.float64)))


def standardize(dataset: Dataset) -> t.Tuple[Dataset, Standardizer]:
    """Z-score every (channel, grid index) entry across samples."""
    record = Standardizer.fit(dataset)
    return record.transform(dataset), record


def impute_missing(sample: FunctionalSample, smooth_K: int = 0) -> FunctionalSample:
    """Fill missing entries by linear interpolation between observed neighbours.

    Leading and trailing gaps take the nearest observed value. With
    ``smooth_K > 0`` the filled entries are replaced by a ``smooth_K``-term
    Fourier least-squares reconstruction of the interpolated curve; observed
    entries are never altered.
    """
    if sample.is_complete:
        return sample
    from ..model.spectral import fourier_basis, project, reconstruct

    points = sample.grid.points
    filled = np.array(sample.values, copy=True)
    for channel in range(sample.n_channels):
        observed = ~sample.missing_mask[channel]
        if not observed.any():
            raise MissingDataError(f"channel {channel} has no observed values")
        filled[channel] = np.interp(points, points[observed], sample.values[channel, observed])
    if smooth_K > 0:
        basis = fourier_basis(smooth_K, points)
        smooth = reconstruct(project(filled, basis), basis)
        filled = np.where(sample.missing_mask, smooth, filled)
    return FunctionalSample(sample.grid, filled, sample.label)


def impute_dataset(dataset: Dataset, smooth_K: int = 0) -> Dataset:
    imputed = [impute_missing(sample, smooth_K) for sample in dataset.samples]
    missing = int(sum(int(s.missing_mask.sum()) for s in dataset.samples))
    if missing:
        logger.info(f"Imputed {missing} missing entries across {len(dataset)} samples")
    return dataset.with_samples(imputed)


def mask_random(dataset: Dataset, rate: float, seed: int = 0) -> Dataset:
    """Mark a fraction ``rate`` of entries missing, uniformly at random."""
    if not 0.0 <= rate < 1.0:
        raise DataError(f"missing rate must lie in [0, 1), got {rate}")
    rng = np.random.default_rng(seed)
    masked = []
    for sample in dataset.samples:
        values = np.array(sample.values, copy=True)
        values[rng.random(values.shape) < rate] = np.nan
        masked.append(FunctionalSample(sample.grid, values, sample.label))
    return dataset.with_samples(masked)
