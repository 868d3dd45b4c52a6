"""Two-class synthetic curves with known amplitude, known warps and known coefficients.

Each sample is the sum of two Gaussian bumps whose heights and widths are drawn
per sample from class-specific ranges, observed through an exponential warp
x(t) = z(gamma(t)) with gamma(t) = (exp(b t) - 1) / (exp(b) - 1).
"""

import json
import logging
import typing as t
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from traitlets import Float, Int, List, TraitError, validate
from traitlets.config import Configurable

from ..errors import ConfigError, DataFormatError
from .fdata import Dataset, FunctionalSample, TimeGrid

logger = logging.getLogger(__name__)

#: Per class, per bump: [height, height half-range, centre, width, width half-range].
DEFAULT_BUMPS = [
    [[13.0, 0.5, 0.250, 0.060, 0.003], [12.5, 1.0, 0.715, 0.075, 0.003]],
    [[12.0, 1.0, 0.225, 0.060, 0.003], [13.0, 1.5, 0.695, 0.100, 0.003]],
]

PRESETS: t.Dict[str, t.Dict[str, t.Any]] = {
    "full": {"n_samples": 6000, "n_points": 1000, "n_train": 1600, "n_val": 400, "n_test": 4000},
    "desk": {"n_samples": 1800, "n_points": 200, "n_train": 600, "n_val": 200, "n_test": 1000},
    "micro": {"n_samples": 8, "n_points": 32, "n_train": 8, "n_val": 0, "n_test": 0},
    "scarce100": {"n_samples": 200, "n_points": 100, "n_train": 100, "n_val": 20, "n_test": 80},
    "scarce50": {"n_samples": 100, "n_points": 50, "n_train": 50, "n_val": 10, "n_test": 40},
}


def gaussian_bump(t: t.Union[float, np.ndarray], a: float, mu: float, sigma: float) -> t.Union[float, np.ndarray]:
    """a * exp(-(t - mu)^2 / (2 sigma^2))."""
    if sigma <= 0:
        raise ValueError(f"bump width must be positive, got {sigma}")
    return a * np.exp(-0.5 * (np.asarray(t) - mu) ** 2 / sigma**2)


def exp_warp(t: t.Union[float, np.ndarray], b: float) -> t.Union[float, np.ndarray]:
    """(exp(b t) - 1) / (exp(b) - 1), or t itself when b = 0."""
    t = np.asarray(t, dtype=np.float64)
    if b == 0:
        return t.copy() if t.ndim else float(t)
    warped = np.expm1(b * t) / np.expm1(b)
    return warped if t.ndim else float(warped)


class SynthConfig(Configurable):
    """Size, noise, warp range and split layout of a synthetic benchmark."""

    n_samples = Int(6000, config=True, help="Number of curves N.")
    n_points = Int(1000, config=True, help="Grid points per curve (uniform on [0, 1]).")
    n_train = Int(1600, config=True, help="Size of the train split.")
    n_val = Int(400, config=True, help="Size of the validation split.")
    n_test = Int(4000, config=True, help="Size of the test split.")
    noise_sigma = Float(0.0, config=True, help="Standard deviation of additive Gaussian noise.")
    warp_range = Float(1.5, config=True, help="Warp parameters b are drawn from U(-warp_range, warp_range).")
    seed = Int(0, config=True, help="Seed; sample i draws from the stream (seed, i).")
    truth_K = Int(
        100, config=True, help="Fourier terms in the true coefficients c* (capped at n_points - 1)."
    )
    bumps = List(
        default_value=DEFAULT_BUMPS,
        config=True,
        help="Per class, two bumps given as [height, height half-range, centre, width, width half-range].",
    )

    @validate("n_samples", "n_points")
    def _validate_positive(self, proposal):
        if proposal["value"] < 2:
            raise TraitError(f"{proposal['trait'].name} must be at least 2, got {proposal['value']}")
        return proposal["value"]

    @validate("n_train", "n_val", "n_test")
    def _validate_split(self, proposal):
        if proposal["value"] < 0:
            raise TraitError(f"{proposal['trait'].name} must be nonnegative, got {proposal['value']}")
        return proposal["value"]

    @validate("noise_sigma", "warp_range")
    def _validate_nonnegative(self, proposal):
        if proposal["value"] < 0:
            raise TraitError(f"{proposal['trait'].name} must be nonnegative, got {proposal['value']}")
        return proposal["value"]

    @validate("bumps")
    def _validate_bumps(self, proposal):
        value = proposal["value"]
        for label, bumps in enumerate(value):
            for height, d_height, mu, sigma, d_sigma in bumps:
                if sigma - abs(d_sigma) <= 0:
                    raise TraitError(f"class {label} bump width range must stay positive, got {sigma} +- {d_sigma}")
        return value

    @classmethod
    def from_preset(cls, name: str, **overrides: t.Any) -> "SynthConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})

    @property
    def n_classes(self) -> int:
        return len(self.bumps)

    def check(self) -> None:
        total = self.n_train + self.n_val + self.n_test
        if total > self.n_samples:
            raise ConfigError(f"split sizes sum to {total} but only {self.n_samples} samples are generated")
        if self.n_samples < self.n_classes:
            raise ConfigError(f"{self.n_samples} samples cannot cover {self.n_classes} classes")

    def to_dict(self) -> t.Dict[str, t.Any]:
        return {name: getattr(self, name) for name in self.trait_names(config=True)}


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Per-sample latent curves, applied warps, their inverses and true coefficients."""

    latent: np.ndarray
    warps: np.ndarray
    optimal_warps: np.ndarray
    coefficients: np.ndarray
    warp_params: np.ndarray

    def __len__(self) -> int:
        return int(self.latent.shape[0])

    def subset(self, indices: t.Sequence[int]) -> "GroundTruth":
        indices = np.asarray(indices, dtype=np.int64)
        return GroundTruth(
            self.latent[indices],
            self.warps[indices],
            self.optimal_warps[indices],
            self.coefficients[indices],
            self.warp_params[indices],
        )

    def to_dict(self) -> t.Dict[str, t.Any]:
        return {
            "latent": self.latent.tolist(),
            "warps": self.warps.tolist(),
            "optimal_warps": self.optimal_warps.tolist(),
            "coefficients": self.coefficients.tolist(),
            "warp_params": self.warp_params.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: t.Mapping[str, t.Any]) -> "GroundTruth":
        try:
            return cls(*(np.asarray(payload[key], dtype=np.float64) for key in cls.__dataclass_fields__))
        except KeyError as e:
            raise DataFormatError(f"ground truth lacks {e}")

    def save(self, path: t.Union[str, Path], extra: t.Optional[t.Mapping[str, t.Any]] = None) -> Path:
        path = Path(path)
        payload = self.to_dict()
        if extra:
            payload["meta"] = dict(extra)
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: t.Union[str, Path]) -> "GroundTruth":
        path = Path(path)
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataFormatError(f"ground truth is not valid JSON: {e}", path=str(path))
        return cls.from_dict(payload)


def _latent(points: np.ndarray, bumps: t.Sequence[t.Tuple[float, float, float]]) -> np.ndarray:
    return sum(gaussian_bump(points, a, mu, sigma) for a, mu, sigma in bumps)


def generate(config: t.Optional[SynthConfig] = None, K: t.Optional[int] = None) -> t.Tuple[Dataset, GroundTruth]:
    """Draw a dataset and its ground truth; identical for identical configs."""
    from ..model.spectral import fourier_basis, project
    from ..model.warpnet import warp_inverse

    config = config if config is not None else SynthConfig()
    config.check()
    K = min(config.truth_K if K is None else K, config.n_points - 1)
    grid = TimeGrid.uniform(config.n_points)
    points = grid.points
    n_classes = config.n_classes

    labels = np.arange(config.n_samples) % n_classes
    labels = np.random.default_rng(np.random.SeedSequence(config.seed)).permutation(labels)

    latent = np.empty((config.n_samples, points.size))
    observed = np.empty_like(latent)
    warps = np.empty_like(latent)
    warp_params = np.empty(config.n_samples)
    for i, label in enumerate(labels):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, i]))
        drawn = []
        for height, d_height, mu, sigma, d_sigma in config.bumps[label]:
            a = height + rng.uniform(-d_height, d_height)
            s = sigma + rng.uniform(-d_sigma, d_sigma)
            drawn.append((a, mu, s))
        b = rng.uniform(-config.warp_range, config.warp_range) if config.warp_range > 0 else 0.0
        gamma = exp_warp(points, b)
        gamma[0], gamma[-1] = 0.0, 1.0
        latent[i] = _latent(points, drawn)
        observed[i] = _latent(gamma, drawn)
        if config.noise_sigma > 0:
            observed[i] += config.noise_sigma * rng.standard_normal(points.size)
        warps[i] = gamma
        warp_params[i] = b

    coefficients = project(latent, fourier_basis(K, grid))
    truth = GroundTruth(latent, warps, warp_inverse(warps, grid), coefficients, warp_params)

    n_train, n_val = config.n_train, config.n_val
    splits = {
        "train": list(range(0, n_train)),
        "val": list(range(n_train, n_train + n_val)),
        "test": list(range(n_train + n_val, n_train + n_val + config.n_test)),
    }
    samples = tuple(FunctionalSample(grid, row, int(y)) for row, y in zip(observed, labels))
    dataset = Dataset(samples, n_classes, splits, meta={"synth": config.to_dict()})
    logger.info(
        f"Generated {config.n_samples} curves on {config.n_points} points "
        f"(noise {config.noise_sigma}, seed {config.seed}); class counts {dataset.class_counts.tolist()}"
    )
    return dataset, truth
