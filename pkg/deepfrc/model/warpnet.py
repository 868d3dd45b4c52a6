"""Neural deformation operator: a 1D CNN that emits monotone warps of [0, 1].

The network maps a batch of standardized curves (B, d, n + 1) to nonnegative
increments tau (B, n). ``build_warp`` turns them into warps that start at 0,
end at 1 and never decrease, by two normalized running sums. ``apply_warp``
then resamples the curves with the warp, shared across channels.
"""

import logging
import typing as t
from dataclasses import dataclass

import numpy as np
from traitlets import Int, List, TraitError, Unicode, validate
from traitlets.config import LoggingConfigurable

from ..core import functional as F
from ..core import tensor as T
from ..core.tensor import EPS_DIV, Tensor
from ..errors import ShapeError, WarpInvalidError
from ..states import BatchNormMode, WarpComposition

logger = logging.getLogger(__name__)

ArrayOrTensor = t.Union[np.ndarray, Tensor]


@dataclass(frozen=True, eq=False)
class WarpFunction:
    """Warp values gamma(t_0..t_n) on a sample grid."""

    gamma: np.ndarray

    def violations(self) -> t.List[str]:
        gamma = np.asarray(self.gamma, dtype=np.float64)
        problems = []
        if gamma.ndim != 1 or gamma.size < 2:
            return [f"warp needs a 1-D array of at least two values, got shape {gamma.shape}"]
        if not np.all(np.isfinite(gamma)):
            problems.append("non-finite values")
        if gamma[0] != 0.0:
            problems.append(f"gamma(0) = {gamma[0]!r}, expected 0")
        if gamma[-1] != 1.0:
            problems.append(f"gamma(1) = {gamma[-1]!r}, expected 1")
        gaps = np.diff(gamma)
        if np.any(gaps <= 0.0):
            problems.append(f"not strictly increasing (min forward difference {gaps.min():.3e})")
        return problems

    @property
    def is_valid(self) -> bool:
        return not self.violations()

    def validate(self) -> "WarpFunction":
        problems = self.violations()
        if problems:
            raise WarpInvalidError("; ".join(problems))
        return self


def check_warps(gammas: np.ndarray) -> t.Dict[int, t.List[str]]:
    """Rows of ``gammas`` (N, n + 1) that violate warp invariants, with reasons."""
    report = {}
    for index, row in enumerate(np.atleast_2d(gammas)):
        problems = WarpFunction(row).violations()
        if problems:
            report[index] = problems
    return report


def build_warp(tau: ArrayOrTensor) -> Tensor:
    """Warp values (..., n + 1) from increments tau (..., n).

    tau_0 = 0 is prepended, then gamma_tilde = cumsum(tau^2) / sum(tau^2) and
    gamma = cumsum(gamma_tilde) / sum(gamma_tilde). An all-zero row engages the
    guard and yields the warp of equal increments.
    """
    squared = T.pad_left(T.square(tau), 1)
    return T.normalized_cumsum(T.normalized_cumsum(squared))


def _tile(points: np.ndarray, batch: int) -> np.ndarray:
    return np.broadcast_to(points, (batch, points.size)).copy()


def apply_warp(
    values: ArrayOrTensor,
    gamma: ArrayOrTensor,
    grid: t.Any,
    composition: str = WarpComposition.INTERPOLATE,
) -> ArrayOrTensor:
    """Resample curves with a shared warp.

    ``values`` is (B, d, n + 1), (d, n + 1) or (n + 1,); ``gamma`` is (B, n + 1)
    or (n + 1,). With ``interpolate`` the result is the piecewise-linear curve
    through (gamma(t_j), x(t_j)) read off at the grid points; with ``compose``
    it is x(gamma(t_j)). Warps with gaps below EPS_DIV get a small ramp first
    (logged). Returns a Tensor when any input is a Tensor, else an array of the
    input's shape.
    """
    if composition not in WarpComposition:
        raise ValueError(f"unknown warp composition {composition!r}")
    points = np.asarray(getattr(grid, "points", grid), dtype=np.float64)
    as_tensor_out = isinstance(values, Tensor) or isinstance(gamma, Tensor)
    x = T.as_tensor(values)
    g = T.as_tensor(gamma)
    original_shape = x.shape
    if x.data.ndim == 1:
        x = T.reshape(x, (1, 1) + x.shape)
    elif x.data.ndim == 2:
        x = T.reshape(x, (1,) + x.shape)
    if g.data.ndim == 1:
        g = T.reshape(g, (1,) + g.shape)
    batch = x.shape[0]
    if g.shape != (batch, points.size) or x.shape[2] != points.size:
        raise ShapeError(f"warp {g.shape} for values {x.shape} on {points.size} grid points", node="apply_warp")

    g = T.monotone_ramp(g)
    if g.meta["ramped"]:
        logger.warning(f"Added a monotone ramp to {g.meta['ramped']} warp(s) with gaps below {EPS_DIV}")
    tiled = _tile(points, batch)
    if composition == WarpComposition.INTERPOLATE:
        aligned = F.interp(tiled, g, x)
    else:
        aligned = F.interp(g, tiled, x)
    if as_tensor_out:
        return aligned if len(original_shape) == 3 else T.reshape(aligned, original_shape)
    return aligned.data.reshape(original_shape)


def warp_inverse(gamma: np.ndarray, grid: t.Any) -> np.ndarray:
    """Numerical inverse of warps (..., n + 1) by monotone linear interpolation."""
    points = np.asarray(getattr(grid, "points", grid), dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    rows = np.atleast_2d(gamma)
    inverse = np.stack([np.interp(points, row, points) for row in rows])
    inverse[:, 0], inverse[:, -1] = 0.0, 1.0
    return inverse.reshape(gamma.shape)


class WarpNet(LoggingConfigurable):
    """Conv -> ReLU -> max-pool -> batch-norm blocks, global average, affine + ReLU.

    Parameters are named ``warp.conv{l}.weight``, ``warp.conv{l}.bias``,
    ``warp.bn{l}.gamma``, ``warp.bn{l}.beta``, ``warp.fc.weight`` and
    ``warp.fc.bias``.
    """

    channels = List(
        Int(),
        default_value=[16, 32, 64],
        config=True,
        help="Output channels of each convolution block.",
    )

    kernel_size = Int(3, config=True, help="Convolution kernel width (odd).")

    composition = Unicode(
        WarpComposition.INTERPOLATE.value,
        config=True,
        help="""
        How aligned curves are produced from a warp: "interpolate" reads the
        curve through (gamma(t), x(t)) at the grid points, "compose" evaluates
        x(gamma(t)), which is the action the warped SRVF uses.
        """,
    )

    @validate("channels")
    def _validate_channels(self, proposal):
        value = proposal["value"]
        if not value or any(c < 1 for c in value):
            raise TraitError(f"channels must be a nonempty list of positive integers, got {value}")
        return value

    @validate("kernel_size")
    def _validate_kernel_size(self, proposal):
        value = proposal["value"]
        if value < 1 or value % 2 == 0:
            raise TraitError(f"kernel_size must be a positive odd integer, got {value}")
        return value

    @validate("composition")
    def _validate_composition(self, proposal):
        value = proposal["value"]
        if value not in WarpComposition:
            raise TraitError(f"composition must be one of {[m.value for m in WarpComposition]}, got {value!r}")
        return value

    def __init__(self, n_points: int, n_channels: int, rng: t.Optional[np.random.Generator] = None, **kwargs: t.Any):
        super().__init__(**kwargs)
        self.n_points = int(n_points)
        self.n_channels = int(n_channels)
        if self.n_points // 2 ** len(self.channels) < 1:
            raise ShapeError(
                f"{self.n_points} grid points cannot pass {len(self.channels)} pooling stages",
                node="WarpNet",
            )
        self.mode = BatchNormMode.TRAIN
        self.params: t.Dict[str, Tensor] = {}
        self.running: t.Dict[str, t.Dict[str, np.ndarray]] = {}
        self._bn_nodes: t.Dict[str, Tensor] = {}
        self.init_params(rng if rng is not None else np.random.default_rng(0))

    @property
    def n_outputs(self) -> int:
        return self.n_points - 1

    def init_params(self, rng: np.random.Generator) -> None:
        """Weights uniform in +-sqrt(1/fan_in), biases 0.01, batch-norm scale 1 and shift 0."""
        params = {}
        c_in = self.n_channels
        for layer, c_out in enumerate(self.channels, start=1):
            bound = np.sqrt(1.0 / (c_in * self.kernel_size))
            params[f"warp.conv{layer}.weight"] = rng.uniform(-bound, bound, (c_out, c_in, self.kernel_size))
            params[f"warp.conv{layer}.bias"] = np.full(c_out, 0.01)
            params[f"warp.bn{layer}.gamma"] = np.ones(c_out)
            params[f"warp.bn{layer}.beta"] = np.zeros(c_out)
            self.running[f"warp.bn{layer}"] = {"mean": np.zeros(c_out), "var": np.ones(c_out)}
            c_in = c_out
        bound = np.sqrt(1.0 / c_in)
        params["warp.fc.weight"] = rng.uniform(-bound, bound, (self.n_outputs, c_in))
        params["warp.fc.bias"] = np.full(self.n_outputs, 0.01)
        self.params = {name: T.parameter(value, name) for name, value in params.items()}

    def feature_forward(self, values: ArrayOrTensor) -> Tensor:
        """Increments tau (B, n), all >= 0, from curves (B, d, n + 1)."""
        h = T.as_tensor(values)
        if h.data.ndim != 3 or h.shape[1:] != (self.n_channels, self.n_points):
            raise ShapeError(
                f"expected (B, {self.n_channels}, {self.n_points}), got {h.shape}", node="warp.input"
            )
        self._bn_nodes = {}
        for layer in range(1, len(self.channels) + 1):
            h = F.conv1d(h, self.params[f"warp.conv{layer}.weight"], self.params[f"warp.conv{layer}.bias"])
            h = T.relu(h)
            h = F.max_pool1d(h, 2)
            stats = self.running[f"warp.bn{layer}"]
            h = F.batch_norm1d(
                h,
                self.params[f"warp.bn{layer}.gamma"],
                self.params[f"warp.bn{layer}.beta"],
                stats["mean"],
                stats["var"],
                mode=self.mode,
            )
            self._bn_nodes[f"warp.bn{layer}"] = h
        h = F.global_avg(h)
        return T.relu(F.linear(h, self.params["warp.fc.weight"], self.params["warp.fc.bias"]))

    def warp(self, values: ArrayOrTensor) -> Tensor:
        """Warps (B, n + 1) for a batch of curves, ramped where gaps collapse."""
        gamma = T.monotone_ramp(build_warp(self.feature_forward(values)))
        if gamma.meta["ramped"]:
            self.log.warning(f"{gamma.meta['ramped']} warp(s) had gaps below {EPS_DIV}; ramp added")
        return gamma

    def align(self, values: ArrayOrTensor, gamma: Tensor, grid: t.Any) -> Tensor:
        return apply_warp(T.as_tensor(values), gamma, grid, self.composition)

    def update_running_stats(self, momentum: float = F.BN_MOMENTUM) -> None:
        """Fold the batch statistics of the last training forward into the running averages."""
        if self.mode != BatchNormMode.TRAIN:
            return
        for name, out in self._bn_nodes.items():
            if "batch_mean" not in out.meta:
                continue
            stats = self.running[name]
            stats["mean"] = (1.0 - momentum) * stats["mean"] + momentum * out.meta["batch_mean"]
            stats["var"] = (1.0 - momentum) * stats["var"] + momentum * out.meta["batch_var"]

    def train(self) -> None:
        self.mode = BatchNormMode.TRAIN

    def eval(self) -> None:
        self.mode = BatchNormMode.EVAL

    def running_state(self) -> t.Dict[str, t.Dict[str, t.List[float]]]:
        return {name: {k: v.tolist() for k, v in stats.items()} for name, stats in self.running.items()}

    def load_running_state(self, state: t.Mapping[str, t.Mapping[str, t.Sequence[float]]]) -> None:
        for name, stats in state.items():
            if name not in self.running:
                raise ShapeError("unknown batch-norm layer in saved state", node=name)
            for key in ("mean", "var"):
                array = np.asarray(stats[key], dtype=np.float64)
                if array.shape != self.running[name][key].shape:
                    raise ShapeError(f"running {key} {array.shape} vs {self.running[name][key].shape}", node=name)
                self.running[name][key] = array
