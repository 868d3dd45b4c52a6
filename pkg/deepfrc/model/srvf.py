"""Square-root velocity functions, their warped form and class means."""

import logging
import typing as t

import numpy as np

from ..core import functional as F
from ..core import tensor as T
from ..core.graph import Graph
from ..core.tensor import EPS_DIV, Tensor
from ..errors import EmptyClassError, ShapeError, WarpInvalidError

logger = logging.getLogger(__name__)

ArrayOrTensor = t.Union[np.ndarray, Tensor]


def _points(grid: t.Any) -> np.ndarray:
    return np.asarray(getattr(grid, "points", grid), dtype=np.float64)


def srvf_transform(values: np.ndarray, grid: t.Any) -> np.ndarray:
    """q = sign(x') sqrt(|x'|) along the last axis; x' by central differences."""
    velocity = F.central_diff_array(np.asarray(values, dtype=np.float64), _points(grid))
    return np.sign(velocity) * np.sqrt(np.abs(velocity))


def _as_batch(q: ArrayOrTensor, gamma: ArrayOrTensor) -> t.Tuple[Tensor, Tensor, t.Tuple[int, ...]]:
    q, gamma = T.as_tensor(q), T.as_tensor(gamma)
    shape = q.shape
    if q.data.ndim == 1:
        q = T.reshape(q, (1, 1) + q.shape)
    elif q.data.ndim == 2:
        q = T.reshape(q, (1,) + q.shape)
    if gamma.data.ndim == 1:
        gamma = T.reshape(gamma, (1,) + gamma.shape)
    return q, gamma, shape


def warped_srvf(q: ArrayOrTensor, gamma: ArrayOrTensor, grid: t.Any) -> ArrayOrTensor:
    """(q * gamma)(t_k) = q(gamma(t_k)) sqrt(gamma'(t_k)) on the grid.

    ``q`` is (B, d, n + 1), (d, n + 1) or (n + 1,) and ``gamma`` (B, n + 1) or
    (n + 1,). q(gamma) comes from linear interpolation and gamma' from central
    differences; a non-positive gamma' anywhere raises WarpInvalidError.
    Differentiable in both inputs when given Tensors.
    """
    points = _points(grid)
    tensor_out = isinstance(q, Tensor) or isinstance(gamma, Tensor)
    q_t, gamma_t, shape = _as_batch(q, gamma)
    batch = q_t.shape[0]
    if gamma_t.shape != (batch, points.size) or q_t.shape[2] != points.size:
        raise ShapeError(f"warp {gamma_t.shape} for SRVF {q_t.shape} on {points.size} points", node="warped_srvf")
    slope = F.central_diff(gamma_t, points)
    if np.any(slope.data <= 0.0) or not np.all(np.isfinite(slope.data)):
        bad = int(np.sum(~(slope.data > 0.0)))
        raise WarpInvalidError(f"warp derivative is not positive at {bad} grid point(s)")
    knots = np.broadcast_to(points, (batch, points.size)).copy()
    resampled = F.interp(gamma_t, knots, q_t)
    root = T.reshape(T.sqrt(slope), (batch, 1, points.size))
    out = T.multiply(resampled, root)
    if tensor_out:
        return out if len(shape) == 3 else T.reshape(out, shape)
    return out.data.reshape(shape)


def warped_srvf_grad_oracle(q: np.ndarray, gamma: np.ndarray, grid: t.Any) -> np.ndarray:
    """Closed-form sensitivity of the warped SRVF to its warp, for k = 1..n.

    Returns q'(gamma(t_k)) sqrt(gamma'(t_k)) + q(gamma(t_k)) gamma''(t_k) / (2 sqrt(gamma'(t_k)))
    with every derivative from central differences; shape (..., n).
    """
    points = _points(grid)
    q = np.asarray(q, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    slope = F.central_diff_array(gamma, points)
    if np.any(slope < EPS_DIV):
        raise WarpInvalidError(f"warp derivative falls below {EPS_DIV}")
    curvature = F.central_diff_array(slope, points)
    q_dot = F.central_diff_array(q, points)

    def at_gamma(values: np.ndarray) -> np.ndarray:
        if values.ndim == 1:
            return np.interp(gamma, points, values)
        flat = values.reshape(-1, points.size)
        return np.stack([np.interp(gamma, points, row) for row in flat]).reshape(values.shape)

    root = np.sqrt(slope)
    oracle = at_gamma(q_dot) * root + at_gamma(q) * curvature / (2.0 * root)
    return oracle[..., 1:]


def warped_srvf_autodiff_gradient(q: np.ndarray, gamma: np.ndarray, grid: t.Any) -> np.ndarray:
    """The oracle's quantity computed by reverse mode through the discretization.

    The warped SRVF is written as Q(g, s) = q(g) sqrt(s) with the warp values g
    and slopes s as separate leaves; since Q_k depends on (g_k, s_k) alone, the
    gradient of sum(Q) gives dQ_k/dg_k and dQ_k/ds_k, combined as
    dQ_k/dg_k + dQ_k/ds_k * gamma''(t_k). Single channel; returns k = 1..n.
    """
    points = _points(grid)
    q = np.asarray(q, dtype=np.float64).reshape(1, 1, points.size)
    gamma = np.asarray(gamma, dtype=np.float64)
    slope = F.central_diff_array(gamma, points)
    curvature = F.central_diff_array(slope, points)
    values = T.parameter(gamma.reshape(1, -1), "gamma")
    slopes = T.parameter(slope.reshape(1, -1), "slope")
    knots = points.reshape(1, -1)
    resampled = F.interp(values, knots, q)
    total = T.sum(T.multiply(resampled, T.reshape(T.sqrt(slopes), (1, 1, points.size))))
    grads = Graph(total, evaluated=True).backward_grad()
    combined = grads["gamma"][0] + grads["slope"][0] * curvature
    return combined[1:]


def class_means(srvfs: np.ndarray, labels: t.Sequence[int], n_classes: int) -> np.ndarray:
    """Per-class arithmetic means (C, D) of SRVF vectors (N, D).

    The result is a plain array; callers feed it to the loss as a constant.
    """
    srvfs = np.asarray(srvfs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=n_classes)
    empty = [j for j in range(n_classes) if counts[j] == 0]
    if empty:
        raise EmptyClassError(f"cannot average SRVFs of empty classes {empty}")
    sums = np.zeros((n_classes,) + srvfs.shape[1:])
    np.add.at(sums, labels, srvfs)
    return sums / counts.reshape((n_classes,) + (1,) * (srvfs.ndim - 1))
