"""Layer-level primitives: convolution, pooling, normalization, interpolation."""

import logging
import typing as t

import numpy as np

from ..errors import ShapeError
from ..states import BatchNormMode
from .tensor import EPS_DIV, ArrayLike, Tensor, accumulate, as_tensor, node

logger = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def conv1d(x: ArrayLike, weight: ArrayLike, bias: t.Optional[ArrayLike] = None) -> Tensor:
    """Stride-1 cross-correlation with zero padding that preserves length.

    Shapes: x (B, C_in, L), weight (C_out, C_in, k) with odd k, bias (C_out,).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 3 or weight.data.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv1d input {x.shape} vs weight {weight.shape}", node=f"conv1d({weight.label})")
    kernel = weight.shape[2]
    if kernel % 2 != 1:
        raise ShapeError(f"conv1d needs an odd kernel, got {kernel}", node=f"conv1d({weight.label})")
    half = kernel // 2
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"conv1d bias {bias.shape} for {weight.shape[0]} filters", node=f"conv1d({bias.label})")
        parents.append(bias)

    def columns(data: np.ndarray) -> np.ndarray:
        length = data.shape[2]
        padded = np.pad(data, ((0, 0), (0, 0), (half, half)))
        return np.stack([padded[:, :, k:k + length] for k in range(kernel)], axis=2)

    def forward(out: Tensor) -> np.ndarray:
        cols = columns(x.data)
        out.meta["cols"] = cols
        result = np.tensordot(cols, weight.data, axes=([1, 2], [1, 2])).transpose(0, 2, 1)
        if bias is not None:
            result = result + bias.data[None, :, None]
        return result

    def backward(out: Tensor) -> None:
        grad, cols = out.grad, out.meta["cols"]
        accumulate(weight, np.tensordot(grad, cols, axes=([0, 2], [0, 3])))
        if bias is not None:
            accumulate(bias, grad.sum(axis=(0, 2)))
        if x.requires_grad:
            grad_cols = np.einsum("bol,ock->bckl", grad, weight.data)
            length = x.shape[2]
            padded = np.zeros((x.shape[0], x.shape[1], length + 2 * half))
            for k in range(kernel):
                padded[:, :, k:k + length] += grad_cols[:, :, k, :]
            accumulate(x, padded[:, :, half:half + length])

    return node("conv1d", parents, forward, backward)


def max_pool1d(x: ArrayLike, window: int = 2) -> Tensor:
    """Non-overlapping max pooling; a trailing remainder is dropped.

    Ties route the gradient to the earliest index.
    """
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeError(f"max_pool1d expects (B, C, L), got {x.shape}", node="max_pool1d")
    batch, channels, length = x.shape
    pooled = length // window
    if pooled == 0:
        raise ShapeError(f"length {length} shorter than window {window}", node="max_pool1d")

    def forward(out: Tensor) -> np.ndarray:
        blocks = x.data[:, :, :pooled * window].reshape(batch, channels, pooled, window)
        index = blocks.argmax(axis=-1)
        out.meta["index"] = index
        return np.take_along_axis(blocks, index[..., None], axis=-1)[..., 0]

    def backward(out: Tensor) -> None:
        blocks = np.zeros((batch, channels, pooled, window))
        np.put_along_axis(blocks, out.meta["index"][..., None], out.grad[..., None], axis=-1)
        grad = np.zeros(x.shape)
        grad[:, :, :pooled * window] = blocks.reshape(batch, channels, pooled * window)
        accumulate(x, grad)

    return node("max_pool1d", (x,), forward, backward)


def batch_norm1d(
    x: ArrayLike,
    gamma: ArrayLike,
    beta: ArrayLike,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str = BatchNormMode.TRAIN,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel normalization over the batch and time axes.

    Training mode normalizes with the batch statistics and leaves them in
    ``out.meta`` ("batch_mean", "batch_var") for the caller to fold into the
    running averages; evaluation mode uses ``running_mean``/``running_var``.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.data.ndim != 3 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm1d input {x.shape}, scale {gamma.shape}", node=f"batch_norm1d({gamma.label})")
    training = mode == BatchNormMode.TRAIN

    def forward(out: Tensor) -> np.ndarray:
        if training:
            mu = x.data.mean(axis=(0, 2))
            var = x.data.var(axis=(0, 2))
            out.meta["batch_mean"] = mu
            out.meta["batch_var"] = var
        else:
            mu, var = running_mean, running_var
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu[None, :, None]) * inv_std[None, :, None]
        out.meta["xhat"] = xhat
        out.meta["inv_std"] = inv_std
        return gamma.data[None, :, None] * xhat + beta.data[None, :, None]

    def backward(out: Tensor) -> None:
        grad, xhat, inv_std = out.grad, out.meta["xhat"], out.meta["inv_std"]
        accumulate(gamma, (grad * xhat).sum(axis=(0, 2)))
        accumulate(beta, grad.sum(axis=(0, 2)))
        if not x.requires_grad:
            return
        grad_xhat = grad * gamma.data[None, :, None]
        if training:
            count = x.shape[0] * x.shape[2]
            total = grad_xhat.sum(axis=(0, 2), keepdims=True)
            projected = (grad_xhat * xhat).sum(axis=(0, 2), keepdims=True)
            grad_x = (count * grad_xhat - total - xhat * projected) * inv_std[None, :, None] / count
        else:
            grad_x = grad_xhat * inv_std[None, :, None]
        accumulate(x, grad_x)

    return node("batch_norm1d", (x, gamma, beta), forward, backward)


def global_avg(x: ArrayLike) -> Tensor:
    """Average over the last (time) axis: (B, C, L) -> (B, C)."""
    x = as_tensor(x)

    def forward(out: Tensor) -> np.ndarray:
        return x.data.mean(axis=-1)

    def backward(out: Tensor) -> None:
        length = x.shape[-1]
        accumulate(x, np.broadcast_to(out.grad[..., None] / length, x.shape))

    return node("global_avg", (x,), forward, backward)


def linear(x: ArrayLike, weight: ArrayLike, bias: t.Optional[ArrayLike] = None) -> Tensor:
    """Affine map x W^T + b with x (B, in), W (out, in), b (out,)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear input {x.shape} vs weight {weight.shape}", node=f"linear({weight.label})")
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear bias {bias.shape} for {weight.shape[0]} outputs", node=f"linear({bias.label})")
        parents.append(bias)

    def forward(out: Tensor) -> np.ndarray:
        result = x.data @ weight.data.T
        if bias is not None:
            result = result + bias.data
        return result

    def backward(out: Tensor) -> None:
        accumulate(x, out.grad @ weight.data)
        accumulate(weight, out.grad.T @ x.data)
        if bias is not None:
            accumulate(bias, out.grad.sum(axis=0))

    return node("linear", parents, forward, backward)


def interp(query: ArrayLike, knots: ArrayLike, values: ArrayLike) -> Tensor:
    """Batched piecewise-linear interpolation, differentiable in all three inputs.

    Shapes: query (B, L), knots (B, m) non-decreasing, values (B, d, m);
    result (B, d, L). Queries outside the knot range take the end values.
    Cells narrower than EPS_DIV are flagged and contribute no gradient.
    """
    query, knots, values = as_tensor(query), as_tensor(knots), as_tensor(values)
    if (
        query.data.ndim != 2
        or knots.data.ndim != 2
        or values.data.ndim != 3
        or knots.shape[0] != query.shape[0]
        or values.shape[0] != query.shape[0]
        or values.shape[2] != knots.shape[1]
        or knots.shape[1] < 2
    ):
        raise ShapeError(
            f"interp query {query.shape}, knots {knots.shape}, values {values.shape}",
            node="interp",
        )
    batch, m = knots.shape
    channels = values.shape[1]

    def forward(out: Tensor) -> np.ndarray:
        cell = np.empty(query.shape, dtype=np.intp)
        for b in range(batch):
            cell[b] = np.searchsorted(knots.data[b], query.data[b], side="right") - 1
        np.clip(cell, 0, m - 2, out=cell)
        left = np.take_along_axis(knots.data, cell, axis=1)
        right = np.take_along_axis(knots.data, cell + 1, axis=1)
        width = right - left
        narrow = width < EPS_DIV
        out.guarded = bool(narrow.any())
        safe = np.where(narrow, EPS_DIV, width)
        weight = (query.data - left) / safe
        inside = (weight >= 0.0) & (weight <= 1.0) & ~narrow
        weight = np.clip(weight, 0.0, 1.0)
        cell3 = np.broadcast_to(cell[:, None, :], (batch, channels, cell.shape[1]))
        lower = np.take_along_axis(values.data, cell3, axis=2)
        upper = np.take_along_axis(values.data, cell3 + 1, axis=2)
        out.meta.update(cell=cell, weight=weight, safe=safe, inside=inside, lower=lower, upper=upper)
        w3 = weight[:, None, :]
        return (1.0 - w3) * lower + w3 * upper

    def backward(out: Tensor) -> None:
        grad = out.grad
        cell, weight, safe, inside = (out.meta[k] for k in ("cell", "weight", "safe", "inside"))
        if values.requires_grad:
            w3 = weight[:, None, :]
            offsets = (np.arange(batch)[:, None, None] * channels + np.arange(channels)[None, :, None]) * m
            flat = offsets + cell[:, None, :]
            size = batch * channels * m
            grad_values = np.bincount(flat.ravel(), weights=(grad * (1.0 - w3)).ravel(), minlength=size)
            grad_values += np.bincount((flat + 1).ravel(), weights=(grad * w3).ravel(), minlength=size)
            accumulate(values, grad_values.reshape(values.shape))
        if not (query.requires_grad or knots.requires_grad):
            return
        slope_grad = (grad * (out.meta["upper"] - out.meta["lower"])).sum(axis=1)
        slope_grad = np.where(inside, slope_grad, 0.0) / safe
        if query.requires_grad:
            accumulate(query, slope_grad)
        if knots.requires_grad:
            flat = np.arange(batch)[:, None] * m + cell
            size = batch * m
            grad_knots = np.bincount(flat.ravel(), weights=(slope_grad * (weight - 1.0)).ravel(), minlength=size)
            grad_knots += np.bincount((flat + 1).ravel(), weights=(-slope_grad * weight).ravel(), minlength=size)
            accumulate(knots, grad_knots.reshape(knots.shape))

    return node("interp", (query, knots, values), forward, backward)


def central_diff(x: ArrayLike, grid: np.ndarray) -> Tensor:
    """Derivative along the last axis on ``grid``.

    Central differences at interior points, one-sided differences at the ends.
    """
    x = as_tensor(x)
    grid = np.asarray(grid, dtype=np.float64)
    if x.shape[-1] != grid.shape[0] or grid.shape[0] < 2:
        raise ShapeError(f"central_diff values {x.shape} on grid of {grid.shape[0]}", node="central_diff")
    h_first = grid[1] - grid[0]
    h_last = grid[-1] - grid[-2]
    h_mid = grid[2:] - grid[:-2]

    def forward(out: Tensor) -> np.ndarray:
        data = x.data
        result = np.empty_like(data)
        result[..., 0] = (data[..., 1] - data[..., 0]) / h_first
        result[..., -1] = (data[..., -1] - data[..., -2]) / h_last
        result[..., 1:-1] = (data[..., 2:] - data[..., :-2]) / h_mid
        return result

    def backward(out: Tensor) -> None:
        grad = out.grad
        result = np.zeros(x.shape)
        result[..., 0] -= grad[..., 0] / h_first
        result[..., 1] += grad[..., 0] / h_first
        result[..., -1] += grad[..., -1] / h_last
        result[..., -2] -= grad[..., -1] / h_last
        mid = grad[..., 1:-1] / h_mid
        result[..., 2:] += mid
        result[..., :-2] -= mid
        accumulate(x, result)

    return node("central_diff", (x,), forward, backward)


def central_diff_array(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Plain-array version of ``central_diff``."""
    return central_diff(values, grid).data
