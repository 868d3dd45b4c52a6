"""Basis evaluation, Gram matrices and least-squares projection of aligned curves.

A curve sampled on a grid is summarized by K coefficients c solving the
normal equations G c = d, where d_j = integral of x * phi_j and G is the Gram
matrix of the basis. Both integrals use the trapezoidal rule on the data grid,
so projection is one constant linear map P = (W Phi) G^-1 applied along the
time axis. That keeps ``project`` differentiable when fed a Tensor.
"""

import logging
import typing as t
from dataclasses import dataclass

import numpy as np
from scipy import integrate, linalg

from ..core import tensor as T
from ..core.tensor import Tensor
from ..errors import ConfigError, DegenerateError, ShapeError

logger = logging.getLogger(__name__)

#: Gram matrices with a larger 2-norm condition number are refused.
MAX_CONDITION = 1e12

GridLike = t.Union[np.ndarray, t.Sequence[float], t.Any]


def _grid_points(grid: GridLike) -> np.ndarray:
    points = getattr(grid, "points", grid)
    return np.asarray(points, dtype=np.float64)


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    """Weights w such that w @ f equals the trapezoidal integral of f on ``points``."""
    steps = np.diff(points)
    weights = np.zeros_like(points)
    weights[:-1] += steps / 2.0
    weights[1:] += steps / 2.0
    return weights


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Basis functions evaluated on one grid, with their Gram matrix.

    ``phi`` has shape (n + 1, K); ``gram`` is K x K; ``projector`` maps
    values (..., n + 1) to coefficients (..., K) and is ``None`` when the Gram
    matrix could not be factorized.
    """

    family: str
    points: np.ndarray
    phi: np.ndarray
    gram: np.ndarray
    weights: np.ndarray
    condition: float
    projector: t.Optional[np.ndarray]

    @property
    def K(self) -> int:
        return int(self.phi.shape[1])

    @property
    def n_points(self) -> int:
        return int(self.points.size)

    def matches(self, grid: GridLike) -> bool:
        points = _grid_points(grid)
        return points.shape == self.points.shape and bool(np.array_equal(points, self.points))


def make_basis(family: str, phi: np.ndarray, points: np.ndarray) -> BasisSet:
    """Assemble a BasisSet from evaluated basis columns on ``points``."""
    phi = np.asarray(phi, dtype=np.float64)
    weights = trapezoid_weights(points)
    gram = integrate.trapezoid(phi[:, :, None] * phi[:, None, :], x=points, axis=0)
    gram = 0.5 * (gram + gram.T)
    condition = float(np.linalg.cond(gram))
    projector = None
    if np.isfinite(condition) and condition <= MAX_CONDITION:
        try:
            factor = linalg.cho_factor(gram)
            projector = linalg.cho_solve(factor, (weights[:, None] * phi).T).T
        except linalg.LinAlgError:
            projector = None
    if projector is None:
        logger.warning(f"{family} basis with K={phi.shape[1]} has a singular Gram matrix (cond={condition:.3e})")
    else:
        logger.debug(f"{family} basis with K={phi.shape[1]}: Gram condition number {condition:.3e}")
    for array in (phi, gram, weights, points):
        array.setflags(write=False)
    return BasisSet(family, points, phi, gram, weights, condition, projector)


class BasisFamily:
    """A named family of basis functions; subclasses implement ``evaluate``."""

    name = "base"

    def evaluate(self, K: int, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def build(self, K: int, grid: GridLike) -> BasisSet:
        points = _grid_points(grid)
        if K < 1:
            raise ConfigError(f"basis size K must be at least 1, got {K}")
        if K > points.size - 1:
            raise ConfigError(f"K={K} exceeds n={points.size - 1}; the projection would be underdetermined")
        return make_basis(self.name, self.evaluate(K, points), points.copy())


class FourierBasis(BasisFamily):
    """1, sqrt(2) sin(2 pi k t), sqrt(2) cos(2 pi k t), ... normalized on L2[0, 1]."""

    name = "fourier"

    def evaluate(self, K: int, points: np.ndarray) -> np.ndarray:
        phi = np.empty((points.size, K))
        phi[:, 0] = 1.0
        for j in range(1, K):
            k = (j + 1) // 2
            wave = np.sin if j % 2 == 1 else np.cos
            phi[:, j] = np.sqrt(2.0) * wave(2.0 * np.pi * k * points)
        return phi


def fourier_basis(K: int, grid: GridLike) -> BasisSet:
    return FourierBasis().build(K, grid)


def _check_values(values_shape: t.Tuple[int, ...], basis: BasisSet) -> None:
    if not values_shape or values_shape[-1] != basis.n_points:
        raise ShapeError(
            f"values with {values_shape[-1] if values_shape else 0} grid points vs basis on {basis.n_points}",
            node="project",
        )


def project(values: t.Union[Tensor, np.ndarray], basis: BasisSet) -> t.Union[Tensor, np.ndarray]:
    """Least-squares coefficients along the last axis: (..., n + 1) -> (..., K).

    Tensors stay in the graph (the Gram matrix is constant); arrays return arrays.
    """
    if basis.projector is None or basis.condition > MAX_CONDITION:
        raise DegenerateError(f"Gram matrix is numerically singular (condition {basis.condition:.3e})")
    if isinstance(values, Tensor):
        _check_values(values.shape, basis)
        if values.data.ndim == 1:
            return T.reshape(T.matmul(T.reshape(values, (1, basis.n_points)), basis.projector), (basis.K,))
        return T.matmul(values, basis.projector)
    array = np.asarray(values, dtype=np.float64)
    _check_values(array.shape, basis)
    return array @ basis.projector


def reconstruct(coefficients: t.Union[Tensor, np.ndarray], basis: BasisSet) -> t.Union[Tensor, np.ndarray]:
    """Evaluate sum_j c_j phi_j on the basis grid: (..., K) -> (..., n + 1)."""
    if isinstance(coefficients, Tensor):
        if coefficients.shape[-1] != basis.K:
            raise ShapeError(f"{coefficients.shape[-1]} coefficients for K={basis.K}", node="reconstruct")
        if coefficients.data.ndim == 1:
            row = T.reshape(coefficients, (1, basis.K))
            return T.reshape(T.matmul(row, basis.phi.T), (basis.n_points,))
        return T.matmul(coefficients, basis.phi.T)
    array = np.asarray(coefficients, dtype=np.float64)
    if array.shape[-1] != basis.K:
        raise ShapeError(f"{array.shape[-1]} coefficients for K={basis.K}", node="reconstruct")
    return array @ basis.phi.T
