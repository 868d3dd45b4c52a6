"""Tests for SRVFs, warped SRVFs, the sensitivity oracle and class means."""

import numpy as np
import pytest
from scipy import integrate

from deepfrc.core import tensor as T
from deepfrc.core.graph import Graph
from deepfrc.data.synthgen import exp_warp
from deepfrc.errors import EmptyClassError, WarpInvalidError
from deepfrc.model.srvf import (
    class_means,
    srvf_transform,
    warped_srvf,
    warped_srvf_autodiff_gradient,
    warped_srvf_grad_oracle,
)


def oracle_gap(n: int) -> float:
    points = np.linspace(0.0, 1.0, n)
    q = srvf_transform(points + 0.1 * np.sin(2.0 * np.pi * points), points)
    gamma = exp_warp(points, 1.0)
    oracle = warped_srvf_grad_oracle(q, gamma, points)
    autodiff = warped_srvf_autodiff_gradient(q, gamma, points)
    return float(np.linalg.norm(autodiff - oracle) / np.linalg.norm(oracle))


class TestSrvfTransform:
    """Test q = sign(x') sqrt(|x'|)."""

    def test_unit_slope(self):
        """x(t) = t has q = 1."""
        points = np.linspace(0.0, 1.0, 11)
        np.testing.assert_allclose(srvf_transform(points, points), 1.0)

    def test_negative_slope(self):
        """x(t) = -t has q = -1."""
        points = np.linspace(0.0, 1.0, 11)
        np.testing.assert_allclose(srvf_transform(-points, points), -1.0)

    def test_square(self):
        """x(t) = t^2 gives q close to sqrt(2t) inside the grid."""
        points = np.linspace(0.0, 1.0, 101)
        q = srvf_transform(points**2, points)
        assert np.max(np.abs(q[1:-1] - np.sqrt(2.0 * points[1:-1]))) <= 2e-2

    def test_constant_curve(self):
        """A flat curve has a zero SRVF."""
        points = np.linspace(0.0, 1.0, 5)
        np.testing.assert_array_equal(srvf_transform(np.full(5, 3.0), points), 0.0)


class TestWarpedSrvf:
    """Test the warp action on SRVFs."""

    def test_identity(self, rng):
        """The identity warp leaves q unchanged."""
        points = np.linspace(0.0, 1.0, 20)
        q = rng.normal(size=(3, 2, 20))
        out = warped_srvf(q, np.tile(points, (3, 1)), points)
        np.testing.assert_allclose(out, q, atol=1e-12)

    def test_constant_q(self):
        """q = 1 gives sqrt of the central-difference slope."""
        points = np.linspace(0.0, 1.0, 5)
        gamma = np.array([0.0, 0.1, 0.3, 0.6, 1.0])
        out = warped_srvf(np.ones(5), gamma, points)
        np.testing.assert_allclose(out, np.sqrt([0.4, 0.6, 1.0, 1.4, 1.6]))

    def test_non_increasing_warp(self):
        """A flat stretch makes the slope non-positive."""
        points = np.linspace(0.0, 1.0, 5)
        with pytest.raises(WarpInvalidError):
            warped_srvf(np.ones(5), np.array([0.0, 0.5, 0.5, 0.5, 1.0]), points)

    @pytest.mark.parametrize("b", [-1.5, -0.5, 0.5, 1.5])
    def test_energy_is_preserved(self, b):
        """Reparameterization keeps the SRVF norm on a fine grid."""
        points = np.linspace(0.0, 1.0, 1000)
        q = srvf_transform(np.sin(2.0 * np.pi * points) + points**2, points)
        warped = warped_srvf(q, exp_warp(points, b), points)
        before = integrate.trapezoid(q**2, x=points)
        after = integrate.trapezoid(warped**2, x=points)
        assert after == pytest.approx(before, rel=0.02)

    def test_gradient(self, rng):
        """Gradients in q and in the warp pass a gradient check."""
        points = np.linspace(0.0, 1.0, 8)
        q = T.parameter(rng.normal(size=(1, 1, 8)), "q")
        gamma = T.parameter(exp_warp(points, 0.8)[None, :], "gamma")
        weights = rng.normal(size=(1, 1, 8))
        graph = Graph(T.sum(warped_srvf(q, gamma, points) * weights), evaluated=True)
        assert graph.grad_check("q", step=1e-6) < 1e-6
        assert graph.grad_check("gamma", step=1e-7, entries=[1, 2, 3, 4, 5, 6]) < 1e-4


class TestGradientOracle:
    """Test the closed-form warp sensitivity."""

    def test_constant_q_identity_warp(self):
        """Both terms vanish."""
        points = np.linspace(0.0, 1.0, 9)
        np.testing.assert_allclose(warped_srvf_grad_oracle(np.full(9, 2.0), points, points), 0.0, atol=1e-12)

    def test_linear_q_identity_warp(self):
        """q(t) = t under the identity has unit sensitivity."""
        points = np.linspace(0.0, 1.0, 9)
        oracle = warped_srvf_grad_oracle(points, points, points)
        assert oracle.shape == (8,)
        np.testing.assert_allclose(oracle, 1.0)

    def test_rejects_flat_warp(self):
        """A non-positive slope has no square root."""
        points = np.linspace(0.0, 1.0, 5)
        with pytest.raises(WarpInvalidError):
            warped_srvf_grad_oracle(np.ones(5), np.array([0.0, 0.0, 0.0, 0.0, 1.0]), points)

    def test_agrees_with_reverse_mode(self):
        """On a smooth curve the two agree within 1e-2 at 1000 points."""
        assert oracle_gap(1000) <= 1e-2

    def test_gap_shrinks_with_refinement(self):
        """Doubling the grid roughly halves the gap."""
        assert oracle_gap(2000) < 0.75 * oracle_gap(1000)


class TestClassMeans:
    """Test per-class SRVF means."""

    def test_hand_values(self):
        """Means are componentwise averages per class."""
        srvfs = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 9.0]])
        means = class_means(srvfs, [0, 0, 1], 2)
        np.testing.assert_allclose(means, [[2.0, 3.0], [5.0, 9.0]])

    def test_identical_samples(self):
        """Identical samples average to themselves."""
        srvfs = np.tile([0.5, -1.0, 2.0], (4, 1))
        np.testing.assert_allclose(class_means(srvfs, [0, 0, 0, 0], 1), srvfs[:1])

    def test_empty_class(self):
        """Every class needs a sample."""
        with pytest.raises(EmptyClassError):
            class_means(np.ones((2, 3)), [0, 0], 2)
