"""Tests for layer-level primitives."""

import numpy as np
import pytest

from deepfrc.core import functional as F
from deepfrc.core import tensor as T
from deepfrc.core.graph import Graph
from deepfrc.core.tensor import parameter
from deepfrc.errors import ShapeError
from deepfrc.states import BatchNormMode


class TestConvolution:
    """Test conv1d."""

    def test_identity_kernel(self):
        """A centred unit kernel reproduces the input."""
        x = np.arange(10.0).reshape(1, 2, 5)
        weight = np.zeros((2, 2, 3))
        weight[0, 0, 1] = weight[1, 1, 1] = 1.0
        np.testing.assert_allclose(F.conv1d(x, weight).data, x)

    def test_zero_padding_preserves_length(self):
        """A summing kernel sees zeros beyond the ends."""
        x = np.ones((1, 1, 4))
        out = F.conv1d(x, np.ones((1, 1, 3)))
        np.testing.assert_allclose(out.data, [[[2.0, 3.0, 3.0, 2.0]]])

    def test_even_kernel_rejected(self):
        """Only odd kernels keep the length."""
        with pytest.raises(ShapeError):
            F.conv1d(np.ones((1, 1, 4)), np.ones((1, 1, 2)))

    def test_gradients(self, rng):
        """Input, weight and bias gradients match finite differences."""
        x = parameter(rng.normal(size=(2, 2, 6)), "x")
        weight = parameter(rng.normal(size=(3, 2, 3)), "w")
        bias = parameter(rng.normal(size=3), "b")
        graph = Graph(T.sum(T.square(F.conv1d(x, weight, bias))), evaluated=True)
        for leaf in ("x", "w", "b"):
            assert graph.grad_check(leaf, step=1e-6) < 1e-6


class TestPooling:
    """Test max_pool1d."""

    def test_drops_remainder(self):
        """A trailing element that does not fill a window is dropped."""
        out = F.max_pool1d(np.array([[[1.0, 3.0, 2.0, 0.0, 9.0]]]))
        np.testing.assert_allclose(out.data, [[[3.0, 2.0]]])

    def test_ties_route_to_first_index(self):
        """Equal maxima send the gradient to the earlier entry."""
        x = parameter(np.array([[[1.0, 1.0]]]), "x")
        grads = Graph(T.sum(F.max_pool1d(x)), evaluated=True).backward_grad()
        np.testing.assert_allclose(grads["x"], [[[1.0, 0.0]]])

    def test_too_short(self):
        """Inputs shorter than one window raise."""
        with pytest.raises(ShapeError):
            F.max_pool1d(np.ones((1, 1, 1)))


class TestBatchNorm:
    """Test batch_norm1d in both modes."""

    def test_train_mode_normalizes(self, rng):
        """Training output has zero mean and unit variance per channel."""
        x = rng.normal(3.0, 2.0, size=(4, 2, 8))
        out = F.batch_norm1d(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2))
        np.testing.assert_allclose(out.data.mean(axis=(0, 2)), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.data.var(axis=(0, 2)), 1.0, atol=1e-4)
        np.testing.assert_allclose(out.meta["batch_mean"], x.mean(axis=(0, 2)))

    def test_eval_mode_uses_running_stats(self):
        """Evaluation mode ignores the batch statistics."""
        x = np.full((2, 1, 3), 5.0)
        out = F.batch_norm1d(x, np.ones(1), np.zeros(1), np.array([1.0]), np.array([4.0]), mode=BatchNormMode.EVAL)
        np.testing.assert_allclose(out.data, 4.0 / np.sqrt(4.0 + F.BN_EPS))

    @pytest.mark.parametrize("mode", [BatchNormMode.TRAIN, BatchNormMode.EVAL])
    def test_gradients(self, rng, mode):
        """Gradients match finite differences in both modes."""
        x = parameter(rng.normal(size=(3, 2, 5)), "x")
        scale = parameter(rng.uniform(0.5, 1.5, size=2), "scale")
        shift = parameter(rng.normal(size=2), "shift")
        weights = rng.normal(size=(3, 2, 5))
        out = F.batch_norm1d(x, scale, shift, np.zeros(2), np.ones(2), mode=mode)
        graph = Graph(T.sum(out * weights), evaluated=True)
        for leaf in ("x", "scale", "shift"):
            assert graph.grad_check(leaf, step=1e-6) < 1e-5


class TestLinearAndAverage:
    """Test linear and global_avg."""

    def test_linear_values(self):
        """x W^T + b."""
        out = F.linear(np.array([[1.0, 2.0]]), np.array([[1.0, 1.0], [0.0, 2.0]]), np.array([0.5, -1.0]))
        np.testing.assert_allclose(out.data, [[3.5, 3.0]])

    def test_linear_shape_check(self):
        """Input width must match the weight."""
        with pytest.raises(ShapeError):
            F.linear(np.ones((2, 3)), np.ones((4, 2)))

    def test_global_avg(self):
        """Averages over time."""
        np.testing.assert_allclose(F.global_avg(np.arange(6.0).reshape(1, 2, 3)).data, [[1.0, 4.0]])


class TestInterp:
    """Test batched linear interpolation."""

    def test_matches_numpy(self, rng):
        """Values agree with np.interp row by row."""
        knots = np.sort(rng.uniform(0, 1, size=(2, 6)), axis=1)
        knots[:, 0], knots[:, -1] = 0.0, 1.0
        values = rng.normal(size=(2, 1, 6))
        query = rng.uniform(0, 1, size=(2, 9))
        out = F.interp(query, knots, values).data
        for b in range(2):
            np.testing.assert_allclose(out[b, 0], np.interp(query[b], knots[b], values[b, 0]))

    def test_out_of_range_takes_end_values(self):
        """Queries beyond the knots clamp to the end values."""
        out = F.interp(np.array([[-0.5, 1.5]]), np.array([[0.0, 1.0]]), np.array([[[2.0, 3.0]]]))
        np.testing.assert_allclose(out.data, [[[2.0, 3.0]]])

    def test_gradients(self):
        """Query, knot and value gradients match finite differences."""
        query = parameter(np.array([[0.13, 0.42, 0.77]]), "query")
        knots = parameter(np.array([[0.0, 0.3, 0.6, 1.0]]), "knots")
        values = parameter(np.array([[[1.0, -2.0, 0.5, 3.0], [0.0, 1.0, 4.0, 2.0]]]), "values")
        graph = Graph(T.sum(T.square(F.interp(query, knots, values))), evaluated=True)
        for leaf in ("query", "knots", "values"):
            assert graph.grad_check(leaf, step=1e-7) < 1e-5

    def test_shape_check(self):
        """Knot and value lengths must agree."""
        with pytest.raises(ShapeError):
            F.interp(np.zeros((1, 3)), np.zeros((1, 4)), np.zeros((1, 1, 3)))


class TestCentralDiff:
    """Test the grid derivative."""

    def test_exact_on_linear_functions(self):
        """Central and one-sided differences are exact for lines, even on uneven grids."""
        grid = np.array([0.0, 0.1, 0.35, 0.6, 1.0])
        np.testing.assert_allclose(F.central_diff_array(3.0 * grid + 1.0, grid), 3.0)

    def test_gradient(self, rng):
        """The adjoint matches finite differences."""
        grid = np.linspace(0.0, 1.0, 6)
        x = parameter(rng.normal(size=(2, 6)), "x")
        graph = Graph(T.sum(T.square(F.central_diff(x, grid))), evaluated=True)
        assert graph.grad_check("x", step=1e-6) < 1e-6
