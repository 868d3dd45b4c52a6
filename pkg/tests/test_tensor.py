"""Tests for tensor primitives and their adjoints."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deepfrc.core import tensor as T
from deepfrc.core.graph import Graph
from deepfrc.core.tensor import EPS_DIV, Tensor, parameter, unbroadcast
from deepfrc.errors import GuardEngagedError, ShapeError


def gradient(scalar: Tensor, leaf: Tensor) -> np.ndarray:
    return Graph(scalar, evaluated=True).backward_grad()[leaf.name]


class TestTensorBasics:
    """Test construction and operator sugar."""

    def test_scalar_is_stored_with_shape_one(self):
        """A 0-d value becomes shape (1,)."""
        assert Tensor(3.0).shape == (1,)
        assert Tensor(3.0).item() == 3.0

    def test_item_rejects_arrays(self):
        """item() needs exactly one element."""
        with pytest.raises(ValueError):
            Tensor([1.0, 2.0]).item()

    def test_operator_sugar_matches_functions(self):
        """Infix operators build the same values as the named primitives."""
        a = parameter([1.0, 2.0], "a")
        b = parameter([3.0, 4.0], "b")
        result = (a + 2.0) * b - a / b
        expected = (np.array([1.0, 2.0]) + 2.0) * np.array([3.0, 4.0]) - np.array([1.0, 2.0]) / np.array([3.0, 4.0])
        np.testing.assert_allclose(result.data, expected)
        assert result.requires_grad

    def test_constants_do_not_require_grad(self):
        """Nodes over constants only stay constant."""
        out = T.constant([1.0]) * 2.0
        assert not out.requires_grad

    def test_label_prefers_name(self):
        """Leaves are labelled by name, nodes by op."""
        x = parameter([1.0], "weight")
        assert x.label == "weight"
        assert T.square(x).label == "square"


class TestBroadcasting:
    """Test broadcasting in forward and backward."""

    def test_unbroadcast_sums_added_axes(self):
        """Leading axes that broadcasting added are summed away."""
        np.testing.assert_allclose(unbroadcast(np.ones((2, 3)), (3,)), [2.0, 2.0, 2.0])

    def test_unbroadcast_sums_stretched_axes(self):
        """Axes of size one are summed with keepdims."""
        np.testing.assert_allclose(unbroadcast(np.ones((2, 3)), (1, 3)), [[2.0, 2.0, 2.0]])

    def test_broadcast_multiply_gradients(self):
        """d sum(a * b) routes the other factor back with the right shape."""
        a = parameter(np.arange(6.0).reshape(2, 3), "a")
        b = parameter([1.0, 2.0, 3.0], "b")
        grads = Graph(T.sum(a * b), evaluated=True).backward_grad()
        np.testing.assert_allclose(grads["a"], np.tile([1.0, 2.0, 3.0], (2, 1)))
        np.testing.assert_allclose(grads["b"], [3.0, 5.0, 7.0])

    def test_incompatible_shapes_raise(self):
        """Shapes that cannot broadcast raise ShapeError."""
        with pytest.raises(ShapeError):
            T.add(np.ones(3), np.ones(4))


class TestGuards:
    """Test epsilon guards on denominators and square roots."""

    def test_divide_clamps_small_denominators(self):
        """Dividing by zero uses EPS_DIV and flags the node."""
        out = T.divide(1.0, 0.0)
        assert out.guarded
        assert out.item() == pytest.approx(1.0 / EPS_DIV)

    def test_divide_without_clamp_is_clean(self):
        """Ordinary denominators leave the node unflagged."""
        assert not T.divide(1.0, 2.0).guarded

    def test_divide_keeps_negative_denominators(self):
        """Negative denominators divide as they are; tiny negative ones clamp to -EPS_DIV."""
        assert T.divide(3.0, -2.0).item() == pytest.approx(-1.5)
        assert not T.divide(3.0, -2.0).guarded
        out = T.divide(1.0, -1e-12)
        assert out.guarded
        assert out.item() == pytest.approx(-1.0 / EPS_DIV)

    def test_reciprocal_keeps_sign(self):
        """The reciprocal guard clamps by magnitude."""
        np.testing.assert_allclose(T.reciprocal([-4.0, -1e-12, 0.0]).data, [-0.25, -1.0 / EPS_DIV, 1.0 / EPS_DIV])

    def test_strict_replay_reports_guarded_node(self):
        """Strict evaluation names the node whose guard engaged."""
        x = parameter([1.0], "x")
        y = parameter([0.0], "y")
        graph = Graph(T.sum(T.divide(x, y)))
        with pytest.raises(GuardEngagedError) as e:
            graph.forward_eval()
        assert e.value.node == "divide"

    def test_sqrt_guard_has_no_gradient(self):
        """A clamped square root passes no gradient back."""
        x = parameter([0.0, 4.0], "x")
        out = T.sqrt(x)
        assert out.guarded
        np.testing.assert_allclose(gradient(T.sum(out), x), [0.0, 0.25])

    def test_norm_of_zero_vector(self):
        """The zero vector has norm 0 and a zero subgradient."""
        x = parameter(np.zeros((1, 3)), "x")
        out = T.norm(x)
        assert out.data[0] == 0.0
        np.testing.assert_allclose(gradient(T.sum(out), x), np.zeros((1, 3)))

    def test_log_guard(self):
        """log of zero is clamped and flagged."""
        out = T.log(np.array([0.0]))
        assert out.guarded
        assert out.item() == pytest.approx(np.log(EPS_DIV))


class TestUnaryAndReductions:
    """Test unary adjoints, reductions and scans."""

    def test_relu_subgradient_at_zero(self):
        """ReLU passes gradient only where the input is positive."""
        x = parameter([-1.0, 0.0, 2.0], "x")
        np.testing.assert_allclose(gradient(T.sum(T.relu(x)), x), [0.0, 0.0, 1.0])

    def test_stop_gradient_blocks_one_path(self):
        """Only the unstopped factor contributes."""
        x = parameter([1.0, 2.0, 3.0], "x")
        np.testing.assert_allclose(gradient(T.sum(T.stop_gradient(x) * x), x), [1.0, 2.0, 3.0])

    def test_cumsum_adjoint_is_reverse_cumsum(self):
        """The adjoint of a running sum is a suffix sum."""
        x = parameter([1.0, 2.0, 3.0], "x")
        weights = np.array([1.0, 10.0, 100.0])
        np.testing.assert_allclose(gradient(T.sum(T.cumsum(x) * weights), x), [111.0, 110.0, 100.0])

    def test_mean_of_all_entries(self):
        """mean without an axis averages every entry into shape (1,)."""
        out = T.mean(np.arange(4.0).reshape(2, 2))
        assert out.shape == (1,)
        assert out.item() == pytest.approx(1.5)

    def test_pad_left_and_last(self):
        """pad_left prepends zeros; last keeps the final entry and its axis."""
        np.testing.assert_allclose(T.pad_left(np.array([[1.0, 2.0]])).data, [[0.0, 1.0, 2.0]])
        np.testing.assert_allclose(T.last(np.array([[1.0, 2.0, 3.0]])).data, [[3.0]])

    def test_reshape_size_mismatch(self):
        """Reshaping to a different size raises ShapeError."""
        with pytest.raises(ShapeError):
            T.reshape(np.ones(6), (4,))

    def test_matmul_inner_dimension_mismatch(self):
        """matmul checks the contracted dimension."""
        with pytest.raises(ShapeError):
            T.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_matvec_batches_vectors(self):
        """matvec applies one matrix to each vector of a batch."""
        matrix = np.array([[1.0, 0.0], [1.0, 1.0]])
        vectors = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_allclose(T.matvec(matrix, vectors).data, vectors @ matrix.T)


class TestWarpPrimitives:
    """Test the primitives that turn raw outputs into warps."""

    def test_normalized_cumsum_ends_at_one(self):
        """Each row runs up to exactly 1."""
        out = T.normalized_cumsum(np.array([[0.0, 1.0, 1.0, 2.0]]))
        np.testing.assert_allclose(out.data, [[0.0, 0.25, 0.5, 1.0]])
        assert not out.guarded

    def test_normalized_cumsum_zero_row_falls_back_to_ramp(self):
        """An all-zero row becomes the equal-increment ramp."""
        out = T.normalized_cumsum(np.zeros((1, 4)))
        assert out.guarded
        np.testing.assert_allclose(out.data, [[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]])

    def test_normalized_cumsum_needs_two_entries(self):
        """A single entry cannot form a warp."""
        with pytest.raises(ShapeError):
            T.normalized_cumsum(np.ones((2, 1)))

    def test_monotone_ramp_spreads_flat_rows(self):
        """Flat stretches are lifted above the minimum gap; endpoints stay put."""
        x = np.array([[0.0, 0.5, 0.5, 1.0], [0.0, 0.2, 0.6, 1.0]])
        out = T.monotone_ramp(x)
        assert out.meta["ramped"] == 1
        assert not out.guarded
        assert np.all(np.diff(out.data[0]) > EPS_DIV)
        assert out.data[0, 0] == pytest.approx(0.0)
        assert out.data[0, -1] == pytest.approx(1.0)
        np.testing.assert_allclose(out.data[1], x[1])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (2, 6), elements=st.floats(min_value=0.01, max_value=10.0)))
    def test_normalized_cumsum_is_monotone(self, increments):
        """Positive increments give non-decreasing rows ending at 1."""
        out = T.normalized_cumsum(increments).data
        assert np.all(np.diff(out, axis=-1) >= 0.0)
        np.testing.assert_allclose(out[:, -1], 1.0)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=st.floats(min_value=-50.0, max_value=50.0)))
    def test_softmax_rows_sum_to_one(self, logits):
        """softmax is a probability vector along the last axis."""
        out = T.softmax(logits).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0)
        assert np.all(out >= 0.0)


class TestAdjointsAgainstFiniteDifferences:
    """Compare reverse-mode gradients with central differences."""

    def test_smooth_composite(self, rng):
        """log, exp, softmax and division chain correctly."""
        x = parameter(rng.normal(size=(3, 4)), "x")
        out = T.sum(T.log(T.exp(x) + 1.0) * T.softmax(x) / (T.square(x) + 1.0))
        assert Graph(out, evaluated=True).grad_check("x", step=1e-6) < 1e-6

    def test_matmul(self, rng):
        """Both matmul operands get correct gradients."""
        a = parameter(rng.normal(size=(2, 3)), "a")
        b = parameter(rng.normal(size=(3, 4)), "b")
        graph = Graph(T.sum(T.square(T.matmul(a, b))), evaluated=True)
        assert graph.grad_check("a", step=1e-6) < 1e-6
        assert graph.grad_check("b", step=1e-6) < 1e-6

    def test_normalized_cumsum(self, rng):
        """The warp normalization adjoint matches finite differences."""
        x = parameter(rng.uniform(0.5, 2.0, size=(2, 5)), "x")
        weights = rng.normal(size=(2, 5))
        out = T.sum(T.normalized_cumsum(x) * weights)
        assert Graph(out, evaluated=True).grad_check("x", step=1e-6) < 1e-6

    def test_norm(self, rng):
        """The norm adjoint away from the origin."""
        x = parameter(rng.normal(size=(3, 4)), "x")
        out = T.sum(T.norm(x, axis=1))
        assert Graph(out, evaluated=True).grad_check("x", step=1e-6) < 1e-6
