"""Tests for graph replay, the reverse sweep and gradient checks."""

import numpy as np
import pytest

from deepfrc.core import tensor as T
from deepfrc.core.graph import Graph, topological_order
from deepfrc.core.tensor import parameter
from deepfrc.errors import GraphStateError, ShapeError


class TestTopologicalOrder:
    """Test node ordering."""

    def test_parents_come_first(self):
        """Every node appears after all of its parents."""
        x = parameter([1.0], "x")
        y = T.square(x)
        z = y + x
        order = topological_order([z])
        position = {id(n): i for i, n in enumerate(order)}
        for current in order:
            for parent in current._parents:
                assert position[id(parent)] < position[id(current)]

    def test_shared_nodes_appear_once(self):
        """A node reached along two paths is listed once."""
        x = parameter([1.0], "x")
        y = T.square(x)
        order = topological_order([y * y])
        assert sum(1 for n in order if n is y) == 1


class TestForwardEval:
    """Test replaying a recorded graph."""

    def test_replay_with_new_leaf_values(self):
        """Assigning a named leaf recomputes every output."""
        x = parameter([1.0, 2.0], "x")
        graph = Graph({"y": T.sum(T.square(x))})
        assert graph.forward_eval({"x": [3.0, 4.0]})["y"][0] == pytest.approx(25.0)

    def test_unknown_leaf(self):
        """Inputs must name an existing leaf."""
        graph = Graph(T.square(parameter([1.0], "x")))
        with pytest.raises(ShapeError):
            graph.forward_eval({"missing": [1.0]})

    def test_wrong_input_shape(self):
        """Inputs must keep the leaf's shape."""
        graph = Graph(T.square(parameter([1.0, 2.0], "x")))
        with pytest.raises(ShapeError):
            graph.forward_eval({"x": [1.0]})

    def test_duplicate_leaf_names(self):
        """Two distinct leaves may not share a name."""
        a = parameter([1.0], "w")
        b = parameter([2.0], "w")
        with pytest.raises(ShapeError):
            Graph(a + b)

    def test_non_strict_replay_tolerates_guards(self):
        """Guards still clamp but do not raise outside strict mode."""
        x = parameter([0.0], "x")
        graph = Graph(T.sum(T.sqrt(x)))
        result = graph.forward_eval(strict=False)
        assert result["output"][0] == pytest.approx(1e-4)


class TestBackwardGrad:
    """Test the reverse sweep."""

    def test_requires_forward_first(self):
        """A graph that was never evaluated cannot be differentiated."""
        graph = Graph(T.sum(T.square(parameter([1.0], "x"))))
        with pytest.raises(GraphStateError):
            graph.backward_grad()

    def test_root_must_be_scalar(self):
        """Only shape-(1,) roots can be differentiated."""
        graph = Graph(T.square(parameter([1.0, 2.0], "x")), evaluated=True)
        with pytest.raises(GraphStateError):
            graph.backward_grad()

    def test_paths_are_summed(self):
        """x * x + x has derivative 2x + 1."""
        x = parameter([1.5, -2.0], "x")
        grads = Graph(T.sum(x * x + x), evaluated=True).backward_grad()
        np.testing.assert_allclose(grads["x"], [4.0, -3.0])

    def test_unused_leaf_gets_zeros(self):
        """Leaves the chosen root does not depend on receive zeros."""
        x = parameter([1.0], "x")
        z = parameter([2.0, 3.0], "z")
        graph = Graph({"a": T.sum(T.square(x)), "b": T.sum(z)}, evaluated=True)
        grads = graph.backward_grad("a")
        np.testing.assert_allclose(grads["x"], [2.0])
        np.testing.assert_allclose(grads["z"], [0.0, 0.0])

    def test_several_outputs_need_a_root(self):
        """With several outputs the root must be named."""
        x = parameter([1.0], "x")
        graph = Graph({"a": T.sum(x), "b": T.sum(T.square(x))}, evaluated=True)
        with pytest.raises(GraphStateError):
            graph.backward_grad()
        with pytest.raises(GraphStateError):
            graph.backward_grad("c")

    def test_repeated_sweeps_do_not_accumulate(self):
        """Each sweep starts from cleared gradients."""
        x = parameter([2.0], "x")
        graph = Graph(T.sum(T.square(x)), evaluated=True)
        graph.backward_grad()
        np.testing.assert_allclose(graph.backward_grad()["x"], [4.0])

    def test_tensor_backward_fills_leaf_grads(self):
        """Tensor.backward is a shortcut for the graph sweep."""
        x = parameter([3.0], "x")
        T.sum(T.square(x)).backward()
        np.testing.assert_allclose(x.grad, [6.0])


class TestGradCheck:
    """Test the finite-difference checker."""

    def test_correct_gradient_has_small_error(self, rng):
        """A smooth function passes the check."""
        x = parameter(rng.normal(size=5), "x")
        graph = Graph(T.sum(T.exp(x) * T.square(x)), evaluated=True)
        assert graph.grad_check("x", step=1e-6) < 1e-6

    def test_restores_leaf_values(self, rng):
        """The perturbed leaf is restored afterwards."""
        start = rng.normal(size=4)
        x = parameter(start, "x")
        graph = Graph(T.sum(T.square(x)), evaluated=True)
        graph.grad_check("x")
        np.testing.assert_array_equal(x.data, start)

    def test_subset_of_entries(self):
        """entries limits which coordinates are perturbed."""
        x = parameter([1.0, 2.0, 3.0], "x")
        graph = Graph(T.sum(T.square(x)), evaluated=True)
        assert graph.grad_check("x", entries=[1]) < 1e-6

    @pytest.mark.parametrize("step", [0.0, -1e-5, 0.1])
    def test_step_range(self, step):
        """The step must lie in (0, 1e-2]."""
        graph = Graph(T.sum(parameter([1.0], "x")), evaluated=True)
        with pytest.raises(ValueError):
            graph.grad_check("x", step=step)

    def test_unknown_leaf(self):
        """Only named leaves can be checked."""
        graph = Graph(T.sum(parameter([1.0], "x")), evaluated=True)
        with pytest.raises(ShapeError):
            graph.grad_check("y")
