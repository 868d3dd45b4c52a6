"""Tests for the AdamW optimizer and learning-rate decay."""

import numpy as np
import pytest

from deepfrc.core import tensor as T
from deepfrc.core.graph import Graph
from deepfrc.errors import NonFiniteGradientError
from deepfrc.training.optim import AdamState, AdamW, adamw_step, decayed_lr


class TestDecayedLr:
    """Test inverse-time decay."""

    def test_values(self):
        """lr / (1 + t / c0)."""
        assert decayed_lr(1e-3, 0, 10.0) == 1e-3
        assert decayed_lr(1e-3, 10, 10.0) == pytest.approx(5e-4)
        assert decayed_lr(1e-3, 30, 10.0) == pytest.approx(2.5e-4)

    def test_disabled(self):
        """A non-positive c0 keeps the rate constant."""
        assert decayed_lr(1e-3, 1000, 0.0) == 1e-3


class TestAdamwStep:
    """Test a single update."""

    def test_first_step_is_sign_step(self):
        """After bias correction the first step moves by about lr in the gradient's direction."""
        params, state = adamw_step({"p": np.array([1.0, -1.0])}, {"p": np.array([2.0, -0.5])}, AdamState(), 0.1, weight_decay=0.0)
        np.testing.assert_allclose(params["p"], [0.9, -0.9], rtol=1e-6)
        assert state.step == 1

    def test_decoupled_weight_decay(self):
        """With zero gradient only the decay term moves the parameter."""
        params, _ = adamw_step({"p": np.array([2.0])}, {"p": np.array([0.0])}, AdamState(), 0.1, weight_decay=0.5)
        np.testing.assert_allclose(params["p"], [2.0 - 0.1 * 0.5 * 2.0])

    def test_missing_gradient_counts_as_zero(self):
        """Parameters without a gradient only decay."""
        params, _ = adamw_step({"p": np.array([1.0])}, {}, AdamState(), 0.1, weight_decay=0.0)
        np.testing.assert_array_equal(params["p"], [1.0])

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_non_finite_gradient(self, bad):
        """A NaN or Inf gradient raises and leaves the state alone."""
        state = AdamState()
        with pytest.raises(NonFiniteGradientError):
            adamw_step({"p": np.zeros(2)}, {"p": np.array([1.0, bad])}, state, 0.1)
        assert state.step == 0
        assert state.m == {}

    def test_state_round_trip(self):
        """Moments survive to_dict and from_dict."""
        _, state = adamw_step({"p": np.ones((2, 2))}, {"p": np.full((2, 2), 0.3)}, AdamState(), 0.1)
        restored = AdamState.from_dict(state.to_dict())
        assert restored.step == 1
        np.testing.assert_array_equal(restored.m["p"], state.m["p"])
        np.testing.assert_array_equal(restored.v["p"], state.v["p"])


class TestAdamW:
    """Test the grouped optimizer."""

    def test_minimizes_quadratic(self):
        """Repeated steps drive x^2 toward 0."""
        x = T.parameter([3.0], "x")
        optimizer = AdamW({"only": {"x": x}}, {"only": 0.1})
        for _ in range(200):
            grads = Graph(T.square(x), evaluated=True).backward_grad()
            optimizer.step(grads)
            x = optimizer.groups["only"]["x"]
        assert abs(x.data[0]) < 0.5

    def test_updates_in_place(self):
        """Tensors keep their identity and receive new data."""
        x = T.parameter([1.0], "x")
        optimizer = AdamW({"g": {"x": x}}, {"g": 0.1})
        optimizer.step({"x": np.array([1.0])})
        assert optimizer.groups["g"]["x"] is x
        assert x.data[0] < 1.0

    def test_frozen_group(self):
        """Frozen groups neither move nor advance their step counter."""
        a, b = T.parameter([1.0], "a"), T.parameter([1.0], "b")
        optimizer = AdamW({"reg": {"a": a}, "class": {"b": b}}, {"reg": 0.1, "class": 0.1})
        optimizer.frozen.add("reg")
        optimizer.step({"a": np.array([1.0]), "b": np.array([1.0])})
        assert a.data[0] == 1.0
        assert b.data[0] < 1.0
        assert optimizer.state["reg"].step == 0
        assert optimizer.state["class"].step == 1

    def test_group_learning_rates(self):
        """Each group steps with its own rate."""
        a, b = T.parameter([0.0], "a"), T.parameter([0.0], "b")
        optimizer = AdamW({"reg": {"a": a}, "class": {"b": b}}, {"reg": 0.01, "class": 0.1}, weight_decay=0.0)
        optimizer.step({"a": np.array([-1.0]), "b": np.array([-1.0])})
        assert a.data[0] == pytest.approx(0.01, rel=1e-6)
        assert b.data[0] == pytest.approx(0.1, rel=1e-6)

    def test_learning_rate_decays_with_steps(self):
        """lr(group) follows the update counter."""
        x = T.parameter([1.0], "x")
        optimizer = AdamW({"g": {"x": x}}, {"g": 1.0}, decay_c0=2.0)
        assert optimizer.lr("g") == 1.0
        optimizer.step({"x": np.array([1.0])})
        optimizer.step({"x": np.array([1.0])})
        assert optimizer.lr("g") == pytest.approx(0.5)

    def test_missing_learning_rate(self):
        """Every group needs a learning rate."""
        with pytest.raises(ValueError):
            AdamW({"reg": {}, "class": {}}, {"reg": 0.1})

    def test_non_finite_gradient_leaves_parameters(self):
        """All gradients are checked before any group moves."""
        a, b = T.parameter([1.0], "a"), T.parameter([1.0], "b")
        optimizer = AdamW({"reg": {"a": a}, "class": {"b": b}}, {"reg": 0.1, "class": 0.1})
        with pytest.raises(NonFiniteGradientError):
            optimizer.step({"a": np.array([1.0]), "b": np.array([np.nan])})
        assert a.data[0] == 1.0

    def test_state_dict(self):
        """Saved state restores the step counters."""
        x = T.parameter([1.0], "x")
        optimizer = AdamW({"g": {"x": x}}, {"g": 0.1})
        optimizer.step({"x": np.array([1.0])})
        fresh = AdamW({"g": {"x": x}}, {"g": 0.1})
        fresh.load_state_dict(optimizer.state_dict())
        assert fresh.state["g"].step == 1
        with pytest.raises(ValueError):
            fresh.load_state_dict({"other": optimizer.state_dict()["g"]})
