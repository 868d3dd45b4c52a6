"""AdamW with per-group learning rates and inverse-time decay."""

import logging
import typing as t
from dataclasses import dataclass, field

import numpy as np

from ..core.tensor import Tensor
from ..errors import NonFiniteGradientError

logger = logging.getLogger(__name__)


def decayed_lr(lr: float, step: int, c0: float) -> float:
    """lr / (1 + step / c0) for c0 > 0, else lr. ``step`` counts completed updates."""
    if c0 <= 0:
        return lr
    return lr / (1.0 + step / c0)


@dataclass
class AdamState:
    """First and second moments per parameter plus the update counter."""

    step: int = 0
    m: t.Dict[str, np.ndarray] = field(default_factory=dict)
    v: t.Dict[str, np.ndarray] = field(default_factory=dict)

    def to_dict(self) -> t.Dict[str, t.Any]:
        return {
            "step": self.step,
            "m": {name: array.tolist() for name, array in self.m.items()},
            "v": {name: array.tolist() for name, array in self.v.items()},
        }

    @classmethod
    def from_dict(cls, payload: t.Mapping[str, t.Any]) -> "AdamState":
        return cls(
            int(payload["step"]),
            {name: np.asarray(values, dtype=np.float64) for name, values in payload["m"].items()},
            {name: np.asarray(values, dtype=np.float64) for name, values in payload["v"].items()},
        )


def adamw_step(
    params: t.Mapping[str, np.ndarray],
    grads: t.Mapping[str, np.ndarray],
    state: AdamState,
    lr_t: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 1e-4,
) -> t.Tuple[t.Dict[str, np.ndarray], AdamState]:
    """One decoupled-weight-decay Adam update; returns new arrays and a new state.

    p <- p - lr_t * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)

    Raises NonFiniteGradientError (leaving ``state`` untouched) when any
    gradient holds NaN or Inf.
    """
    for name in params:
        grad = grads.get(name)
        if grad is not None and not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(f"gradient of {name} is not finite")
    step = state.step + 1
    new_params, m, v = {}, dict(state.m), dict(state.v)
    for name, value in params.items():
        grad = grads.get(name)
        grad = np.zeros_like(value) if grad is None else np.asarray(grad, dtype=np.float64)
        m[name] = beta1 * m.get(name, np.zeros_like(value)) + (1.0 - beta1) * grad
        v[name] = beta2 * v.get(name, np.zeros_like(value)) + (1.0 - beta2) * grad * grad
        m_hat = m[name] / (1.0 - beta1**step)
        v_hat = v[name] / (1.0 - beta2**step)
        new_params[name] = value - lr_t * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * value)
    return new_params, AdamState(step, m, v)


class AdamW:
    """AdamW over named parameter groups, each with its own base learning rate.

    Example
    -------
    >>> optimizer = AdamW({"reg": warp_params, "class": clf_params}, {"reg": 1e-3, "class": 1e-3})
    >>> optimizer.step(grads)
    """

    def __init__(
        self,
        groups: t.Mapping[str, t.Mapping[str, Tensor]],
        lrs: t.Mapping[str, float],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 1e-4,
        decay_c0: float = 0.0,
    ) -> None:
        missing = set(groups) - set(lrs)
        if missing:
            raise ValueError(f"no learning rate for parameter groups {sorted(missing)}")
        self.groups = {name: dict(params) for name, params in groups.items()}
        self.lrs = dict(lrs)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.decay_c0 = decay_c0
        self.frozen: t.Set[str] = set()
        self.state = {name: AdamState() for name in self.groups}

    def lr(self, group: str) -> float:
        return decayed_lr(self.lrs[group], self.state[group].step, self.decay_c0)

    def step(self, grads: t.Mapping[str, np.ndarray]) -> None:
        """Update every unfrozen group in place; all gradients are checked first."""
        for name, grad in grads.items():
            if not np.all(np.isfinite(grad)):
                raise NonFiniteGradientError(f"gradient of {name} is not finite")
        for group, params in self.groups.items():
            if group in self.frozen:
                continue
            values = {name: tensor.data for name, tensor in params.items()}
            updated, self.state[group] = adamw_step(
                values,
                {name: grads[name] for name in params if name in grads},
                self.state[group],
                self.lr(group),
                self.beta1,
                self.beta2,
                self.eps,
                self.weight_decay,
            )
            for name, tensor in params.items():
                tensor.data = updated[name]

    def state_dict(self) -> t.Dict[str, t.Any]:
        return {group: state.to_dict() for group, state in self.state.items()}

    def load_state_dict(self, payload: t.Mapping[str, t.Any]) -> None:
        for group, state in payload.items():
            if group not in self.groups:
                raise ValueError(f"saved optimizer state for unknown group {group!r}")
            self.state[group] = AdamState.from_dict(state)
