"""MLP over spectral coefficients with a probability floor on its softmax."""

import logging
import typing as t

import numpy as np
from traitlets import Float, Int, List, TraitError, validate
from traitlets.config import Configurable

from ..core import functional as F
from ..core import tensor as T
from ..core.tensor import Tensor
from ..errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

#: Headroom applied to the floor when picking the smoothing constant.
FLOOR_MARGIN = 1.1


def smoothing_constant(n_classes: int, prob_floor: float) -> float:
    """lambda such that (softmax + lambda) / (1 + C lambda) never drops below ``prob_floor``.

    Uses lambda = 1.1 * floor when that already clears the floor (C up to ~900
    for the default floor), otherwise solves lambda / (1 + C lambda) = 1.1 * floor.
    """
    a = FLOOR_MARGIN * prob_floor
    if a / (1.0 + n_classes * a) >= prob_floor:
        return a
    if n_classes * a >= 1.0:
        raise ConfigError(f"probability floor {prob_floor} is too large for {n_classes} classes")
    return a / (1.0 - n_classes * a)


def smoothed_softmax(logits: Tensor, prob_floor: float) -> Tensor:
    n_classes = logits.shape[-1]
    lam = smoothing_constant(n_classes, prob_floor)
    return T.multiply(T.add(T.softmax(logits, axis=-1), lam), 1.0 / (1.0 + n_classes * lam))


class Classifier(Configurable):
    """Affine layers K*d -> hidden... -> C with ReLU between them.

    Parameters are named ``clf.fc{l}.weight`` and ``clf.fc{l}.bias``.
    """

    hidden = List(Int(), default_value=[8, 4], config=True, help="Hidden layer widths.")

    prob_floor = Float(
        1e-4,
        config=True,
        help="Lower bound every class probability is kept above (must be below 1/C).",
    )

    @validate("hidden")
    def _validate_hidden(self, proposal):
        value = proposal["value"]
        if any(width < 1 for width in value):
            raise TraitError(f"hidden widths must be positive, got {value}")
        return value

    @validate("prob_floor")
    def _validate_prob_floor(self, proposal):
        value = proposal["value"]
        if not 0.0 < value < 1.0:
            raise TraitError(f"prob_floor must lie in (0, 1), got {value}")
        return value

    def __init__(self, n_inputs: int, n_classes: int, rng: t.Optional[np.random.Generator] = None, **kwargs: t.Any):
        super().__init__(**kwargs)
        self.n_inputs = int(n_inputs)
        self.n_classes = int(n_classes)
        if self.prob_floor >= 1.0 / self.n_classes:
            raise ConfigError(f"prob_floor {self.prob_floor} must be below 1/C = {1.0 / self.n_classes}")
        self.params: t.Dict[str, Tensor] = {}
        self.init_params(rng if rng is not None else np.random.default_rng(0))

    @property
    def widths(self) -> t.List[int]:
        return [self.n_inputs] + list(self.hidden) + [self.n_classes]

    def init_params(self, rng: np.random.Generator) -> None:
        params = {}
        widths = self.widths
        for layer, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            bound = np.sqrt(1.0 / fan_in)
            params[f"clf.fc{layer}.weight"] = rng.uniform(-bound, bound, (fan_out, fan_in))
            params[f"clf.fc{layer}.bias"] = np.full(fan_out, 0.01)
        self.params = {name: T.parameter(value, name) for name, value in params.items()}

    def logits(self, coefficients: t.Union[Tensor, np.ndarray]) -> Tensor:
        h = T.as_tensor(coefficients)
        if h.data.ndim != 2 or h.shape[1] != self.n_inputs:
            raise ShapeError(f"expected (B, {self.n_inputs}) coefficients, got {h.shape}", node="clf.input")
        n_layers = len(self.widths) - 1
        for layer in range(1, n_layers + 1):
            h = F.linear(h, self.params[f"clf.fc{layer}.weight"], self.params[f"clf.fc{layer}.bias"])
            if layer < n_layers:
                h = T.relu(h)
        return h

    def classify(self, coefficients: t.Union[Tensor, np.ndarray]) -> Tensor:
        """Probabilities (B, C), each at least ``prob_floor``, rows summing to 1."""
        return smoothed_softmax(self.logits(coefficients), self.prob_floor)


def classify(coefficients: t.Union[Tensor, np.ndarray], classifier: Classifier) -> Tensor:
    return classifier.classify(coefficients)
