"""Recorded computation graphs: replay, reverse sweep and finite-difference checks."""

import logging
import typing as t

import numpy as np

from ..errors import GraphStateError, GuardEngagedError, ShapeError
from .tensor import Tensor

logger = logging.getLogger(__name__)


def topological_order(roots: t.Iterable[Tensor]) -> t.List[Tensor]:
    """Return every ancestor of ``roots`` with parents before children."""
    order: t.List[Tensor] = []
    visited: t.Set[int] = set()
    for root in roots:
        if id(root) in visited:
            continue
        stack: t.List[t.Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            current, expanded = stack.pop()
            if expanded:
                order.append(current)
                continue
            if id(current) in visited:
                continue
            visited.add(id(current))
            stack.append((current, True))
            for parent in reversed(current._parents):
                if id(parent) not in visited:
                    stack.append((parent, False))
    return order


class Graph:
    """A frozen view of the nodes that produce a set of named outputs.

    Leaves are addressed by their ``name``; unnamed leaves are constants that
    ``forward_eval`` never changes. The structure is fixed at construction, and
    concurrent use of one Graph instance is not supported (replay writes into
    the node arrays).
    """

    def __init__(
        self,
        outputs: t.Union[Tensor, t.Mapping[str, Tensor]],
        evaluated: bool = False,
    ) -> None:
        if isinstance(outputs, Tensor):
            outputs = {outputs.name or "output": outputs}
        self.outputs: t.Dict[str, Tensor] = dict(outputs)
        self.nodes = topological_order(self.outputs.values())
        self.leaves: t.Dict[str, Tensor] = {}
        for current in self.nodes:
            if current.is_leaf and current.name is not None:
                if current.name in self.leaves and self.leaves[current.name] is not current:
                    raise ShapeError("two distinct leaves share one name", node=current.name)
                self.leaves[current.name] = current
        self._evaluated = evaluated

    @property
    def evaluated(self) -> bool:
        return self._evaluated

    def parameters(self) -> t.Dict[str, Tensor]:
        return {name: leaf for name, leaf in self.leaves.items() if leaf.requires_grad}

    def forward_eval(
        self,
        inputs: t.Optional[t.Mapping[str, t.Any]] = None,
        strict: bool = True,
    ) -> t.Dict[str, np.ndarray]:
        """Assign named leaf values and recompute every node in order.

        In strict mode a node whose epsilon guard engaged raises
        ``GuardEngagedError`` naming the node.
        """
        for name, value in (inputs or {}).items():
            if name not in self.leaves:
                raise ShapeError("no leaf with this name in the graph", node=name)
            leaf = self.leaves[name]
            array = np.array(value, dtype=np.float64)
            if array.ndim == 0:
                array = array.reshape(1)
            if array.shape != leaf.shape:
                raise ShapeError(f"expected shape {leaf.shape}, got {array.shape}", node=name)
            leaf.data = array
        for current in self.nodes:
            if current._forward is None:
                continue
            current.data = current._forward(current)
            if strict and current.guarded:
                raise GuardEngagedError("denominator or sqrt argument fell below the guard", node=current.label)
        self._evaluated = True
        return {name: out.data.copy() for name, out in self.outputs.items()}

    def _root(self, root: t.Optional[t.Union[str, Tensor]]) -> Tensor:
        if root is None:
            if len(self.outputs) != 1:
                raise GraphStateError("graph has several outputs; name the scalar root")
            return next(iter(self.outputs.values()))
        if isinstance(root, Tensor):
            return root
        if root not in self.outputs:
            raise GraphStateError(f"unknown output {root!r}")
        return self.outputs[root]

    def backward_grad(self, root: t.Optional[t.Union[str, Tensor]] = None) -> t.Dict[str, np.ndarray]:
        """Gradients of a scalar output with respect to every trainable leaf.

        Contributions along all paths are summed. Leaves that the root does not
        depend on receive zeros.
        """
        if not self._evaluated:
            raise GraphStateError("backward_grad called before forward_eval")
        scalar = self._root(root)
        if scalar.shape != (1,):
            raise GraphStateError(f"backward needs a scalar root of shape (1,), got {scalar.shape}")
        order = topological_order([scalar])
        for current in order:
            current.grad = None
        scalar.grad = np.ones(1)
        for current in reversed(order):
            if current._backward is not None and current.grad is not None and current.requires_grad:
                current._backward(current)
        grads = {}
        for name, leaf in self.parameters().items():
            grads[name] = leaf.grad.copy() if leaf.grad is not None else np.zeros(leaf.shape)
        return grads

    def grad_check(
        self,
        leaf: str,
        step: float = 1e-5,
        root: t.Optional[t.Union[str, Tensor]] = None,
        entries: t.Optional[t.Sequence[int]] = None,
    ) -> float:
        """Largest |analytic - central difference| / max(1, |analytic|) over ``leaf``.

        ``entries`` restricts the check to a subset of flat indices.
        """
        if not 0.0 < step <= 1e-2:
            raise ValueError(f"step must lie in (0, 1e-2], got {step}")
        if leaf not in self.leaves:
            raise ShapeError("no leaf with this name in the graph", node=leaf)
        scalar = self._root(root)
        if scalar.shape != (1,):
            raise GraphStateError(f"grad_check needs a scalar root of shape (1,), got {scalar.shape}")
        target = self.leaves[leaf]
        original = target.data.copy()

        self.forward_eval(strict=False)
        analytic = self.backward_grad(scalar)
        if leaf in analytic:
            analytic_flat = analytic[leaf].reshape(-1)
        else:
            analytic_flat = np.zeros(original.size)

        indices = range(original.size) if entries is None else entries
        worst = 0.0
        try:
            for index in indices:
                perturbed = original.copy().reshape(-1)
                perturbed[index] = original.reshape(-1)[index] + step
                target.data = perturbed.reshape(original.shape)
                self.forward_eval(strict=False)
                upper = scalar.data[0]
                perturbed[index] = original.reshape(-1)[index] - step
                target.data = perturbed.reshape(original.shape)
                self.forward_eval(strict=False)
                lower = scalar.data[0]
                numeric = (upper - lower) / (2.0 * step)
                error = abs(analytic_flat[index] - numeric) / max(1.0, abs(analytic_flat[index]))
                worst = max(worst, error)
        finally:
            target.data = original
            self.forward_eval(strict=False)
        logger.debug(f"grad_check {leaf}: max relative error {worst:.3e}")
        return float(worst)


def forward_eval(graph: Graph, inputs: t.Optional[t.Mapping[str, t.Any]] = None) -> t.Dict[str, np.ndarray]:
    return graph.forward_eval(inputs)


def backward_grad(graph: Graph, root: t.Optional[t.Union[str, Tensor]] = None) -> t.Dict[str, np.ndarray]:
    return graph.backward_grad(root)


def grad_check(graph: Graph, leaf: str, step: float = 1e-5) -> float:
    return graph.grad_check(leaf, step)
