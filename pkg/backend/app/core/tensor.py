"""
Dense float64 arrays and the tape that differentiates through them.

A ``RealArray`` is an immutable numpy buffer with an identity. Operations in
``app.core.ops`` append a node to the innermost ``CompGraph`` that is recording
whenever one of their inputs is tracked by it; ``backward`` then walks the
nodes in reverse and accumulates vector-Jacobian products.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from app.core.exceptions import GraphError, NonFiniteError, ShapeError

_ids = itertools.count()
_local = threading.local()

VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class RealArray:
    """Immutable 64-bit real array; ``requires_grad`` marks a graph leaf."""

    __slots__ = ("_data", "requires_grad", "id", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 op: str = "array"):
        arr = np.array(data, dtype=np.float64)
        if any(extent <= 0 for extent in arr.shape):
            raise ShapeError(op, arr.shape, detail="extents must be positive")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(op)
        arr.setflags(write=False)
        self._data = arr
        self.requires_grad = requires_grad
        self.id = next(_ids)
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, op: str) -> "RealArray":
        return cls(arr, op=op)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError("item", self.shape, detail="not a scalar")
        return float(self._data.reshape(()))

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"RealArray(shape={self.shape}{label})"

    # Operator sugar; the implementations live in app.core.ops
    def __add__(self, other):
        from app.core import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from app.core import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from app.core import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from app.core import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from app.core import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from app.core import ops
        return ops.mul(other, self)

    def __neg__(self):
        from app.core import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from app.core import ops
        return ops.matmul(self, other)

    @property
    def T(self) -> "RealArray":
        from app.core import ops
        return ops.transpose(self)


def as_array(value) -> RealArray:
    """Wrap constants; RealArrays pass through untouched."""
    if isinstance(value, RealArray):
        return value
    return RealArray(value, op="constant")


@dataclass(frozen=True)
class Node:
    """One recorded primitive application."""

    index: int
    op: str
    inputs: tuple[RealArray, ...]
    output: RealArray
    vjp: VJP


class CompGraph:
    """Ordered record of primitive ops plus one gradient slot per tracked array."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._producer: dict[int, int] = {}
        self._grads: dict[int, np.ndarray] = {}

    @contextmanager
    def record(self) -> Iterator["CompGraph"]:
        stack = _graph_stack()
        stack.append(self)
        try:
            yield self
        finally:
            stack.pop()

    def tracks(self, array: RealArray) -> bool:
        return array.requires_grad or array.id in self._producer

    def add_node(self, op: str, inputs: Sequence[RealArray], output: RealArray, vjp: VJP) -> None:
        node = Node(len(self.nodes), op, tuple(inputs), output, vjp)
        self.nodes.append(node)
        self._producer[output.id] = node.index

    def grad(self, array: RealArray) -> Optional[np.ndarray]:
        """Gradient slot of ``array`` after the last backward pass (None if unreached)."""
        slot = self._grads.get(array.id)
        return None if slot is None else slot.copy()

    def backward(self, root: RealArray) -> "CompGraph":
        if root.size != 1:
            raise GraphError(f"backward root must be scalar, got shape {root.shape}")
        if root.id not in self._producer:
            if root.requires_grad:
                self._grads = {root.id: np.ones(root.shape)}
                return self
            raise GraphError("backward root was not recorded by this graph")
        root_index = self._producer[root.id]
        self._check_order(root_index)

        grads: dict[int, np.ndarray] = {root.id: np.ones(root.shape)}
        for node in reversed(self.nodes[:root_index + 1]):
            upstream = grads.get(node.output.id)
            if upstream is None:
                continue
            contributions = node.vjp(upstream)
            for source, contribution in zip(node.inputs, contributions):
                if contribution is None or not self.tracks(source):
                    continue
                if contribution.shape != source.shape:
                    raise ShapeError(f"{node.op}.vjp", contribution.shape, source.shape)
                slot = grads.get(source.id)
                grads[source.id] = contribution.copy() if slot is None else slot + contribution
        self._grads = grads
        return self

    def _check_order(self, upto: int) -> None:
        for node in self.nodes[:upto + 1]:
            for source in node.inputs:
                producer = self._producer.get(source.id)
                if producer is not None and producer >= node.index:
                    raise GraphError(
                        f"cycle detected: node {node.index} ({node.op}) consumes "
                        f"output of node {producer}"
                    )


def backward(graph: CompGraph, root: RealArray) -> CompGraph:
    """Populate ``graph``'s gradient slots with d(root)/d(every tracked array)."""
    return graph.backward(root)


def _graph_stack() -> list[CompGraph]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_graph() -> Optional[CompGraph]:
    stack = _graph_stack()
    return stack[-1] if stack else None


def emit(op: str, inputs: Sequence[RealArray], value: np.ndarray, vjp: VJP) -> RealArray:
    """Wrap a forward result and record it on the active graph if any input is tracked."""
    out = RealArray._wrap(value, op)
    graph = active_graph()
    if graph is not None and any(graph.tracks(t) for t in inputs):
        graph.add_node(op, inputs, out, vjp)
    return out
