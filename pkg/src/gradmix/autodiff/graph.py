"""Recording graph and reverse-mode differentiation.

Tensors are plain ``numpy.ndarray`` values. A :class:`Graph` records every
kernel application as a :class:`Node` in insertion order, which is also a
valid topological order, so backward is a single reverse sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .kernels import KERNELS, AutodiffError, get_kernel


class Parameter:
    """A trainable tensor with its gradient and Adam moment buffers."""

    def __init__(self, value: np.ndarray, name: str = ""):
        value = np.asarray(value)
        if value.ndim == 0:
            value = value.reshape(1)
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def astype(self, dtype) -> "Parameter":
        p = Parameter(self.value.astype(dtype), self.name)
        p.m = self.m.astype(dtype)
        p.v = self.v.astype(dtype)
        return p

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.value.dtype})"


class Node:
    __slots__ = ("graph", "id", "kind", "inputs", "params", "value", "cache",
                 "grad", "requires_grad", "parameter")

    def __init__(self, graph, id, kind, inputs, params, value, cache, requires_grad,
                 parameter=None):
        self.graph = graph
        self.id = id
        self.kind = kind
        self.inputs = inputs
        self.params = params
        self.value = value
        self.cache = cache
        self.grad = None
        self.requires_grad = requires_grad
        self.parameter = parameter

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(#{self.id} {self.kind} shape={self.shape})"


@dataclass
class FeatureTaps:
    """Snapshot of tapped activations and their loss gradients, keyed by tap name."""

    activations: dict[str, np.ndarray] = field(default_factory=dict)
    gradients: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return list(self.activations)

    def __getitem__(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name not in self.activations:
            raise KeyError(f"no tap named {name!r}; available: {self.names}")
        return self.activations[name], self.gradients[name]

    def __contains__(self, name: str) -> bool:
        return name in self.activations

    def select(self, rows) -> "FeatureTaps":
        """Restrict every tap to a subset of batch rows."""
        return FeatureTaps(
            {k: v[rows] for k, v in self.activations.items()},
            {k: v[rows] for k, v in self.gradients.items()},
        )


class Graph:
    """Single-threaded tape of kernel applications."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []
        self.taps: dict[str, int] = {}
        self._param_nodes: dict[int, Node] = {}
        self.backward_done = False

    # -- leaves -------------------------------------------------------------
    def _leaf(self, kind, value, requires_grad, parameter=None) -> Node:
        node = Node(self, len(self.nodes), kind, (), {}, value, None, requires_grad, parameter)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self._leaf("constant", np.asarray(value, dtype=self.dtype), False)

    def variable(self, value) -> Node:
        return self._leaf("variable", np.array(value, dtype=self.dtype), True)

    def parameter(self, p: Parameter) -> Node:
        node = self._param_nodes.get(id(p))
        if node is not None:
            return node
        if p.value.dtype != self.dtype:
            raise AutodiffError(
                f"parameter {p.name!r} has dtype {p.value.dtype}, graph expects {self.dtype}")
        node = self._leaf("parameter", p.value, True, p)
        self._param_nodes[id(p)] = node
        return node

    # -- kernels ------------------------------------------------------------
    def apply(self, kind: str, *inputs: Node, **params: Any) -> Node:
        kernel = get_kernel(kind)
        for x in inputs:
            if not isinstance(x, Node) or x.graph is not self:
                raise AutodiffError(f"{kind}: inputs must be nodes of this graph")
        out, cache = kernel.forward(*[x.value for x in inputs], **params)
        node = Node(self, len(self.nodes), kind, tuple(x.id for x in inputs), params,
                    out, cache, any(x.requires_grad for x in inputs))
        self.nodes.append(node)
        return node

    def tap(self, name: str, node: Node) -> Node:
        if name in self.taps:
            raise AutodiffError(f"tap {name!r} registered twice")
        if node.graph is not self:
            raise AutodiffError(f"tap {name!r}: node belongs to a different graph")
        # a tapped activation always receives its gradient, even above constants
        node.requires_grad = True
        self.taps[name] = node.id
        return node

    @property
    def parameters(self) -> list[Parameter]:
        return [n.parameter for n in self._param_nodes.values()]

    # -- replay -------------------------------------------------------------
    def replay(self, overrides: dict[int, np.ndarray] | None = None, dtype=None,
               upto: int | None = None) -> np.ndarray:
        """Re-run the recorded forward pass, optionally replacing node values.

        Leaves and overridden nodes take the given values (cast to ``dtype``),
        every other node is recomputed from its inputs. Kernels with side
        effects (batch-norm running statistics) are replayed without them.
        Returns the value of node ``upto`` (default: the last node).
        """
        overrides = overrides or {}
        dtype = self.dtype if dtype is None else np.dtype(dtype)
        last = len(self.nodes) - 1 if upto is None else upto
        values: list[np.ndarray] = []
        for node in self.nodes[: last + 1]:
            if node.id in overrides:
                values.append(np.asarray(overrides[node.id], dtype=dtype))
            elif not node.inputs and node.kind in ("constant", "variable", "parameter"):
                values.append(node.value.astype(dtype))
            else:
                params = dict(node.params)
                if "update" in params:
                    params["update"] = False
                out, _ = KERNELS[node.kind].forward(*[values[i] for i in node.inputs], **params)
                values.append(out)
        return values[last]


def backward(graph: Graph, loss: Node, accumulate: bool = True) -> dict[int, np.ndarray]:
    """Populate gradients of ``loss`` for every node it depends on.

    With ``accumulate`` (the default) parameter gradients are added into
    ``Parameter.grad``; zero them between steps. Pass ``accumulate=False`` to
    leave parameters untouched (node gradients are still available).
    """
    if loss.graph is not graph:
        raise AutodiffError("loss node belongs to a different graph")
    if loss.value.size != 1:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.shape}")
    for node in graph.nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(graph.nodes[: loss.id + 1]):
        if node.grad is None or not node.inputs or not node.requires_grad:
            continue
        inputs = [graph.nodes[i] for i in node.inputs]
        grads = KERNELS[node.kind].backward(
            node.grad, [x.value for x in inputs], node.value, node.cache, **node.params)
        for x, g in zip(inputs, grads):
            if g is None or not x.requires_grad:
                continue
            if g.shape != x.value.shape:
                raise AutodiffError(
                    f"{node.kind}: reverse rule returned shape {g.shape} for input of shape {x.shape}")
            x.grad = g if x.grad is None else x.grad + g
    for node in graph._param_nodes.values():
        if accumulate and node.grad is not None:
            node.parameter.grad = node.parameter.grad + node.grad.astype(node.parameter.grad.dtype)
    graph.backward_done = True
    return {n.id: n.grad for n in graph.nodes if n.grad is not None}


def tap_gradients(graph: Graph, names=None) -> FeatureTaps:
    """Copy out tapped activations and their gradients after ``backward``."""
    if not graph.backward_done:
        raise AutodiffError("tap_gradients called before backward")
    names = list(graph.taps) if names is None else list(names)
    taps = FeatureTaps()
    for name in names:
        if name not in graph.taps:
            raise AutodiffError(f"tap {name!r} was not registered before the forward pass")
        node = graph.nodes[graph.taps[name]]
        grad = node.grad if node.grad is not None else np.zeros_like(node.value)
        taps.activations[name] = node.value.copy()
        taps.gradients[name] = grad.copy()
    return taps
