"""Tape-based reverse-mode automatic differentiation over dense 2-D float64 matrices.

Every value on a tape is a 2-D ``numpy.ndarray``.  Backward passes are themselves
recorded on the tape as ordinary operations, so the gradient returned by
:meth:`Tape.grad` with ``create_graph=True`` can be fed into further operations
and differentiated again (double backprop, used by the gradient penalty).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an operation."""


class TrainingDiverged(FloatingPointError):
    """Raised when a loss or gradient becomes non-finite."""


def as_matrix(value, name: str = "value") -> np.ndarray:
    """Coerce ``value`` to a finite 2-D float64 array.

    Scalars become 1x1, vectors become a single row.
    """
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"{name}: expected at most 2 dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite entries rejected")
    return arr


class Node:
    """One recorded value on a tape."""

    __slots__ = ("id", "kind", "inputs", "value", "attrs")

    def __init__(self, id: int, kind: str, inputs: tuple, value: np.ndarray, attrs: dict):
        self.id = id
        self.kind = kind
        self.inputs = inputs
        self.value = value
        self.attrs = attrs

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, kind={self.kind!r}, shape={self.value.shape})"


def _broadcast_shape(a: np.ndarray, b: np.ndarray, kind: str):
    out = []
    for da, db in zip(a.shape, b.shape):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ShapeError(f"{kind}: cannot broadcast {a.shape} with {b.shape}")
    return tuple(out)


# ---------------------------------------------------------------------------
# forward rules: (values, attrs) -> array
# ---------------------------------------------------------------------------


def _fwd_matmul(vals, attrs):
    a, b = vals
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    return a @ b


def _fwd_binary(fn):
    def fwd(vals, attrs, _fn=fn):
        a, b = vals
        if a.ndim != 2 or b.ndim != 2:
            raise ShapeError("binary ops require 2-D operands")
        _broadcast_shape(a, b, _fn.__name__)
        return _fn(a, b)

    return fwd


def _fwd_reduce(fn):
    def fwd(vals, attrs, _fn=fn):
        axis = attrs.get("axis")
        if axis is None:
            return np.array([[_fn(vals[0])]])
        return _fn(vals[0], axis=axis, keepdims=True)

    return fwd


def _fwd_concat(vals, attrs):
    axis = attrs["axis"]
    other = 1 - axis
    dims = {v.shape[other] for v in vals}
    if len(dims) != 1:
        raise ShapeError(f"concat along axis {axis}: mismatched shapes {[v.shape for v in vals]}")
    return np.concatenate(vals, axis=axis)


def _fwd_slice(vals, attrs):
    (a,) = vals
    start, stop = attrs["start"], attrs["stop"]
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for shape {a.shape}")
    return a[:, start:stop]


def _fwd_broadcast_to(vals, attrs):
    (a,) = vals
    shape = attrs["shape"]
    for da, ds in zip(a.shape, shape):
        if da != ds and da != 1:
            raise ShapeError(f"broadcast_to: {a.shape} -> {shape}")
    return np.broadcast_to(a, shape).copy()


def _fwd_log(vals, attrs):
    (a,) = vals
    if np.any(a <= 0):
        raise ValueError("log of non-positive entry")
    return np.log(a)


def _fwd_l2norm(vals, attrs):
    (a,) = vals
    return np.sqrt(np.sum(a * a, axis=1, keepdims=True))


def _sigmoid(a):
    return 0.5 * (np.tanh(0.5 * a) + 1.0)


_FORWARD: Dict[str, Callable] = {
    "matmul": _fwd_matmul,
    "add": _fwd_binary(np.add),
    "sub": _fwd_binary(np.subtract),
    "mul": _fwd_binary(np.multiply),
    "div": _fwd_binary(np.divide),
    "scale": lambda v, at: v[0] * at["factor"] + at.get("offset", 0.0),
    "relu": lambda v, at: np.maximum(v[0], 0.0),
    "tanh": lambda v, at: np.tanh(v[0]),
    "sigmoid": lambda v, at: _sigmoid(v[0]),
    "l2norm": _fwd_l2norm,
    "mean": _fwd_reduce(np.mean),
    "sum": _fwd_reduce(np.sum),
    "concat": _fwd_concat,
    "slice": _fwd_slice,
    "square": lambda v, at: v[0] * v[0],
    "log": _fwd_log,
    "exp": lambda v, at: np.exp(v[0]),
    "transpose": lambda v, at: v[0].T.copy(),
    "broadcast_to": _fwd_broadcast_to,
}

_ARITY = {
    "matmul": 2, "add": 2, "sub": 2, "mul": 2, "div": 2,
    "scale": 1, "relu": 1, "tanh": 1, "sigmoid": 1, "l2norm": 1, "mean": 1, "sum": 1,
    "slice": 1, "square": 1, "log": 1, "exp": 1, "transpose": 1, "broadcast_to": 1,
}

OPS = tuple(sorted(_FORWARD))


# ---------------------------------------------------------------------------
# vector-Jacobian products, expressed with tape ops so they stay differentiable
# ---------------------------------------------------------------------------


def _unbroadcast(t: "Tape", g: Node, shape) -> Node:
    if g.shape == shape:
        return g
    if shape[0] == 1 and shape[1] == 1:
        return t.sum(g)
    if shape[0] == 1:
        g = t.sum(g, axis=0)
    if shape[1] == 1:
        g = t.sum(g, axis=1)
    return g


def _vjp_matmul(t, node, g):
    a, b = node.inputs
    return [t.matmul(g, t.transpose(b)), t.matmul(t.transpose(a), g)]


def _vjp_add(t, node, g):
    a, b = node.inputs
    return [_unbroadcast(t, g, a.shape), _unbroadcast(t, g, b.shape)]


def _vjp_sub(t, node, g):
    a, b = node.inputs
    return [_unbroadcast(t, g, a.shape), _unbroadcast(t, t.scale(g, -1.0), b.shape)]


def _vjp_mul(t, node, g):
    a, b = node.inputs
    return [_unbroadcast(t, t.mul(g, b), a.shape), _unbroadcast(t, t.mul(g, a), b.shape)]


def _vjp_div(t, node, g):
    a, b = node.inputs
    ga = t.div(g, b)
    gb = t.scale(t.mul(ga, node), -1.0)
    return [_unbroadcast(t, ga, a.shape), _unbroadcast(t, gb, b.shape)]


def _vjp_scale(t, node, g):
    return [t.scale(g, node.attrs["factor"])]


def _vjp_relu(t, node, g):
    # subgradient 0 at 0; the mask is a constant, so the second derivative is 0
    mask = t.const((node.inputs[0].value > 0.0).astype(np.float64))
    return [t.mul(g, mask)]


def _vjp_tanh(t, node, g):
    return [t.mul(g, t.scale(t.square(node), -1.0, 1.0))]


def _vjp_sigmoid(t, node, g):
    return [t.mul(g, t.mul(node, t.scale(node, -1.0, 1.0)))]


def _vjp_l2norm(t, node, g):
    (a,) = node.inputs
    denom = node
    zero_rows = node.value == 0.0
    if np.any(zero_rows):
        # zero rows have zero input, so any finite denominator yields gradient 0 there
        denom = t.add(node, t.const(zero_rows.astype(np.float64)))
    return [t.mul(a, t.div(g, denom))]


def _vjp_mean(t, node, g):
    (a,) = node.inputs
    axis = node.attrs.get("axis")
    n = a.value.size if axis is None else a.shape[axis]
    return [t.broadcast_to(t.scale(g, 1.0 / n), a.shape)]


def _vjp_sum(t, node, g):
    (a,) = node.inputs
    return [t.broadcast_to(g, a.shape)]


def _vjp_concat(t, node, g):
    axis = node.attrs["axis"]
    out, offset = [], 0
    for inp in node.inputs:
        width = inp.shape[axis]
        if axis == 1:
            out.append(t.slice(g, offset, offset + width))
        else:
            out.append(t.transpose(t.slice(t.transpose(g), offset, offset + width)))
        offset += width
    return out


def _vjp_slice(t, node, g):
    (a,) = node.inputs
    start, stop = node.attrs["start"], node.attrs["stop"]
    rows, cols = a.shape
    parts = []
    if start > 0:
        parts.append(t.const(np.zeros((rows, start))))
    parts.append(g)
    if stop < cols:
        parts.append(t.const(np.zeros((rows, cols - stop))))
    return [parts[0] if len(parts) == 1 else t.concat(parts, axis=1)]


def _vjp_square(t, node, g):
    return [t.mul(g, t.scale(node.inputs[0], 2.0))]


def _vjp_log(t, node, g):
    return [t.div(g, node.inputs[0])]


def _vjp_exp(t, node, g):
    return [t.mul(g, node)]


def _vjp_transpose(t, node, g):
    return [t.transpose(g)]


def _vjp_broadcast_to(t, node, g):
    return [_unbroadcast(t, g, node.inputs[0].shape)]


_VJP: Dict[str, Callable] = {
    "matmul": _vjp_matmul, "add": _vjp_add, "sub": _vjp_sub, "mul": _vjp_mul,
    "div": _vjp_div, "scale": _vjp_scale, "relu": _vjp_relu, "tanh": _vjp_tanh,
    "sigmoid": _vjp_sigmoid, "l2norm": _vjp_l2norm, "mean": _vjp_mean, "sum": _vjp_sum,
    "concat": _vjp_concat, "slice": _vjp_slice, "square": _vjp_square, "log": _vjp_log,
    "exp": _vjp_exp, "transpose": _vjp_transpose, "broadcast_to": _vjp_broadcast_to,
}


class Tape:
    """Append-only record of operations.

    Inputs of every node precede it, so insertion order is a topological order.
    """

    def __init__(self):
        self.nodes: List[Node] = []

    def __len__(self):
        return len(self.nodes)

    def _append(self, kind, inputs, value, attrs) -> Node:
        node = Node(len(self.nodes), kind, tuple(inputs), value, attrs)
        self.nodes.append(node)
        return node

    def leaf(self, value, name: Optional[str] = None) -> Node:
        """Record a differentiable input (parameter or data)."""
        return self._append("leaf", (), as_matrix(value, name or "leaf"), {"name": name})

    def const(self, value) -> Node:
        """Record a non-differentiable constant."""
        return self._append("const", (), as_matrix(value, "const"), {})

    def op(self, kind: str, *inputs: Node, **attrs) -> Node:
        if kind not in _FORWARD:
            raise ValueError(f"unknown op kind {kind!r}")
        arity = _ARITY.get(kind)
        if arity is not None and len(inputs) != arity:
            raise ShapeError(f"{kind}: expected {arity} inputs, got {len(inputs)}")
        for inp in inputs:
            if not isinstance(inp, Node) or inp.id >= len(self.nodes) or self.nodes[inp.id] is not inp:
                raise ValueError(f"{kind}: input is not a node of this tape")
        value = _FORWARD[kind]([inp.value for inp in inputs], attrs)
        return self._append(kind, inputs, value, attrs)

    # thin wrappers so model code reads naturally
    def matmul(self, a, b):
        return self.op("matmul", a, b)

    def add(self, a, b):
        return self.op("add", a, b)

    def sub(self, a, b):
        return self.op("sub", a, b)

    def mul(self, a, b):
        return self.op("mul", a, b)

    def div(self, a, b):
        return self.op("div", a, b)

    def scale(self, a, factor: float, offset: float = 0.0):
        return self.op("scale", a, factor=float(factor), offset=float(offset))

    def relu(self, a):
        return self.op("relu", a)

    def tanh(self, a):
        return self.op("tanh", a)

    def sigmoid(self, a):
        return self.op("sigmoid", a)

    def l2norm(self, a):
        """Row-wise Euclidean norm, shape (rows, 1)."""
        return self.op("l2norm", a)

    def mean(self, a, axis: Optional[int] = None):
        return self.op("mean", a, axis=axis)

    def sum(self, a, axis: Optional[int] = None):
        return self.op("sum", a, axis=axis)

    def concat(self, parts: Sequence[Node], axis: int = 1):
        return self.op("concat", *parts, axis=axis)

    def slice(self, a, start: int, stop: int):
        """Column slice ``a[:, start:stop]``."""
        return self.op("slice", a, start=int(start), stop=int(stop))

    def square(self, a):
        return self.op("square", a)

    def log(self, a):
        return self.op("log", a)

    def exp(self, a):
        return self.op("exp", a)

    def transpose(self, a):
        return self.op("transpose", a)

    def broadcast_to(self, a, shape):
        return self.op("broadcast_to", a, shape=tuple(shape))

    def grad(self, output: Node, wrt: Sequence[Node], create_graph: bool = False):
        """Gradients of a scalar ``output`` with respect to each node in ``wrt``.

        With ``create_graph`` the gradients are returned as tape nodes that can be
        differentiated again; otherwise as plain arrays.  Nodes unreachable from
        ``output`` get a zero gradient.
        """
        if output.value.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar output, got shape {output.value.shape}")
        wanted = {n.id for n in wrt}
        # nodes that depend on any requested input
        relevant = np.zeros(output.id + 1, dtype=bool)
        for node in self.nodes[: output.id + 1]:
            if node.id in wanted or any(relevant[i.id] for i in node.inputs if i.id <= output.id):
                relevant[node.id] = True

        grads: Dict[int, Node] = {}
        if relevant[output.id]:
            grads[output.id] = self.const(np.ones((1, 1)))
        for node_id in range(output.id, -1, -1):
            g = grads.get(node_id)
            node = self.nodes[node_id]
            if g is None or not node.inputs:
                continue
            input_grads = _VJP[node.kind](self, node, g)
            for inp, gi in zip(node.inputs, input_grads):
                if not relevant[inp.id]:
                    continue
                prev = grads.get(inp.id)
                grads[inp.id] = gi if prev is None else self.add(prev, gi)

        out = []
        for n in wrt:
            g = grads.get(n.id)
            if g is None:
                g = self.const(np.zeros_like(n.value))
            out.append(g if create_graph else g.value)
        return out


def backward(tape: Tape, output: Node, wrt: Sequence[Node], create_graph: bool = False):
    """Functional alias of :meth:`Tape.grad`."""
    return tape.grad(output, wrt, create_graph=create_graph)


# ---------------------------------------------------------------------------
# initialization and optimization
# ---------------------------------------------------------------------------


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class AdamState:
    """Bias-corrected Adam with per-parameter moment accumulators."""

    lr: float = 1e-4
    beta1: float = 0.6
    beta2: float = 0.9
    eps: float = 1e-8
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.lr <= 0 or self.eps <= 0:
            raise ValueError("Adam lr and eps must be positive")


def adam_step(state: AdamState, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
    """Apply one Adam update to ``params`` in place and return them."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {name!r} at step {state.step_count + 1}")
        if params[name].shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
