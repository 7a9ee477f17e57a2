"""Finite-difference oracle and random composite graphs for checking tape gradients."""

import numpy as np

from ordergan.autodiff import Tape


def central_difference(f, arrays, h=1e-5):
    """Numerical gradient of scalar ``f(*arrays)`` w.r.t. every array."""
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            fp = f(*arrays)
            a[idx] = old - h
            fm = f(*arrays)
            a[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def relative_error(analytic, numeric):
    """Max-norm relative error between two gradient arrays."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


UNARY = ["relu", "tanh", "sigmoid", "square", "exp", "log", "scale", "transpose", "l2norm", "slice", "mean_axis", "sum_axis", "broadcast"]
BINARY = ["matmul", "add", "sub", "mul", "div", "concat"]


class RandomGraph:
    """A reproducible random composite expression over all tape ops.

    ``build(tape, leaves)`` replays the same recipe for any leaf values, so the
    analytic gradient and the finite-difference oracle see the same function.
    """

    def __init__(self, seed, n_ops=8):
        self.rng = np.random.default_rng(seed)
        shapes = [(int(self.rng.integers(2, 4)), int(self.rng.integers(2, 4))) for _ in range(3)]
        self.inputs = [self.rng.normal(size=s) for s in shapes]
        self.n_ops = n_ops
        self.recipe_seed = int(self.rng.integers(2**31))
        self.relu_inputs = []

    def build(self, tape, leaves):
        rng = np.random.default_rng(self.recipe_seed)
        pool = list(leaves)
        self.relu_inputs = []
        used = set()
        for _ in range(self.n_ops):
            if rng.random() < 0.5:
                kind = UNARY[int(rng.integers(len(UNARY)))]
                a = pool[int(rng.integers(len(pool)))]
                node = self._unary(tape, rng, kind, a)
            else:
                kind = BINARY[int(rng.integers(len(BINARY)))]
                a = pool[int(rng.integers(len(pool)))]
                b = pool[int(rng.integers(len(pool)))]
                node = self._binary(tape, rng, kind, a, b)
            used.add(kind)
            pool.append(node)
        # scalar readout touching every pooled node keeps all leaves in play
        total = None
        for node in pool:
            term = tape.mean(tape.tanh(node))
            total = term if total is None else tape.add(total, term)
        return total

    def _unary(self, t, rng, kind, a):
        if kind == "relu":
            self.relu_inputs.append(a)
            return t.relu(a)
        if kind == "log":
            return t.log(t.scale(t.square(a), 1.0, 0.5))
        if kind == "exp":
            return t.exp(t.tanh(a))
        if kind == "scale":
            return t.scale(a, float(rng.normal()), float(rng.normal()))
        if kind == "slice":
            cols = a.shape[1]
            if cols < 2:
                return t.slice(a, 0, 1)
            start = int(rng.integers(0, cols - 1))
            return t.slice(a, start, int(rng.integers(start + 1, cols + 1)))
        if kind == "mean_axis":
            return t.mean(a, axis=int(rng.integers(2)))
        if kind == "sum_axis":
            return t.sum(a, axis=int(rng.integers(2)))
        if kind == "broadcast":
            row = t.mean(a, axis=0)
            return t.broadcast_to(row, (int(rng.integers(1, 4)), a.shape[1]))
        return getattr(t, kind)(a)

    def _binary(self, t, rng, kind, a, b):
        if kind == "matmul":
            if a.shape[1] != b.shape[0]:
                b = t.transpose(b) if b.shape[1] == a.shape[1] else t.broadcast_to(t.mean(b), (a.shape[1], 2))
            return t.matmul(a, b)
        if kind == "concat":
            if a.shape[0] != b.shape[0]:
                b = t.broadcast_to(t.mean(b, axis=0), (a.shape[0], b.shape[1]))
            return t.concat([a, b], axis=1)
        # elementwise: broadcast a row/column/scalar summary of b onto a
        mode = int(rng.integers(3))
        if mode == 0 and a.shape[1] == b.shape[1]:
            other = t.mean(b, axis=0)
        elif mode == 1 and a.shape[0] == b.shape[0]:
            other = t.mean(b, axis=1)
        else:
            other = t.mean(b)
        if kind == "div":
            other = t.scale(t.square(other), 1.0, 1.0)
        return getattr(t, kind)(a, other)


def graph_value(graph, *arrays):
    tape = Tape()
    leaves = [tape.leaf(a) for a in arrays]
    return graph.build(tape, leaves).value[0, 0]


def graph_gradients(graph, arrays):
    tape = Tape()
    leaves = [tape.leaf(a) for a in arrays]
    out = graph.build(tape, leaves)
    relu_margin = min((np.min(np.abs(n.value)) for n in graph.relu_inputs), default=np.inf)
    return tape.grad(out, leaves), relu_margin
