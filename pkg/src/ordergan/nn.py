"""Fully connected networks on top of the tape."""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence

import numpy as np

from .autodiff import Node, Tape, glorot_uniform

ACTIVATIONS = ("relu", "tanh", "sigmoid", "linear")


def init_mlp(rng: np.random.Generator, sizes: Sequence[int], prefix: str) -> Dict[str, np.ndarray]:
    """Glorot-uniform weights and zero biases for layer widths ``sizes``."""
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"{prefix}.W{i}"] = glorot_uniform(rng, fan_in, fan_out)
        params[f"{prefix}.b{i}"] = np.zeros((1, fan_out))
    return params


def n_layers(params: Dict[str, np.ndarray], prefix: str) -> int:
    return sum(1 for k in params if k.startswith(prefix + ".W"))


def bind(tape: Tape, params: Dict[str, np.ndarray], names: Optional[Sequence[str]] = None) -> Dict[str, Node]:
    """Record parameters as tape leaves."""
    names = list(params) if names is None else names
    return {k: tape.leaf(params[k], k) for k in names}


def _activate(tape: Tape, x: Node, act: str) -> Node:
    if act == "linear":
        return x
    return getattr(tape, act)(x)


def mlp(tape: Tape, nodes: Dict[str, Node], prefix: str, x: Node, hidden: str = "relu", out: str = "linear") -> Node:
    depth = sum(1 for k in nodes if k.startswith(prefix + ".W"))
    for i in range(depth):
        x = tape.add(tape.matmul(x, nodes[f"{prefix}.W{i}"]), nodes[f"{prefix}.b{i}"])
        x = _activate(tape, x, hidden if i < depth - 1 else out)
    return x


def mlp_numpy(params: Dict[str, np.ndarray], prefix: str, x: np.ndarray, hidden: str = "relu", out: str = "linear") -> np.ndarray:
    """Tape-free forward pass with the same semantics as :func:`mlp`."""
    depth = n_layers(params, prefix)
    for i in range(depth):
        x = x @ params[f"{prefix}.W{i}"] + params[f"{prefix}.b{i}"]
        act = hidden if i < depth - 1 else out
        if act == "relu":
            x = np.maximum(x, 0.0)
        elif act == "tanh":
            x = np.tanh(x)
        elif act == "sigmoid":
            x = 0.5 * (np.tanh(0.5 * x) + 1.0)
    return x


def layer_sizes(params: Dict[str, np.ndarray], prefix: str) -> List[int]:
    depth = n_layers(params, prefix)
    sizes = [params[f"{prefix}.W0"].shape[0]]
    sizes += [params[f"{prefix}.W{i}"].shape[1] for i in range(depth)]
    return sizes
