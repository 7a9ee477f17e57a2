"""Exact O(N^2) t-SNE and a PCA projection for small samples."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

MAX_POINTS = 2000
MIN_POINTS = 10


def squared_distances(X: np.ndarray) -> np.ndarray:
    sq = (X * X).sum(axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def calibrate(D: np.ndarray, perplexity: float, tol: float = 1e-6, max_iter: int = 200):
    """Per-row Gaussian conditionals whose entropy (nats) matches log(perplexity).

    Returns the conditional matrix P (rows sum to 1) and the achieved entropies.
    """
    n = len(D)
    target = np.log(perplexity)
    P = np.zeros((n, n))
    H = np.zeros(n)
    for i in range(n):
        d = np.delete(D[i], i)
        d = d - d.min()  # shift for stability; cancels in the normalization
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            w = np.exp(-beta * d)
            s = w.sum()
            p = w / s
            h = np.log(s) + beta * (d * p).sum()
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        H[i] = h
        P[i, np.arange(n) != i] = p
    return P, H


def _kl(P: np.ndarray, Q: np.ndarray) -> float:
    mask = P > 0
    return float((P[mask] * np.log(P[mask] / np.maximum(Q[mask], 1e-300))).sum())


@dataclass
class TsneResult:
    Y: np.ndarray
    entropies: np.ndarray
    kl_history: List[float] = field(default_factory=list)


def tsne(
    X: np.ndarray,
    rng: np.random.Generator,
    dim: int = 3,
    perplexity: float = 30.0,
    iterations: int = 1000,
    learning_rate: float = 200.0,
    exaggeration: float = 4.0,
    exaggeration_iters: int = 100,
    momentum_switch: int = 250,
) -> TsneResult:
    X = np.asarray(X, dtype=float)
    n = len(X)
    if n < MIN_POINTS:
        raise ValueError(f"t-SNE needs at least {MIN_POINTS} points, got {n}")
    if n > MAX_POINTS:
        raise ValueError(f"exact t-SNE is limited to {MAX_POINTS} points, got {n}")
    perplexity = min(perplexity, (n - 1) / 3.0)
    Pc, H = calibrate(squared_distances(X), perplexity)
    P = (Pc + Pc.T) / (2.0 * n)
    np.maximum(P, 1e-12, out=P)
    np.fill_diagonal(P, 0.0)
    Y = 1e-4 * rng.standard_normal((n, dim))
    velocity = np.zeros_like(Y)
    gains = np.ones_like(Y)
    history = []
    for it in range(iterations):
        scale = exaggeration if it < exaggeration_iters else 1.0
        num = 1.0 / (1.0 + squared_distances(Y))
        np.fill_diagonal(num, 0.0)
        Q = num / num.sum()
        W = (scale * P - Q) * num
        grad = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)
        momentum = 0.5 if it < momentum_switch else 0.8
        same = np.sign(grad) == np.sign(velocity)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        velocity = momentum * velocity - learning_rate * gains * grad
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)
        if it >= exaggeration_iters:
            history.append(_kl(P, Q))
    return TsneResult(Y, H, history)


def pca(X: np.ndarray, dim: int = 3) -> np.ndarray:
    Z = np.asarray(X, dtype=float) - np.mean(X, axis=0)
    U, S, Vt = np.linalg.svd(Z, full_matrices=False)
    # fix the sign of each component for reproducible output
    signs = np.sign(Vt[:dim, np.argmax(np.abs(Vt[:dim]), axis=1)].diagonal())
    signs[signs == 0] = 1.0
    return Z @ (Vt[:dim].T * signs)


def write_projection(path, coords: np.ndarray, labels: Sequence[str], header: Optional[str] = None) -> None:
    lines = [header] if header else []
    lines.append("x,y,z,label")
    for row, lab in zip(coords, labels):
        lines.append(",".join(f"{v:.6f}" for v in row[:3]) + f",{lab}")
    Path(path).write_text("\n".join(lines) + "\n")
