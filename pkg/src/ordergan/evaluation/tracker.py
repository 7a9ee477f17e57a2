"""Logistic-regression real/fake discriminability tracker."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateSplit(ValueError):
    pass


@dataclass
class LogisticModel:
    w: np.ndarray
    b: float
    mean: np.ndarray
    std: np.ndarray

    def decision(self, X: np.ndarray) -> np.ndarray:
        return ((X - self.mean) / self.std) @ self.w + self.b

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        z = self.decision(X)
        return 0.5 * (np.tanh(0.5 * z) + 1.0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.decision(X) > 0).astype(int)


def fit_logistic(
    X: np.ndarray, y: np.ndarray, epochs: int = 500, lr: float = 0.1, l2: float = 1e-4
) -> LogisticModel:
    """Full-batch gradient descent on standardized features."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(np.unique(y)) < 2:
        raise DegenerateSplit("training labels contain a single class")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std < 1e-12] = 1.0
    Z = (X - mean) / std
    n, d = Z.shape
    w = np.zeros(d)
    b = 0.0
    for _ in range(epochs):
        p = 0.5 * (np.tanh(0.5 * (Z @ w + b)) + 1.0)
        r = p - y
        w -= lr * (Z.T @ r / n + l2 * w)
        b -= lr * r.mean()
    return LogisticModel(w, b, mean, std)


def logistic_tracker(
    real: np.ndarray,
    fake: np.ndarray,
    rng: np.random.Generator,
    train_fraction: float = 0.8,
    epochs: int = 500,
    lr: float = 0.1,
    l2: float = 1e-4,
) -> float:
    """Held-out accuracy of a real-vs-fake logistic classifier; 0.5 means indistinguishable."""
    real = np.asarray(real, dtype=float)
    fake = np.asarray(fake, dtype=float)
    if real.shape[1:] != fake.shape[1:]:
        raise ValueError(f"width mismatch {real.shape} vs {fake.shape}")
    X = np.vstack([real, fake])
    y = np.concatenate([np.ones(len(real)), np.zeros(len(fake))])
    perm = rng.permutation(len(X))
    cut = int(round(train_fraction * len(X)))
    tr, te = perm[:cut], perm[cut:]
    if len(np.unique(y[te])) < 2:
        raise DegenerateSplit("held-out labels contain a single class")
    model = fit_logistic(X[tr], y[tr], epochs, lr, l2)
    return float((model.predict(X[te]) == y[te]).mean())
