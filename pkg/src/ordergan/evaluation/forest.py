"""Random-forest leaf real-order-ratio: how mixed real and generated orders are in leaves."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from .triplet import column_shuffle

N_TREES = 100
MAX_DEPTH = 5
N_BINS = 20


@dataclass
class LeafRatioResult:
    ratios: np.ndarray          # per class-1 order, mean real-order-ratio over trees
    is_real: np.ndarray         # which class-1 rows are real
    leaf_counts: List[dict]     # per tree: leaf id -> (n_class1, n_real)
    histogram: np.ndarray       # real orders only, N_BINS equal bins over [0, 1]
    max_depth: int

    @property
    def mean(self) -> float:
        """Mean score of the real orders; over all class-1 orders it would be 0.5 by construction."""
        return float(self.ratios[self.is_real].mean())

    def weighted_tree_mean(self, tree: int) -> float:
        """Class-1-count weighted mean of leaf ratios in one tree."""
        n1 = sum(c for c, _ in self.leaf_counts[tree].values())
        return sum(c * (r / c) for c, r in self.leaf_counts[tree].values()) / n1

    def exact_tree_fraction(self, tree: int):
        """The same quantity as an exact rational, from integer counts."""
        from fractions import Fraction

        n1 = sum(c for c, _ in self.leaf_counts[tree].values())
        return sum(Fraction(c, 1) * Fraction(r, c) for c, r in self.leaf_counts[tree].values()) / n1


def fit_forest(X: np.ndarray, y: np.ndarray, seed: int, n_trees: int = N_TREES, max_depth: int = MAX_DEPTH):
    model = RandomForestClassifier(
        n_estimators=n_trees,
        max_depth=max_depth,
        max_features="sqrt",
        criterion="gini",
        bootstrap=True,
        random_state=seed,
        n_jobs=1,
    )
    return model.fit(X, y)


def forest_leaf_distribution(
    real: np.ndarray, fake: np.ndarray, rng: np.random.Generator, n_trees: int = N_TREES, max_depth: int = MAX_DEPTH
) -> LeafRatioResult:
    """Train real+fake (class 1) against its column-permuted copy (class 2).

    Each class-1 order is traced to one leaf per tree; a leaf's real-order-ratio
    counts class-1 members only.
    """
    real = np.asarray(real, dtype=float)
    fake = np.asarray(fake, dtype=float)
    if len(real) != len(fake):
        raise ValueError(f"need equal real and fake counts, got {len(real)} and {len(fake)}")
    class1 = np.vstack([real, fake])
    is_real = np.r_[np.ones(len(real), bool), np.zeros(len(fake), bool)]
    class2 = column_shuffle(class1, rng)
    X = np.vstack([class1, class2])
    y = np.r_[np.ones(len(class1), int), np.zeros(len(class2), int)]
    forest = fit_forest(X, y, int(rng.integers(0, 2**31 - 1)), n_trees, max_depth)
    leaves = forest.apply(class1)
    sums = np.zeros(len(class1))
    used = np.zeros(len(class1))
    counts = []
    for t in range(leaves.shape[1]):
        ids, inv = np.unique(leaves[:, t], return_inverse=True)
        n1 = np.bincount(inv, minlength=len(ids))
        nr = np.bincount(inv, weights=is_real, minlength=len(ids)).astype(int)
        counts.append({int(i): (int(a), int(b)) for i, a, b in zip(ids, n1, nr)})
        ok = n1[inv] > 0
        sums[ok] += nr[inv][ok] / n1[inv][ok]
        used[ok] += 1
    ratios = sums / np.maximum(used, 1)
    hist, _ = np.histogram(ratios[is_real], bins=N_BINS, range=(0.0, 1.0))
    depth = max(est.get_depth() for est in forest.estimators_)
    return LeafRatioResult(ratios, is_real, counts, hist, depth)
