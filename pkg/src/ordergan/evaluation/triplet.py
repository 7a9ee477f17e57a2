"""Feature-correlation triplet agreement between real and generated orders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TIE_TOL = 1e-12


def correlation_matrix(X: np.ndarray):
    """Pearson correlations; zero-variance features correlate 0 with everything else.

    Returns the matrix and a boolean mask of zero-variance columns.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("correlation needs a matrix with at least 2 rows")
    Z = X - X.mean(axis=0)
    norm = np.sqrt((Z * Z).sum(axis=0))
    flat = norm < 1e-12 * max(1.0, float(np.abs(X).max()))
    norm[flat] = 1.0
    Z = Z / norm
    C = np.clip(Z.T @ Z, -1.0, 1.0)
    C[flat, :] = 0.0
    C[:, flat] = 0.0
    np.fill_diagonal(C, 1.0)
    return C, flat


def sample_triplets(rng: np.random.Generator, n_features: int, n: int) -> np.ndarray:
    """``n`` rows of three distinct feature indices."""
    if n_features < 3:
        raise ValueError("triplets need at least 3 features")
    a = rng.integers(0, n_features, n)
    b = (a + rng.integers(1, n_features, n)) % n_features
    # third index uniform over the remaining n_features - 2 values
    c = rng.integers(0, n_features - 2, n)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    c = c + (c >= lo)
    c = c + (c >= hi)
    return np.stack([a, b, c], axis=1)


@dataclass
class TripletResult:
    agreement: float
    strict_agreement: float
    n_triplets: int
    n_strict: int
    flat_real: int
    flat_generated: int


def triplet_agreement(real: np.ndarray, generated: np.ndarray, n_triplets: int, rng: np.random.Generator) -> TripletResult:
    """Fraction of feature triplets where both data sets order corr(f1,f2) vs corr(f1,f3) alike.

    Near-ties count as ``>=``. ``strict_agreement`` restricts to triplets whose
    real-side difference exceeds the tie tolerance.
    """
    real = np.asarray(real, dtype=float)
    generated = np.asarray(generated, dtype=float)
    if real.shape[1] != generated.shape[1]:
        raise ValueError("real and generated matrices differ in width")
    cr, flat_r = correlation_matrix(real)
    cg, flat_g = correlation_matrix(generated)
    t = sample_triplets(rng, real.shape[1], n_triplets)
    dr = cr[t[:, 0], t[:, 1]] - cr[t[:, 0], t[:, 2]]
    dg = cg[t[:, 0], t[:, 1]] - cg[t[:, 0], t[:, 2]]
    agree = (dr >= -TIE_TOL) == (dg >= -TIE_TOL)
    strict = np.abs(dr) > TIE_TOL
    return TripletResult(
        agreement=float(agree.mean()),
        strict_agreement=float(agree[strict].mean()) if strict.any() else float("nan"),
        n_triplets=int(n_triplets),
        n_strict=int(strict.sum()),
        flat_real=int(flat_r.sum()),
        flat_generated=int(flat_g.sum()),
    )


def column_shuffle(X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independently permute every column, destroying cross-feature structure."""
    out = np.empty_like(X)
    for j in range(X.shape[1]):
        out[:, j] = X[rng.permutation(len(X)), j]
    return out
