"""Customer-characteristic classifiers, per-product propensity scores and RSM."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..embedding import OrderLayout, PriceScaler, decode_price, recover_month
from ..marketplace import SUMMER_MONTHS, WINTER_MONTHS, MarketplaceWorld, Orders, month_of_day
from .tracker import LogisticModel, fit_logistic

LABELS = ("gender", "tenure", "volume")
# characteristic -> (classifier, which class counts)
CHARACTERISTICS = (
    "female",
    "male",
    "average_purchasers",
    "high_purchasers",
    "medium_tenured",
    "high_tenured",
    "price",
    "summer",
    "winter",
)
_CLASS_OF = {
    "female": ("gender", 1),
    "male": ("gender", 0),
    "average_purchasers": ("volume", 0),
    "high_purchasers": ("volume", 1),
    "medium_tenured": ("tenure", 0),
    "high_tenured": ("tenure", 1),
}
IMBALANCE_LIMIT = 0.95


def customer_labels(world: MarketplaceWorld) -> Dict[str, np.ndarray]:
    c = world.customers
    return {"gender": c.female.astype(int), "tenure": c.high_tenure.astype(int), "volume": c.high_volume.astype(int)}


@dataclass
class CharacteristicClassifier:
    label: str
    model: LogisticModel
    accuracy: float

    def predict_proba(self, customer_vectors: np.ndarray) -> np.ndarray:
        return self.model.predict_proba(np.atleast_2d(customer_vectors))

    def predict(self, customer_vectors: np.ndarray) -> np.ndarray:
        return self.model.predict(np.atleast_2d(customer_vectors))


def train_characteristic_classifiers(
    customer_vectors: np.ndarray,
    customer_ids: np.ndarray,
    world: MarketplaceWorld,
    rng: np.random.Generator,
    held_out_fraction: float = 0.2,
    labels: Optional[Dict[str, np.ndarray]] = None,
) -> Dict[str, CharacteristicClassifier]:
    """One logistic model per label over order-level customer embeddings.

    Rows are (customer embedding at an order, that customer's label). The
    held-out accuracy is measured on customers never seen in training.
    """
    labels = customer_labels(world) if labels is None else labels
    n_cust = len(labels["gender"])
    held = rng.random(n_cust) < held_out_fraction
    te = held[customer_ids]
    out = {}
    for name in LABELS:
        y = labels[name][customer_ids]
        share = y[~te].mean()
        if max(share, 1 - share) > IMBALANCE_LIMIT:
            warnings.warn(f"{name} labels are {share:.1%} positive; classifier may be degenerate", stacklevel=2)
        model = fit_logistic(customer_vectors[~te], y[~te])
        acc = float((model.predict(customer_vectors[te]) == y[te]).mean())
        out[name] = CharacteristicClassifier(name, model, acc)
    return out


def season_shares(months: np.ndarray):
    """(summer, winter) shares normalized as y/(x+y), x/(x+y); 0.5 each when neither occurs."""
    y = np.isin(months, SUMMER_MONTHS).mean() if len(months) else 0.0
    x = np.isin(months, WINTER_MONTHS).mean() if len(months) else 0.0
    if x + y == 0:
        return 0.5, 0.5
    return y / (x + y), x / (x + y)


def order_scores(
    customer_vectors: np.ndarray,
    prices: np.ndarray,
    months: np.ndarray,
    classifiers: Dict[str, CharacteristicClassifier],
) -> Dict[str, float]:
    """The nine propensity scores of one product from a set of its orders."""
    scores = {}
    for ch, (label, cls) in _CLASS_OF.items():
        pred = classifiers[label].predict(customer_vectors)
        scores[ch] = float((pred == cls).mean())
    scores["price"] = float(np.mean(prices))
    scores["summer"], scores["winter"] = season_shares(months)
    return scores


@dataclass
class PropensityTable:
    products: np.ndarray
    truth: Dict[str, np.ndarray]
    generated: Dict[str, np.ndarray]
    excluded: int

    def rows(self):
        for i, p in enumerate(self.products):
            yield int(p), {c: (self.truth[c][i], self.generated[c][i]) for c in CHARACTERISTICS}


def eligible_products(eval_orders: Orders, min_orders: int = 20) -> np.ndarray:
    counts = np.bincount(eval_orders.product)
    return np.flatnonzero(counts >= min_orders)


def compute_propensities(
    products: Sequence[int],
    eval_matrix: np.ndarray,
    eval_orders: Orders,
    world: MarketplaceWorld,
    layout: OrderLayout,
    scaler: PriceScaler,
    classifiers: Dict[str, CharacteristicClassifier],
    sampler: Callable[[int, int], np.ndarray],
    n_per_product: int = 1000,
    min_orders: int = 20,
) -> PropensityTable:
    """Ground-truth scores from the eval log and generated scores from ``sampler(product, n)``.

    ``eval_matrix`` holds the embedded eval orders row-aligned with ``eval_orders``.
    """
    counts = np.bincount(eval_orders.product, minlength=len(world.products))
    products = np.asarray(products, dtype=int)
    keep = counts[products] >= min_orders
    excluded = int((~keep).sum())
    products = products[keep]
    truth = {c: np.zeros(len(products)) for c in CHARACTERISTICS}
    gen = {c: np.zeros(len(products)) for c in CHARACTERISTICS}
    cust = layout.customer
    for i, p in enumerate(products):
        rows = np.flatnonzero(eval_orders.product == p)
        t = order_scores(eval_matrix[rows, cust], eval_orders.price[rows], month_of_day(world.config, eval_orders.day[rows]), classifiers)
        fake = sampler(int(p), n_per_product)
        g = order_scores(
            fake[:, cust],
            decode_price(fake[:, layout.price], scaler),
            recover_month(fake[:, layout.date]),
            classifiers,
        )
        for c in CHARACTERISTICS:
            truth[c][i] = t[c]
            gen[c][i] = g[c]
    return PropensityTable(products, truth, gen, excluded)


def rsm(truth: np.ndarray, generated: np.ndarray, n_pairs: int, rng: np.random.Generator) -> float:
    """Percentage of random product pairs ordered alike, with the asymmetric >=/< tie rule."""
    truth = np.asarray(truth, dtype=float)
    generated = np.asarray(generated, dtype=float)
    m = len(truth)
    if m < 2 or len(generated) != m:
        raise ValueError("RSM needs at least two products with both scores")
    i = rng.integers(0, m, n_pairs)
    j = (i + rng.integers(1, m, n_pairs)) % m
    agree = (truth[i] >= truth[j]) == (generated[i] >= generated[j])
    return 100.0 * float(agree.mean())


def rsm_table(table: PropensityTable, n_pairs: int, rng_for: Callable[[str], np.random.Generator]) -> Dict[str, float]:
    return {c: rsm(table.truth[c], table.generated[c], n_pairs, rng_for(c)) for c in CHARACTERISTICS}
