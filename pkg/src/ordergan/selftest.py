"""Built-in checks behind ``ordergan selftest``.

Each check returns ``(passed, detail)``; none of them needs an output directory
and the whole suite runs in well under a minute.
"""

from __future__ import annotations

import datetime as dt
from typing import Callable, Iterator, List, Tuple

import numpy as np

from .autodiff import Tape
from .embedding import DateHorizon, PriceScaler, decode_price, encode_date, encode_days, encode_price
from .evaluation.forest import forest_leaf_distribution
from .evaluation.propensity import rsm
from .evaluation.triplet import triplet_agreement
from .gan import GanConfig, discriminator_loss
from .gradcheck import RandomGraph, central_difference, graph_gradients, graph_value, relative_error
from .nn import init_mlp

RELU_MARGIN = 1e-3


def random_graph_errors(n: int, start: int = 0) -> List[float]:
    """Max relative gradient error for ``n`` random graphs, skipping seeds with a relu input near zero."""
    errors, seed = [], start
    while len(errors) < n:
        graph = RandomGraph(seed)
        seed += 1
        arrays = [a.copy() for a in graph.inputs]
        analytic, margin = graph_gradients(graph, arrays)
        if margin < RELU_MARGIN:
            continue
        numeric = central_difference(lambda *a: graph_value(graph, *a), arrays)
        errors.append(max(relative_error(a, b) for a, b in zip(analytic, numeric)))
    return errors


def penalty_gradient_error(seed: int) -> float:
    """Critic loss (with gradient penalty) gradient vs finite differences."""
    rng = np.random.default_rng(seed)
    cfg = GanConfig(dim=4, disc_hidden=(6,))
    params = init_mlp(rng, [4, 6, 1], "disc")
    real, fake = rng.standard_normal((8, 4)), rng.standard_normal((8, 4))
    eps = rng.uniform(size=(8, 1))
    _, grads, _ = discriminator_loss(params, real, fake, cfg, eps)
    names = sorted(params)
    numeric = central_difference(lambda *a: discriminator_loss(dict(zip(names, a)), real, fake, cfg, eps)[0], [params[k] for k in names], h=1e-6)
    return max(relative_error(grads[k], g) for k, g in zip(names, numeric))


def check_random_graphs() -> Tuple[bool, str]:
    worst = max(random_graph_errors(200))
    return worst < 1e-5, f"200 graphs, max relative error {worst:.2e}"


def check_gradient_penalty() -> Tuple[bool, str]:
    worst = max(penalty_gradient_error(s) for s in range(4))
    return worst < 1e-4, f"max relative error {worst:.2e}"


def check_double_backprop() -> Tuple[bool, str]:
    # d/dx (d/dx x^3) = 6x
    t = Tape()
    x = t.leaf([[2.0]])
    (g,) = t.grad(t.mul(x, t.square(x)), [x], create_graph=True)
    (gg,) = t.grad(g, [x])
    return gg[0, 0] == 12.0, f"second derivative {gg[0, 0]}"


def check_rsm() -> Tuple[bool, str]:
    rng = np.random.default_rng(0)
    s = rng.permutation(500).astype(float)
    same = rsm(s, s, 10000, np.random.default_rng(1))
    rev = rsm(s, -s, 10000, np.random.default_rng(1))
    rnd = rsm(s, rng.random(500), 10000, np.random.default_rng(2))
    ok = same == 100.0 and rev == 0.0 and abs(rnd - 50.0) <= 2.0
    return ok, f"self {same:.1f}% reversed {rev:.1f}% random {rnd:.1f}%"


def check_triplet_self_agreement() -> Tuple[bool, str]:
    rng = np.random.default_rng(3)
    X = rng.standard_normal((500, 8)) @ rng.standard_normal((8, 8))
    res = triplet_agreement(X, X.copy(), 20000, np.random.default_rng(4))
    return res.agreement == 1.0, f"agreement {res.agreement}"


def check_leaf_ratio_balanced() -> Tuple[bool, str]:
    rng = np.random.default_rng(5)
    X = rng.standard_normal((4000, 6)) @ rng.standard_normal((6, 6))
    res = forest_leaf_distribution(X[:2000], X[2000:], np.random.default_rng(1))
    exact = all(res.exact_tree_fraction(t) == 0.5 for t in range(len(res.leaf_counts)))
    return exact, f"order-weighted leaf ratio per tree exactly 1/2: {exact}; resampled mean {res.mean:.3f}"


def check_date_encoder() -> Tuple[bool, str]:
    horizon = DateHorizon(dt.date(2024, 1, 1), 366)
    table = encode_days(np.arange(366), horizon)
    worst = max(np.max(np.abs(table[:, lo] ** 2 + table[:, lo + 1] ** 2 - 1.0)) for lo in (1, 3, 5))
    week = [encode_date(dt.date(2024, 1, 1) + dt.timedelta(days=i), horizon)[3:5] for i in range(8)]
    spread = np.ptp([np.linalg.norm(week[i + 1] - week[i]) for i in range(7)])
    return worst < 1e-12 and spread < 1e-12, f"unit-norm error {worst:.1e}, weekday distance spread {spread:.1e}"


def check_price_round_trip() -> Tuple[bool, str]:
    scaler = PriceScaler(np.log(2.0), np.log(900.0))
    p = np.exp(np.random.default_rng(6).uniform(np.log(2.0), np.log(900.0), 10000))
    err = float(np.max(np.abs(decode_price(encode_price(p, scaler), scaler) - p) / p))
    return err < 1e-9, f"max relative error {err:.1e}"


CHECKS: List[Tuple[str, Callable[[], Tuple[bool, str]]]] = [
    ("autodiff.random_graphs", check_random_graphs),
    ("autodiff.gradient_penalty", check_gradient_penalty),
    ("autodiff.double_backprop", check_double_backprop),
    ("metric.rsm", check_rsm),
    ("metric.triplet_self_agreement", check_triplet_self_agreement),
    ("metric.leaf_ratio_balanced", check_leaf_ratio_balanced),
    ("encoder.date", check_date_encoder),
    ("encoder.price", check_price_round_trip),
]


def run_selftest() -> Iterator[Tuple[str, bool, str]]:
    for name, fn in CHECKS:
        try:
            passed, detail = fn()
        except Exception as e:  # a crashing check is a failed check
            passed, detail = False, f"{type(e).__name__}: {e}"
        yield name, bool(passed), detail
