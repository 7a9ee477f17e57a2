"""Dense order vectors: [customer | product | price | date].

Products are IDF-weighted averages of title word vectors.  Customers are the
hidden state of a recurrent encoder over their chronological purchases, trained
with three alternating classification heads (next category, next price bucket,
next inter-purchase gap bucket).  Prices are log-scaled into [-1, 1]; dates
become a 7-vector with circular day-of-month, day-of-week and month features.
"""

from __future__ import annotations

import calendar
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint
from .autodiff import AdamState, Tape, TrainingDiverged, adam_step, glorot_uniform
from .marketplace import MarketplaceWorld, Orders
from .rng import make_rng

logger = logging.getLogger(__name__)

DATE_DIM = 7
GAP_EDGES = (7, 30)  # buckets: <=7 days, 8-30 days, >30 days
N_PRICE_BUCKETS = 4


class UnembeddableTitle(ValueError):
    pass


# ---------------------------------------------------------------------------
# products
# ---------------------------------------------------------------------------


def idf_weights(doc_freq: np.ndarray, n_docs: int) -> np.ndarray:
    """Smoothed inverse document frequency, ln((1+N)/(1+df)) + 1."""
    return np.log((1.0 + n_docs) / (1.0 + np.asarray(doc_freq, dtype=float))) + 1.0


def embed_product(title: Sequence[str], word_vectors: np.ndarray, doc_freq: np.ndarray, word_index: Dict[str, int], n_docs: int) -> np.ndarray:
    """IDF-weighted mean of the title's word vectors, clamped to [-1, 1].

    Out-of-vocabulary tokens are skipped.
    """
    ids = [word_index[w] for w in title if w in word_index]
    if not ids:
        raise UnembeddableTitle(f"unembeddable title: {' '.join(title)!r}")
    ids = np.array(ids)
    w = idf_weights(doc_freq[ids], n_docs)
    total = w.sum()
    if total == 0.0:
        vec = word_vectors[ids].mean(axis=0)
    else:
        vec = (w[:, None] * word_vectors[ids]).sum(axis=0) / total
    return np.clip(vec, -1.0, 1.0)


def embed_products(world: MarketplaceWorld) -> np.ndarray:
    index = world.word_index
    n = len(world.products)
    return np.vstack([embed_product(t, world.word_vectors, world.doc_freq, index, n) for t in world.products.titles])


def embed_title(world: MarketplaceWorld, title: Sequence[str]) -> np.ndarray:
    return embed_product(title, world.word_vectors, world.doc_freq, world.word_index, len(world.products))


# ---------------------------------------------------------------------------
# price and date
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PriceScaler:
    tmin: float
    tmax: float

    def __post_init__(self):
        if not self.tmax > self.tmin:
            raise ValueError(f"PriceScaler needs tmax > tmin, got [{self.tmin}, {self.tmax}]")

    @classmethod
    def fit(cls, prices) -> "PriceScaler":
        logp = np.log(np.asarray(prices, dtype=float))
        return cls(float(logp.min()), float(logp.max()))


def encode_price(p, scaler: PriceScaler):
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0):
        raise ValueError("prices must be positive")
    x = 2.0 * (np.log(p) - scaler.tmin) / (scaler.tmax - scaler.tmin) - 1.0
    x = np.clip(x, -1.0, 1.0)
    return float(x) if x.ndim == 0 else x


def decode_price(x, scaler: PriceScaler):
    x = np.asarray(x, dtype=float)
    p = np.exp((x + 1.0) * 0.5 * (scaler.tmax - scaler.tmin) + scaler.tmin)
    return float(p) if p.ndim == 0 else p


@dataclass(frozen=True)
class DateHorizon:
    start: dt.date
    days: int

    @classmethod
    def of(cls, world: MarketplaceWorld) -> "DateHorizon":
        return cls(world.config.start, world.config.horizon_days)

    def date(self, day: int) -> dt.date:
        return self.start + dt.timedelta(days=int(day))


def encode_date(d: dt.date, horizon: DateHorizon) -> np.ndarray:
    offset = (d - horizon.start).days
    if not 0 <= offset < horizon.days:
        raise ValueError(f"date {d.isoformat()} outside horizon starting {horizon.start.isoformat()} ({horizon.days} days)")
    month_len = calendar.monthrange(d.year, d.month)[1]
    angles = (
        2 * np.pi * (d.day - 1) / month_len,
        2 * np.pi * d.weekday() / 7,
        2 * np.pi * (d.month - 1) / 12,
    )
    out = [2.0 * offset / horizon.days - 1.0]
    for a in angles:
        out += [np.sin(a), np.cos(a)]
    return np.array(out)


def encode_days(days: np.ndarray, horizon: DateHorizon) -> np.ndarray:
    """Vectorized :func:`encode_date` over day offsets."""
    table = np.vstack([encode_date(horizon.date(d), horizon) for d in range(horizon.days)])
    return table[np.asarray(days, dtype=int)]


def recover_month(date_slice: np.ndarray) -> np.ndarray:
    """Month (1-12) whose angle has the largest cosine similarity with each (sin, cos) month pair."""
    date_slice = np.atleast_2d(date_slice)
    pair = date_slice[:, 5:7]
    angles = 2 * np.pi * np.arange(12) / 12
    candidates = np.stack([np.sin(angles), np.cos(angles)], axis=1)
    return np.argmax(pair @ candidates.T, axis=1) + 1


# ---------------------------------------------------------------------------
# order vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrderLayout:
    d_cust: int = 16
    d_prod: int = 16

    @property
    def dim(self) -> int:
        return self.d_cust + self.d_prod + 1 + DATE_DIM

    @property
    def customer(self) -> slice:
        return slice(0, self.d_cust)

    @property
    def product(self) -> slice:
        return slice(self.d_cust, self.d_cust + self.d_prod)

    @property
    def price(self) -> int:
        return self.d_cust + self.d_prod

    @property
    def date(self) -> slice:
        return slice(self.price + 1, self.price + 1 + DATE_DIM)


def assemble_order(c, p, price, date, layout: OrderLayout) -> np.ndarray:
    """Concatenate components; accepts single vectors or row-aligned matrices."""
    c, p, date = np.atleast_2d(c), np.atleast_2d(p), np.atleast_2d(date)
    price = np.asarray(price, dtype=float).reshape(-1, 1)
    for name, arr, width in (("customer", c, layout.d_cust), ("product", p, layout.d_prod), ("date", date, DATE_DIM)):
        if arr.shape[1] != width:
            raise ValueError(f"{name} component has dimension {arr.shape[1]}, expected {width}")
    if not c.shape[0] == p.shape[0] == price.shape[0] == date.shape[0]:
        raise ValueError("components have different row counts")
    return np.hstack([c, p, price, date])


def disassemble(v: np.ndarray, layout: OrderLayout):
    v = np.atleast_2d(v)
    if v.shape[1] != layout.dim:
        raise ValueError(f"order vector has dimension {v.shape[1]}, expected {layout.dim}")
    return v[:, layout.customer], v[:, layout.product], v[:, layout.price], v[:, layout.date]


# ---------------------------------------------------------------------------
# customer encoder
# ---------------------------------------------------------------------------


@dataclass
class EncoderConfig:
    hidden: int = 16
    iterations: int = 1500
    batch: int = 64
    lr: float = 5e-3
    max_len: int = 48
    seed: int = 0


@dataclass
class CustomerEncoder:
    params: Dict[str, np.ndarray]
    price_edges: np.ndarray  # log-price cut points between the 4 buckets
    n_categories: int
    history: Dict[str, list] = field(default_factory=dict)

    @property
    def hidden(self) -> int:
        return self.params["rnn.Wh"].shape[0]

    def step(self, h: np.ndarray, x: np.ndarray) -> np.ndarray:
        p = self.params
        return np.tanh(x @ p["rnn.Wx"] + h @ p["rnn.Wh"] + p["rnn.b"])

    def run(self, seq: np.ndarray) -> np.ndarray:
        """Hidden states after 0..len(seq) purchases, shape (len(seq)+1, hidden)."""
        h = np.zeros((1, self.hidden))
        out = [h]
        for x in seq:
            h = self.step(h, x[None, :])
            out.append(h)
        return np.vstack(out)

    def save(self, path) -> None:
        blob = dict(self.params)
        blob["meta.price_edges"] = self.price_edges.reshape(1, -1)
        blob["meta.n_categories"] = np.array([[float(self.n_categories)]])
        checkpoint.save(path, blob)

    @classmethod
    def load(cls, path) -> "CustomerEncoder":
        blob = checkpoint.load(path)
        edges = blob.pop("meta.price_edges").ravel()
        k = int(blob.pop("meta.n_categories")[0, 0])
        return cls(blob, edges, k)


TASKS = ("category", "price", "gap")


def _customer_sequences(orders: Orders, n_customers: int):
    """Per-customer chronological order indices into ``orders``."""
    order = np.lexsort((np.arange(len(orders)), orders.day, orders.customer))
    cust_sorted = orders.customer[order]
    bounds = np.searchsorted(cust_sorted, np.arange(n_customers + 1))
    return [order[bounds[c] : bounds[c + 1]] for c in range(n_customers)]


def gap_bucket(gaps: np.ndarray) -> np.ndarray:
    gaps = np.asarray(gaps)
    return np.where(gaps <= GAP_EDGES[0], 0, np.where(gaps <= GAP_EDGES[1], 1, 2))


def _log_softmax_xent(t: Tape, logits, onehot_masked: np.ndarray, count: float):
    shift = t.const(logits.value.max(axis=1, keepdims=True))
    z = t.sub(logits, shift)
    lse = t.log(t.sum(t.exp(z), axis=1))
    logp = t.sub(z, lse)
    return t.scale(t.sum(t.mul(logp, t.const(onehot_masked))), -1.0 / count)


def train_customer_encoder(train: Orders, world: MarketplaceWorld, product_emb: np.ndarray, config: EncoderConfig = EncoderConfig()) -> CustomerEncoder:
    """Fit the recurrent customer encoder with per-iteration uniform task sampling."""
    rng = make_rng(config.seed, "customer-encoder")
    k = world.config.n_categories
    d_in, h = product_emb.shape[1], config.hidden
    logp = np.log(train.price)
    price_edges = np.quantile(logp, [0.25, 0.5, 0.75])
    n_out = {"category": k, "price": N_PRICE_BUCKETS, "gap": len(GAP_EDGES) + 1}
    params = {
        "rnn.Wx": glorot_uniform(rng, d_in, h),
        "rnn.Wh": glorot_uniform(rng, h, h),
        "rnn.b": np.zeros((1, h)),
    }
    for task, n in n_out.items():
        params[f"head.{task}.W"] = glorot_uniform(rng, h, n)
        params[f"head.{task}.b"] = np.zeros((1, n))

    seqs = [s for s in _customer_sequences(train, len(world.customers)) if len(s) >= 2]
    if not seqs:
        raise ValueError("no customer has two or more orders; cannot train the encoder")
    targets = {
        "category": world.products.category[train.product],
        "price": np.searchsorted(price_edges, logp),
        "gap": None,
    }
    adam = AdamState(lr=config.lr, beta1=0.9, beta2=0.999)
    history = {"loss": [], "task": []}
    for it in range(config.iterations):
        task = TASKS[int(rng.integers(len(TASKS)))]
        batch = [seqs[i] for i in rng.choice(len(seqs), size=min(config.batch, len(seqs)), replace=False)]
        # random window of at most max_len orders per customer
        windows = []
        for s in batch:
            if len(s) > config.max_len:
                start = int(rng.integers(0, len(s) - config.max_len + 1))
                s = s[start : start + config.max_len]
            windows.append(s)
        T = max(len(s) for s in windows) - 1
        B = len(windows)
        X = np.zeros((T, B, d_in))
        alive = np.zeros((T, B, 1))
        Y = np.zeros((T, B, n_out[task]))
        for b, s in enumerate(windows):
            n = len(s) - 1
            X[:n, b] = product_emb[train.product[s[:-1]]]
            alive[:n, b] = 1.0
            if task == "gap":
                y = gap_bucket(np.diff(train.day[s]))
            else:
                y = targets[task][s[1:]]
            Y[np.arange(n), b, y] = 1.0

        tape = Tape()
        nodes = {name: tape.leaf(v, name) for name, v in params.items()}
        hstate = tape.const(np.zeros((B, h)))
        states = []
        for t in range(T):
            pre = tape.add(tape.add(tape.matmul(tape.const(X[t]), nodes["rnn.Wx"]), tape.matmul(hstate, nodes["rnn.Wh"])), nodes["rnn.b"])
            hnew = tape.tanh(pre)
            m = alive[t]
            # padded steps carry the previous state forward
            hstate = tape.add(tape.mul(hnew, tape.const(m)), tape.mul(hstate, tape.const(1.0 - m)))
            states.append(hstate)
        hs = tape.concat(states, axis=0)
        logits = tape.add(tape.matmul(hs, nodes[f"head.{task}.W"]), nodes[f"head.{task}.b"])
        mask = alive.reshape(T * B, 1)
        loss = _log_softmax_xent(tape, logits, Y.reshape(T * B, -1) * mask, float(mask.sum()))
        if not np.isfinite(loss.value[0, 0]):
            raise TrainingDiverged(f"customer encoder loss is non-finite at iteration {it}")
        used = ["rnn.Wx", "rnn.Wh", "rnn.b", f"head.{task}.W", f"head.{task}.b"]
        grads = tape.grad(loss, [nodes[n] for n in used])
        adam_step(adam, params, dict(zip(used, grads)))
        history["loss"].append(float(loss.value[0, 0]))
        history["task"].append(task)
        if (it + 1) % 250 == 0:
            logger.info("encoder iteration %d: %s loss %.4f", it + 1, task, loss.value[0, 0])
    return CustomerEncoder(params, price_edges, k, history)


def embed_customer(encoder: CustomerEncoder, history: Sequence[np.ndarray]) -> np.ndarray:
    """Final hidden state after a purchase history of product embeddings (zero if empty)."""
    if len(history) == 0:
        return np.zeros(encoder.hidden)
    return encoder.run(np.asarray(history))[-1]


def customer_states(encoder: CustomerEncoder, history: Orders, product_emb: np.ndarray, n_customers: int):
    """Per-customer hidden-state trajectories over a history log.

    Returns ``(states, days)``: ``states[c]`` has one row per number of purchases
    consumed (row 0 is the zero state); ``days[c]`` are the purchase days.
    """
    seqs = _customer_sequences(history, n_customers)
    lengths = np.array([len(s) for s in seqs])
    T, h = int(lengths.max(initial=0)), encoder.hidden
    X = np.zeros((T, n_customers, product_emb.shape[1]))
    for c, s in enumerate(seqs):
        X[: len(s), c] = product_emb[history.product[s]]
    H = np.zeros((T + 1, n_customers, h))
    for t in range(T):
        H[t + 1] = encoder.step(H[t], X[t])
    states = [H[: lengths[c] + 1, c] for c in range(n_customers)]
    days = [history.day[s] for s in seqs]
    return states, days


def embed_customers_at(encoder: CustomerEncoder, history: Orders, product_emb: np.ndarray, customers: np.ndarray, days: np.ndarray, n_customers: int) -> np.ndarray:
    """Customer embeddings using only history strictly before each query day."""
    states, hist_days = customer_states(encoder, history, product_emb, n_customers)
    out = np.zeros((len(customers), encoder.hidden))
    for i, (c, d) in enumerate(zip(customers, days)):
        k = int(np.searchsorted(hist_days[c], d, side="left"))
        out[i] = states[c][k]
    return out


def final_customer_embeddings(encoder: CustomerEncoder, history: Orders, product_emb: np.ndarray, n_customers: int) -> np.ndarray:
    states, _ = customer_states(encoder, history, product_emb, n_customers)
    return np.vstack([s[-1] for s in states])


def category_accuracy(encoder: CustomerEncoder, history: Orders, held_out: Orders, world: MarketplaceWorld, product_emb: np.ndarray):
    """Next-category accuracy of head (i) on held-out orders, and the majority-class baseline."""
    emb = embed_customers_at(encoder, history, product_emb, held_out.customer, held_out.day, len(world.customers))
    logits = emb @ encoder.params["head.category.W"] + encoder.params["head.category.b"]
    truth = world.products.category[held_out.product]
    acc = float(np.mean(np.argmax(logits, axis=1) == truth))
    baseline = float(np.bincount(truth).max() / len(truth))
    return acc, baseline


# ---------------------------------------------------------------------------
# end to end
# ---------------------------------------------------------------------------


@dataclass
class EmbeddedOrders:
    matrix: np.ndarray
    layout: OrderLayout
    scaler: PriceScaler
    product_emb: np.ndarray


def embed_orders(world: MarketplaceWorld, orders: Orders, history: Orders, encoder: CustomerEncoder, product_emb: np.ndarray, scaler: PriceScaler) -> np.ndarray:
    layout = OrderLayout(encoder.hidden, product_emb.shape[1])
    cust = embed_customers_at(encoder, history, product_emb, orders.customer, orders.day, len(world.customers))
    price = encode_price(orders.price, scaler)
    dates = encode_days(orders.day, DateHorizon.of(world))
    return assemble_order(cust, product_emb[orders.product], price, dates, layout)


def save_embedded(directory, matrix: np.ndarray, layout: OrderLayout, scaler: PriceScaler, header: str = "") -> Tuple[Path, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    checkpoint.save(d / "orders.ogan", {"orders": matrix})
    side = d / "orders.sidecar"
    lines = [header] if header else []
    lines += [
        f"tmin={scaler.tmin!r}",
        f"tmax={scaler.tmax!r}",
        f"d_cust={layout.d_cust}",
        f"d_prod={layout.d_prod}",
        f"customer={layout.customer.start}:{layout.customer.stop}",
        f"product={layout.product.start}:{layout.product.stop}",
        f"price={layout.price}",
        f"date={layout.date.start}:{layout.date.stop}",
        f"rows={matrix.shape[0]}",
    ]
    side.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return d / "orders.ogan", side


def load_sidecar(path) -> Tuple[OrderLayout, PriceScaler]:
    kv = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line and not line.startswith("#"):
            k, v = line.split("=", 1)
            kv[k] = v
    return OrderLayout(int(kv["d_cust"]), int(kv["d_prod"])), PriceScaler(float(kv["tmin"]), float(kv["tmax"]))
