"""Synthetic marketplace: customers, a product catalog with titles, and a one-year order log.

Gender, tenure and purchase volume are planted in each customer's category
affinities; gender is also planted per product as a purchaser skew, and
seasonality as a per-product month profile.  The labels are kept as ground
truth for the evaluation classifiers.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .rng import make_rng

logger = logging.getLogger(__name__)

SUMMER_MONTHS = (5, 6, 7, 8)
WINTER_MONTHS = (11, 12, 1, 2)
SEASONS = ("flat", "summer", "winter")
GENDERS = ("female", "male")
TENURES = ("medium", "high")
VOLUMES = ("average", "high")
MARKERS = ("women", "men", "summer", "winter")


@dataclass(frozen=True)
class WorldConfig:
    n_customers: int = 2000
    n_products: int = 500
    n_categories: int = 20
    n_orders: int = 50_000
    seed: int = 0
    start_date: str = "2024-01-01"
    horizon_days: int = 366
    word_dim: int = 16
    words_per_category: int = 25
    n_stopwords: int = 22
    female_fraction: float = 0.5
    high_tenure_fraction: float = 0.5
    high_volume_fraction: float = 0.25
    high_volume_intensity: float = 4.0
    peak_mass: float = 0.7
    price_noise_sigma: float = 0.1
    gender_strength: float = 1.6
    tenure_strength: float = 1.2
    volume_strength: float = 1.2
    affinity_noise: float = 0.4

    def validate(self):
        for name in ("n_customers", "n_products", "n_orders", "horizon_days", "word_dim", "words_per_category"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_categories < 1:
            raise ValueError("at least one category is required")
        if not 0.0 <= self.peak_mass <= 1.0:
            raise ValueError("peak_mass must lie in [0, 1]")

    @property
    def start(self) -> dt.date:
        return dt.date.fromisoformat(self.start_date)

    def digest(self) -> str:
        text = repr(sorted(asdict(self).items()))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


@dataclass
class Customers:
    female: np.ndarray  # bool
    high_tenure: np.ndarray  # bool
    high_volume: np.ndarray  # bool
    signup_days_before_end: np.ndarray  # int
    affinity: np.ndarray  # (n, n_categories) simplex rows

    def __len__(self):
        return len(self.female)


@dataclass
class Products:
    category: np.ndarray  # int
    base_price: np.ndarray
    gender_skew: np.ndarray  # P(purchaser is female)
    season: np.ndarray  # index into SEASONS
    titles: List[List[str]]

    def __len__(self):
        return len(self.category)


@dataclass
class Orders:
    customer: np.ndarray
    product: np.ndarray
    price: np.ndarray
    day: np.ndarray  # days since the horizon start

    def __len__(self):
        return len(self.customer)

    def take(self, idx) -> "Orders":
        return Orders(self.customer[idx], self.product[idx], self.price[idx], self.day[idx])


@dataclass
class MarketplaceWorld:
    config: WorldConfig
    customers: Customers
    products: Products
    orders: Orders
    vocab: List[str]
    doc_freq: np.ndarray
    word_vectors: np.ndarray  # (len(vocab), word_dim) unit rows
    category_price_center: np.ndarray = field(default=None)

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def word_index(self):
        return {w: i for i, w in enumerate(self.vocab)}

    def dates(self, orders: Optional[Orders] = None) -> List[dt.date]:
        orders = self.orders if orders is None else orders
        start = self.config.start
        return [start + dt.timedelta(days=int(d)) for d in orders.day]

    def months(self, orders: Optional[Orders] = None) -> np.ndarray:
        return month_of_day(self.config, (self.orders if orders is None else orders).day)


def month_of_day(config: WorldConfig, days: np.ndarray) -> np.ndarray:
    table = np.array([(config.start + dt.timedelta(days=d)).month for d in range(config.horizon_days)])
    return table[np.asarray(days, dtype=int)]


def _pseudo_word(rng: np.random.Generator, taken: set) -> str:
    consonants, vowels = "bcdfghjklmnprstvz", "aeiou"
    while True:
        n = int(rng.integers(2, 4))
        word = "".join(consonants[rng.integers(len(consonants))] + vowels[rng.integers(len(vowels))] for _ in range(n))
        if word not in taken and word not in MARKERS:
            taken.add(word)
            return word


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _category_traits(config: WorldConfig, rng):
    k = config.n_categories
    # gendered and seasonal apparel-like categories, cycled so small worlds still get every kind
    gender_lean = np.array([(1, -1, 0)[i % 3] for i in range(k)], dtype=float)
    season_kind = np.array([(1, 2, 0, 2, 1)[i % 5] for i in range(k)])
    rng.shuffle(gender_lean)
    rng.shuffle(season_kind)
    tenure_effect = rng.normal(size=k)
    volume_effect = rng.normal(size=k)
    price_center = np.exp(rng.uniform(np.log(8.0), np.log(300.0), size=k))
    return gender_lean, season_kind, tenure_effect, volume_effect, price_center


def generate_catalog(config: WorldConfig):
    """Customers, products, vocabulary and word vectors (everything except orders)."""
    config.validate()
    rng = make_rng(config.seed, "catalog")
    k = config.n_categories
    gender_lean, season_kind, tenure_effect, volume_effect, price_center = _category_traits(config, rng)

    # vocabulary: shared stop-words, shared marker words, disjoint category words
    taken: set = set()
    stopwords = [_pseudo_word(rng, taken) for _ in range(config.n_stopwords)]
    cat_words = [[_pseudo_word(rng, taken) for _ in range(config.words_per_category)] for _ in range(k)]
    vocab = stopwords + list(MARKERS) + [w for ws in cat_words for w in ws]
    d = config.word_dim
    centers = _unit_rows(rng.normal(size=(k, d)))
    vecs = [_unit_rows(rng.normal(size=(config.n_stopwords + len(MARKERS), d)))]
    for c in range(k):
        vecs.append(_unit_rows(centers[c] + 0.7 * rng.normal(size=(config.words_per_category, d)) / np.sqrt(d)))
    word_vectors = np.vstack(vecs)

    # products
    n_p = config.n_products
    category = np.sort(np.arange(n_p) % k)
    base_price = price_center[category] * np.exp(rng.uniform(-0.4, 0.4, size=n_p))
    lean = gender_lean[category]
    skew = np.where(lean > 0, rng.uniform(0.7, 0.95, n_p), np.where(lean < 0, rng.uniform(0.05, 0.3, n_p), rng.uniform(0.35, 0.65, n_p)))
    u = rng.random(n_p)
    kind = season_kind[category]
    season = np.where(kind == 0, np.where(u < 0.2, 1, np.where(u < 0.4, 2, 0)), np.where(u < 0.8, kind, 0))
    titles = []
    for p in range(n_p):
        words = [str(w) for w in rng.choice(cat_words[category[p]], size=int(rng.integers(2, 7)), replace=False)]
        if skew[p] > 0.65:
            words.insert(int(rng.integers(len(words) + 1)), "women")
        elif skew[p] < 0.35:
            words.insert(int(rng.integers(len(words) + 1)), "men")
        if season[p] != 0 and rng.random() < 0.8:
            words.insert(0, SEASONS[season[p]])
        for _ in range(int(rng.integers(0, 3))):
            words.insert(int(rng.integers(len(words) + 1)), stopwords[int(rng.integers(len(stopwords)))])
        titles.append(words[:12])

    index = {w: i for i, w in enumerate(vocab)}
    doc_freq = np.zeros(len(vocab), dtype=np.int64)
    for t in titles:
        for w in set(t):
            doc_freq[index[w]] += 1

    # customers
    n_c = config.n_customers
    female = rng.random(n_c) < config.female_fraction
    high_tenure = rng.random(n_c) < config.high_tenure_fraction
    high_volume = rng.random(n_c) < config.high_volume_fraction
    years = np.where(high_tenure, rng.uniform(5.0, 10.0, n_c), rng.uniform(2.0, 5.0, n_c))
    signup = np.floor(years * 365.25).astype(np.int64)
    signup = np.where(high_tenure, np.maximum(signup, int(5 * 365.25) + 1), np.clip(signup, int(2 * 365.25), int(5 * 365.25)))
    sign = lambda b: np.where(b, 1.0, -1.0)[:, None]
    logits = (
        config.gender_strength * sign(female) * gender_lean[None, :]
        + config.tenure_strength * sign(high_tenure) * tenure_effect[None, :]
        + config.volume_strength * sign(high_volume) * volume_effect[None, :]
        + config.affinity_noise * rng.normal(size=(n_c, k))
    )
    aff = np.exp(logits - logits.max(axis=1, keepdims=True))
    aff /= aff.sum(axis=1, keepdims=True)

    customers = Customers(female, high_tenure, high_volume, signup, aff)
    products = Products(category, base_price, skew, season, titles)
    return customers, products, vocab, doc_freq, word_vectors, price_center


def _season_day_weights(config: WorldConfig) -> np.ndarray:
    """Per-season probability over horizon days, shape (3, horizon_days)."""
    months = month_of_day(config, np.arange(config.horizon_days))
    out = np.zeros((3, config.horizon_days))
    out[0] = 1.0 / config.horizon_days
    for s, peak in ((1, SUMMER_MONTHS), (2, WINTER_MONTHS)):
        in_peak = np.isin(months, peak)
        out[s, in_peak] = config.peak_mass / in_peak.sum()
        out[s, ~in_peak] = (1.0 - config.peak_mass) / (~in_peak).sum()
    return out


def generate_orders(config: WorldConfig, customers: Customers, products: Products) -> Orders:
    """Sample the order log.

    Customers are drawn in proportion to purchase intensity.  Each product's
    weight for a customer is the customer's category affinity spread uniformly
    over the category, times the product's gender compatibility (skew for
    female customers, 1 - skew for male ones).
    """
    rng = make_rng(config.seed, "orders")
    n = config.n_orders
    intensity = np.where(customers.high_volume, config.high_volume_intensity, 1.0)
    cust = rng.choice(len(customers), size=n, p=intensity / intensity.sum())

    cat_size = np.bincount(products.category, minlength=config.n_categories).astype(float)
    per_product = customers.affinity[:, products.category] / np.maximum(cat_size[products.category], 1.0)[None, :]
    compat = np.where(customers.female[:, None], products.gender_skew[None, :], 1.0 - products.gender_skew[None, :])
    weights = per_product * compat
    cdf = np.cumsum(weights, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random(n)
    prod = np.empty(n, dtype=np.int64)
    for start in range(0, n, 4096):
        sl = slice(start, start + 4096)
        prod[sl] = (cdf[cust[sl]] <= u[sl, None]).sum(axis=1)
    np.minimum(prod, len(products) - 1, out=prod)
    # guard against float ties at the cdf boundary landing on a zero-weight product
    zero = weights[cust, prod] == 0.0
    if np.any(zero):
        for i in np.flatnonzero(zero):
            prod[i] = int(np.flatnonzero(weights[cust[i]] > 0)[-1])

    day_w = _season_day_weights(config)
    day_cdf = np.cumsum(day_w, axis=1)
    day_cdf /= day_cdf[:, -1:]
    v = rng.random(n)
    day = (day_cdf[products.season[prod]] <= v[:, None]).sum(axis=1)
    np.minimum(day, config.horizon_days - 1, out=day)

    noise = np.exp(config.price_noise_sigma * rng.normal(size=n))
    price = products.base_price[prod] * np.clip(noise, 0.5, 2.0)

    order = np.lexsort((prod, cust, day))
    return Orders(cust[order].astype(np.int64), prod[order].astype(np.int64), price[order], day[order].astype(np.int64))


def generate_world(config: WorldConfig) -> MarketplaceWorld:
    customers, products, vocab, df, vectors, centers = generate_catalog(config)
    orders = generate_orders(config, customers, products)
    logger.info("generated world: %d customers, %d products, %d orders", len(customers), len(products), len(orders))
    return MarketplaceWorld(config, customers, products, orders, vocab, df, vectors, centers)


def split_orders(world: MarketplaceWorld, holdout: float, seed: Optional[int] = None) -> Tuple[Orders, Orders]:
    """Disjoint seeded split of the order log into (train, eval), each kept in log order."""
    if not 0.0 < holdout < 1.0:
        raise ValueError(f"holdout fraction must lie in (0, 1), got {holdout}")
    n = len(world.orders)
    rng = make_rng(world.seed if seed is None else seed, "split")
    perm = rng.permutation(n)
    n_eval = int(round(holdout * n))
    eval_idx = np.sort(perm[:n_eval])
    train_idx = np.sort(perm[n_eval:])
    return world.orders.take(train_idx), world.orders.take(eval_idx)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _header(config: WorldConfig) -> str:
    return f"# ordergan world seed={config.seed} config={config.digest()}\n"


def save_world(world: MarketplaceWorld, directory) -> List[Path]:
    """Write customers.tsv, products.tsv, orders.tsv, vocab.tsv (+ world.cfg)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    cfg, c, p, o = world.config, world.customers, world.products, world.orders
    head = _header(cfg)
    paths = []

    lines = [head, "customer_id\tgender\ttenure\tvolume\tsignup_days_before_end\taffinity\n"]
    for i in range(len(c)):
        aff = ",".join(_fmt(a) for a in c.affinity[i])
        lines.append(f"{i}\t{GENDERS[0 if c.female[i] else 1]}\t{TENURES[int(c.high_tenure[i])]}\t{VOLUMES[int(c.high_volume[i])]}\t{c.signup_days_before_end[i]}\t{aff}\n")
    paths.append(_write(out / "customers.tsv", lines))

    lines = [head, "product_id\tcategory\tbase_price\tgender_skew\tseason\ttitle\n"]
    for i in range(len(p)):
        lines.append(f"{i}\t{p.category[i]}\t{_fmt(p.base_price[i])}\t{_fmt(p.gender_skew[i])}\t{SEASONS[p.season[i]]}\t{' '.join(p.titles[i])}\n")
    paths.append(_write(out / "products.tsv", lines))

    lines = [head, "customer_id\tproduct_id\tprice\tdate\n"]
    dates = world.dates()
    for i in range(len(o)):
        lines.append(f"{o.customer[i]}\t{o.product[i]}\t{_fmt(o.price[i])}\t{dates[i].isoformat()}\n")
    paths.append(_write(out / "orders.tsv", lines))

    lines = [head, "word\tdoc_freq\tvector\n"]
    for i, w in enumerate(world.vocab):
        lines.append(f"{w}\t{world.doc_freq[i]}\t{','.join(_fmt(v) for v in world.word_vectors[i])}\n")
    paths.append(_write(out / "vocab.tsv", lines))

    cfg_lines = [head] + [f"{k}={v}\n" for k, v in asdict(cfg).items()]
    cfg_lines.append("category_price_center=" + ",".join(_fmt(v) for v in world.category_price_center) + "\n")
    paths.append(_write(out / "world.cfg", cfg_lines))
    return paths


def _write(path: Path, lines) -> Path:
    path.write_text("".join(lines), encoding="utf-8")
    return path


def _rows(path: Path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                continue
            yield line.rstrip("\n").split("\t")


def load_world(directory) -> MarketplaceWorld:
    d = Path(directory)
    raw = {}
    centers = None
    for line in (d / "world.cfg").read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        key, value = line.split("=", 1)
        if key == "category_price_center":
            centers = np.array([float(v) for v in value.split(",")])
        else:
            raw[key] = value
    fields = WorldConfig.__dataclass_fields__
    kwargs = {k: type(fields[k].default)(v) for k, v in raw.items() if k in fields}
    config = WorldConfig(**kwargs)

    rows = list(_rows(d / "customers.tsv"))[1:]
    customers = Customers(
        female=np.array([r[1] == "female" for r in rows]),
        high_tenure=np.array([r[2] == "high" for r in rows]),
        high_volume=np.array([r[3] == "high" for r in rows]),
        signup_days_before_end=np.array([int(r[4]) for r in rows], dtype=np.int64),
        affinity=np.array([[float(v) for v in r[5].split(",")] for r in rows]),
    )
    rows = list(_rows(d / "products.tsv"))[1:]
    products = Products(
        category=np.array([int(r[1]) for r in rows], dtype=np.int64),
        base_price=np.array([float(r[2]) for r in rows]),
        gender_skew=np.array([float(r[3]) for r in rows]),
        season=np.array([SEASONS.index(r[4]) for r in rows], dtype=np.int64),
        titles=[r[5].split(" ") for r in rows],
    )
    rows = list(_rows(d / "orders.tsv"))[1:]
    start = config.start
    orders = Orders(
        customer=np.array([int(r[0]) for r in rows], dtype=np.int64),
        product=np.array([int(r[1]) for r in rows], dtype=np.int64),
        price=np.array([float(r[2]) for r in rows]),
        day=np.array([(dt.date.fromisoformat(r[3]) - start).days for r in rows], dtype=np.int64),
    )
    rows = list(_rows(d / "vocab.tsv"))[1:]
    vocab = [r[0] for r in rows]
    doc_freq = np.array([int(r[1]) for r in rows], dtype=np.int64)
    vectors = np.array([[float(v) for v in r[2].split(",")] for r in rows])
    return MarketplaceWorld(config, customers, products, orders, vocab, doc_freq, vectors, centers)
