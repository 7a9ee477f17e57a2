"""End-to-end stages behind the command line: synth, embed, train, generate, evaluate.

Every stage reads and writes a single output directory:

    world/     customers.tsv products.tsv orders.tsv vocab.tsv world.cfg
    embed/     orders.ogan orders.sidecar eval.ogan encoder.ogan products.ogan embed.cfg
    models/    {ecgan,ec2gan,cvae}.ogan and {model}_metrics.csv
    generated/ {model}_{product}.csv
    report/    metrics.csv rsm.csv propensity.csv histogram.svg tsne.csv pca.csv distribution_report/
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import checkpoint
from .config import RunConfig
from .cvae import CvaeModel, cvae_sample, metrics_as_gan_rows, train_cvae
from .embedding import (
    CustomerEncoder,
    OrderLayout,
    PriceScaler,
    UnembeddableTitle,
    decode_price,
    disassemble,
    embed_orders,
    embed_products,
    embed_title,
    load_sidecar,
    recover_month,
    save_embedded,
    train_customer_encoder,
)
from .evaluation.forest import forest_leaf_distribution
from .evaluation.propensity import (
    CHARACTERISTICS,
    compute_propensities,
    eligible_products,
    rsm,
    train_characteristic_classifiers,
)
from .evaluation.report import histogram_svg, write_csv, write_distribution_report
from .evaluation.tracker import logistic_tracker
from .evaluation.triplet import triplet_agreement
from .evaluation.tsne import pca, tsne, write_projection
from .gan import GanModel, init_gan, read_metrics, sample, train, write_metrics
from .marketplace import generate_world, load_world, save_world, split_orders
from .rng import make_rng

logger = logging.getLogger(__name__)

MODELS = ("ecgan", "ec2gan", "cvae")
WORLD_FILES = ("customers.tsv", "products.tsv", "orders.tsv", "vocab.tsv")


class UsageError(ValueError):
    """Bad invocation or missing prerequisite; maps to exit code 2."""


def _refuse_overwrite(paths: Sequence[Path], force: bool) -> None:
    existing = [p for p in paths if p.exists()]
    if existing and not force:
        raise UsageError(f"{existing[0]} exists; pass --force to overwrite")


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise UsageError(f"missing {path}; {hint}")
    return path


# ---------------------------------------------------------------------------
# synth / embed
# ---------------------------------------------------------------------------


def synth(cfg: RunConfig, out: Path, force: bool = False) -> List[Path]:
    target = out / "world"
    _refuse_overwrite([target / f for f in WORLD_FILES], force)
    world = generate_world(cfg.world())
    return save_world(world, target)


@dataclass
class Embedded:
    world: object
    train_orders: object
    eval_orders: object
    train: np.ndarray
    eval: np.ndarray
    layout: OrderLayout
    scaler: PriceScaler
    encoder: CustomerEncoder
    product_emb: np.ndarray


def embed(cfg: RunConfig, out: Path, force: bool = False) -> Embedded:
    world_dir = _require(out / "world" / "orders.tsv", "run `ordergan synth` first").parent
    target = out / "embed"
    _refuse_overwrite([target / "orders.ogan", target / "orders.sidecar"], force)
    world = load_world(world_dir)
    if cfg.paper_scale and world.config.word_dim != 128:
        raise UsageError("paper-scale embedding needs a world synthesized with --paper-scale")
    holdout = cfg.eval().holdout
    train_orders, eval_orders = split_orders(world, holdout, seed=cfg.seed)
    product_emb = embed_products(world)
    encoder = train_customer_encoder(train_orders, world, product_emb, cfg.encoder())
    scaler = PriceScaler.fit(train_orders.price)
    X_train = embed_orders(world, train_orders, train_orders, encoder, product_emb, scaler)
    X_eval = embed_orders(world, eval_orders, train_orders, encoder, product_emb, scaler)
    layout = OrderLayout(encoder.hidden, product_emb.shape[1])
    # spot check: the product slice of every row is its catalog vector
    _, prod, _, _ = disassemble(X_train, layout)
    if not np.array_equal(prod, product_emb[train_orders.product]):
        raise RuntimeError("order assembly round trip failed")
    save_embedded(target, X_train, layout, scaler, cfg.provenance("orders"))
    checkpoint.save(target / "eval.ogan", {"orders": X_eval})
    checkpoint.save(target / "products.ogan", {"products": product_emb})
    encoder.save(target / "encoder.ogan")
    (target / "embed.cfg").write_text(f"{cfg.provenance('embed')}\nholdout={holdout!r}\nseed={cfg.seed}\n")
    return Embedded(world, train_orders, eval_orders, X_train, X_eval, layout, scaler, encoder, product_emb)


def load_embedded(out: Path) -> Embedded:
    d = out / "embed"
    _require(d / "orders.ogan", "run `ordergan embed` first")
    world = load_world(out / "world")
    kv = dict(line.split("=", 1) for line in (d / "embed.cfg").read_text().splitlines() if "=" in line and not line.startswith("#"))
    train_orders, eval_orders = split_orders(world, float(kv["holdout"]), seed=int(kv["seed"]))
    layout, scaler = load_sidecar(d / "orders.sidecar")
    return Embedded(
        world,
        train_orders,
        eval_orders,
        checkpoint.load(d / "orders.ogan")["orders"],
        checkpoint.load(d / "eval.ogan")["orders"],
        layout,
        scaler,
        CustomerEncoder.load(d / "encoder.ogan"),
        checkpoint.load(d / "products.ogan")["products"],
    )


# ---------------------------------------------------------------------------
# train / load models
# ---------------------------------------------------------------------------


def model_path(out: Path, model: str) -> Path:
    return out / "models" / f"{model}.ogan"


def metrics_path(out: Path, model: str) -> Path:
    return out / "models" / f"{model}_metrics.csv"


def train_model(
    cfg: RunConfig, out: Path, model: str, force: bool = False, resume: bool = False, steps: Optional[int] = None, progress=None
):
    if model not in MODELS:
        raise UsageError(f"unknown model {model!r}; choose from {MODELS}")
    layout, _ = load_sidecar(_require(out / "embed" / "orders.sidecar", "run `ordergan embed` first"))
    data = checkpoint.load(out / "embed" / "orders.ogan")["orders"]
    path, mpath = model_path(out, model), metrics_path(out, model)
    path.parent.mkdir(parents=True, exist_ok=True)
    prod = (layout.product.start, layout.product.stop)
    if model == "cvae":
        if resume:
            raise UsageError("the C-VAE baseline does not support --resume")
        _refuse_overwrite([path], force)
        m = train_cvae(cfg.cvae(layout.dim, prod), data)
        m.save(path)
        write_metrics(mpath, metrics_as_gan_rows(m), cfg.provenance("cvae-metrics"))
        return m
    if resume:
        m = GanModel.load(_require(path, "nothing to resume"))
        m.metrics = read_metrics(mpath) if mpath.exists() else []
    else:
        _refuse_overwrite([path], force)
        m = init_gan(cfg.gan(layout.dim, conditional=(model == "ec2gan"), prod=prod))

    def save_progress(row):
        write_metrics(mpath, m.metrics, cfg.provenance(f"{model}-metrics"))
        if progress:
            progress(row)

    try:
        train(m, data, steps=steps, checkpoint_path=path, checkpoint_every=m.config.tracker_every or 500, progress=save_progress)
    finally:
        write_metrics(mpath, m.metrics, cfg.provenance(f"{model}-metrics"))
    return m


def load_model(out: Path, model: str):
    path = _require(model_path(out, model), f"run `ordergan train --model {model}` first")
    m = CvaeModel.load(path) if model == "cvae" else GanModel.load(path)
    if not m.trained:
        raise UsageError(f"{model} checkpoint is untrained")
    return m


def product_sampler(model, product_emb: np.ndarray, seed: int, tag: str):
    """``(product id, n) -> generated orders`` with a per-product random stream."""

    def draw(product: int, n: int) -> np.ndarray:
        rng = make_rng(seed, "generate", tag, int(product))
        if isinstance(model, CvaeModel):
            return cvae_sample(model, n, product_emb[product], rng=rng)
        return sample(model, n, product_emb[product], rng=rng)

    return draw


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def generate(
    cfg: RunConfig,
    out: Path,
    model: str,
    n: int,
    product: Optional[int] = None,
    title: Optional[str] = None,
    dest: Optional[Path] = None,
    force: bool = False,
) -> Path:
    if n < 0:
        raise UsageError("n must be >= 0")
    m = load_model(out, model)
    layout, scaler = load_sidecar(out / "embed" / "orders.sidecar")
    product_emb = checkpoint.load(out / "embed" / "products.ogan")["products"]
    conditional = model in ("ec2gan", "cvae")
    if conditional and product is None and title is None:
        raise UsageError(f"{model} needs --product or --title")
    if not conditional and (product is not None or title is not None):
        raise UsageError("ecgan is unconditional; drop --product/--title")
    ctx, tag = None, "all"
    if product is not None:
        if not 0 <= product < len(product_emb):
            raise UsageError(f"unknown product id {product} (catalog has {len(product_emb)} products)")
        ctx, tag = product_emb[product], str(product)
    elif title is not None:
        world = load_world(out / "world")
        try:
            ctx = embed_title(world, title.split())
        except UnembeddableTitle as e:
            raise UsageError(str(e)) from None
        tag = "title"
    rng = make_rng(cfg.seed, "generate", model, tag)
    if model == "cvae":
        rows = cvae_sample(m, n, ctx, rng=rng)
    else:
        rows = sample(m, n, ctx, rng=rng)
    dest = dest or out / "generated" / f"{model}_{tag}.csv"
    _refuse_overwrite([dest], force)
    dest.parent.mkdir(parents=True, exist_ok=True)
    header = [f"v{i}" for i in range(layout.dim)] + ["price", "month"]
    price = decode_price(rows[:, layout.price], scaler) if n else np.zeros(0)
    month = recover_month(rows[:, layout.date]) if n else np.zeros(0, int)
    body = [list(r) + [p, int(mo)] for r, p, mo in zip(rows, price, month)]
    write_csv(dest, header, body, cfg.provenance(f"generated {model}"))
    return dest


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _sample_rows(X: np.ndarray, n: int, rng) -> np.ndarray:
    n = min(n, len(X))
    return X[np.sort(rng.choice(len(X), n, replace=False))]


def ecgan_metrics(model: GanModel, real: np.ndarray, cfg_eval, seed: int) -> Dict[str, object]:
    """Tracker, triplet agreement, leaf-ratio and projections for an unconditional model."""
    rng = make_rng(seed, "eval", "ecgan")
    n_t = min(cfg_eval.tracker_n, len(real) // 2)
    tracker = logistic_tracker(_sample_rows(real, n_t, rng), sample(model, n_t, rng=rng), rng)
    n_f = min(cfg_eval.forest_n, len(real))
    real_f = _sample_rows(real, n_f, rng)
    fake_f = sample(model, n_f, rng=rng)
    trip = triplet_agreement(real_f, fake_f, cfg_eval.triplets, rng)
    forest = forest_leaf_distribution(real_f, fake_f, rng)
    n_p = min(cfg_eval.tsne_n, len(real))
    proj_in = np.vstack([real_f[:n_p], fake_f[:n_p]])
    labels = ["real"] * n_p + ["generated"] * n_p
    emb = tsne(proj_in, rng, perplexity=cfg_eval.perplexity, iterations=cfg_eval.tsne_iterations)
    return dict(tracker=tracker, triplet=trip, forest=forest, tsne=emb.Y, pca=pca(proj_in), labels=labels, tsne_kl=emb.kl_history[-1] if emb.kl_history else float("nan"))


def reconstruction_error(model: GanModel, products: Sequence[int], product_emb: np.ndarray, n: int, seed: int) -> float:
    """Mean of ||P - P~|| / ||P|| over n samples for each product."""
    cfg = model.config
    errs = []
    for p in products:
        ctx = product_emb[p]
        fake = sample(model, n, ctx, rng=make_rng(seed, "recon", int(p)))
        diff = np.linalg.norm(fake[:, cfg.prod_start : cfg.prod_stop] - ctx, axis=1)
        errs.append(diff.mean() / np.linalg.norm(ctx))
    return float(np.mean(errs))


def _report_products(table, k: int) -> List[int]:
    """Deterministic showcase: most female, most male, most summer, most winter skew."""
    picks = []
    for key, sign in (("female", -1), ("male", -1), ("summer", -1), ("winter", -1)):
        order = np.argsort(sign * table.truth[key], kind="stable")
        for i in order:
            p = int(table.products[i])
            if p not in picks:
                picks.append(p)
                break
    return picks[:k]


def evaluate(cfg: RunConfig, out: Path, force: bool = False, progress=None) -> Dict[str, object]:
    e = cfg.eval()
    report = out / "report"
    _refuse_overwrite([report / "metrics.csv", report / "rsm.csv"], force)
    report.mkdir(parents=True, exist_ok=True)
    emb = load_embedded(out)
    models = {name: load_model(out, name) for name in MODELS}
    say = progress or (lambda msg: None)
    t0 = time.time()
    metrics: Dict[str, float] = {}

    say("ecgan metrics")
    ec = ecgan_metrics(models["ecgan"], emb.train, e, cfg.seed)
    untrained = read_metrics(metrics_path(out, "ecgan"))
    metrics["ecgan.tracker_accuracy_untrained"] = untrained[0]["tracker_accuracy"] if untrained else float("nan")
    metrics["ecgan.tracker_accuracy"] = ec["tracker"]
    metrics["ecgan.triplet_agreement"] = ec["triplet"].agreement
    metrics["ecgan.triplet_agreement_strict"] = ec["triplet"].strict_agreement
    metrics["ecgan.flat_features_generated"] = ec["triplet"].flat_generated
    metrics["ecgan.leaf_ratio_mean"] = ec["forest"].mean
    metrics["ecgan.forest_max_depth"] = ec["forest"].max_depth
    metrics["ecgan.tsne_final_kl"] = ec["tsne_kl"]
    (report / "histogram.svg").write_text(histogram_svg(ec["forest"].histogram, "per-order mean real-order-ratio"))
    write_csv(
        report / "histogram.csv",
        ("bin_low", "bin_high", "count"),
        [(i / 20, (i + 1) / 20, int(c)) for i, c in enumerate(ec["forest"].histogram)],
        cfg.provenance("leaf-ratio histogram"),
    )
    write_projection(report / "tsne.csv", ec["tsne"], ec["labels"], cfg.provenance("tsne"))
    write_projection(report / "pca.csv", ec["pca"], ec["labels"], cfg.provenance("pca"))

    say("characteristic classifiers")
    clf = train_characteristic_classifiers(
        emb.train[:, emb.layout.customer], emb.train_orders.customer, emb.world, make_rng(cfg.seed, "eval", "classifiers")
    )
    for name, c in clf.items():
        metrics[f"classifier.{name}.accuracy"] = c.accuracy

    products = eligible_products(emb.eval_orders, e.min_orders)
    metrics["products.eligible"] = len(products)
    metrics["products.excluded"] = len(emb.product_emb) - len(products)

    tables = {}
    for name in ("ec2gan", "cvae"):
        say(f"propensities {name}")
        sampler = product_sampler(models[name], emb.product_emb, cfg.seed, name)
        tables[name] = compute_propensities(
            products, emb.eval, emb.eval_orders, emb.world, emb.layout, emb.scaler, clf, sampler, e.n_per_product, e.min_orders
        )

    rows = []
    for name in ("ec2gan", "cvae"):
        for ch in CHARACTERISTICS:
            score = rsm(tables[name].truth[ch], tables[name].generated[ch], e.rsm_pairs, make_rng(cfg.seed, "rsm", name, ch))
            rows.append((ch, name, score))
    rrng = make_rng(cfg.seed, "rsm", "random")
    truth = tables["ec2gan"].truth["female"]
    rows.append(("female", "random", rsm(truth, rrng.random(len(truth)), e.rsm_pairs, rrng)))
    write_csv(report / "rsm.csv", ("characteristic", "method", "score"), rows, cfg.provenance("rsm"))

    prop_rows = []
    for name, table in tables.items():
        for p, scores in table.rows():
            for ch in CHARACTERISTICS:
                prop_rows.append((p, name, ch, scores[ch][0], scores[ch][1]))
    write_csv(report / "propensity.csv", ("product", "method", "characteristic", "truth", "generated"), prop_rows, cfg.provenance("propensity"))

    say("reconstruction")
    recon_products = products[np.argsort(-np.bincount(emb.eval_orders.product)[products], kind="stable")][: e.recon_products]
    metrics["ec2gan.reconstruction_error"] = reconstruction_error(models["ec2gan"], recon_products, emb.product_emb, e.recon_samples, cfg.seed)

    showcase = _report_products(tables["ec2gan"], e.report_products)
    write_distribution_report(report / "distribution_report", tables["ec2gan"], showcase, cfg.provenance("distribution"))

    write_csv(report / "metrics.csv", ("metric", "value"), sorted(metrics.items()), cfg.provenance("metrics"))
    logger.info("evaluation finished in %.1fs", time.time() - t0)
    return dict(metrics=metrics, rsm=rows, tables=tables, forest=ec["forest"], triplet=ec["triplet"])
