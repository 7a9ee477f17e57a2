"""Conditional VAE baseline for product-conditioned order generation."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import checkpoint
from .autodiff import AdamState, Tape, TrainingDiverged, adam_step
from .gan import DESK_EPOCHS, GanConfig
from .nn import bind, init_mlp, mlp, mlp_numpy
from .rng import make_rng

COLLAPSE_KL_PER_DIM = 1e-3
FALLBACK_BETA = 0.5


@dataclass(frozen=True)
class CvaeConfig:
    dim: int = 40
    prod_start: int = 16
    prod_stop: int = 32
    latent: int = 0
    enc_hidden: Tuple[int, ...] = ()
    dec_hidden: Tuple[int, ...] = ()
    beta_kl: float = 1.0
    epochs: int = DESK_EPOCHS
    batch: int = 128
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        # mirror the GAN widths: encoder like the critic, decoder like the generator
        ref = GanConfig(dim=self.dim)
        if self.latent <= 0:
            object.__setattr__(self, "latent", ref.noise_dim)
        if not self.enc_hidden:
            object.__setattr__(self, "enc_hidden", ref.disc_hidden)
        if not self.dec_hidden:
            object.__setattr__(self, "dec_hidden", ref.gen_hidden)
        object.__setattr__(self, "enc_hidden", tuple(int(w) for w in self.enc_hidden))
        object.__setattr__(self, "dec_hidden", tuple(int(w) for w in self.dec_hidden))
        if self.beta_kl < 0:
            raise ValueError("KL weight must be >= 0")
        if not 0 <= self.prod_start < self.prod_stop <= self.dim:
            raise ValueError("product slice outside the order width")

    @property
    def d_prod(self) -> int:
        return self.prod_stop - self.prod_start

    def replace(self, **kw) -> "CvaeConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class CvaeModel:
    config: CvaeConfig
    params: Dict[str, np.ndarray]
    beta_kl: float
    step: int = 0
    metrics: List[dict] = field(default_factory=list)
    collapse_fallback: bool = False

    @property
    def trained(self) -> bool:
        return self.step > 0

    def context(self, data: np.ndarray) -> np.ndarray:
        return data[:, self.config.prod_start : self.config.prod_stop]

    def encode(self, x: np.ndarray, context: np.ndarray):
        h = mlp_numpy(self.params, "enc", np.hstack([x, context]))
        k = self.config.latent
        return h[:, :k], h[:, k:]

    def decode(self, z: np.ndarray, context: np.ndarray) -> np.ndarray:
        return mlp_numpy(self.params, "dec", np.hstack([z, context]), out="tanh")

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        ctx = self.context(x)
        mu, _ = self.encode(x, ctx)
        return self.decode(mu, ctx)

    def save(self, path) -> None:
        payload = dict(self.params)
        for f in dataclasses.fields(self.config):
            v = getattr(self.config, f.name)
            payload[f"cfg.{f.name}"] = np.atleast_2d(np.asarray(v, dtype=float)) if np.size(v) else np.zeros((1, 0))
        payload["state"] = np.array([[self.step, self.beta_kl, float(self.collapse_fallback)]])
        checkpoint.save(path, payload)

    @classmethod
    def load(cls, path) -> "CvaeModel":
        raw = checkpoint.load(path)
        kw = {}
        for f in dataclasses.fields(CvaeConfig):
            v = raw[f"cfg.{f.name}"]
            if f.name.endswith("hidden"):
                kw[f.name] = tuple(int(x) for x in v.ravel())
            elif f.type in ("int", int):
                kw[f.name] = int(v[0, 0])
            else:
                kw[f.name] = float(v[0, 0])
        params = {k: v for k, v in raw.items() if k.startswith(("enc.", "dec."))}
        step, beta, fb = raw["state"].ravel()
        return cls(CvaeConfig(**kw), params, float(beta), int(step), [], bool(fb))


def init_cvae(config: CvaeConfig, beta_kl: Optional[float] = None) -> CvaeModel:
    rng = make_rng(config.seed, "cvae-init")
    params = init_mlp(rng, [config.dim + config.d_prod, *config.enc_hidden, 2 * config.latent], "enc")
    params.update(init_mlp(rng, [config.latent + config.d_prod, *config.dec_hidden, config.dim], "dec"))
    return CvaeModel(config, params, config.beta_kl if beta_kl is None else beta_kl)


def kl_divergence(mu: np.ndarray, logvar: np.ndarray) -> float:
    """Batch mean of KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dims."""
    mu, logvar = np.atleast_2d(mu), np.atleast_2d(logvar)
    return float((0.5 * (mu**2 + np.exp(logvar) - 1.0 - logvar)).sum(axis=1).mean())


def cvae_loss(
    params: Dict[str, np.ndarray],
    x: np.ndarray,
    context: np.ndarray,
    eps: np.ndarray,
    beta_kl: float,
    latent: int,
) -> Tuple[float, Dict[str, np.ndarray], Dict[str, float]]:
    """Reconstruction (per-row summed squared error, batch mean) plus beta_kl * KL."""
    tape = Tape()
    names = list(params)
    nodes = bind(tape, params, names)
    c = tape.const(context)
    h = mlp(tape, nodes, "enc", tape.concat([tape.const(x), c]))
    mu = tape.slice(h, 0, latent)
    logvar = tape.slice(h, latent, 2 * latent)
    z = tape.add(mu, tape.mul(tape.exp(tape.scale(logvar, 0.5)), tape.const(eps)))
    xhat = mlp(tape, nodes, "dec", tape.concat([z, c]), out="tanh")
    rec = tape.mean(tape.sum(tape.square(tape.sub(xhat, tape.const(x))), axis=1))
    kl_terms = tape.sub(tape.add(tape.square(mu), tape.exp(logvar)), tape.scale(logvar, 1.0, 1.0))
    kl = tape.mean(tape.sum(tape.scale(kl_terms, 0.5), axis=1))
    loss = tape.add(rec, tape.scale(kl, beta_kl))
    value = float(loss.value[0, 0])
    if not math.isfinite(value):
        raise TrainingDiverged("non-finite C-VAE loss")
    grads = tape.grad(loss, [nodes[k] for k in names])
    return value, dict(zip(names, grads)), {"reconstruction": float(rec.value[0, 0]), "kl": float(kl.value[0, 0])}


def _fit(model: CvaeModel, data: np.ndarray) -> CvaeModel:
    cfg = model.config
    opt = AdamState(lr=cfg.lr, beta1=0.9, beta2=0.999)
    n = len(data)
    per_epoch = max(1, n // cfg.batch)
    for epoch in range(cfg.epochs):
        rng = make_rng(cfg.seed, "cvae-epoch", epoch, round(model.beta_kl * 1e6))
        perm = rng.permutation(n)
        tot = rec = kl = 0.0
        for b in range(per_epoch):
            x = data[perm[b * cfg.batch : (b + 1) * cfg.batch]]
            eps = rng.standard_normal((len(x), cfg.latent))
            loss, grads, parts = cvae_loss(model.params, x, model.context(x), eps, model.beta_kl, cfg.latent)
            adam_step(opt, model.params, grads)
            model.step += 1
            tot += loss
            rec += parts["reconstruction"]
            kl += parts["kl"]
        model.metrics.append(
            dict(step=model.step, epoch=epoch + 1, loss=tot / per_epoch, reconstruction=rec / per_epoch, kl=kl / per_epoch)
        )
    return model


def train_cvae(config: CvaeConfig, data: np.ndarray) -> CvaeModel:
    """Train with beta_kl from the config; retrain once at 0.5 if the posterior collapses."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != config.dim:
        raise ValueError(f"order matrix must have {config.dim} columns, got shape {data.shape}")
    if len(data) < config.batch:
        raise ValueError(f"need at least one minibatch of {config.batch} rows")
    model = _fit(init_cvae(config), data)
    if posterior_collapsed(model, data) and model.beta_kl > FALLBACK_BETA:
        model = _fit(init_cvae(config, FALLBACK_BETA), data)
        model.collapse_fallback = True
    return model


def posterior_collapsed(model: CvaeModel, data: np.ndarray) -> bool:
    mu, logvar = model.encode(data, model.context(data))
    return kl_divergence(mu, logvar) / model.config.latent < COLLAPSE_KL_PER_DIM


def cvae_sample(model: CvaeModel, n: int, context, seed: Optional[int] = None, rng=None) -> np.ndarray:
    cfg = model.config
    if not model.trained:
        raise ValueError("C-VAE is untrained")
    if n == 0:
        return np.zeros((0, cfg.dim))
    if rng is None:
        rng = make_rng(cfg.seed if seed is None else seed, "cvae-sample")
    context = np.asarray(context, dtype=float)
    if context.ndim == 1:
        context = np.broadcast_to(context, (n, context.size))
    if context.shape != (n, cfg.d_prod):
        raise ValueError(f"product context shape {context.shape} != ({n}, {cfg.d_prod})")
    z = rng.standard_normal((n, cfg.latent))
    return model.decode(z, context)


def metrics_as_gan_rows(model: CvaeModel) -> List[dict]:
    """Epoch losses in the shared metrics-CSV layout (loss under gen_loss)."""
    return [
        dict(step=m["step"], critic_loss=None, gen_loss=m["loss"], tracker_accuracy=None, critic_steps=0)
        for m in model.metrics
    ]
