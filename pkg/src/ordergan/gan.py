"""Order GANs: unconditional ecGAN and product-conditioned ec2GAN.

Three loss modes are supported: the original minimax game with the
non-saturating generator objective ("vanilla"), the Wasserstein critic with
weight clipping ("wgan-clip") and with a gradient penalty ("wgan-gp").
Losses are written in minimized form throughout, so the critic minimizes
``E[D(fake)] - E[D(real)] + lam * GP`` and the generator ``-E[D(fake)]``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint
from .autodiff import AdamState, Node, Tape, TrainingDiverged, adam_step
from .evaluation.tracker import logistic_tracker
from .nn import bind, init_mlp, layer_sizes, mlp, mlp_numpy
from .rng import make_rng

MODES = ("vanilla", "wgan-clip", "wgan-gp")
PAPER_DIM = 264
PAPER_NOISE = 96
PAPER_GEN_HIDDEN = (64, 128)
PAPER_DISC_HIDDEN = (128, 64)
LOG_EPS = 1e-12
DESK_EPOCHS = 45


def scaled_width(paper_width: int, dim: int, round_up: bool = False) -> int:
    """Scale a paper-scale width by dim/264 to a multiple of 8 (at least 8)."""
    x = paper_width * dim / PAPER_DIM / 8.0
    k = math.ceil(x - 1e-9) if round_up else int(math.floor(x + 0.5))
    return max(8, 8 * k)


@dataclass(frozen=True)
class GanConfig:
    dim: int = 40
    noise_dim: int = 0
    gen_hidden: Tuple[int, ...] = ()
    disc_hidden: Tuple[int, ...] = ()
    mode: str = "wgan-gp"
    lam: float = 10.0
    clip: float = 0.01
    alpha: float = 0.75
    critic_ratio: int = 5
    batch: int = 128
    epochs: int = DESK_EPOCHS
    steps: int = 0
    lr: float = 1e-3
    lr_end: float = 1e-4
    beta1: float = 0.6
    beta2: float = 0.9
    log_every: int = 50
    tracker_every: int = 500
    tracker_n: int = 2000
    seed: int = 0
    conditional: bool = False
    prod_start: int = 16
    prod_stop: int = 32

    def __post_init__(self):
        # noise width follows the data dimension; hidden widths stay at full size, since
        # scaling them down leaves a first layer narrower than the conditional input
        if self.noise_dim <= 0:
            object.__setattr__(self, "noise_dim", scaled_width(PAPER_NOISE, self.dim, round_up=True))
        if not self.gen_hidden:
            object.__setattr__(self, "gen_hidden", PAPER_GEN_HIDDEN)
        if not self.disc_hidden:
            object.__setattr__(self, "disc_hidden", PAPER_DISC_HIDDEN)
        object.__setattr__(self, "gen_hidden", tuple(int(w) for w in self.gen_hidden))
        object.__setattr__(self, "disc_hidden", tuple(int(w) for w in self.disc_hidden))
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown loss mode {self.mode!r}; expected one of {MODES}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lam < 0:
            raise ValueError(f"gradient-penalty weight must be >= 0, got {self.lam}")
        if self.critic_ratio < 1:
            raise ValueError(f"critic ratio must be >= 1, got {self.critic_ratio}")
        if self.lr <= 0 or self.lr_end < 0:
            raise ValueError("learning rates must be positive")
        if self.clip <= 0:
            raise ValueError("clip bound must be positive")
        if self.dim < 1 or self.batch < 1:
            raise ValueError("dim and batch must be positive")
        if self.conditional and not 0 <= self.prod_start < self.prod_stop <= self.dim:
            raise ValueError(f"product slice [{self.prod_start}, {self.prod_stop}) outside order width {self.dim}")

    @property
    def d_prod(self) -> int:
        return self.prod_stop - self.prod_start

    @property
    def gen_input(self) -> int:
        return self.noise_dim + (self.d_prod if self.conditional else 0)

    @property
    def disc_output(self) -> str:
        return "sigmoid" if self.mode == "vanilla" else "linear"

    def lr_at(self, step: int, total: int) -> float:
        """Linear decay from lr to lr_end over training, then flat; constant when lr_end is 0."""
        if self.lr_end <= 0 or total <= 1:
            return self.lr
        return self.lr + (self.lr_end - self.lr) * min(step / (total - 1), 1.0)

    def total_steps(self, n_rows: int) -> int:
        if self.steps > 0:
            return self.steps
        return self.epochs * max(1, n_rows // self.batch)

    def replace(self, **kw) -> "GanConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class GanModel:
    config: GanConfig
    params: Dict[str, np.ndarray]
    gen_opt: AdamState
    disc_opt: AdamState
    step: int = 0
    critic_steps: int = 0
    metrics: List[dict] = field(default_factory=list)

    @property
    def gen_names(self) -> List[str]:
        return [k for k in self.params if k.startswith("gen.")]

    @property
    def disc_names(self) -> List[str]:
        return [k for k in self.params if k.startswith("disc.")]

    @property
    def trained(self) -> bool:
        return self.step > 0

    def save(self, path) -> None:
        cfg = self.config
        payload = dict(self.params)
        for tag, opt in (("gen", self.gen_opt), ("disc", self.disc_opt)):
            payload[f"opt.{tag}.step"] = np.array([[opt.step_count]], dtype=float)
            for k in opt.m:
                payload[f"opt.{tag}.m.{k}"] = opt.m[k]
                payload[f"opt.{tag}.v.{k}"] = opt.v[k]
        scalars = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}
        scalars["mode"] = MODES.index(cfg.mode)
        for k, v in scalars.items():
            payload[f"cfg.{k}"] = np.atleast_2d(np.asarray(v, dtype=float)) if np.size(v) else np.zeros((1, 0))
        payload["state.step"] = np.array([[self.step, self.critic_steps]], dtype=float)
        checkpoint.save(path, payload)

    @classmethod
    def load(cls, path) -> "GanModel":
        raw = checkpoint.load(path)
        kw = {}
        for f in dataclasses.fields(GanConfig):
            v = raw[f"cfg.{f.name}"]
            if f.name == "mode":
                kw[f.name] = MODES[int(v[0, 0])]
            elif f.name in ("gen_hidden", "disc_hidden"):
                kw[f.name] = tuple(int(x) for x in v.ravel())
            elif f.type in ("int", int):
                kw[f.name] = int(v[0, 0])
            elif f.type in ("bool", bool):
                kw[f.name] = bool(v[0, 0])
            else:
                kw[f.name] = float(v[0, 0])
        cfg = GanConfig(**kw)
        params = {k: v for k, v in raw.items() if k.startswith(("gen.", "disc."))}
        opts = {}
        for tag in ("gen", "disc"):
            opt = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
            opt.step_count = int(raw[f"opt.{tag}.step"][0, 0])
            for k in params:
                if f"opt.{tag}.m.{k}" in raw:
                    opt.m[k] = raw[f"opt.{tag}.m.{k}"]
                    opt.v[k] = raw[f"opt.{tag}.v.{k}"]
            opts[tag] = opt
        step, critic_steps = (int(x) for x in raw["state.step"].ravel())
        return cls(cfg, params, opts["gen"], opts["disc"], step, critic_steps)


def init_gan(config: GanConfig) -> GanModel:
    rng = make_rng(config.seed, "gan-init")
    params = init_mlp(rng, [config.gen_input, *config.gen_hidden, config.dim], "gen")
    params.update(init_mlp(rng, [config.dim, *config.disc_hidden, 1], "disc"))
    opt = lambda: AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    return GanModel(config, params, opt(), opt())


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def generate(params: Dict[str, np.ndarray], noise: np.ndarray, context: Optional[np.ndarray] = None) -> np.ndarray:
    x = noise if context is None else np.hstack([noise, context])
    return mlp_numpy(params, "gen", x, out="tanh")


def discriminate(params: Dict[str, np.ndarray], x: np.ndarray, mode: str = "wgan-gp") -> np.ndarray:
    return mlp_numpy(params, "disc", x, out="sigmoid" if mode == "vanilla" else "linear")


def interpolate(real: np.ndarray, fake: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Points on the segments between paired real and fake rows, one eps per row."""
    eps = np.asarray(eps, dtype=float).reshape(-1, 1)
    return eps * real + (1.0 - eps) * fake


def _critic_node(tape: Tape, nodes: Dict[str, Node], x: Node, config: GanConfig) -> Node:
    return mlp(tape, nodes, "disc", x, out=config.disc_output)


def gradient_penalty(tape: Tape, nodes: Dict[str, Node], xhat: np.ndarray, config: GanConfig) -> Node:
    """mean((||dD/dx(xhat)||_2 - 1)^2) as a differentiable tape node."""
    x = tape.leaf(xhat, "xhat")
    score = tape.sum(_critic_node(tape, nodes, x, config))
    (gx,) = tape.grad(score, [x], create_graph=True)
    return tape.mean(tape.square(tape.scale(tape.l2norm(gx), 1.0, -1.0)))


def discriminator_loss(
    params: Dict[str, np.ndarray],
    real: np.ndarray,
    fake: np.ndarray,
    config: GanConfig,
    eps: Optional[np.ndarray] = None,
) -> Tuple[float, Dict[str, np.ndarray], Dict[str, float]]:
    """Critic loss in minimized form, its parameter gradients and loss parts."""
    if real.shape[1] != fake.shape[1]:
        raise ValueError(f"real width {real.shape[1]} != fake width {fake.shape[1]}")
    tape = Tape()
    names = [k for k in params if k.startswith("disc.")]
    nodes = bind(tape, params, names)
    d_real = _critic_node(tape, nodes, tape.const(real), config)
    d_fake = _critic_node(tape, nodes, tape.const(fake), config)
    parts = {}
    if config.mode == "vanilla":
        lr_ = tape.mean(tape.log(tape.scale(d_real, 1.0, LOG_EPS)))
        lf_ = tape.mean(tape.log(tape.scale(d_fake, -1.0, 1.0 + LOG_EPS)))
        loss = tape.scale(tape.add(lr_, lf_), -1.0)
    else:
        loss = tape.sub(tape.mean(d_fake), tape.mean(d_real))
        parts["wdist"] = float(-loss.value[0, 0])
        if config.mode == "wgan-gp" and config.lam > 0:
            if eps is None:
                raise ValueError("gradient-penalty mode needs interpolation weights")
            gp = gradient_penalty(tape, nodes, interpolate(real, fake, eps), config)
            parts["gp"] = float(gp.value[0, 0])
            loss = tape.add(loss, tape.scale(gp, config.lam))
    value = float(loss.value[0, 0])
    grads = tape.grad(loss, [nodes[k] for k in names])
    return value, dict(zip(names, grads)), parts


def generator_loss(
    params: Dict[str, np.ndarray],
    noise: np.ndarray,
    config: GanConfig,
    context: Optional[np.ndarray] = None,
) -> Tuple[float, Dict[str, np.ndarray], Dict[str, float]]:
    """Generator loss (blended with product reconstruction when conditional)."""
    if (context is not None) != config.conditional:
        raise ValueError("product context must be given exactly when the model is conditional")
    tape = Tape()
    names = list(params)
    nodes = bind(tape, params, names)
    z = tape.const(noise if context is None else np.hstack([noise, context]))
    fake = mlp(tape, nodes, "gen", z, out="tanh")
    d_fake = _critic_node(tape, nodes, fake, config)
    if config.mode == "vanilla":
        adv = tape.scale(tape.mean(tape.log(tape.scale(d_fake, 1.0, LOG_EPS))), -1.0)
    else:
        adv = tape.scale(tape.mean(d_fake), -1.0)
    parts = {"adversarial": float(adv.value[0, 0])}
    loss = adv
    if context is not None:
        rec = reconstruction_node(tape, fake, tape.const(context), config)
        parts["reconstruction"] = float(rec.value[0, 0])
        loss = blend(tape, adv, rec, config.alpha)
    gen_names = [k for k in names if k.startswith("gen.")]
    grads = tape.grad(loss, [nodes[k] for k in gen_names])
    return float(loss.value[0, 0]), dict(zip(gen_names, grads)), parts


def reconstruction_node(tape: Tape, fake: Node, context: Node, config: GanConfig) -> Node:
    """Batch mean of ||P - P~||_2 over the product slice."""
    p_tilde = tape.slice(fake, config.prod_start, config.prod_stop)
    return tape.mean(tape.l2norm(tape.sub(context, p_tilde)))


def blend(tape: Tape, adversarial: Node, reconstruction: Node, alpha: float) -> Node:
    return tape.add(tape.scale(adversarial, alpha), tape.scale(reconstruction, 1.0 - alpha))


def blended_loss(adversarial: float, reconstruction: float, alpha: float) -> float:
    return alpha * adversarial + (1.0 - alpha) * reconstruction


def reconstruction_loss(generated: np.ndarray, context: np.ndarray, config: GanConfig) -> float:
    diff = context - generated[:, config.prod_start : config.prod_stop]
    return float(np.linalg.norm(diff, axis=1).mean())


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def clip_weights(params: Dict[str, np.ndarray], c: float) -> None:
    for k in params:
        if k.startswith("disc."):
            np.clip(params[k], -c, c, out=params[k])


def _context_rows(data: np.ndarray, config: GanConfig, idx: np.ndarray) -> Optional[np.ndarray]:
    if not config.conditional:
        return None
    return data[idx, config.prod_start : config.prod_stop]


def sample(model: GanModel, n: int, context: Optional[np.ndarray] = None, seed: Optional[int] = None, rng=None) -> np.ndarray:
    """Draw ``n`` generated order vectors.

    For a conditional model ``context`` is one product vector (repeated) or an
    ``(n, d_prod)`` matrix.
    """
    cfg = model.config
    if cfg.conditional and context is None:
        raise ValueError("a conditional model needs a product vector to sample from")
    if not cfg.conditional and context is not None:
        raise ValueError("an unconditional model takes no product vector")
    if n == 0:
        return np.zeros((0, cfg.dim))
    if rng is None:
        rng = make_rng(cfg.seed if seed is None else seed, "gan-sample")
    noise = rng.standard_normal((n, cfg.noise_dim))
    if context is not None:
        context = np.asarray(context, dtype=float)
        if context.ndim == 1:
            context = np.broadcast_to(context, (n, context.size))
        if context.shape != (n, cfg.d_prod):
            raise ValueError(f"product context shape {context.shape} != ({n}, {cfg.d_prod})")
    return generate(model.params, noise, context)


def tracker_accuracy(model: GanModel, data: np.ndarray, n: int, seed_labels: Sequence) -> float:
    cfg = model.config
    rng = make_rng(cfg.seed, "tracker", *seed_labels)
    n = min(n, len(data) // 2)
    idx = rng.choice(len(data), size=2 * n, replace=False)
    real = data[idx[:n]]
    ctx = _context_rows(data, cfg, idx[n:])
    fake = sample(model, n, ctx, rng=rng)
    return logistic_tracker(real, fake, rng)


METRIC_FIELDS = ("step", "critic_loss", "gen_loss", "tracker_accuracy", "critic_steps")


def _check_finite(value: float, what: str, step: int) -> None:
    if not math.isfinite(value):
        raise TrainingDiverged(f"non-finite {what} at generator step {step}")


def _snapshot(model: GanModel):
    opts = [(o.step_count, {k: v.copy() for k, v in o.m.items()}, {k: v.copy() for k, v in o.v.items()}) for o in (model.gen_opt, model.disc_opt)]
    return {k: v.copy() for k, v in model.params.items()}, opts, model.critic_steps


def _restore(model: GanModel, snap) -> None:
    params, opts, critic_steps = snap
    for k, v in params.items():
        model.params[k][...] = v
    for o, (count, m, v) in zip((model.gen_opt, model.disc_opt), opts):
        o.step_count, o.m, o.v = count, m, v
    model.critic_steps = critic_steps


def train(
    model: GanModel,
    data: np.ndarray,
    steps: Optional[int] = None,
    checkpoint_path=None,
    checkpoint_every: int = 0,
    progress=None,
) -> GanModel:
    """Alternate ``critic_ratio`` critic updates with one generator update.

    Every random draw of generator step ``k`` comes from a stream derived from
    (seed, k), so a run resumed from a checkpoint continues bit-identically.
    ``steps`` counts generator updates to reach in total (default from config).
    On a non-finite loss the model is rolled back to the start of the failing
    generator step, the checkpoint (if any) is written from that state, and
    :class:`TrainingDiverged` is raised.
    """
    cfg = model.config
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != cfg.dim:
        raise ValueError(f"order matrix must have {cfg.dim} columns, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError("order matrix contains non-finite values")
    if len(data) < cfg.batch:
        raise ValueError(f"need at least one minibatch of {cfg.batch} rows, got {len(data)}")
    # the learning-rate schedule always spans the configured run, so stopping early and resuming is exact
    schedule = cfg.total_steps(len(data))
    total = schedule if steps is None else steps
    n = len(data)
    p = model.params
    if model.step == 0 and not model.metrics:
        acc = tracker_accuracy(model, data, cfg.tracker_n, ("step", 0)) if cfg.tracker_every else None
        model.metrics.append(dict(step=0, critic_loss=None, gen_loss=None, tracker_accuracy=acc, critic_steps=0))
    c_acc, g_acc, count = 0.0, 0.0, 0
    snapshot = _snapshot(model)
    try:
        while model.step < total:
            k = model.step
            snapshot = _snapshot(model)
            rng = make_rng(cfg.seed, "gan-step", k)
            model.gen_opt.lr = model.disc_opt.lr = cfg.lr_at(k, schedule)
            c_sum = 0.0
            for _ in range(cfg.critic_ratio):
                real = data[rng.integers(0, n, cfg.batch)]
                ctx = _context_rows(data, cfg, rng.integers(0, n, cfg.batch))
                fake = generate(p, rng.standard_normal((cfg.batch, cfg.noise_dim)), ctx)
                eps = rng.uniform(size=(cfg.batch, 1))
                loss, grads, _ = discriminator_loss(p, real, fake, cfg, eps)
                _check_finite(loss, "critic loss", k + 1)
                adam_step(model.disc_opt, p, grads)
                if cfg.mode == "wgan-clip":
                    clip_weights(p, cfg.clip)
                model.critic_steps += 1
                c_sum += loss
            noise = rng.standard_normal((cfg.batch, cfg.noise_dim))
            ctx = _context_rows(data, cfg, rng.integers(0, n, cfg.batch))
            g_loss, grads, _ = generator_loss(p, noise, cfg, ctx)
            _check_finite(g_loss, "generator loss", k + 1)
            adam_step(model.gen_opt, p, grads)
            model.step += 1
            c_acc += c_sum / cfg.critic_ratio
            g_acc += g_loss
            count += 1
            s = model.step
            track = cfg.tracker_every and (s % cfg.tracker_every == 0 or s == total)
            if s % cfg.log_every == 0 or track or s == total:
                acc = tracker_accuracy(model, data, cfg.tracker_n, ("step", s)) if track else None
                row = dict(step=s, critic_loss=c_acc / count, gen_loss=g_acc / count, tracker_accuracy=acc, critic_steps=model.critic_steps)
                model.metrics.append(row)
                c_acc, g_acc, count = 0.0, 0.0, 0
                if progress:
                    progress(row)
            if checkpoint_path and checkpoint_every and s % checkpoint_every == 0:
                model.save(checkpoint_path)
    except TrainingDiverged:
        _restore(model, snapshot)
        if checkpoint_path:
            model.save(checkpoint_path)
        raise
    if checkpoint_path:
        model.save(checkpoint_path)
    return model


def write_metrics(path, metrics: List[dict], header: Optional[str] = None) -> None:
    lines = [header] if header else []
    lines.append(",".join(METRIC_FIELDS))
    for row in metrics:
        cells = []
        for f in METRIC_FIELDS:
            v = row.get(f)
            cells.append("" if v is None else (str(v) if isinstance(v, int) else repr(float(v))))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics(path) -> List[dict]:
    rows = []
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    names = lines[0].split(",")
    for ln in lines[1:]:
        row = {}
        for k, v in zip(names, ln.split(",")):
            row[k] = None if v == "" else (int(v) if k in ("step", "critic_steps") else float(v))
        rows.append(row)
    return rows
