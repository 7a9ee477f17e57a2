"""Flat ``key=value`` run configuration with section prefixes.

Keys look like ``world.n_orders=50000`` or ``gan.lr=1e-4``; unprefixed keys are
``seed``, ``out`` and ``paper_scale``. Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional

from .cvae import CvaeConfig
from .embedding import EncoderConfig
from .gan import GanConfig
from .marketplace import WorldConfig

OUT_ENV = "ORDERGAN_OUT"
DEFAULT_OUT = "ordergan-out"
PAPER_WIDTH = 128


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    holdout: float = 0.2
    tracker_n: int = 2000
    triplets: int = 20000
    forest_n: int = 20000
    tsne_n: int = 500
    tsne_iterations: int = 1000
    perplexity: float = 30.0
    n_per_product: int = 1000
    min_orders: int = 20
    rsm_pairs: int = 10000
    recon_products: int = 50
    recon_samples: int = 1000
    report_products: int = 4


SECTIONS = {
    "world": WorldConfig,
    "embed": EncoderConfig,
    "gan": GanConfig,
    "cvae": CvaeConfig,
    "eval": EvalConfig,
}
# keys filled from the data or the top-level seed rather than by the user
_DERIVED = {
    "world": {"seed"},
    "embed": {"seed"},
    "gan": {"seed", "dim", "conditional", "prod_start", "prod_stop"},
    "cvae": {"seed", "dim", "prod_start", "prod_stop"},
    "eval": set(),
}


def _coerce(cls, key: str, text: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    if key not in fields:
        raise ConfigError(f"unknown key {key!r} for section {cls.__name__}")
    default = getattr(cls(), key)
    try:
        if isinstance(default, bool):
            low = text.strip().lower()
            if low not in ("true", "false", "1", "0"):
                raise ValueError(text)
            return low in ("true", "1")
        if isinstance(default, tuple):
            return tuple(int(x) for x in text.split(",") if x.strip())
        return type(default)(text.strip())
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key}") from None


def parse_lines(lines: Iterable[str]) -> Dict[str, str]:
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


@dataclass
class RunConfig:
    seed: int = 0
    out: Optional[str] = None
    paper_scale: bool = False
    overrides: Dict[str, Dict[str, object]] = field(default_factory=lambda: {s: {} for s in SECTIONS})

    @classmethod
    def from_pairs(cls, pairs: Dict[str, str]) -> "RunConfig":
        cfg = cls()
        for key, value in pairs.items():
            if key == "seed":
                try:
                    cfg.seed = int(value)
                except ValueError:
                    raise ConfigError(f"seed must be an integer, got {value!r}") from None
            elif key == "out":
                cfg.out = value
            elif key == "paper_scale":
                cfg.paper_scale = value.lower() in ("1", "true")
            elif "." in key:
                section, name = key.split(".", 1)
                if section not in SECTIONS:
                    raise ConfigError(f"unknown section {section!r} in key {key!r}")
                if name in _DERIVED[section]:
                    raise ConfigError(f"{key} is derived and cannot be set")
                cfg.overrides[section][name] = _coerce(SECTIONS[section], name, value)
            else:
                raise ConfigError(f"unknown key {key!r}")
        cfg.world()  # validate eagerly
        return cfg

    @classmethod
    def load(cls, path: Optional[str], sets: Iterable[str] = ()) -> "RunConfig":
        pairs = {}
        if path:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {path}")
            pairs.update(parse_lines(p.read_text().splitlines()))
        pairs.update(parse_lines(sets))
        return cls.from_pairs(pairs)

    def world(self) -> WorldConfig:
        kw = dict(self.overrides["world"])
        if self.paper_scale:
            kw.setdefault("word_dim", PAPER_WIDTH)
        try:
            cfg = WorldConfig(seed=self.seed, **kw)
            cfg.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        return cfg

    def encoder(self) -> EncoderConfig:
        kw = dict(self.overrides["embed"])
        if self.paper_scale:
            kw.setdefault("hidden", PAPER_WIDTH)
        return EncoderConfig(seed=self.seed, **kw)

    def gan(self, dim: int, conditional: bool = False, prod=(16, 32)) -> GanConfig:
        try:
            return GanConfig(dim=dim, conditional=conditional, prod_start=prod[0], prod_stop=prod[1], seed=self.seed, **self.overrides["gan"])
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def cvae(self, dim: int, prod=(16, 32)) -> CvaeConfig:
        try:
            return CvaeConfig(dim=dim, prod_start=prod[0], prod_stop=prod[1], seed=self.seed, **self.overrides["cvae"])
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def eval(self) -> EvalConfig:
        return EvalConfig(**self.overrides["eval"])

    def output_dir(self, flag: Optional[str] = None) -> Path:
        return Path(flag or self.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)

    def canonical(self) -> str:
        """Stable text form; excludes the output location."""
        lines = [f"seed={self.seed}", f"paper_scale={int(self.paper_scale)}"]
        for section in SECTIONS:
            for k in sorted(self.overrides[section]):
                v = self.overrides[section][k]
                v = ",".join(map(str, v)) if isinstance(v, tuple) else v
                lines.append(f"{section}.{k}={v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]

    def provenance(self, artifact: str) -> str:
        return f"# ordergan {artifact} seed={self.seed} config={self.digest()}"
