"""Run configuration: a flat ``key = value`` file with ``#`` comments.

Every key below is optional; unknown keys are an error.

==================  ========  ==============================================
key                 default   meaning
==================  ========  ==============================================
corpus              corpus    corpus directory (manifest.csv + images/)
out                 run       output directory for checkpoints and reports
seed                0         master seed
known               checker_grid, blend_seam, ring_noise
unknown             band_stop
technique           (first unknown) technique for ``adapt`` / ``eval``
model               <out>/model.fglc      detector checkpoint
generator           <out>/generator.fglc  control-generator checkpoint
image_size          32
train_per_class     150       fakes per technique in the train split
test_per_class      100
support_per_class   20
query_per_class     20
icc_lambda          0.5
mu                  1.0
nu                  0.1
tau                 0.1
lr                  1e-3
beta1               0.9
beta2               0.999
batch_size          32
epochs              6
decay_every         5
decay_gamma         0.5
val_fraction        0.1
inner_steps         3
shots               1         k for ``adapt`` (1 or 5 unless overridden)
l_base              2e-4
w_range             0.01
reg_lambda          1e-4
meta_lr             1e-2
meta_episodes       40
meta_query          10        query samples per class per episode
source_batch        16
null_generator      false     force (l=0, w=1) during ``adapt``
allow_any_shots     false     accept shots other than 1 and 5
==================  ========  ==============================================
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..fgl import GuidedUpdateConfig
from ..losses import LossWeights
from ..synthdata import FAMILIES, CorpusConfig
from ..train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    corpus: str = "corpus"
    out: str = "run"
    seed: int = 0
    known: tuple = ("checker_grid", "blend_seam", "ring_noise")
    unknown: tuple = ("band_stop",)
    technique: str = ""
    model: str = ""
    generator: str = ""
    image_size: int = 32
    train_per_class: int = 150
    test_per_class: int = 100
    support_per_class: int = 20
    query_per_class: int = 20
    icc_lambda: float = 0.5
    mu: float = 1.0
    nu: float = 0.1
    tau: float = 0.1
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 32
    epochs: int = 6
    decay_every: int = 5
    decay_gamma: float = 0.5
    val_fraction: float = 0.1
    inner_steps: int = 3
    shots: int = 1
    l_base: float = 2e-4
    w_range: float = 0.01
    reg_lambda: float = 1e-4
    meta_lr: float = 1e-2
    meta_episodes: int = 40
    meta_query: int = 10
    source_batch: int = 16
    null_generator: bool = False
    allow_any_shots: bool = field(default=False, repr=False)

    # ------------------------------------------------------------ derived
    @property
    def target_technique(self) -> str:
        return self.technique or self.unknown[0]

    @property
    def model_path(self) -> Path:
        return Path(self.model) if self.model else Path(self.out) / "model.fglc"

    @property
    def generator_path(self) -> Path:
        return Path(self.generator) if self.generator else Path(self.out) / "generator.fglc"

    def corpus_config(self) -> CorpusConfig:
        return CorpusConfig(
            known=tuple(self.known),
            unknown=tuple(self.unknown),
            image_size=self.image_size,
            seed=self.seed,
            train_per_class=self.train_per_class,
            test_per_class=self.test_per_class,
            support_per_class=self.support_per_class,
            query_per_class=self.query_per_class,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.icc_lambda, self.mu, self.nu, self.tau)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            betas=(self.beta1, self.beta2),
            decay_every=self.decay_every,
            decay_gamma=self.decay_gamma,
            val_fraction=self.val_fraction,
        )

    def fgl_config(self) -> GuidedUpdateConfig:
        return GuidedUpdateConfig(
            inner_steps=self.inner_steps,
            reg_lambda=self.reg_lambda,
            l_base=self.l_base,
            w_range=self.w_range,
            shots=self.shots,
            meta_lr=self.meta_lr,
            source_batch=self.source_batch,
            query_per_class=self.meta_query,
        )

    def validate(self) -> None:
        for t in tuple(self.known) + tuple(self.unknown):
            if t not in FAMILIES:
                raise ConfigError(f"unknown technique {t!r}; expected one of {FAMILIES}")
        if set(self.known) & set(self.unknown):
            raise ConfigError("known and unknown technique lists overlap")
        if not self.unknown:
            raise ConfigError("unknown technique list is empty")
        if self.technique and self.technique not in FAMILIES:
            raise ConfigError(f"unknown technique {self.technique!r}")
        if self.shots not in (1, 5) and not self.allow_any_shots:
            raise ConfigError("shots must be 1 or 5 (set allow_any_shots = true to override)")
        for name in ("train_per_class", "test_per_class", "support_per_class", "query_per_class",
                     "batch_size", "image_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0 or self.meta_episodes < 0:
            raise ConfigError("epochs and meta_episodes must be >= 0")
        try:
            self.loss_weights()
            self.fgl_config()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["known"], d["unknown"] = list(self.known), list(self.unknown)
        return d

    def digest(self) -> str:
        """sha256 over the canonical JSON form; output paths excluded."""
        d = self.to_dict()
        for k in ("out", "model", "generator", "corpus"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(p.strip() for p in raw.split(",") if p.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def parse_config(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, raw, _FIELDS[key].default)
    return values


def load_config(path=None, **overrides) -> RunConfig:
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        values = parse_config(p.read_text(), str(p))
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if k == "allow_any_shots" and not v:
            continue
        if isinstance(v, list):
            v = ", ".join(v)
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
