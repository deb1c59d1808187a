"""Training configuration and the flat ``key=value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError
from .model import BOX_FRAMES, CANDIDATE_FORMS, ModelConfig


@dataclass
class SchedulerConfig:
    factor: float = 0.5
    patience: int = 3
    min_lr: float = 1e-6
    threshold: float = 1e-4


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 30
    batch_size: int = 32
    lam: float = 0.3
    d: int = 64
    k: int = 32
    D: int = 64
    d_agg: int | None = None
    T_obs: int = 5
    N: int = 10
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    seed: int = 0
    candidate_form: str = "paper"
    box_frame: str = "last-observed"
    clip_norm: float | None = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.validate()

    def validate(self):
        bad = []
        if not self.learning_rate > 0:
            bad.append("learning_rate")
        if not 0 < self.scheduler.factor < 1:
            bad.append("scheduler.factor")
        if self.lam < 0:
            bad.append("lambda")
        if self.epochs < 0:
            bad.append("epochs")
        if self.batch_size < 1:
            bad.append("batch_size")
        if self.T_obs < 1:
            bad.append("T_obs")
        if self.candidate_form not in CANDIDATE_FORMS:
            bad.append("candidate_form")
        if self.box_frame not in BOX_FRAMES:
            bad.append("box_frame")
        if self.clip_norm is not None and self.clip_norm <= 0:
            bad.append("clip_norm")
        if bad:
            raise ConfigError(f"invalid config values: {', '.join(bad)}", bad)
        self.model_config()  # checks the architecture fields

    def model_config(self):
        return ModelConfig(
            D=self.D,
            d=self.d,
            k=self.k,
            N=self.N,
            d_agg=self.d_agg,
            candidate_form=self.candidate_form,
            box_frame=self.box_frame,
        )

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["lambda"] = out.pop("lam")
        return out

    @classmethod
    def from_dict(cls, values):
        values = dict(values)
        if "lambda" in values:
            values["lam"] = values.pop("lambda")
        sched = values.pop("scheduler", {}) or {}
        return cls(scheduler=SchedulerConfig(**sched), **values)


_INT = {"epochs", "batch_size", "d", "k", "D", "d_agg", "T_obs", "N", "seed", "scheduler.patience"}
_FLOAT = {
    "learning_rate",
    "lambda",
    "scheduler.factor",
    "scheduler.min_lr",
    "scheduler.threshold",
    "clip_norm",
    "beta1",
    "beta2",
    "eps",
}
_STR = {"candidate_form", "box_frame"}
_ALIASES = {"lam": "lambda", "factor": "scheduler.factor", "patience": "scheduler.patience", "min_lr": "scheduler.min_lr"}


def parse_key_values(text, source="<config>"):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def _convert(key, value):
    if value.lower() in ("none", "null", ""):
        return None
    try:
        if key in _INT:
            return int(value)
        if key in _FLOAT:
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}", [key]) from None
    return value


def train_config_from_pairs(pairs, extra=()):
    """Build a :class:`TrainConfig` from parsed pairs.

    Keys listed in ``extra`` are returned separately instead of being
    rejected as unknown.
    """
    values, sched, leftovers = {}, {}, {}
    for key, raw in pairs.items():
        key = _ALIASES.get(key, key)
        if key in extra:
            leftovers[key] = raw
            continue
        if key not in _INT | _FLOAT | _STR:
            raise ConfigError(f"unknown config key {key!r}", [key])
        value = _convert(key, raw)
        if key.startswith("scheduler."):
            sched[key.split(".", 1)[1]] = value
        else:
            values["lam" if key == "lambda" else key] = value
    return TrainConfig(scheduler=SchedulerConfig(**sched), **values), leftovers


def load_train_config(path, extra=()):
    with open(path, encoding="utf-8") as fh:
        return train_config_from_pairs(parse_key_values(fh.read(), str(path)), extra)


def format_train_config(config):
    flat = config.to_dict()
    sched = flat.pop("scheduler")
    lines = [f"{k} = {v}" for k, v in flat.items()]
    lines += [f"scheduler.{k} = {v}" for k, v in sched.items()]
    return "\n".join(lines) + "\n"
