"""Plain-text experiment configuration.

One ``section.key = value`` per line, ``#`` starts a comment.  Lists are
comma separated.  Unknown keys are rejected so typos fail loudly.

Recognised keys and defaults::

    prior.N = 8                 prior.K = 4              prior.seed = 0
    prior.path =                # optional DMDEN-GMM file, overrides N/K/seed
    schedule.T = 100            schedule.beta1 = 1e-4    schedule.betaT = 0.1
    schedule.gamma = 1.0
    model.source = oracle       # oracle | checkpoint
    model.checkpoint =          # path; may contain {T} for t-sweep
    model.hidden = 128,128      model.emb = 32
    train.batch = 128           train.epochs = 40        train.lr = 1e-3
    train.beta1 = 0.9           train.beta2 = 0.999      train.eps = 1e-8
    train.dataset = 100000      train.seed = 0           train.loss = eps
    train.lr_decay = cosine
    eval.snr_db = -20,-15,-10,-5,0,5,10,15,20,25,30
    eval.n_test = 10000
    eval.T_values = 5,10,50,100,300,1000
    eval.mismatch_db = -3,3
    eval.batch = 512            eval.repeats = 5         eval.timing = false
    eval.n_generate = 1000
    bounds.delta = 0            bounds.xi = 0            bounds.snr_db = 10
    bounds.omega =
    run.seed = 0                run.out =
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from ..errors import ConfigError

DEFAULT_SNR_DB = (-20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)

KINDS = ("snr-sweep", "t-sweep", "trajectory", "mismatch", "resample-compare",
         "lipschitz", "bounds", "bench", "train", "generate")


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.split(",") if x.strip())


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x.strip())


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_str(v: str):
    return v or None


def _opt_float(v: str):
    return float(v) if v else None


# config key -> (attribute, parser)
_KEYS = {
    "prior.N": ("N", int), "prior.K": ("K", int), "prior.seed": ("prior_seed", int),
    "prior.path": ("prior_path", _opt_str),
    "schedule.T": ("T", int), "schedule.beta1": ("beta1", float),
    "schedule.betaT": ("betaT", float), "schedule.gamma": ("gamma", float),
    "model.source": ("model_source", str), "model.checkpoint": ("checkpoint", _opt_str),
    "model.hidden": ("hidden", _ints), "model.emb": ("emb", int),
    "train.batch": ("train_batch", int), "train.epochs": ("train_epochs", int),
    "train.lr": ("train_lr", float), "train.beta1": ("train_beta1", float),
    "train.beta2": ("train_beta2", float), "train.eps": ("train_eps", float),
    "train.dataset": ("train_dataset", int), "train.seed": ("train_seed", int),
    "train.loss": ("train_loss", str), "train.lr_decay": ("train_lr_decay", str),
    "eval.snr_db": ("snr_db", _floats), "eval.n_test": ("n_test", int),
    "eval.T_values": ("T_values", _ints), "eval.mismatch_db": ("mismatch_db", _floats),
    "eval.batch": ("bench_batch", int), "eval.repeats": ("bench_repeats", int),
    "eval.timing": ("timing", _bool), "eval.n_generate": ("n_generate", int),
    "bounds.delta": ("delta", float), "bounds.xi": ("xi", float),
    "bounds.snr_db": ("bounds_snr_db", float), "bounds.omega": ("omega", _opt_float),
    "run.seed": ("seed", int), "run.out": ("out", _opt_str),
}


@dataclass
class ExperimentConfig:
    kind: str = "snr-sweep"
    N: int = 8
    K: int = 4
    prior_seed: int = 0
    prior_path: str | None = None
    T: int = 100
    beta1: float = 1e-4
    betaT: float = 0.1
    gamma: float = 1.0
    model_source: str = "oracle"
    checkpoint: str | None = None
    hidden: tuple[int, ...] = (128, 128)
    emb: int = 32
    train_batch: int = 128
    train_epochs: int = 40
    train_lr: float = 1e-3
    train_beta1: float = 0.9
    train_beta2: float = 0.999
    train_eps: float = 1e-8
    train_dataset: int = 100_000
    train_seed: int = 0
    train_loss: str = "eps"
    train_lr_decay: str = "cosine"
    snr_db: tuple[float, ...] = DEFAULT_SNR_DB
    n_test: int = 10_000
    T_values: tuple[int, ...] = (5, 10, 50, 100, 300, 1000)
    mismatch_db: tuple[float, ...] = (-3.0, 3.0)
    bench_batch: int = 512
    bench_repeats: int = 5
    timing: bool = False
    n_generate: int = 1000
    delta: float = 0.0
    xi: float = 0.0
    bounds_snr_db: float = 10.0
    omega: float | None = None
    seed: int = 0
    out: str | None = None

    def validate(self) -> "ExperimentConfig":
        if self.kind not in KINDS:
            raise ConfigError(f"experiment kind {self.kind!r} not in {KINDS}")
        if self.kind in ("snr-sweep", "trajectory", "mismatch", "resample-compare") and not self.snr_db:
            raise ConfigError("eval.snr_db: must be nonempty for sweep experiments")
        if self.n_test < 1:
            raise ConfigError("eval.n_test: must be >= 1")
        if self.model_source not in ("oracle", "checkpoint"):
            raise ConfigError(f"model.source: must be 'oracle' or 'checkpoint', got {self.model_source!r}")
        if self.model_source == "checkpoint" and not self.checkpoint and self.kind != "train":
            raise ConfigError("model.checkpoint: required when model.source = checkpoint")
        if len(self.mismatch_db) != 2 or self.mismatch_db[0] > self.mismatch_db[1]:
            raise ConfigError("eval.mismatch_db: expected 'low,high' with low <= high")
        if self.N < 1 or self.K < 1 or self.T < 1:
            raise ConfigError("prior.N, prior.K, schedule.T: must be >= 1")
        return self

    def items(self):
        """``(key, value)`` pairs in config-file spelling, for report headers."""
        out = [("kind", self.kind)]
        for key, (attr, _) in _KEYS.items():
            val = getattr(self, attr)
            if isinstance(val, tuple):
                val = ",".join(repr(v) if isinstance(v, float) else str(v) for v in val)
            elif val is None:
                val = ""
            out.append((key, str(val)))
        return out


_ATTRS = {f.name for f in fields(ExperimentConfig)}


def parse_config(text: str, **overrides) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        attr, parse = _KEYS[key]
        try:
            setattr(cfg, attr, parse(value))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    for attr, value in overrides.items():
        if value is None:
            continue
        if attr not in _ATTRS:
            raise ConfigError(f"unknown override {attr!r}")
        setattr(cfg, attr, value)
    return cfg.validate()


def load_config(path, **overrides) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 ({exc})") from exc
    return parse_config(text, **overrides)
