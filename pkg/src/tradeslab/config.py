"""Experiment configuration: strict JSON parsing and dataset construction."""

from __future__ import annotations

import json
import math
from dataclasses import MISSING, asdict, dataclass, field, fields

from .attack import AttackConfig
from .data import Dataset, gen_blobs, load_csv, split
from .errors import ConfigError, ContractError, DataError
from .rng import Rng
from .telemetry import TELEMETRY_VERSION
from .train import TrainConfig


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "blobs"
    classes: int = 20
    per_class: int = 250
    dim: int = 32
    spread: float = 0.3
    seed: int = 0
    path: str | None = None
    split: tuple = (0.8, 0.1, 0.1)
    split_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "split", tuple(float(f) for f in self.split))
        if self.kind not in ("blobs", "csv"):
            raise ValueError("kind must be 'blobs' or 'csv'")
        if self.kind == "csv" and not self.path:
            raise ValueError("csv datasets need a path")


@dataclass(frozen=True)
class EvalConfig:
    pgd_steps: int = 10
    square_queries: int = 1000

    def __post_init__(self):
        if self.pgd_steps < 1 or self.square_queries < 0:
            raise ValueError("pgd_steps must be >= 1 and square_queries >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    hidden_dims: tuple = (64, 64)
    train: dict = field(default_factory=dict)
    attack: AttackConfig = field(default_factory=AttackConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train, hidden_dims=self.hidden_dims, attack=self.attack,
                           seed=self.seed)

    def to_dict(self) -> dict:
        tc = self.train_config().to_dict()
        train = {k: v for k, v in tc.items() if k not in ("attack", "hidden_dims", "seed")}
        attack = asdict(self.attack)
        attack.pop("objective")
        attack.pop("seed")
        ds = asdict(self.dataset)
        ds["split"] = list(self.dataset.split)
        return {
            "telemetry_version": TELEMETRY_VERSION,
            "seed": self.seed,
            "dataset": ds,
            "model": {"hidden_dims": list(self.hidden_dims)},
            "train": train,
            "attack": attack,
            "eval": asdict(self.eval),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"attack", "hidden_dims", "seed"}
_ATTACK_KEYS = {f.name for f in fields(AttackConfig)} - {"objective", "seed"}
_TOP_KEYS = {"telemetry_version", "seed", "dataset", "model", "train", "attack", "eval"}


def _section(raw, name, allowed):
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(name, "expected an object")
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"{name}.{key}", "unknown key")
    return dict(sec)


def _check_types(name, sec, cls):
    defaults = {}
    for f in fields(cls):
        if f.default is not MISSING:
            defaults[f.name] = f.default
    for key, value in sec.items():
        default = defaults.get(key)
        if isinstance(default, bool):
            ok = isinstance(value, bool)
        elif isinstance(default, int):
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif isinstance(default, float):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        elif isinstance(default, tuple):
            ok = isinstance(value, list)
        elif isinstance(default, str):
            ok = isinstance(value, str)
        else:
            ok = True
        if not ok:
            raise ConfigError(f"{name}.{key}", f"expected {type(default).__name__}, got {value!r}")
    return sec


def _build(name, factory, kwargs):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError, ContractError) as exc:
        raise ConfigError(name, str(exc)) from None


def parse_config(raw: dict, seed_override: int | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a JSON object")
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigError(key, "unknown key")
    if raw.get("telemetry_version", TELEMETRY_VERSION) != TELEMETRY_VERSION:
        raise ConfigError("telemetry_version", f"only version {TELEMETRY_VERSION} is supported")
    seed = raw.get("seed", 0) if seed_override is None else seed_override
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed", "must be a non-negative integer")

    ds_sec = _check_types("dataset", _section(raw, "dataset", {f.name for f in fields(DatasetConfig)}), DatasetConfig)
    ds = _build("dataset", DatasetConfig, ds_sec)
    model = _section(raw, "model", {"hidden_dims"})
    hidden = model.get("hidden_dims", [64, 64])
    if (not isinstance(hidden, list) or not hidden
            or not all(isinstance(h, int) and not isinstance(h, bool) and h > 0 for h in hidden)):
        raise ConfigError("model.hidden_dims", "expected a non-empty list of positive integers")
    train = _section(raw, "train", _TRAIN_KEYS)
    if "fosc_threshold" in train and train["fosc_threshold"] is None:
        train["fosc_threshold"] = math.inf
    _check_types("train", train, TrainConfig)
    attack = _build("attack", AttackConfig, _check_types("attack", _section(raw, "attack", _ATTACK_KEYS), AttackConfig))
    ev = _build("eval", EvalConfig, _check_types("eval", _section(raw, "eval", {f.name for f in fields(EvalConfig)}), EvalConfig))
    cfg = ExperimentConfig(seed=seed, dataset=ds, hidden_dims=tuple(hidden),
                           train=train, attack=attack, eval=ev)
    _build("train", cfg.train_config, {})
    return cfg


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw, seed_override)


def build_dataset(cfg: DatasetConfig) -> Dataset:
    if cfg.kind == "csv":
        return load_csv(cfg.path)
    return gen_blobs(cfg.classes, cfg.per_class, cfg.dim, cfg.spread, Rng(cfg.seed))


def build_splits(cfg: DatasetConfig):
    try:
        return split(build_dataset(cfg), cfg.split, cfg.split_seed)
    except DataError as exc:
        raise ConfigError("dataset", str(exc)) from None
