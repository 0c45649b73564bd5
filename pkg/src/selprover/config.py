"""Run configuration: defaults, validation, file/flag loading, config hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields


class ConfigError(ValueError):
    """Invalid configuration value or key."""


def default_data_dir() -> str:
    return os.environ.get("SELPROVER_DATA", "data")


@dataclass
class RunConfig:
    """Every tunable in one serializable place.

    ``embedding_dim`` is the real dimension handed to the prover; the complex
    pretrainer uses half of it per component. ``beam`` of 0 means uncapped
    stream search. ``batches_per_iteration`` of 0 means a full pass over the
    training goals per iteration. ``threads`` of 0 keeps the library default.
    """

    # data / run identity
    dataset: str = ""
    data_dir: str = field(default_factory=default_data_dir)
    output_root: str = "runs"
    seed: int = 7
    split_ratios: tuple[float, float, float] = (0.3, 0.2, 0.5)

    # embeddings + pretraining
    embedding_dim: int = 100
    pretrain_epochs: int = 200
    pretrain_lr: float = 0.05
    pretrain_batch: int = 256
    pretrain_negatives: int = 10
    pretrain_weight_decay: float = 1e-3

    # prover
    max_depth: int = 2
    min_score: float = 0.1
    templates_implies: int = 20
    templates_inverse: int = 20
    templates_chain: int = 20
    beam: int = 0
    prover_lr: float = 0.001
    prover_negatives: int = 4
    grad_clip: float = 5.0
    score_clamp: float = 1e-7

    # relation generator + storage
    gen_width: int = 8
    gen_lr: float = 0.001
    gen_epochs: int = 10
    gen_samples: int = 4
    ep_coefficients: tuple[int, ...] = (4, 2, 2)
    storage_scale: int = 10

    # EM loop
    iterations: int = 100
    batch_goals: int = 32
    batches_per_iteration: int = 0
    patience: int = 10
    proportion: float = 0.3
    valid_subsample: int = 500
    eval_kb: str = "train"

    # modes
    baseline_full_kb: bool = False
    debug_trace: bool = False
    threads: int = 0

    @property
    def storage_layers(self) -> int:
        # or-recursion levels: the goal counts as level 1
        return self.max_depth + 1

    @property
    def storage_max_size(self) -> int:
        return self.storage_scale * self.batch_goals * self.storage_layers

    @property
    def gen_depth(self) -> int:
        # generation emits one predicate per storage layer
        return self.storage_layers

    def validate(self) -> "RunConfig":
        if self.embedding_dim <= 0 or self.embedding_dim % 2 != 0:
            raise ConfigError(f"embedding_dim must be a positive even number, "
                              f"got {self.embedding_dim}")
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split_ratios must sum to 1.0, got {self.split_ratios}")
        if not 0.0 < self.proportion <= 1.0:
            raise ConfigError(f"proportion must be in (0, 1], got {self.proportion}")
        if not 0.0 <= self.min_score < 1.0:
            raise ConfigError(f"min_score must be in [0, 1), got {self.min_score}")
        if self.max_depth < 1:
            raise ConfigError(f"max_depth must be >= 1, got {self.max_depth}")
        if len(self.ep_coefficients) != self.storage_layers:
            raise ConfigError(
                f"ep_coefficients needs one entry per storage layer "
                f"({self.storage_layers}), got {self.ep_coefficients}")
        if any(e <= 0 for e in self.ep_coefficients):
            raise ConfigError(f"ep_coefficients must be positive, "
                              f"got {self.ep_coefficients}")
        for name in ("pretrain_epochs", "pretrain_batch", "pretrain_negatives",
                     "batch_goals", "gen_width", "gen_epochs", "gen_samples",
                     "storage_scale"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("iterations", "patience", "beam", "prover_negatives",
                     "batches_per_iteration", "valid_subsample", "threads"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("pretrain_lr", "prover_lr", "gen_lr", "grad_clip"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 < self.score_clamp < 0.5:
            raise ConfigError(f"score_clamp must be in (0, 0.5), got {self.score_clamp}")
        if self.eval_kb not in ("train", "train+valid"):
            raise ConfigError(f"eval_kb must be 'train' or 'train+valid', "
                              f"got {self.eval_kb!r}")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["split_ratios"] = list(d["split_ratios"])
        d["ep_coefficients"] = list(d["ep_coefficients"])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self) -> str:
        """Stable 10-hex-char digest identifying this run configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:10]


_FIELD_TYPES = {f.name: f for f in fields(RunConfig)}
_TUPLE_FIELDS = {"split_ratios": float, "ep_coefficients": int}


def _coerce(name: str, value):
    if name in _TUPLE_FIELDS:
        if isinstance(value, str):
            value = [p for p in value.replace(",", " ").split() if p]
        return tuple(_TUPLE_FIELDS[name](v) for v in value)
    f = _FIELD_TYPES[name]
    if f.type in ("int", int):
        return int(value)
    if f.type in ("float", float):
        return float(value)
    if f.type in ("bool", bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"cannot parse boolean {name}={value!r}")
        return bool(value)
    return str(value)


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a validated RunConfig from an optional JSON file plus overrides.

    Override values win over file values; unknown keys are rejected with the
    full list of valid keys in the message.
    """
    merged: dict = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                file_values = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
        if not isinstance(file_values, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        merged.update(file_values)
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(merged) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}; "
                          f"valid keys: {', '.join(sorted(_FIELD_TYPES))}")
    kwargs = {k: _coerce(k, v) for k, v in merged.items()}
    return RunConfig(**kwargs).validate()
