"""Experiment configuration: versioned JSON, unknown fields rejected."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field

from .pruning import PruneConfig
from .surgery import SurgeryConfig
from .testbed import ToyModelConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


@dataclass(frozen=True)
class ModelOptions:
    num_layers: int = 6
    token_count: int = 8
    embed_dim: int = 16
    # scale of the initial and teacher latents
    latent_scale: float = 1.0
    # content target latent = teacher latent + content_shift * noise
    content_shift: float = 0.2
    # initial latent = teacher latent + init_shift * noise
    init_shift: float = 0.5


@dataclass(frozen=True)
class OptimizerOptions:
    name: str = "muon"
    lr: float = 1e-3
    momentum: float = 0.95
    ns_steps: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass(frozen=True)
class SurgeryOptions:
    enabled: bool = True
    latent_project: bool = True
    balance: bool = True
    conflict_threshold: float = -0.5
    gamma: float = 1.0


@dataclass(frozen=True)
class PruningOptions:
    enabled: bool = True
    layers: bool = True
    channels: bool = True
    beta: float = 0.7
    k: float = 0.0
    lambda_decay: float = 0.01
    epsilon: float = 1e-8
    window: int = 16
    tau_imp: float = 0.03
    start_retention: float = 0.95
    final_retention: float = 0.40
    # iterations over which retention falls; 0 means the curriculum length
    schedule_iters: int = 0
    remask_every: int = 50


@dataclass(frozen=True)
class CurriculumOptions:
    enabled: bool = True
    total_iters: int = 3000
    eta_lambda: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    label: str = ""
    seed: int = 42
    model: ModelOptions = field(default_factory=ModelOptions)
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    surgery: SurgeryOptions = field(default_factory=SurgeryOptions)
    pruning: PruningOptions = field(default_factory=PruningOptions)
    curriculum: CurriculumOptions = field(default_factory=CurriculumOptions)
    precision: str = "full"
    loss_threshold: float = 0.05
    stop_at_threshold: bool = True
    max_iters: int = 3000
    log_every: int = 10
    output_path: str = "runs/default"

    def toy_model_config(self) -> ToyModelConfig:
        m = self.model
        return ToyModelConfig(m.num_layers, m.token_count, m.embed_dim, self.seed)

    def surgery_config(self) -> SurgeryConfig:
        return SurgeryConfig(self.surgery.conflict_threshold, self.surgery.gamma)

    def prune_config(self) -> PruneConfig:
        p = self.pruning
        return PruneConfig(p.beta, p.k, p.lambda_decay, p.epsilon, p.window, p.tau_imp)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "model": ModelOptions,
    "optimizer": OptimizerOptions,
    "surgery": SurgeryOptions,
    "pruning": PruningOptions,
    "curriculum": CurriculumOptions,
}


def _coerce(path: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected string, got {value!r}")
        return value
    raise ConfigError(path, "unsupported field")


def _build(cls, data, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix or "<root>", "expected an object")
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in names:
            raise ConfigError(path, "unknown field")
        if key in _SECTIONS and cls is ExperimentConfig:
            kwargs[key] = _build(_SECTIONS[key], value, path)
        else:
            kwargs[key] = _coerce(path, value, getattr(defaults, key))
    return cls(**kwargs)


def _check(cfg: ExperimentConfig):
    def need(ok, path, msg):
        if not ok:
            raise ConfigError(path, msg)

    need(cfg.schema_version == SCHEMA_VERSION, "schema_version",
         f"unsupported version {cfg.schema_version} (expected {SCHEMA_VERSION})")
    need(0 <= cfg.seed < 2**64, "seed", "must be a 64-bit unsigned integer")
    m = cfg.model
    need(m.num_layers >= 1, "model.num_layers", "must be >= 1")
    need(m.token_count >= 2, "model.token_count", "must be >= 2")
    need(m.embed_dim >= 2, "model.embed_dim", "must be >= 2")
    need(m.latent_scale > 0, "model.latent_scale", "must be positive")
    need(m.content_shift >= 0, "model.content_shift", "must be non-negative")
    need(m.init_shift >= 0, "model.init_shift", "must be non-negative")
    o = cfg.optimizer
    need(o.name in ("muon", "adamw"), "optimizer.name", "must be 'muon' or 'adamw'")
    need(o.lr > 0, "optimizer.lr", "must be positive")
    need(0 <= o.momentum < 1, "optimizer.momentum", "must be in [0, 1)")
    need(o.ns_steps >= 1, "optimizer.ns_steps", "must be >= 1")
    need(0 <= o.beta1 < 1, "optimizer.beta1", "must be in [0, 1)")
    need(0 <= o.beta2 < 1, "optimizer.beta2", "must be in [0, 1)")
    need(o.eps > 0, "optimizer.eps", "must be positive")
    need(o.weight_decay >= 0, "optimizer.weight_decay", "must be non-negative")
    s = cfg.surgery
    need(-1 <= s.conflict_threshold <= 0, "surgery.conflict_threshold", "must be in [-1, 0]")
    need(s.gamma > 0, "surgery.gamma", "must be positive")
    p = cfg.pruning
    need(0 < p.beta <= 1, "pruning.beta", "must be in (0, 1]")
    need(p.lambda_decay >= 0, "pruning.lambda_decay", "must be non-negative")
    need(p.epsilon > 0, "pruning.epsilon", "must be positive")
    need(p.window >= 1, "pruning.window", "must be >= 1")
    need(p.tau_imp >= 0, "pruning.tau_imp", "must be non-negative")
    need(0 < p.final_retention <= 1, "pruning.final_retention", "must be in (0, 1]")
    need(0 < p.start_retention <= 1, "pruning.start_retention", "must be in (0, 1]")
    need(p.schedule_iters >= 0, "pruning.schedule_iters", "must be non-negative")
    need(p.remask_every >= 1, "pruning.remask_every", "must be >= 1")
    c = cfg.curriculum
    need(c.total_iters >= 1, "curriculum.total_iters", "must be >= 1")
    need(c.eta_lambda > 0, "curriculum.eta_lambda", "must be positive")
    need(cfg.precision in ("full", "mixed"), "precision", "must be 'full' or 'mixed'")
    need(cfg.loss_threshold >= 0, "loss_threshold", "must be non-negative")
    need(cfg.max_iters >= 1, "max_iters", "must be >= 1")
    need(cfg.log_every >= 1, "log_every", "must be >= 1")
    need(bool(cfg.output_path), "output_path", "must be non-empty")


def config_from_dict(data: dict) -> ExperimentConfig:
    if isinstance(data, dict) and "schema_version" not in data:
        raise ConfigError("schema_version", "missing")
    cfg = _build(ExperimentConfig, data, "")
    _check(cfg)
    return cfg


def deep_merge(base: dict, overrides: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def with_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Nested replace, e.g. ``with_overrides(cfg, optimizer={"name": "adamw"})``."""
    return config_from_dict(deep_merge(cfg.to_dict(), overrides))


def benchmark_config(**overrides) -> ExperimentConfig:
    """Fixed benchmark: seed 42, L=6, n=8, d=16, threshold 0.05."""
    base = ExperimentConfig().to_dict()
    return config_from_dict(deep_merge(base, overrides))


def baseline_adamw(**overrides) -> ExperimentConfig:
    """Plain AdamW distillation: no surgery, pruning or curriculum."""
    base = deep_merge(ExperimentConfig().to_dict(), {
        "label": "adamw-baseline",
        "optimizer": {"name": "adamw"},
        "surgery": {"enabled": False, "latent_project": False, "balance": False},
        "pruning": {"enabled": False},
        "curriculum": {"enabled": False},
    })
    return config_from_dict(deep_merge(base, overrides))

