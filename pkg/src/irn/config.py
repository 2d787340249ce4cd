"""Experiment configuration: dimensions, ablation switches, optimizer schedule.

Configs are plain dataclasses serialised to/from JSON. Overrides use dotted
keys (``interaction.heads=4``) so every ablation axis is reachable from the
command line without code changes. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from typing import Any


class ConfigError(ValueError):
    """Raised for unknown keys, type mismatches, or invariant violations."""


# Concatenation order of the six interaction pairs, fixed everywhere:
# (HL,OL), (HL,OR), (HL,HR), (HR,OR), (HR,OL), (HR,HL).
PAIR_NAMES = ("HL_OL", "HL_OR", "HL_HR", "HR_OR", "HR_OL", "HR_HL")

ROLE_CODES = ("HL", "HR", "OL", "OR")


@dataclass
class DataConfig:
    frames_per_clip: int = 16        # frames per input clip before sampling
    frame_size: int = 64             # square frame side after preprocessing
    trajectory_len: int = 8          # sampled frames per trajectory
    grid_size: int = 32              # binary occupancy map resolution
    num_classes: int = 6
    confidence_threshold: float = 0.5


@dataclass
class InteractionConfig:
    channels: int = 64               # per-detection feature width
    action_dim: int = 128            # pooled action representation width
    heads: int = 4
    layers: int = 3
    dropout: float = 0.1
    attn_scale: str = "per_head"     # per_head | sqrt_n
    decoder_kv: str = "six_tokens"   # single | six_tokens
    detection_rep: str = "roi"       # roi | mlp
    spe_mode: str = "sum"            # none | sum | concat
    traj_mode: str = "trajectory"    # middle | duplicate | trajectory
    action_fusion: str = "decoder"   # none | concat | decoder
    pairs: tuple = (True,) * 6       # enable mask in PAIR_NAMES order
    active_roles: tuple = ROLE_CODES  # roles outside this set are treated absent
    mlp_patch_size: int = 16
    bias_free: bool = False          # disable every bias term (zero-propagation tests)


@dataclass
class OptimizerConfig:
    lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay_epochs: tuple = (12, 18)
    decay_factor: float = 10.0
    epochs: int = 20
    batch_size: int = 16


@dataclass
class AugmentConfig:
    mode: str = "none"               # none | std | scr
    scale_lo: float = 1.0
    scale_hi: float = 1.3
    target_size: int = 64


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    interaction: InteractionConfig = field(default_factory=InteractionConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0


def desk_config() -> ExperimentConfig:
    """Default configuration sized to train on a workstation CPU."""
    return ExperimentConfig()


def paper_scale_config() -> ExperimentConfig:
    """Full-scale configuration (32-frame 224px clips, 640/2304 widths).

    Registered for completeness; training it needs a serious accelerator.
    """
    return ExperimentConfig(
        data=DataConfig(frames_per_clip=32, frame_size=224, trajectory_len=8,
                        grid_size=64, num_classes=6),
        interaction=InteractionConfig(channels=640, action_dim=2304, heads=16,
                                      layers=3),
        optimizer=OptimizerConfig(lr=0.001, momentum=0.9, weight_decay=1e-4,
                                  decay_epochs=(10, 20), epochs=24),
        augment=AugmentConfig(mode="scr", target_size=224),
    )


_ENUM_FIELDS = {
    "interaction.attn_scale": ("per_head", "sqrt_n"),
    "interaction.decoder_kv": ("single", "six_tokens"),
    "interaction.detection_rep": ("roi", "mlp"),
    "interaction.spe_mode": ("none", "sum", "concat"),
    "interaction.traj_mode": ("middle", "duplicate", "trajectory"),
    "interaction.action_fusion": ("none", "concat", "decoder"),
    "augment.mode": ("none", "std", "scr"),
}


def validate(config: ExperimentConfig) -> ExperimentConfig:
    """Check cross-field invariants; returns the config for chaining."""
    d, it, opt, aug = config.data, config.interaction, config.optimizer, config.augment
    if d.frame_size % 8 != 0:
        raise ConfigError("data.frame_size must be divisible by 8")
    if d.grid_size % 8 != 0:
        raise ConfigError("data.grid_size must be divisible by 8")
    if d.frames_per_clip % d.trajectory_len != 0:
        raise ConfigError("data.frames_per_clip must be divisible by data.trajectory_len")
    if d.frames_per_clip % (2 * d.trajectory_len) != 0:
        raise ConfigError("data.frames_per_clip must be divisible by 2*trajectory_len "
                          "(fast pathway sampling)")
    if not 0.0 <= d.confidence_threshold <= 1.0:
        raise ConfigError("data.confidence_threshold must lie in [0, 1]")
    if it.channels % 4 != 0 or it.channels % it.heads != 0:
        raise ConfigError("interaction.channels must be divisible by 4 and by heads")
    if it.action_dim % it.heads != 0:
        raise ConfigError("interaction.action_dim must be divisible by heads")
    if it.layers < 1:
        raise ConfigError("interaction.layers must be >= 1")
    if not 0.0 <= it.dropout < 1.0:
        raise ConfigError("interaction.dropout must lie in [0, 1)")
    if len(it.pairs) != 6 or not all(isinstance(p, bool) for p in it.pairs):
        raise ConfigError("interaction.pairs must be six booleans")
    if not it.active_roles or any(r not in ROLE_CODES for r in it.active_roles):
        raise ConfigError(f"interaction.active_roles entries must be among {ROLE_CODES}")
    for key, allowed in _ENUM_FIELDS.items():
        section, name = key.split(".")
        value = getattr(getattr(config, section), name)
        if value not in allowed:
            raise ConfigError(f"{key} must be one of {allowed}, got {value!r}")
    if opt.lr <= 0:
        raise ConfigError("optimizer.lr must be positive")
    if not 0.0 <= opt.momentum < 1.0:
        raise ConfigError("optimizer.momentum must lie in [0, 1)")
    if opt.weight_decay < 0:
        raise ConfigError("optimizer.weight_decay must be non-negative")
    if opt.epochs < 1:
        raise ConfigError("optimizer.epochs must be >= 1")
    if list(opt.decay_epochs) != sorted(set(opt.decay_epochs)):
        raise ConfigError("optimizer.decay_epochs must be strictly increasing")
    if any(e >= opt.epochs for e in opt.decay_epochs):
        raise ConfigError("optimizer.decay_epochs must all be < optimizer.epochs")
    if opt.decay_factor <= 0:
        raise ConfigError("optimizer.decay_factor must be positive")
    if opt.batch_size < 1:
        raise ConfigError("optimizer.batch_size must be >= 1")
    if not aug.scale_lo <= aug.scale_hi:
        raise ConfigError("augment.scale_lo must be <= augment.scale_hi")
    if aug.mode != "none":
        if aug.scale_lo < 1.0:
            raise ConfigError("augment.scale_lo below 1.0 would need padding; use >= 1.0")
        if aug.target_size < 16:
            raise ConfigError("augment.target_size must be >= 16")
        if aug.target_size != d.frame_size:
            raise ConfigError("augment.target_size must equal data.frame_size "
                              "(the model consumes augmented frames directly)")
    return config


def to_dict(config: ExperimentConfig) -> dict:
    out = dataclasses.asdict(config)

    def _tuples_to_lists(node):
        if isinstance(node, dict):
            return {k: _tuples_to_lists(v) for k, v in node.items()}
        if isinstance(node, tuple):
            return [_tuples_to_lists(v) for v in node]
        return node

    return _tuples_to_lists(out)


_SECTIONS = {
    "data": DataConfig,
    "interaction": InteractionConfig,
    "optimizer": OptimizerConfig,
    "augment": AugmentConfig,
}


def from_dict(raw: dict) -> ExperimentConfig:
    """Build a config from a plain dict, rejecting unknown keys."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be an object, got {type(raw).__name__}")
    config = ExperimentConfig()
    for key, value in raw.items():
        if key == "seed":
            config.seed = _coerce("seed", int, value)
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key} must be an object")
            section = getattr(config, key)
            known = {f.name: f for f in fields(section)}
            for name, v in value.items():
                if name not in known:
                    raise ConfigError(f"unknown config key {key}.{name}")
                setattr(section, name, _coerce(f"{key}.{name}", known[name].type, v))
        else:
            raise ConfigError(f"unknown config key {key}")
    return validate(config)


def _coerce(key: str, annot, value: Any):
    """Coerce a JSON or CLI string value to the field's declared type."""
    annot = str(annot)
    try:
        if "tuple" in annot:
            if key == "interaction.pairs":
                return _parse_pairs(value)
            if key == "interaction.active_roles":
                return _parse_roles(value)
            if isinstance(value, str):
                value = [v for v in value.split(",") if v != ""]
            return tuple(int(v) for v in value)
        if "bool" in annot:
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
                return value.lower() in ("true", "1")
            raise ValueError(value)
        if "int" in annot:
            if isinstance(value, bool) or (isinstance(value, float) and value != int(value)):
                raise ValueError(value)
            return int(value)
        if "float" in annot:
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if "str" in annot:
            if not isinstance(value, str):
                raise ValueError(value)
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    raise ConfigError(f"cannot coerce config key {key}")


def _parse_pairs(value) -> tuple:
    if isinstance(value, str):
        s = value.replace(",", "")
        if len(s) == 6 and set(s) <= {"0", "1"}:
            return tuple(c == "1" for c in s)
        raise ConfigError(f"interaction.pairs expects six 0/1 flags, got {value!r}")
    if isinstance(value, (list, tuple)) and len(value) == 6:
        return tuple(bool(v) for v in value)
    raise ConfigError(f"interaction.pairs expects six flags, got {value!r}")


def _parse_roles(value) -> tuple:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v]
    roles = tuple(str(v) for v in value)
    for r in roles:
        if r not in ROLE_CODES:
            raise ConfigError(f"unknown role {r!r} in interaction.active_roles")
    return roles


def apply_overrides(config: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    """Apply dotted-key overrides on top of an existing config."""
    merged = to_dict(config)
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        if parts[0] == "seed" and len(parts) == 1:
            merged["seed"] = value
            continue
        if len(parts) != 2 or parts[0] not in _SECTIONS:
            raise ConfigError(f"unknown config key {dotted}")
        section, name = parts
        if name not in merged[section]:
            raise ConfigError(f"unknown config key {dotted}")
        merged[section][name] = value
    return from_dict(merged)


def load_config(path, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    config = from_dict(raw)
    if overrides:
        config = apply_overrides(config, overrides)
    return config


def config_hash(config: ExperimentConfig) -> str:
    """Stable hash of the canonical serialisation (key order independent)."""
    blob = json.dumps(to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
