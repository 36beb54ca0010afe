"""Configuration dataclasses and the flat key-value config file format.

Defaults follow the published hyper-parameter tables (starred values
where a sweep list is given). Config files are plain ``key = value``
lines with dotted keys mirroring the dataclass nesting; unknown keys
and malformed values are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, get_type_hints


class ConfigError(ValueError):
    """Invalid configuration value or unknown key."""


@dataclass
class MmdConfig:
    """Gaussian kernel bandwidth set; empty means the median heuristic."""

    bandwidths: tuple[float, ...] = ()
    heuristic_multipliers: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)

    def __post_init__(self):
        if any(s <= 0 for s in self.bandwidths):
            raise ConfigError(f"mmd.bandwidths must be positive, got {self.bandwidths}")
        if not self.bandwidths and not self.heuristic_multipliers:
            raise ConfigError("mmd: need bandwidths or heuristic multipliers")

    def resolved_bandwidths(self, base: Callable[[], float]) -> tuple[float, ...]:
        if self.bandwidths:
            return tuple(self.bandwidths)
        sigma0 = base()
        return tuple(m * sigma0 for m in self.heuristic_multipliers)


@dataclass
class HampelConfig:
    window_size: int = 5
    n_sigma: float = 3.0
    lambda_mad: float = 1.4826

    def __post_init__(self):
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ConfigError(f"hampel.window_size must be odd and >= 3, got {self.window_size}")
        if self.n_sigma <= 0:
            raise ConfigError(f"hampel.n_sigma must be positive, got {self.n_sigma}")


@dataclass
class ReliefFConfig:
    k_neighbors: int = 70
    m_samples: int | None = None  # None: every training instance, deterministic
    n_bins: int = 10
    top_n: int = 3

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ConfigError(f"relieff.k_neighbors must be >= 1, got {self.k_neighbors}")
        if self.n_bins < 2:
            raise ConfigError(f"relieff.n_bins must be >= 2, got {self.n_bins}")
        if self.top_n < 1:
            raise ConfigError(f"relieff.top_n must be >= 1, got {self.top_n}")


@dataclass
class PoolConfig:
    hidden_size: int = 64
    num_layers: int = 2
    kernel_size: int = 3
    padding: int = 1
    attention_heads: int = 16
    dropout: float = 0.1
    pool_stride: int = 2  # standalone diagnostic CNN head only

    def __post_init__(self):
        if self.hidden_size < 1:
            raise ConfigError(f"pool.hidden_size must be >= 1, got {self.hidden_size}")
        if self.hidden_size % 2 != 0:
            raise ConfigError(f"pool.hidden_size must be even for bidirectional splits, got {self.hidden_size}")
        if self.hidden_size % self.attention_heads != 0:
            raise ConfigError(
                f"pool.attention_heads={self.attention_heads} must divide hidden_size={self.hidden_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"pool.dropout must lie in [0, 1), got {self.dropout}")


@dataclass
class ChannelConfig:
    input_dim: int = 16
    hidden: int = 32
    gate_steepness: float = 10.0
    dropout: float = 0.1
    renormalize: bool = True

    def __post_init__(self):
        if self.gate_steepness <= 0:
            raise ConfigError(f"channels.gate_steepness must be positive, got {self.gate_steepness}")


@dataclass
class ModelConfig:
    pool: PoolConfig = field(default_factory=PoolConfig)
    channels: ChannelConfig = field(default_factory=ChannelConfig)
    head_hidden: int = 64
    head_dropout: float = 0.1
    use_fusion: bool = True      # ablation: off concatenates features at the input
    use_weighted: bool = True    # ablation: off averages the pool uniformly


@dataclass
class LossConfig:
    """Peak-penalized squared error; multiplier 1 recovers plain MSE."""

    penalty_multiplier: float = 3.0
    z_threshold: float = 2.0
    stats_scope: str = "global"  # or "per_day"

    def __post_init__(self):
        if self.penalty_multiplier < 1.0:
            raise ConfigError(f"loss.penalty_multiplier must be >= 1, got {self.penalty_multiplier}")
        if self.z_threshold <= 0:
            raise ConfigError(f"loss.z_threshold must be positive, got {self.z_threshold}")
        if self.stats_scope not in ("global", "per_day"):
            raise ConfigError(f"loss.stats_scope must be 'global' or 'per_day', got {self.stats_scope!r}")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epoch: int = 300
    batch_size: int = 128
    lookback: int = 96
    seed: int = 0
    patience: int = 0  # 0: never stop before max_epoch (best checkpoint still kept)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"train.lr must be positive, got {self.lr}")
        if self.max_epoch < 0:
            raise ConfigError(f"train.max_epoch must be >= 0, got {self.max_epoch}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.lookback < 1:
            raise ConfigError(f"train.lookback must be >= 1, got {self.lookback}")


# sweep lists from the hyper-parameter table; the default value of each
# TrainConfig field is the starred entry
TRAIN_SWEEP = {
    "max_epoch": (100, 200, 300, 500),
    "lookback": (32, 64, 96, 128),
    "batch_size": (32, 64, 128, 256),
}


@dataclass
class TransferConfig:
    mae_threshold: float = 0.2
    probe_len: int = 100
    finetune_max_epoch: int = 50
    finetune_batch: int = 16
    finetune_lr_factor: float = 0.1

    def __post_init__(self):
        if self.mae_threshold <= 0:
            raise ConfigError(f"transfer.mae_threshold must be positive, got {self.mae_threshold}")
        if self.probe_len < 1:
            raise ConfigError(f"transfer.probe_len must be >= 1, got {self.probe_len}")


@dataclass
class SplitConfig:
    train_len: int
    val_len: int
    test_len: int


@dataclass
class RunConfig:
    """Everything a run needs: paths, module configs, and the global seed."""

    seed: int = 0
    out_dir: str = "out"
    target_path: str = ""
    candidate_paths: tuple[str, ...] = ()
    use_feature_selection: bool = True
    mmd: MmdConfig = field(default_factory=MmdConfig)
    hampel: HampelConfig = field(default_factory=HampelConfig)
    relieff: ReliefFConfig = field(default_factory=ReliefFConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    source_split: SplitConfig = field(default_factory=lambda: SplitConfig(8528, 300, 100))
    target_split: SplitConfig = field(default_factory=lambda: SplitConfig(284, 0, 100))


# ---------------------------------------------------------------------------
# flat key-value serialization

_SCALARS = (int, float, bool, str)


def _is_dataclass_type(tp) -> bool:
    return dataclasses.is_dataclass(tp) and isinstance(tp, type)


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(tp, text: str, key: str):
    text = text.strip()
    origin = getattr(tp, "__origin__", None)
    args = getattr(tp, "__args__", ())
    if args and type(None) in args:  # Optional[...]
        if text.lower() == "none":
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _parse_value(inner, text, key)
    if origin is tuple:
        if text == "":
            return ()
        elem = args[0]
        return tuple(_parse_value(elem, part, key) for part in text.split(","))
    try:
        if tp is bool:
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp is str:
            return text
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {text!r} as {tp.__name__}") from None
    raise ConfigError(f"config key {key!r}: unsupported field type {tp}")


def flatten_config(cfg, prefix: str = "") -> dict[str, str]:
    out: dict[str, str] = {}
    for f in fields(cfg):
        if not f.init and f.default is None:
            continue
        value = getattr(cfg, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(value):
            out.update(flatten_config(value, key + "."))
        else:
            out[key] = _format_value(value)
    return out


def _field_types(cls) -> dict[str, type]:
    return get_type_hints(cls)


def _unflatten(cls, flat: dict[str, str], prefix: str = ""):
    hints = _field_types(cls)
    kwargs = {}
    for f in fields(cls):
        if not f.init:
            continue
        tp = hints[f.name]
        key = prefix + f.name
        if _is_dataclass_type(tp):
            kwargs[f.name] = _unflatten(tp, flat, key + ".")
        elif key in flat:
            kwargs[f.name] = _parse_value(tp, flat[key], key)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"config section {prefix or cls.__name__}: {exc}") from None


def unflatten_config(cls, flat: dict[str, str]):
    """Build ``cls`` from dotted keys over its defaults; unknown keys error."""
    defaults = flatten_config(cls())
    unknown = sorted(set(flat) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return _unflatten(cls, {**defaults, **flat})


def parse_config_text(text: str) -> RunConfig:
    flat: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in flat:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        flat[key] = value.strip()
    return unflatten_config(RunConfig, flat)


def load_config(path: str | Path) -> RunConfig:
    return parse_config_text(Path(path).read_text())


def config_text(cfg: RunConfig) -> str:
    flat = flatten_config(cfg)
    return "".join(f"{k} = {v}\n" for k, v in sorted(flat.items()))


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(config_text(cfg))
