"""Experiment configuration and its flat ``key = value`` text format.

Keys are dot-separated field paths, e.g. ``optimizer.lr = 0.0001`` or
``strategy.kind = lwcc``. ``#`` starts a comment. Tuples are comma
separated; milestones are ``epoch:factor`` pairs (``80:0.1, 120:0.1``).
Relative data paths are resolved against the config file's directory.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .calib import StrategySpec
from .errors import ConfigError, StorageError
from .nn import NetworkSpec
from .pruning import PruneConfig


@dataclass(frozen=True)
class DataConfig:
    kind: str = "idx"  # idx | synthetic
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    num_classes: int = 0  # 0: infer from labels
    train_limit: int = 0  # 0: use everything; otherwise a class-balanced subset
    test_limit: int = 0
    subset_seed: int = 0
    split: str = "none"  # none | a | b: train on one half of a class-balanced split
    split_seed: int = 0
    # synthetic blobs
    classes: int = 4
    per_class: int = 200
    test_per_class: int = 100
    dim: int = 20
    separation: float = 3.0
    data_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("idx", "synthetic"):
            raise ConfigError(f"data.kind must be idx or synthetic, got {self.kind!r}")
        if self.split not in ("none", "a", "b"):
            raise ConfigError(f"data.split must be none, a or b, got {self.split!r}")


@dataclass(frozen=True)
class NetworkConfig:
    layer_dims: tuple[int, ...] = (784, 300, 100, 10)
    dropout_rate: float = 0.0


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"  # adam | sgd
    lr: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 0.0
    milestones: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ConfigError(f"optimizer.kind must be adam or sgd, got {self.kind!r}")
        if not self.lr > 0.0:
            raise ConfigError("optimizer.lr must be > 0")


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 60
    batch_size: int = 60
    strategy: StrategySpec = field(default_factory=StrategySpec)
    prune: PruneConfig = field(default_factory=PruneConfig)
    eval_bins: int = 15
    seed: int = 0
    output_dir: str = "runs/default"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_bins < 1:
            raise ConfigError("eval_bins must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        self.network_spec()  # validates dims and dropout

    def network_spec(self) -> NetworkSpec:
        return NetworkSpec(self.network.layer_dims, self.network.dropout_rate, self.seed)


# --- parsing -----------------------------------------------------------------


def _parse_value(text: str, hint: Any, key: str):
    text = text.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        inner = [a for a in args if a is not type(None)]
        if text.lower() in ("", "none"):
            return None
        for cand in inner:
            try:
                return _parse_value(text, cand, key)
            except ConfigError:
                continue
        raise ConfigError(f"{key}: cannot parse {text!r}")
    if hint is bool:
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    if hint in (int, float, str):
        try:
            return hint(text)
        except ValueError:
            raise ConfigError(f"{key}: expected {hint.__name__}, got {text!r}") from None
    if origin in (tuple, frozenset):
        items = [t for t in (s.strip() for s in text.split(",")) if t]
        if args and args[0] == tuple[int, float]:
            out = []
            for item in items:
                at, sep, factor = item.partition(":")
                if not sep:
                    raise ConfigError(f"{key}: milestones are epoch:factor pairs, got {item!r}")
                out.append((_parse_value(at, int, key), _parse_value(factor, float, key)))
            return tuple(out)
        elem = args[0]
        vals = [_parse_value(item, elem, key) for item in items]
        return origin(vals)
    raise ConfigError(f"{key}: unsupported field type {hint}")


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, frozenset)):
        items = sorted(value) if isinstance(value, frozenset) else value
        return ", ".join(f"{a[0]}:{a[1]!r}" if isinstance(a, tuple) else _format_value(a) for a in items)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _sections():
    return {
        "data": DataConfig,
        "network": NetworkConfig,
        "optimizer": OptimizerConfig,
        "strategy": StrategySpec,
        "prune": PruneConfig,
    }


def from_mapping(values: dict[str, str], base_dir: Path | None = None) -> ExperimentConfig:
    """Build a config from ``{dotted.key: raw text}``; unknown keys are errors."""
    sections = _sections()
    top_hints = typing.get_type_hints(ExperimentConfig)
    per_section: dict[str, dict[str, Any]] = {name: {} for name in sections}
    top: dict[str, Any] = {}
    for key, raw in values.items():
        head, dot, rest = key.partition(".")
        if dot:
            if head not in sections:
                raise ConfigError(f"unknown config section {head!r} in {key!r}")
            cls = sections[head]
            hints = typing.get_type_hints(cls)
            if rest not in hints or rest not in {f.name for f in fields(cls)}:
                raise ConfigError(f"unknown config key {key!r}")
            per_section[head][rest] = _parse_value(raw, hints[rest], key)
        else:
            if key not in top_hints or key in sections:
                raise ConfigError(f"unknown config key {key!r}")
            top[key] = _parse_value(raw, top_hints[key], key)

    built = {}
    for name, cls in sections.items():
        try:
            built[name] = cls(**per_section[name])
        except TypeError as exc:
            raise ConfigError(f"{name}: {exc}") from exc
    if base_dir is not None:
        data = built["data"]
        resolved = {}
        for f in ("train_images", "train_labels", "test_images", "test_labels"):
            p = getattr(data, f)
            if p and not Path(p).is_absolute():
                resolved[f] = str((base_dir / p).resolve())
        built["data"] = replace(data, **resolved)
    return ExperimentConfig(**built, **top)


def parse_text(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key = key.strip()
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = raw.strip()
    return from_mapping(values, base_dir)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise StorageError(f"cannot read config {path}: {exc}") from exc
    return parse_text(text, base_dir=path.parent.resolve())


def to_text(config: ExperimentConfig) -> str:
    """Every key of ``config`` in the same text format; ``parse_text`` round-trips it."""
    lines = []
    for f in fields(config):
        value = getattr(config, f.name)
        if dataclasses.is_dataclass(value):
            for sub in fields(value):
                lines.append(f"{f.name}.{sub.name} = {_format_value(getattr(value, sub.name))}")
        else:
            lines.append(f"{f.name} = {_format_value(value)}")
    return "\n".join(lines) + "\n"
