"""Training/evaluation configuration: a flat dataclass plus file and override parsing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

import yaml

from .errors import ConfigError

MIX_MODES = ("mixup", "cutmix")
IMAGE_PAIRINGS = ("q-q", "q-k")
FEATURE_PAIRINGS = ("q-k", "k-q", "q-q", "k-k")


@dataclass
class TrainConfig:
    # optimisation
    batch_size: int = 256
    total_epochs: int = 200
    base_lr: float = 0.03
    sgd_momentum: float = 0.9
    weight_decay: float = 5e-4
    max_steps: int = 0  # 0 = run all epochs

    # objective
    tau: float = 0.2
    tau_ot: float = 0.1
    tau_tt: float = 0.04
    lambda1: float = 1.0
    lambda2: float = 2.0
    local_positive_in_denominator: bool = False

    # momentum encoder / memory bank
    ema_m: float = 0.999
    bank_capacity: int = 4096

    # interpolation
    alpha: float = 1.0
    mix_mode: str = "cutmix"
    image_pairing: str = "q-k"
    feature_pairing: str = "q-k"
    per_pair_ratio: bool = False

    # model
    encoder: str = "small"
    embedding_dim: int = 128

    # data + augmentation
    dataset: str = "builtin:digits"
    subset_size: int = 0  # 0 = full train split
    image_size: int = 32
    crop_scale_min: float = 0.2
    crop_scale_max: float = 1.0
    flip_p: float = 0.5
    jitter_p: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    grayscale_p: float = 0.2
    blur_p: float = 0.5
    blur_sigma_min: float = 0.1
    blur_sigma_max: float = 2.0

    # bookkeeping
    seed: int = 0
    log_every: int = 1
    checkpoint_every: int = 10  # epochs
    checkpoint_every_steps: int = 0

    # evaluation
    knn_k: int = 200
    knn_temperature: float = 0.07
    probe_epochs: int = 100
    probe_lr: float = 10.0
    probe_batch_size: int = 256
    probe_momentum: float = 0.9
    probe_weight_decay: float = 0.0
    probe_standardize: bool = True
    eval_batch_size: int = 512

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        for name in ("tau", "tau_ot", "tau_tt", "knn_temperature"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("lambda1", "lambda2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 <= self.ema_m <= 1.0:
            raise ConfigError("ema_m must lie in [0, 1]")
        if self.alpha <= 0:
            raise ConfigError("alpha must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lambda2 > 0 and self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 when the local loss is enabled")
        if self.bank_capacity < self.batch_size:
            raise ConfigError("bank_capacity must be >= batch_size")
        if self.mix_mode not in MIX_MODES:
            raise ConfigError(f"mix_mode must be one of {MIX_MODES}")
        if self.image_pairing not in IMAGE_PAIRINGS:
            raise ConfigError(f"image_pairing must be one of {IMAGE_PAIRINGS}")
        if self.feature_pairing not in FEATURE_PAIRINGS:
            raise ConfigError(f"feature_pairing must be one of {FEATURE_PAIRINGS}")
        if not 0 < self.crop_scale_min <= self.crop_scale_max <= 1:
            raise ConfigError("need 0 < crop_scale_min <= crop_scale_max <= 1")
        if self.total_epochs < 1:
            raise ConfigError("total_epochs must be >= 1")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be > 0")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes: Any) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, value: Any) -> Any:
    kind = _FIELD_TYPES[key]
    if kind == "bool":
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: cannot parse {value!r} as bool")
    try:
        if kind == "int":
            number = float(value)
            if isinstance(value, bool) or not number.is_integer():
                raise ValueError
            return int(number)
        if kind == "float":
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind}") from None
    return str(value)


def _check_keys(keys: Iterable[str]) -> None:
    unknown = sorted(set(keys) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")


def parse_overrides(items: Iterable[str]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form KEY=VALUE")
        key, value = item.split("=", 1)
        key = key.strip()
        _check_keys([key])
        out[key] = _coerce(key, value.strip())
    return out


def preset_names() -> list[str]:
    root = resources.files("reco") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def _read_mapping(source: str | Path) -> dict[str, Any]:
    path = Path(source)
    if path.exists():
        text = path.read_text()
    elif str(source) in preset_names():
        text = (resources.files("reco") / "presets" / f"{source}.yaml").read_text()
    else:
        raise ConfigError(f"config file {source} not found (and not a preset: {preset_names()})")
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if not isinstance(data, dict) or any(isinstance(v, (dict, list)) for v in data.values()):
        raise ConfigError(f"{source}: config must be a flat key: value mapping")
    return data


def load_config(
    source: str | Path | None = None,
    overrides: dict[str, Any] | Iterable[str] | None = None,
    **extra: Any,
) -> TrainConfig:
    """Defaults <- config file (path or preset name) <- overrides <- keyword extras."""
    values: dict[str, Any] = {}
    if source is not None:
        data = _read_mapping(source)
        _check_keys(data)
        values.update({k: _coerce(k, v) for k, v in data.items()})
    if overrides:
        if not isinstance(overrides, dict):
            overrides = parse_overrides(overrides)
        _check_keys(overrides)
        values.update({k: _coerce(k, v) for k, v in overrides.items()})
    if extra:
        _check_keys(extra)
        values.update({k: _coerce(k, v) for k, v in extra.items()})
    return TrainConfig(**values)


def save_config(config: TrainConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
    return path
