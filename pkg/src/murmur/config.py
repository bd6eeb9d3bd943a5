"""Dataclass configs for every pipeline stage, plus hashing helpers.

Every tunable that the experiment depends on lives here with its default,
so a run is fully described by one RunConfig. Values the source material
leaves open (optimizer settings, dropout rate, MC sample count, thresholds)
are pinned here and overridable from the config file or CLI.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from murmur.errors import ConfigError

# Approximate age in months for each age-category label. Category midpoints;
# auditable here rather than buried in the encoder.
AGE_TO_MONTHS: dict[str, float] = {
    "Neonate": 0.5,
    "Infant": 6.0,
    "Child": 72.0,
    "Adolescent": 180.0,
    "YoungAdult": 240.0,
}


@dataclass
class SegmentationConfig:
    """Sliding-window segmentation of a recording."""

    window_s: float = 4.0
    stride_s: float = 1.0

    def validate(self) -> None:
        if not (0 < self.stride_s <= self.window_s):
            raise ConfigError(
                f"need 0 < stride_s <= window_s, got stride={self.stride_s} window={self.window_s}"
            )


@dataclass
class SpectrogramConfig:
    """Log-mel spectrogram parameters. Window shape is fixed to a periodic Hann."""

    n_mels: int = 64
    stft_window_ms: float = 25.0
    stft_hop_ms: float = 10.0
    f_min_hz: float = 10.0
    f_max_hz: float = 2000.0

    def validate(self) -> None:
        if self.n_mels < 1:
            raise ConfigError(f"n_mels must be >= 1, got {self.n_mels}")
        if not (0 < self.f_min_hz < self.f_max_hz):
            raise ConfigError(
                f"need 0 < f_min_hz < f_max_hz, got {self.f_min_hz}, {self.f_max_hz}"
            )
        if self.stft_hop_ms > self.stft_window_ms or self.stft_hop_ms <= 0:
            raise ConfigError(
                f"need 0 < stft_hop_ms <= stft_window_ms, got hop={self.stft_hop_ms} window={self.stft_window_ms}"
            )


@dataclass
class ModelConfig:
    """One binary MC-dropout segment classifier."""

    dropout_p: float = 0.2
    n_mc_samples: int = 20
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 15
    pretrained: bool = True
    input_size: tuple[int, int] = (224, 224)
    seed: int = 0

    def validate(self) -> None:
        if not (0 <= self.dropout_p < 1):
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.n_mc_samples < 1:
            raise ConfigError(f"n_mc_samples must be >= 1, got {self.n_mc_samples}")
        for name in ("learning_rate", "batch_size", "max_epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if len(self.input_size) != 2 or any(s < 32 for s in self.input_size):
            raise ConfigError(f"input_size must be two dims >= 32, got {self.input_size}")


@dataclass
class CascadeConfig:
    """Decision thresholds for the two-stage patient-level rule."""

    present_threshold: float = 0.5
    unknown_threshold: float = 0.5

    def validate(self) -> None:
        for name in ("present_threshold", "unknown_threshold"):
            v = getattr(self, name)
            if not (0 < v < 1):
                raise ConfigError(f"{name} must be in (0, 1), got {v}")


@dataclass
class FusionModelConfig:
    """Gradient-boosted tree ensemble over the fused feature vector.

    Objective is fixed: multiclass softmax over the three murmur labels.
    """

    n_trees: int = 200
    max_depth: int = 4
    learning_rate: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.n_trees < 1 or self.max_depth < 1 or self.learning_rate <= 0:
            raise ConfigError("fusion hyperparameters must be positive")


@dataclass
class RunConfig:
    """Everything one experiment run needs; serialized into every manifest."""

    data_dir: str = ""
    output_dir: str = ""
    seed: int = 0
    heldout_fraction: float = 0.2
    val_fraction: float = 0.2
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    spectrogram: SpectrogramConfig = field(default_factory=SpectrogramConfig)
    present_model: ModelConfig = field(default_factory=ModelConfig)
    unknown_model: ModelConfig = field(default_factory=ModelConfig)
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    fusion: FusionModelConfig = field(default_factory=FusionModelConfig)
    pad_short: bool = True
    deterministic: bool = True
    use_pretrained: bool = True
    fusion_on_train: bool = False
    pretrained_weights_path: str | None = None

    def validate(self) -> None:
        if not self.data_dir:
            raise ConfigError("data_dir is required")
        if not self.output_dir:
            raise ConfigError("output_dir is required")
        for name in ("heldout_fraction", "val_fraction"):
            v = getattr(self, name)
            if not (0 < v < 1):
                raise ConfigError(f"{name} must be in (0, 1), got {v}")
        self.segmentation.validate()
        self.spectrogram.validate()
        self.present_model.validate()
        self.unknown_model.validate()
        self.cascade.validate()
        self.fusion.validate()

    def to_dict(self) -> dict[str, Any]:
        return _asdict(self)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        return _from_dict(cls, raw)


_NESTED = {
    "segmentation": SegmentationConfig,
    "spectrogram": SpectrogramConfig,
    "present_model": ModelConfig,
    "unknown_model": ModelConfig,
    "cascade": CascadeConfig,
    "fusion": FusionModelConfig,
}


def _asdict(cfg: Any) -> dict[str, Any]:
    out = dataclasses.asdict(cfg)
    for key, value in out.items():
        if isinstance(value, tuple):
            out[key] = list(value)
    return out


def _from_dict(cls: type, raw: dict[str, Any]) -> Any:
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} for {cls.__name__}")
        if key in _NESTED and isinstance(value, dict):
            value = _from_dict(_NESTED[key], value)
        elif key == "input_size":
            value = tuple(int(v) for v in value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config for {cls.__name__}: {exc}") from exc


def load_run_config(path: str | Path) -> RunConfig:
    """Read a RunConfig from a JSON file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return RunConfig.from_dict(raw)


def save_run_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def config_hash(cfg: Any) -> str:
    """Stable short hash of any config dataclass (cache and manifest key)."""
    if dataclasses.is_dataclass(cfg) and not isinstance(cfg, type):
        payload = _asdict(cfg)
    else:
        payload = cfg
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
