"""Run configuration: a declarative, JSON-serializable experiment description."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..encoder import EncoderConfig

OBJECTIVES = ("ce", "ce+ssl", "supcon", "supcon+ssl", "supcon+ssl+gradmix", "ssl-only")
AUGMENTATIONS = ("none", "mixup", "cutmix", "cutout", "gradmix")
SOURCES = ("synth", "idx", "cifar-binary")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    source: str = "synth"
    protocol: str = "synth"
    trial: int = 0
    split_seed: int = 0
    # synthetic source
    synth_classes: int = 3
    image_size: int = 16
    n_train_per_class: int = 300
    n_test_per_class: int = 200
    synth_seed: int = 0
    # file sources (relative paths resolve against the data directory)
    train_files: list[str] = field(default_factory=list)
    test_files: list[str] = field(default_factory=list)
    unknown_test_files: list[str] = field(default_factory=list)
    unknown_format: str = ""  # defaults to ``source``
    unknown_label_bytes: int = 2


@dataclass
class RunConfig:
    objective: str = "supcon+ssl+gradmix"
    augmentation: str = "gradmix"
    encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(
        input_resolution=16, stage_widths=(16, 32, 64), embedding_dim=128,
        tap_names=("conv3_1", "conv4_1", "conv5_1")))
    theta: float = 1.0
    lam: float = 1.0
    ce_weight: float = 1.0
    tau: float = 0.1
    supcon_mode: str = "different-label"
    gamma_min: float = 0.1
    gamma_max: float = 0.5
    attribution_refresh: str = "per-batch"
    attribution_method: str = "layercam"
    mix_alpha: float = 1.0
    cutout_size: int = 8
    k: int = 3
    epochs: int = 10
    batch_size: int = 64
    lr_max: float = 1e-3
    lr_min: float = 5.12e-5
    seed: int = 0
    threads: int = 1
    checkpoint_every: int = 0
    data: DataConfig = field(default_factory=DataConfig)

    # -- validation -----------------------------------------------------------
    def validate(self) -> "RunConfig":
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.augmentation not in AUGMENTATIONS:
            raise ConfigError(f"augmentation must be one of {AUGMENTATIONS}, got {self.augmentation!r}")
        if self.objective == "supcon+ssl+gradmix" and self.augmentation != "gradmix":
            raise ConfigError("objective supcon+ssl+gradmix requires augmentation 'gradmix'")
        if self.augmentation == "gradmix" and self.objective not in ("supcon+ssl+gradmix", "ssl-only", "ce+ssl"):
            raise ConfigError(f"gradmix augmentation needs a self-supervised term; objective is {self.objective!r}")
        if self.augmentation != "none" and self.objective in ("ce", "supcon"):
            raise ConfigError(f"mixing augmentations act on the self-supervised term; {self.objective!r} has none")
        if self.augmentation == "gradmix" and not self.encoder.tap_names:
            raise ConfigError("gradmix augmentation requires nonempty tap names")
        if self.objective.startswith("ce") and not self.encoder.has_classifier:
            raise ConfigError("cross-entropy objectives need head_mode 'projection+classifier'")
        if self.data.source not in SOURCES:
            raise ConfigError(f"data.source must be one of {SOURCES}, got {self.data.source!r}")
        checks = [
            (self.theta >= 0, "theta must be >= 0"),
            (self.lam >= 0, "lam must be >= 0"),
            (self.ce_weight >= 0, "ce_weight must be >= 0"),
            (self.tau > 0, "tau must be > 0"),
            (0.1 <= self.gamma_min <= self.gamma_max <= 0.5, "gamma range must lie within [0.1, 0.5]"),
            (self.supcon_mode in ("different-label", "standard"), "supcon_mode must be 'different-label' or 'standard'"),
            (self.attribution_refresh in ("per-batch", "per-epoch"), "attribution_refresh must be per-batch or per-epoch"),
            (self.attribution_method in ("layercam", "gradcam"), "attribution_method must be layercam or gradcam"),
            (self.mix_alpha > 0, "mix_alpha must be > 0"),
            (0 < self.cutout_size <= self.encoder.input_resolution, "cutout_size must lie in (0, image side]"),
            (self.k >= 1, "k must be >= 1"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.batch_size >= 2, "batch_size must be >= 2"),
            (0 < self.lr_min <= self.lr_max, "need 0 < lr_min <= lr_max"),
            (self.threads >= 1, "threads must be >= 1"),
            (self.checkpoint_every >= 0, "checkpoint_every must be >= 0"),
            (0 <= self.data.trial < 5, "data.trial must lie in [0, 5)"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        self.encoder.validate()
        return self

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"] = self.encoder.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "encoder" in d and not isinstance(d["encoder"], EncoderConfig):
            d["encoder"] = EncoderConfig.from_dict(d["encoder"])
        if "data" in d and not isinstance(d["data"], DataConfig):
            data_known = {f.name for f in fields(DataConfig)}
            bad = set(d["data"]) - data_known
            if bad:
                raise ConfigError(f"unknown data fields: {sorted(bad)}")
            d["data"] = DataConfig(**d["data"])
        return cls(**d)

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """Apply dotted-key overrides such as ``{"encoder.embedding_dim": 64}``."""
        d = self.to_dict()
        for key, value in overrides.items():
            target = d
            *path, leaf = key.split(".")
            for part in path:
                if part not in target or not isinstance(target[part], dict):
                    raise ConfigError(f"unknown config field {key!r}")
                target = target[part]
            if leaf not in target:
                raise ConfigError(f"unknown config field {key!r}")
            target[leaf] = value
        return RunConfig.from_dict(d)


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return RunConfig.from_dict(raw)


def smoke_config(**overrides) -> RunConfig:
    """The toy protocol: 2 known + 1 unknown blob classes, 16 px, tiny encoder."""
    cfg = RunConfig()
    return cfg.with_overrides(overrides) if overrides else cfg
