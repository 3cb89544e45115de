"""Run configuration: one YAML file with a section per pipeline stage."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .annotate import AnnotationConfig
from .augment import AugmentConfig
from .geometry import CameraModel
from .model.config import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class CameraConfig:
    y_star: float = 3.0
    a: float = 800.0
    roi_top_row: int | None = None  # None: roi_top_fraction of the height
    roi_bottom_row: int | None = None  # None: the last row
    roi_top_fraction: float = 0.25

    def camera_model(self, height: int, width: int) -> CameraModel:
        top = self.roi_top_row if self.roi_top_row is not None else int(round(self.roi_top_fraction * height))
        bottom = self.roi_bottom_row if self.roi_bottom_row is not None else height - 1
        return CameraModel(self.y_star, self.a, width, height, bottom, top)


@dataclass
class SynthConfig:
    n_videos: int = 1
    n_frames: int = 16
    height: int = 512
    width: int = 512
    flow: tuple = (4, 0)
    noise_std: float = 0.0

    def __post_init__(self):
        self.flow = tuple(self.flow)


@dataclass
class NetworkConfig:
    kind: str = "uperflow"  # uperflow | upernet
    preset: str = "tiny"  # tiny | full; tiny applies small widths before overrides


SECTIONS = {
    "camera": CameraConfig,
    "synth": SynthConfig,
    "annotate": AnnotationConfig,
    "augment": AugmentConfig,
    "network": NetworkConfig,
    "model": ModelConfig,
    "train": TrainConfig,
}


@dataclass
class RunConfig:
    camera: CameraConfig = field(default_factory=CameraConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    annotate: AnnotationConfig = field(default_factory=AnnotationConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    model: ModelConfig = field(default_factory=ModelConfig.tiny)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_dict(cls, data: dict | None) -> "RunConfig":
        data = dict(data or {})
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        kwargs = {}
        for name, typ in SECTIONS.items():
            section = data.get(name) or {}
            if not isinstance(section, dict):
                raise ConfigError(f"section '{name}' must be a mapping")
            known = {f.name for f in fields(typ)}
            bad = set(section) - known
            if bad:
                raise ConfigError(f"unknown key(s) in section '{name}': {', '.join(f'{name}.{k}' for k in sorted(bad))}")
            if name == "model":
                continue
            try:
                kwargs[name] = typ(**section)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid section '{name}': {exc}") from exc
        model_section = data.get("model") or {}
        try:
            if kwargs["network"].preset == "tiny":
                kwargs["model"] = ModelConfig.tiny(**model_section)
            elif kwargs["network"].preset == "full":
                kwargs["model"] = ModelConfig(**model_section)
            else:
                raise ConfigError(f"unknown network.preset '{kwargs['network'].preset}'")
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid section 'model': {exc}") from exc
        if kwargs["network"].kind not in ("uperflow", "upernet"):
            raise ConfigError(f"unknown network.kind '{kwargs['network'].kind}'")
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"{path} must contain a mapping of sections")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {name: _plain(asdict(getattr(self, name))) for name in SECTIONS}

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def describe_defaults() -> str:
    """Every config key with its default, one per line."""
    lines = []
    defaults = RunConfig()
    for name, typ in SECTIONS.items():
        inst = getattr(defaults, name)
        for f in fields(typ):
            lines.append(f"  {name}.{f.name} = {_plain(getattr(inst, f.name))}")
    return "\n".join(lines)
