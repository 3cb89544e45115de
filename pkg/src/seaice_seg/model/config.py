"""Model configuration."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

ENCODERS = ("tiny", "resnet50", "resnet101")
CROSS_SCALES = (4, 8, 16, 32)


class ModelConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    encoder: str = "tiny"
    base_width: int = 16  # tiny encoder stage-1 width (doubles per stage)
    tiny_blocks: tuple = (1, 1, 1, 1)
    n_classes: int = 6
    flow_levels: int = 6
    flow_widths: tuple = (16, 32, 64, 96, 128, 196)  # flow encoder channels, finest first
    estimator_width: int = 64
    cv_radius: int = 4
    cross_scales: tuple = CROSS_SCALES
    fusion_channels: int = 64
    ppm_bins: tuple = (1, 2, 3, 6)
    norm: str = "group"  # decoder and tiny encoder; torchvision encoders keep BatchNorm
    cross_connections: bool = True
    freeze_flow: bool = False
    flow_weights: str | None = None

    def __post_init__(self):
        self.tiny_blocks = tuple(int(b) for b in self.tiny_blocks)
        self.flow_widths = tuple(int(w) for w in self.flow_widths)
        self.cross_scales = tuple(int(s) for s in self.cross_scales)
        self.ppm_bins = tuple(int(b) for b in self.ppm_bins)
        if self.encoder not in ENCODERS:
            raise ModelConfigError(f"unknown encoder '{self.encoder}', expected one of {ENCODERS}")
        if len(self.flow_widths) != self.flow_levels:
            raise ModelConfigError(f"flow_widths has {len(self.flow_widths)} entries for {self.flow_levels} levels")
        if self.cross_scales != CROSS_SCALES:
            raise ModelConfigError(f"cross-connection scales must be {CROSS_SCALES}, got {self.cross_scales}")
        if 2 ** self.flow_levels < max(self.cross_scales):
            raise ModelConfigError(
                f"{self.flow_levels} flow levels reach 1/{2 ** self.flow_levels}, coarser than needed for 1/{max(self.cross_scales)}"
            )
        if self.cv_radius < 0:
            raise ModelConfigError("cv_radius must be >= 0")
        if self.n_classes < 1 or self.base_width < 1 or self.fusion_channels < 1:
            raise ModelConfigError("channel counts must be positive")
        if len(self.tiny_blocks) != 4:
            raise ModelConfigError("tiny_blocks needs one count per stage")
        if self.norm not in ("batch", "group", "none"):
            raise ModelConfigError(f"unknown norm '{self.norm}'")

    @property
    def divisor(self) -> int:
        """Input sides must be multiples of this."""
        return max(2 ** self.flow_levels, max(self.cross_scales))

    @property
    def cv_channels(self) -> int:
        return (2 * self.cv_radius + 1) ** 2

    def encoder_channels(self) -> tuple:
        if self.encoder == "tiny":
            return tuple(self.base_width * 2 ** i for i in range(4))
        return (256, 512, 1024, 2048)

    def flow_channels_at(self, scale: int) -> int:
        """Flow-encoder width at a 1/scale level."""
        level = scale.bit_length() - 1  # 1/2^level
        return self.flow_widths[level - 1]

    def lateral_channels(self, with_flow: bool) -> tuple:
        enc = self.encoder_channels()
        if not with_flow:
            return enc
        return tuple(c + 2 + self.flow_channels_at(s) + self.cv_channels for c, s in zip(enc, self.cross_scales))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ModelConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        base = dict(base_width=8, flow_widths=(8, 12, 16, 24, 32, 32), estimator_width=32, fusion_channels=32)
        base.update(overrides)
        return cls(**base)
