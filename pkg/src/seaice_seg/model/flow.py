"""PWC-style coarse-to-fine optical flow branch."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import ModelConfig, ModelConfigError
from .encoder import check_input
from .layers import conv_leaky, cost_volume, upsample_flow, warp


@dataclass
class FlowLevelFeatures:
    """Flow, warped second-frame features and cost volume at one scale.

    All three live on the reference frame's grid; flow is in pixels of
    this scale.
    """

    scale: int
    flow: torch.Tensor
    warped: torch.Tensor
    cost_volume: torch.Tensor

    def stacked(self) -> torch.Tensor:
        return torch.cat([self.flow, self.warped, self.cost_volume], dim=1)

    def zeros_like(self) -> "FlowLevelFeatures":
        return FlowLevelFeatures(
            self.scale, torch.zeros_like(self.flow), torch.zeros_like(self.warped), torch.zeros_like(self.cost_volume)
        )


@dataclass
class FlowOutput:
    levels: dict  # scale -> FlowLevelFeatures, cross-connection scales only
    flow: torch.Tensor  # full resolution
    estimates: list  # (scale, flow) for every estimated level, coarse to fine


@dataclass
class FlowPair:
    """``forward`` lives on frame a's grid and points into frame b;
    ``backward`` lives on frame b's grid and points into frame a."""

    forward: torch.Tensor
    backward: torch.Tensor


class FlowEncoder(nn.Module):
    """Shared-weight RGB feature pyramid at 1/2 .. 1/2^L."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        layers = []
        cin = 3
        for w in config.flow_widths:
            layers.append(nn.Sequential(conv_leaky(cin, w, stride=2), conv_leaky(w, w)))
            cin = w
        self.levels = nn.ModuleList(layers)
        self.divisor = 2 ** config.flow_levels

    def forward(self, x):
        check_input(x, 3, self.divisor)
        feats = []
        for level in self.levels:
            x = level(x)
            feats.append(x)
        return feats


class FlowEstimator(nn.Module):
    """Residual flow from [cost volume, reference features, upsampled flow]."""

    def __init__(self, cin: int, width: int):
        super().__init__()
        self.body = nn.Sequential(conv_leaky(cin, width), conv_leaky(width, max(width // 2, 2)))
        self.head = nn.Conv2d(max(width // 2, 2), 2, 3, padding=1)

    def zero_init(self) -> None:
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x):
        return self.head(self.body(x))


class FlowBranch(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        if any(s > 2 ** config.flow_levels for s in config.cross_scales):
            raise ModelConfigError("cross-connection scale coarser than the flow pyramid")
        self.config = config
        self.encoder = FlowEncoder(config)
        # estimated levels: 1/4 .. 1/2^L, stored finest first
        self.scales = [2 ** lv for lv in range(2, config.flow_levels + 1)]
        self.estimators = nn.ModuleList(
            FlowEstimator(config.cv_channels + config.flow_widths[lv - 1] + 2, config.estimator_width)
            for lv in range(2, config.flow_levels + 1)
        )

    def zero_init(self) -> None:
        for est in self.estimators:
            est.zero_init()

    def encode(self, frames: torch.Tensor) -> list:
        return self.encoder(frames)

    def estimate(self, pyr_ref: list, pyr_other: list, out_size) -> FlowOutput:
        """Flow on the reference grid; ``pyr_*`` come from :meth:`encode`."""
        d = self.config.cv_radius
        flow = None
        levels, estimates = {}, []
        for i in reversed(range(len(self.scales))):
            scale = self.scales[i]
            fa = pyr_ref[i + 1]
            fb = pyr_other[i + 1]
            B, _, h, w = fa.shape
            if flow is None:
                up = fa.new_zeros(B, 2, h, w)
                warped = fb
            else:
                up = upsample_flow(flow, (h, w))
                warped = warp(fb, up)
            cv = cost_volume(fa, warped, d)
            flow = up + self.estimators[i](torch.cat([cv, fa, up], dim=1))
            estimates.append((scale, flow))
            if scale in self.config.cross_scales:
                levels[scale] = FlowLevelFeatures(scale, flow, warped, cv)
        full = upsample_flow(flow, tuple(out_size))
        return FlowOutput(levels, full, estimates)

    def forward(self, frame_ref: torch.Tensor, frame_other: torch.Tensor) -> FlowOutput:
        if frame_ref.shape != frame_other.shape:
            raise ValueError("frames differ in shape")
        pyr = self.encode(torch.cat([frame_ref, frame_other], dim=0))
        B = frame_ref.shape[0]
        pyr_ref = [p[:B] for p in pyr]
        pyr_other = [p[B:] for p in pyr]
        return self.estimate(pyr_ref, pyr_other, frame_ref.shape[2:])
