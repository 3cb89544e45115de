"""UPerFlow and the single-image UPerNet baseline."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import ModelConfig
from .decoder import UPerHead
from .encoder import ShapeError, build_encoder, check_input
from .flow import FlowBranch, FlowPair


@dataclass
class UPerFlowOutput:
    logits_a: torch.Tensor
    logits_b: torch.Tensor
    flows: FlowPair
    levels_a: dict  # cross-connection features on frame a's grid
    levels_b: dict


def _head(config: ModelConfig, with_flow: bool) -> UPerHead:
    return UPerHead(config.lateral_channels(with_flow), config.fusion_channels, config.n_classes, config.ppm_bins, config.norm)


class UPerNet(nn.Module):
    kind = "upernet"

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = build_encoder(3, config)
        self.decoder = _head(config, with_flow=False)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        check_input(image, 3, 32)
        return self.decoder(self.encoder(image), image.shape[2:])


class UPerFlow(nn.Module):
    """Six-channel segmentation encoder, shared flow branch run in both
    directions, and two independent decoders fed by cross-connections."""

    kind = "uperflow"

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = build_encoder(6, config)
        self.flow = FlowBranch(config)
        with_flow = config.cross_connections
        self.decoder_a = _head(config, with_flow)
        self.decoder_b = _head(config, with_flow)
        if config.flow_weights:
            self.flow.load_state_dict(torch.load(config.flow_weights, map_location="cpu", weights_only=True))
        if config.freeze_flow:
            for p in self.flow.parameters():
                p.requires_grad_(False)

    def encode_pair(self, pair: torch.Tensor) -> list:
        """Segmentation features of a channel-stacked (B, 6, H, W) pair."""
        return self.encoder(pair)

    def _laterals(self, enc, levels, zero_flow_features):
        if not self.config.cross_connections:
            return enc
        out = []
        for feat, scale in zip(enc, self.config.cross_scales):
            lvl = levels[scale].zeros_like() if zero_flow_features else levels[scale]
            out.append(torch.cat([feat, lvl.stacked()], dim=1))
        return out

    def forward(self, frame_a: torch.Tensor, frame_b: torch.Tensor, zero_flow_features: bool = False) -> UPerFlowOutput:
        if frame_a.shape != frame_b.shape:
            raise ShapeError(f"pair frames differ: {tuple(frame_a.shape)} vs {tuple(frame_b.shape)}")
        check_input(frame_a, 3, self.config.divisor)
        size = frame_a.shape[2:]
        enc = self.encode_pair(torch.cat([frame_a, frame_b], dim=1))
        B = frame_a.shape[0]
        pyr = self.flow.encode(torch.cat([frame_a, frame_b], dim=0))
        pyr_a = [p[:B] for p in pyr]
        pyr_b = [p[B:] for p in pyr]
        on_a = self.flow.estimate(pyr_a, pyr_b, size)  # b warped onto a's grid
        on_b = self.flow.estimate(pyr_b, pyr_a, size)  # a warped onto b's grid
        logits_a = self.decoder_a(self._laterals(enc, on_a.levels, zero_flow_features), size)
        logits_b = self.decoder_b(self._laterals(enc, on_b.levels, zero_flow_features), size)
        return UPerFlowOutput(logits_a, logits_b, FlowPair(on_a.flow, on_b.flow), on_a.levels, on_b.levels)


def build_model(kind: str, config: ModelConfig) -> nn.Module:
    if kind == "uperflow":
        return UPerFlow(config)
    if kind == "upernet":
        return UPerNet(config)
    raise ValueError(f"unknown model kind '{kind}'")


def count_parameters(model: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)
