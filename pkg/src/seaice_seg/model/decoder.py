"""UPerNet decoder: pyramid pooling on the coarsest lateral, FPN fusion."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import ConvNormAct


class PyramidPooling(nn.Module):
    def __init__(self, cin: int, cout: int, bins, norm: str):
        super().__init__()
        self.bins = tuple(bins)
        self.branches = nn.ModuleList(ConvNormAct(cin, cout, 1, 1, norm) for _ in self.bins)
        self.bottleneck = ConvNormAct(cin + len(self.bins) * cout, cout, 3, 1, norm)

    def forward(self, x):
        size = x.shape[2:]
        outs = [x]
        for b, branch in zip(self.bins, self.branches):
            y = branch(F.adaptive_avg_pool2d(x, b))
            outs.append(F.interpolate(y, size=size, mode="bilinear", align_corners=False))
        return self.bottleneck(torch.cat(outs, dim=1))


class UPerHead(nn.Module):
    """Multi-scale decoder over four laterals at 1/4 .. 1/32."""

    def __init__(self, lateral_channels, fusion: int, n_classes: int, bins=(1, 2, 3, 6), norm: str = "group"):
        super().__init__()
        if len(lateral_channels) != 4:
            raise ValueError("UPerHead expects four lateral inputs")
        self.lateral_channels = tuple(lateral_channels)
        self.ppm = PyramidPooling(lateral_channels[3], fusion, bins, norm)
        self.lateral = nn.ModuleList(ConvNormAct(c, fusion, 1, 1, norm) for c in lateral_channels[:3])
        self.fpn = nn.ModuleList(ConvNormAct(fusion, fusion, 3, 1, norm) for _ in range(3))
        self.fuse = ConvNormAct(4 * fusion, fusion, 3, 1, norm)
        self.classifier = nn.Conv2d(fusion, n_classes, 1)

    def forward(self, laterals, out_size):
        if len(laterals) != 4:
            raise ValueError("UPerHead expects four lateral inputs")
        for x, c in zip(laterals, self.lateral_channels):
            if x.shape[1] != c:
                raise ValueError(f"lateral has {x.shape[1]} channels, expected {c}")
        for fine, coarse in zip(laterals[:-1], laterals[1:]):
            if fine.shape[2] != 2 * coarse.shape[2] or fine.shape[3] != 2 * coarse.shape[3]:
                raise ValueError("laterals are not at consecutive power-of-two scales")
        top = self.ppm(laterals[3])
        feats = [lat(x) for lat, x in zip(self.lateral, laterals[:3])] + [top]
        for i in range(2, -1, -1):
            feats[i] = feats[i] + F.interpolate(feats[i + 1], size=feats[i].shape[2:], mode="bilinear", align_corners=False)
        outs = [self.fpn[i](feats[i]) for i in range(3)] + [feats[3]]
        size = outs[0].shape[2:]
        outs = [outs[0]] + [F.interpolate(o, size=size, mode="bilinear", align_corners=False) for o in outs[1:]]
        logits = self.classifier(self.fuse(torch.cat(outs, dim=1)))
        return F.interpolate(logits, size=tuple(out_size), mode="bilinear", align_corners=False)
