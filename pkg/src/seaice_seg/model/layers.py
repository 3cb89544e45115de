"""Warp, cost volume and small conv building blocks."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


def warp(features: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Bilinear backward warp: ``out(x) = features(x + flow(x))``.

    ``flow`` is (B, 2, H, W) in pixels, channel 0 horizontal, channel 1
    vertical. Each of the four bilinear taps that falls outside the map
    contributes zero, so zero flow returns the input bit-for-bit.
    """
    if features.dim() != 4 or flow.dim() != 4 or flow.shape[1] != 2:
        raise ValueError(f"expected (B,C,H,W) features and (B,2,H,W) flow, got {tuple(features.shape)} and {tuple(flow.shape)}")
    B, C, H, W = features.shape
    if flow.shape[0] != B or flow.shape[2:] != features.shape[2:]:
        raise ValueError(f"flow {tuple(flow.shape)} does not match features {tuple(features.shape)}")
    gy, gx = torch.meshgrid(
        torch.arange(H, device=flow.device, dtype=flow.dtype),
        torch.arange(W, device=flow.device, dtype=flow.dtype),
        indexing="ij",
    )
    x = gx + flow[:, 0]
    y = gy + flow[:, 1]
    x0 = torch.floor(x)
    y0 = torch.floor(y)
    wx1 = x - x0
    wy1 = y - y0
    wx0 = 1 - wx1
    wy0 = 1 - wy1
    x0 = x0.long()
    y0 = y0.long()
    flat = features.reshape(B, C, H * W)

    def tap(yi, xi):
        valid = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
        idx = (yi.clamp(0, H - 1) * W + xi.clamp(0, W - 1)).reshape(B, 1, H * W).expand(B, C, H * W)
        vals = flat.gather(2, idx).reshape(B, C, H, W)
        return vals * valid.unsqueeze(1).to(features.dtype)

    out = (wy0 * wx0).unsqueeze(1) * tap(y0, x0)
    out = out + (wy0 * wx1).unsqueeze(1) * tap(y0, x0 + 1)
    out = out + (wy1 * wx0).unsqueeze(1) * tap(y0 + 1, x0)
    out = out + (wy1 * wx1).unsqueeze(1) * tap(y0 + 1, x0 + 1)
    return out


def cost_volume(feat_a: torch.Tensor, feat_b: torch.Tensor, d: int) -> torch.Tensor:
    """Channel-averaged correlation over displacements in [-d, d]^2.

    Channel ``(dy + d) * (2d + 1) + (dx + d)`` holds
    ``mean_c feat_a[c, y, x] * feat_b[c, y + dy, x + dx]``; samples outside
    ``feat_b`` are zero vectors.
    """
    if feat_a.shape != feat_b.shape:
        raise ValueError(f"feature shapes differ: {tuple(feat_a.shape)} vs {tuple(feat_b.shape)}")
    if d < 0:
        raise ValueError("displacement radius must be non-negative")
    H, W = feat_a.shape[2:]
    padded = F.pad(feat_b, (d, d, d, d))
    out = []
    for dy in range(2 * d + 1):
        for dx in range(2 * d + 1):
            out.append((feat_a * padded[:, :, dy:dy + H, dx:dx + W]).mean(dim=1))
    return torch.stack(out, dim=1)


def upsample_flow(flow: torch.Tensor, size) -> torch.Tensor:
    """Bilinear resize with displacements rescaled to the new grid."""
    h, w = flow.shape[2:]
    out = F.interpolate(flow, size=size, mode="bilinear", align_corners=False)
    scale = torch.tensor([size[1] / w, size[0] / h], dtype=flow.dtype, device=flow.device)
    return out * scale.view(1, 2, 1, 1)


def make_norm(kind: str, channels: int) -> nn.Module:
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    if kind == "group":
        # at least two channels per group so 1x1 pooled maps stay defined
        g = max(1, min(8, channels // 2))
        while channels % g:
            g -= 1
        return nn.GroupNorm(g, channels)
    if kind == "none":
        return nn.Identity()
    raise ValueError(f"unknown norm '{kind}'")


class ConvNormAct(nn.Sequential):
    def __init__(self, cin, cout, kernel=3, stride=1, norm="group", act=True):
        super().__init__(
            nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2, bias=norm == "none"),
            make_norm(norm, cout),
            nn.ReLU(inplace=True) if act else nn.Identity(),
        )


def conv_leaky(cin, cout, stride=1):
    """PWC-style 3x3 conv with leaky ReLU."""
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride=stride, padding=1), nn.LeakyReLU(0.1, inplace=True))
