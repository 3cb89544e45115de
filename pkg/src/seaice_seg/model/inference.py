"""Frame-level prediction for evaluation and the infer command."""
from __future__ import annotations

import cv2
import numpy as np
import torch
import torch.nn.functional as F


def to_tensor(images) -> torch.Tensor:
    """Stack HxWx3 images in [0, 255] into a (B, 3, H, W) float tensor in [0, 1]."""
    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous() / 255.0


def _pad(x: torch.Tensor, divisor: int):
    h, w = x.shape[2:]
    ph = (-h) % divisor
    pw = (-w) % divisor
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="replicate")
    return x, (h, w)


def divisor_of(model) -> int:
    return model.config.divisor if model.kind == "uperflow" else 32


def pair_assignment(n_frames: int) -> list:
    """``(pair_start, decoder)`` per frame: decoder "a" of pair (i, i+1) for
    every frame but the last, decoder "b" of the last pair for the last one.
    A single frame is paired with itself."""
    if n_frames < 1:
        raise ValueError("no frames")
    if n_frames == 1:
        return [(0, "a")]
    return [(i, "a") for i in range(n_frames - 1)] + [(n_frames - 2, "b")]


@torch.no_grad()
def infer_video(model, frames, return_flows: bool = False, batch_size: int = 4):
    """Label maps (uint8) for every frame; optionally forward flows per pair.

    Frames whose sides are not multiples of the model divisor are padded
    by edge replication and the outputs cropped back.
    """
    model.eval()
    frames = list(frames)
    div = divisor_of(model)
    preds, flows = [None] * len(frames), []
    if model.kind == "upernet":
        for s in range(0, len(frames), batch_size):
            x, (h, w) = _pad(to_tensor(frames[s:s + batch_size]), div)
            lab = model(x)[:, :, :h, :w].argmax(1).to(torch.uint8).numpy()
            for j, p in enumerate(lab):
                preds[s + j] = p
        return (preds, flows) if return_flows else preds
    n = len(frames)
    starts = list(range(max(n - 1, 1)))
    for s in range(0, len(starts), batch_size):
        chunk = starts[s:s + batch_size]
        xa, (h, w) = _pad(to_tensor([frames[i] for i in chunk]), div)
        xb, _ = _pad(to_tensor([frames[min(i + 1, n - 1)] for i in chunk]), div)
        out = model(xa, xb)
        lab_a = out.logits_a[:, :, :h, :w].argmax(1).to(torch.uint8).numpy()
        lab_b = out.logits_b[:, :, :h, :w].argmax(1).to(torch.uint8).numpy()
        for j, i in enumerate(chunk):
            preds[i] = lab_a[j]
            if i == n - 2 or n == 1:
                if n > 1:
                    preds[n - 1] = lab_b[j]
            if return_flows:
                flows.append(out.flows.forward[j, :, :h, :w].permute(1, 2, 0).numpy())
    return (preds, flows) if return_flows else preds


def make_predictor(model, batch_size: int = 4):
    return lambda frames: infer_video(model, frames, batch_size=batch_size)


def flow_to_color(flow: np.ndarray, max_magnitude: float | None = None) -> np.ndarray:
    """HSV rendering of an HxWx2 flow: hue = direction, value = magnitude."""
    mag, ang = cv2.cartToPolar(flow[..., 0].astype(np.float32), flow[..., 1].astype(np.float32))
    top = max_magnitude if max_magnitude else max(float(mag.max()), 1e-6)
    hsv = np.zeros(flow.shape[:2] + (3,), dtype=np.uint8)
    hsv[..., 0] = (ang * 90 / np.pi).astype(np.uint8)  # OpenCV hue is [0, 180)
    hsv[..., 1] = 255
    hsv[..., 2] = np.clip(mag / top * 255, 0, 255).astype(np.uint8)
    return cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)
