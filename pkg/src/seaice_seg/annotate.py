"""Region-based semi-automatic annotation.

Frames are labeled in passes: manual keyframe masks (ship, sky, iceberg) are
interpolated in time, ice floes are proposed per distance band by multi-level
Otsu thresholding and cleaned with an area filter, water is marked where the
blue channel falls below a distance-dependent threshold, and the remaining
ROI pixels become brash ice.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import labels as L
from .geometry import CameraModel, RegionPartition, ThresholdField, build_region_partition, build_threshold_field

log = logging.getLogger(__name__)

MAX_OTSU_THRESHOLDS = 20


class DegenerateInputError(ValueError):
    """Histogram has too few populated bins for the requested thresholds."""


class AnnotationError(ValueError):
    pass


@dataclass
class AnnotationConfig:
    n_regions: int = 3
    n_otsu_classes: int = 9  # thresholds per region; yields n + 1 intensity classes
    floe_brightest_fraction: float = 0.3
    min_component_area: int = 50
    water_threshold_near: float = 100.0
    water_threshold_far: float = 340.0
    keyframe_stride: int = 10

    def __post_init__(self):
        if not 1 <= self.n_otsu_classes <= MAX_OTSU_THRESHOLDS:
            raise AnnotationError(f"n_otsu_classes must be in [1, {MAX_OTSU_THRESHOLDS}]")
        if not 0 < self.floe_brightest_fraction <= 1:
            raise AnnotationError("floe_brightest_fraction must be in (0, 1]")
        if self.keyframe_stride < 1:
            raise AnnotationError("keyframe_stride must be >= 1")
        if self.n_regions < 1:
            raise AnnotationError("n_regions must be >= 1")
        if self.min_component_area < 0:
            raise AnnotationError("min_component_area must be >= 0")


@dataclass
class ManualKeyframe:
    frame_index: int
    masks: dict = field(default_factory=dict)  # class name -> bool grid

    def __post_init__(self):
        unknown = set(self.masks) - set(L.MANUAL_CLASSES)
        if unknown:
            raise AnnotationError(f"unknown manual classes: {sorted(unknown)}")
        self.masks = {k: np.asarray(v, dtype=bool) for k, v in self.masks.items()}
        names = list(self.masks)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                if np.any(self.masks[a] & self.masks[b]):
                    raise AnnotationError(
                        f"keyframe {self.frame_index}: masks '{a}' and '{b}' overlap"
                    )


# ---------------------------------------------------------------------------
# multi-level Otsu


def _class_scores(hist: np.ndarray) -> np.ndarray:
    """``score[i, j] = S(i..j)^2 / W(i..j)`` for the bin range i..j (0 if empty)."""
    h = hist.astype(np.float64)
    bins = np.arange(h.size, dtype=np.float64)
    W = np.concatenate([[0.0], np.cumsum(h)])
    S = np.concatenate([[0.0], np.cumsum(h * bins)])
    w = W[None, 1:] - W[:-1, None]
    s = S[None, 1:] - S[:-1, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(w > 0, s * s / w, 0.0)
    return np.where(np.triu(np.ones_like(score, dtype=bool)), score, -np.inf)


def _tie_tol(value: float) -> float:
    return 1e-12 * max(1.0, abs(value))


def multi_otsu(histogram, k: int) -> np.ndarray:
    """Thresholds maximizing between-class variance of a histogram.

    Thresholds ``t1 < ... < tk`` split the bins into classes ``[0, t1]``,
    ``(t1, t2]``, ..., ``(tk, L-1]``; a value ``v`` belongs to the class
    counting the thresholds strictly below it. The optimum is found exactly
    by dynamic programming over the separable objective ``sum S_c^2 / W_c``.
    Among equal optima the lexicographically smallest tuple is returned.
    """
    hist = np.asarray(histogram)
    if hist.ndim != 1:
        raise ValueError("histogram must be one-dimensional")
    if np.any(hist < 0):
        raise ValueError("histogram counts must be non-negative")
    if k < 1:
        raise ValueError("k must be >= 1")
    n_bins = hist.size
    if np.count_nonzero(hist) < k + 1:
        raise DegenerateInputError(
            f"need at least {k + 1} populated bins for {k} thresholds, "
            f"got {np.count_nonzero(hist)}"
        )
    score = _class_scores(hist)
    # best[m][i]: optimal value splitting bins i..L-1 into m classes
    best = np.full((k + 2, n_bins + 1), -np.inf)
    best[1, :n_bins] = score[:, n_bins - 1]
    for m in range(2, k + 2):
        tail = np.full(n_bins + 1, -np.inf)
        tail[:n_bins] = best[m - 1, 1:]  # value of bins j+1.. in m-1 classes
        best[m, :n_bins] = np.max(score + tail[None, :n_bins], axis=1)

    thresholds = []
    i = 0
    for c in range(k, 0, -1):  # c classes still to place after the current one
        target = best[c + 1, i]
        cand = score[i, :n_bins] + best[c, 1:n_bins + 1]
        j = int(np.flatnonzero(cand >= target - _tie_tol(target))[0])
        thresholds.append(j)
        i = j + 1
    return np.asarray(thresholds, dtype=np.int64)


def classify_by_thresholds(values: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Class index of each value: the number of thresholds strictly below it."""
    return np.searchsorted(np.asarray(thresholds), values, side="left")


# ---------------------------------------------------------------------------
# per-pass mask builders


def luma(image_rgb: np.ndarray) -> np.ndarray:
    """8-bit luma with the Rec. 601 weights."""
    rgb = image_rgb.astype(np.float64)
    y = 0.2989 * rgb[..., 0] + 0.5870 * rgb[..., 1] + 0.1140 * rgb[..., 2]
    return np.clip(np.round(y), 0, 255).astype(np.uint8)


def n_brightest_classes(fraction: float, k: int) -> int:
    # guard against 0.3 * 10 landing a hair above 3
    return max(1, math.ceil(fraction * (k + 1) - 1e-9))


def propose_floe_mask(
    image_gray: np.ndarray,
    partition: RegionPartition,
    k: int,
    brightest_fraction: float,
    exclude: np.ndarray | None = None,
) -> np.ndarray:
    """Mark the brightest Otsu classes of every distance band as ice floe.

    ``exclude`` removes pixels (typically manual labels) from both the band
    histograms and the result. Constant bands contribute nothing.
    """
    gray = np.asarray(image_gray)
    if gray.shape != partition.region_index_map.shape:
        raise AnnotationError("image and partition shapes differ")
    if k < 1:
        raise AnnotationError("k must be >= 1")
    n_bright = n_brightest_classes(brightest_fraction, k)
    out = np.zeros(gray.shape, dtype=bool)
    for r in range(partition.n_regions):
        region = partition.region_mask(r)
        if exclude is not None:
            region &= ~exclude
        vals = gray[region]
        if vals.size == 0:
            continue
        if n_bright >= k + 1:
            out[region] = True
            continue
        hist = np.bincount(vals.astype(np.int64), minlength=256)
        try:
            t = multi_otsu(hist, k)
        except DegenerateInputError as exc:
            log.warning("region %d skipped: %s", r, exc)
            continue
        cut = t[k - n_bright]
        out[region] = vals > cut
    return out


_EIGHT = np.ones((3, 3), dtype=bool)


def filter_small_components(mask: np.ndarray, min_area: int) -> np.ndarray:
    """Drop 8-connected components with fewer than ``min_area`` pixels."""
    mask = np.asarray(mask, dtype=bool)
    if min_area <= 1:
        return mask.copy()
    lab, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return mask.copy()
    area = np.bincount(lab.ravel())
    keep = area >= min_area
    keep[0] = False
    return keep[lab]


def threshold_water(image_blue: np.ndarray, field: ThresholdField) -> np.ndarray:
    """Water where blue intensity is strictly below the local threshold."""
    blue = np.asarray(image_blue, dtype=np.float64)
    if blue.shape != field.threshold_map.shape:
        raise AnnotationError("image and threshold field shapes differ")
    thr = field.threshold_map
    return np.where(np.isnan(thr), False, blue < np.nan_to_num(thr, nan=-np.inf))


# ---------------------------------------------------------------------------
# keyframes


def _signed_distance(mask: np.ndarray) -> np.ndarray:
    """Negative inside, positive outside, zero level on the pixel boundary."""
    if not mask.any():
        return np.full(mask.shape, float(sum(mask.shape)))
    if mask.all():
        return np.full(mask.shape, -float(sum(mask.shape)))
    inside = ndimage.distance_transform_edt(mask)
    outside = ndimage.distance_transform_edt(~mask)
    return np.where(mask, 0.5 - inside, outside - 0.5)


def interpolate_keyframes(keyframes, frame_index: int) -> dict:
    """Manual masks at ``frame_index`` by signed-distance blending.

    Between two keyframes each class mask is the zero sublevel set of the
    linearly blended signed distance fields. Before the first or after the
    last keyframe the nearest keyframe is copied.
    """
    if not keyframes:
        raise AnnotationError("at least one keyframe is required")
    frames = sorted(keyframes, key=lambda kf: kf.frame_index)
    shape = next((m.shape for kf in frames for m in kf.masks.values()), None)
    if shape is None:
        raise AnnotationError("keyframes carry no masks")

    def masks_of(kf):
        return {c: kf.masks.get(c, np.zeros(shape, dtype=bool)) for c in L.MANUAL_CLASSES}

    if frame_index <= frames[0].frame_index:
        return {c: m.copy() for c, m in masks_of(frames[0]).items()}
    if frame_index >= frames[-1].frame_index:
        return {c: m.copy() for c, m in masks_of(frames[-1]).items()}
    for lo, hi in zip(frames, frames[1:]):
        if lo.frame_index <= frame_index <= hi.frame_index:
            break
    if frame_index == lo.frame_index:
        return {c: m.copy() for c, m in masks_of(lo).items()}
    if frame_index == hi.frame_index:
        return {c: m.copy() for c, m in masks_of(hi).items()}
    w = (frame_index - lo.frame_index) / (hi.frame_index - lo.frame_index)
    a, b = masks_of(lo), masks_of(hi)
    out = {}
    for c in L.MANUAL_CLASSES:
        if not a[c].any() and not b[c].any():
            out[c] = np.zeros(shape, dtype=bool)
            continue
        sdf = (1 - w) * _signed_distance(a[c]) + w * _signed_distance(b[c])
        out[c] = sdf < 0
    return out


# ---------------------------------------------------------------------------
# merge and full pipeline


def merge_labels(manual: dict, floe: np.ndarray, water: np.ndarray, partition: RegionPartition) -> np.ndarray:
    """Combine the passes with priority ship > sky > iceberg > floe > water > brash.

    Unclaimed ROI pixels become brash ice and unclaimed pixels above the ROI
    become sky, so the result never contains the ignore id.
    """
    shape = partition.region_index_map.shape
    arrays = [np.asarray(floe), np.asarray(water)] + [np.asarray(m) for m in manual.values()]
    for arr in arrays:
        if arr.shape != shape:
            raise AnnotationError(f"mask shape {arr.shape} differs from partition shape {shape}")
    roi = partition.roi_mask
    out = np.where(roi, L.BRASH_ICE, L.SKY).astype(np.uint8)
    # paint from lowest to highest priority
    out[np.asarray(water, dtype=bool) & roi] = L.WATER
    out[np.asarray(floe, dtype=bool) & roi] = L.ICE_FLOE
    for name, cid in (("iceberg", L.ICEBERG), ("sky", L.SKY), ("ship", L.SHIP)):
        if name in manual:
            out[np.asarray(manual[name], dtype=bool)] = cid
    return out


@dataclass
class FrameAnnotation:
    label: np.ndarray
    floe_proposal: np.ndarray
    water: np.ndarray
    manual: dict


def annotate_frame(image_rgb, manual: dict, config: AnnotationConfig, partition, field) -> FrameAnnotation:
    image = np.asarray(image_rgb)
    claimed = np.zeros(image.shape[:2], dtype=bool)
    for m in manual.values():
        claimed |= m
    proposal = propose_floe_mask(
        luma(image), partition, config.n_otsu_classes, config.floe_brightest_fraction, exclude=claimed
    )
    floe = filter_small_components(proposal, config.min_component_area)
    water = threshold_water(image[..., 2], field)
    label = merge_labels(manual, floe, water, partition)
    return FrameAnnotation(label, proposal, water, manual)


def annotate_video(frames, keyframes, config: AnnotationConfig, model: CameraModel, details: bool = False):
    """Label every frame of a video.

    Per frame: interpolate keyframes, propose floes, area-filter, threshold
    water, merge. Deterministic given the inputs.
    """
    frames = list(frames)
    if not frames:
        return []
    shape = np.asarray(frames[0]).shape
    if shape[:2] != (model.image_height, model.image_width):
        raise AnnotationError(
            f"frame size {shape[:2]} differs from camera model "
            f"{(model.image_height, model.image_width)}"
        )
    partition = build_region_partition(model, config.n_regions)
    field = build_threshold_field(partition, config.water_threshold_near, config.water_threshold_far)
    idx = sorted(kf.frame_index for kf in keyframes)
    gaps = np.diff(idx)
    if gaps.size and gaps.max() > config.keyframe_stride:
        log.warning("keyframe gap %d exceeds stride %d", gaps.max(), config.keyframe_stride)
    results = []
    for i, frame in enumerate(frames):
        if np.asarray(frame).shape != shape:
            raise AnnotationError(f"frame {i} has shape {np.asarray(frame).shape}, expected {shape}")
        manual = interpolate_keyframes(keyframes, i)
        ann = annotate_frame(frame, manual, config, partition, field)
        results.append(ann if details else ann.label)
    return results
