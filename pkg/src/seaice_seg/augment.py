"""Training augmentation, random erasing and the occluded benchmark sets."""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import labels as L
from .dataset import FramePair, list_frames, read_image, read_mask, write_image, write_mask

log = logging.getLogger(__name__)

OCCLUSION_SIGMA = {"light": 15.0, "heavy": 100.0}
OCCLUSION_AREA = 0.15


class AugmentError(ValueError):
    pass


@dataclass
class AugmentConfig:
    saturation: tuple = (0.2, 1.8)
    contrast: tuple = (0.5, 1.5)
    rotation: tuple = (-5.0, 5.0)  # degrees
    blur_kernel: int = 5
    blur_sigma: tuple = (0.5, 2.0)
    hflip_p: float = 0.5
    crop: tuple = (512, 512)  # (height, width)
    crop_mode: str = "random"  # "random" | "center"
    erase_p: float = 0.5
    erase_area: tuple = (0.02, 0.33)  # open interval, fraction of the crop
    erase_aspect: tuple = (0.3, 2.5)  # open interval, height / width
    erase_fill: tuple = ("mean", "gaussian")
    erase_sigma: tuple = (15.0, 100.0)
    erase_max_tries: int = 100

    def __post_init__(self):
        for name in ("saturation", "contrast", "rotation", "blur_sigma", "erase_area", "erase_aspect", "erase_sigma"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise AugmentError(f"{name} range is not ordered: {(lo, hi)}")
            setattr(self, name, (float(lo), float(hi)))
        self.crop = tuple(int(c) for c in self.crop)
        self.erase_fill = tuple(self.erase_fill)
        if self.crop_mode not in ("random", "center"):
            raise AugmentError(f"unknown crop_mode '{self.crop_mode}'")
        if not set(self.erase_fill) <= {"mean", "gaussian"} or not self.erase_fill:
            raise AugmentError(f"erase_fill must be drawn from {{mean, gaussian}}, got {self.erase_fill}")
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise AugmentError("blur_kernel must be a positive odd size")

    @classmethod
    def identity(cls, crop=(512, 512)) -> "AugmentConfig":
        """No photometric or geometric change beyond a centred crop."""
        return cls(
            saturation=(1.0, 1.0),
            contrast=(1.0, 1.0),
            rotation=(0.0, 0.0),
            blur_sigma=(0.0, 0.0),
            hflip_p=0.0,
            crop=crop,
            crop_mode="center",
            erase_p=0.0,
        )

    def without_erasing(self) -> "AugmentConfig":
        return replace(self, erase_p=0.0)


def derive_seed(global_seed: int, *keys) -> int:
    """Stable per-sample seed from a global seed and identifying keys."""
    h = hashlib.sha256(repr((int(global_seed),) + tuple(keys)).encode()).digest()
    return int.from_bytes(h[:8], "little")


# ---------------------------------------------------------------------------
# photometric and geometric ops


def adjust_saturation(img: np.ndarray, factor: float) -> np.ndarray:
    gray = img @ np.array([0.299, 0.587, 0.114], dtype=img.dtype)
    return np.clip(gray[..., None] + factor * (img - gray[..., None]), 0, 255)


def adjust_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    mean = float((img @ np.array([0.299, 0.587, 0.114], dtype=img.dtype)).mean())
    return np.clip(mean + factor * (img - mean), 0, 255)


def gaussian_blur(img: np.ndarray, sigma: float, kernel: int | None = None) -> np.ndarray:
    """Per-channel Gaussian blur; ``kernel`` fixes the support (odd size)."""
    if sigma <= 0:
        return img
    kw = {} if kernel is None else {"radius": kernel // 2}
    return ndimage.gaussian_filter(img, sigma=(sigma, sigma, 0), mode="reflect", **kw)


@dataclass
class GeometricParams:
    angle: float
    flip: bool
    top: int
    left: int


@dataclass
class PhotometricParams:
    saturation: float
    contrast: float
    blur_sigma: float


def _uniform(rng, lo, hi):
    return lo if lo == hi else float(rng.uniform(lo, hi))


def draw_params(config: AugmentConfig, shape, rng) -> tuple:
    h, w = shape[:2]
    ch, cw = config.crop
    if h < ch or w < cw:
        raise AugmentError(f"image {h}x{w} is smaller than the crop {ch}x{cw}")
    photo = PhotometricParams(
        _uniform(rng, *config.saturation),
        _uniform(rng, *config.contrast),
        _uniform(rng, *config.blur_sigma),
    )
    angle = _uniform(rng, *config.rotation)
    flip = bool(config.hflip_p > 0 and rng.random() < config.hflip_p)
    if config.crop_mode == "center":
        top, left = (h - ch) // 2, (w - cw) // 2
    else:
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
    return GeometricParams(angle, flip, top, left), photo


def _source_coordinates(shape, params: GeometricParams, crop):
    """Source (row, col) of every crop pixel under rotate -> flip -> crop.

    Rotation is about the frame centre with the frame size kept, matching
    ``scipy.ndimage.rotate(..., reshape=False)``; only crop pixels are
    evaluated.
    """
    H, W = shape[:2]
    ch, cw = crop
    r = np.arange(params.top, params.top + ch, dtype=np.float64)[:, None]
    c = np.arange(params.left, params.left + cw, dtype=np.float64)[None, :]
    if params.flip:
        c = (W - 1) - c
    t = np.deg2rad(params.angle)
    dy = r - (H - 1) / 2
    dx = c - (W - 1) / 2
    sy = np.cos(t) * dy + np.sin(t) * dx + (H - 1) / 2
    sx = -np.sin(t) * dy + np.cos(t) * dx + (W - 1) / 2
    return sy, sx


def apply_geometric(img: np.ndarray, params: GeometricParams, crop, order: int, cval: float) -> np.ndarray:
    """Rotate, flip and crop; out-of-frame samples take ``cval``."""
    ch, cw = crop
    if params.angle == 0.0:
        rows = img[params.top:params.top + ch]
        if params.flip:
            rows = rows[:, ::-1]
        return np.ascontiguousarray(rows[:, params.left:params.left + cw])
    sy, sx = _source_coordinates(img.shape, params, crop)
    coords = np.broadcast_arrays(sy, sx)
    if img.ndim == 2:
        return ndimage.map_coordinates(img, coords, order=order, mode="constant", cval=cval).astype(img.dtype)
    chans = [
        ndimage.map_coordinates(img[..., k], coords, order=order, mode="constant", cval=cval) for k in range(img.shape[2])
    ]
    return np.stack(chans, axis=-1).astype(img.dtype)


def apply_photometric(img: np.ndarray, params: PhotometricParams, config: AugmentConfig) -> np.ndarray:
    out = img
    if params.saturation != 1.0:
        out = adjust_saturation(out, params.saturation)
    if params.contrast != 1.0:
        out = adjust_contrast(out, params.contrast)
    if params.blur_sigma > 0:
        out = gaussian_blur(out, params.blur_sigma, config.blur_kernel)
    return out


def _transform(image, label, geo, photo, config):
    img = apply_geometric(np.asarray(image, dtype=np.float32), geo, config.crop, order=1, cval=0.0)
    img = apply_photometric(img, photo, config)
    lab = apply_geometric(np.asarray(label, dtype=np.uint8), geo, config.crop, order=0, cval=L.IGNORE)
    return img.astype(np.float32), lab


def augment_single(image: np.ndarray, label: np.ndarray, config: AugmentConfig, rng) -> tuple:
    """Rotate, flip and crop, then jitter and blur one image/label pair.

    Geometric ops act identically on both (nearest-neighbour for the label,
    vacated pixels set to the ignore id); photometric ops touch the image
    only. Returns a float32 image in [0, 255] and a uint8 label map.
    """
    if np.asarray(image).shape[:2] != np.asarray(label).shape:
        raise AugmentError("image and label differ in size")
    geo, photo = draw_params(config, np.asarray(image).shape, rng)
    return _transform(image, label, geo, photo, config)


# ---------------------------------------------------------------------------
# erasing


def _blurred_patch(img: np.ndarray, y0: int, y1: int, x0: int, x1: int, sigma: float) -> np.ndarray:
    """Blurred content of ``img[y0:y1, x0:x1]``.

    Only a window padded by the kernel radius is filtered, which matches a
    full-frame reflect-mode blur exactly inside the rectangle.
    """
    h, w = img.shape[:2]
    r = int(4.0 * sigma + 0.5)
    wy0, wy1 = max(0, y0 - r), min(h, y1 + r)
    wx0, wx1 = max(0, x0 - r), min(w, x1 + r)
    window = ndimage.gaussian_filter(
        img[wy0:wy1, wx0:wx1].astype(np.float32), sigma=(sigma, sigma, 0), mode="reflect", truncate=4.0
    )
    return window[y0 - wy0:y1 - wy0, x0 - wx0:x1 - wx0]


def draw_erase_box(shape, config: AugmentConfig, rng):
    """Rectangle (y0, x0, h, w) whose integer area and aspect fall strictly
    inside the configured ranges, or None after ``erase_max_tries``."""
    H, W = shape[:2]
    area = H * W
    a_lo, a_hi = config.erase_area
    r_lo, r_hi = config.erase_aspect
    for _ in range(config.erase_max_tries):
        target = rng.uniform(a_lo, a_hi) * area
        aspect = math.exp(rng.uniform(math.log(r_lo), math.log(r_hi)))
        h = int(round(math.sqrt(target * aspect)))
        w = int(round(math.sqrt(target / aspect)))
        if not (0 < h <= H and 0 < w <= W):
            continue
        if not (a_lo < h * w / area < a_hi and r_lo < h / w < r_hi):
            continue
        y0 = int(rng.integers(0, H - h + 1))
        x0 = int(rng.integers(0, W - w + 1))
        return y0, x0, h, w
    return None


def random_erase(image: np.ndarray, config: AugmentConfig, rng) -> tuple:
    """Replace one random rectangle by the image mean or by blurred content.

    Returns ``(image, mask)``; the mask is empty when no rectangle fitted.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        img = img[..., None]
    mask = np.zeros(img.shape[:2], dtype=bool)
    box = draw_erase_box(img.shape, config, rng)
    if box is None:
        log.warning("random erase skipped: no rectangle fitted in %d tries", config.erase_max_tries)
        return np.asarray(image, dtype=np.float32).copy(), mask
    y0, x0, h, w = box
    fill = config.erase_fill[int(rng.integers(0, len(config.erase_fill)))]
    out = img.copy()
    if fill == "mean":
        out[y0:y0 + h, x0:x0 + w] = img.reshape(-1, img.shape[2]).mean(axis=0)
    else:
        sigma = _uniform(rng, *config.erase_sigma)
        out[y0:y0 + h, x0:x0 + w] = _blurred_patch(img, y0, y0 + h, x0, x0 + w, sigma)
    mask[y0:y0 + h, x0:x0 + w] = True
    if np.asarray(image).ndim == 2:
        out = out[..., 0]
    return out, mask


def augment_pair(pair: FramePair, config: AugmentConfig, rng) -> tuple:
    """Shared augmentation of both frames, erasing at most one of them.

    With probability ``erase_p`` one frame, chosen uniformly, is erased.
    Returns ``(pair, (mask_a, mask_b))``.
    """
    geo, photo = draw_params(config, pair.frame_a.shape, rng)
    img_a, lab_a = _transform(pair.frame_a, pair.label_a, geo, photo, config)
    img_b, lab_b = _transform(pair.frame_b, pair.label_b, geo, photo, config)
    masks = [np.zeros(lab_a.shape, dtype=bool), np.zeros(lab_b.shape, dtype=bool)]
    if config.erase_p > 0 and rng.random() < config.erase_p:
        which = int(rng.integers(0, 2))
        if which == 0:
            img_a, masks[0] = random_erase(img_a, config, rng)
        else:
            img_b, masks[1] = random_erase(img_b, config, rng)
    out = FramePair(img_a, img_b, lab_a, lab_b, pair.video_id, pair.index_a, pair.stride)
    return out, tuple(masks)


# ---------------------------------------------------------------------------
# occluded benchmark


def occlusion_side(height: int, width: int, area_fraction: float = OCCLUSION_AREA) -> int:
    return int(round(math.sqrt(area_fraction * height * width)))


def occlude_frame(frame: np.ndarray, level: str, rng) -> tuple:
    """One square covering 15% of the frame, fully inside, filled with
    blurred content. Position is drawn before the level is consulted, so a
    shared rng state yields identical geometry for every level."""
    if level not in OCCLUSION_SIGMA:
        raise AugmentError(f"unknown occlusion level '{level}'")
    img = np.asarray(frame, dtype=np.float32)
    H, W = img.shape[:2]
    side = occlusion_side(H, W)
    if side > min(H, W):
        raise AugmentError(f"occlusion square {side}px does not fit a {H}x{W} frame")
    y0 = int(rng.integers(0, H - side + 1))
    x0 = int(rng.integers(0, W - side + 1))
    out = img.copy()
    out[y0:y0 + side, x0:x0 + side] = _blurred_patch(img, y0, y0 + side, x0, x0 + side, OCCLUSION_SIGMA[level])
    mask = np.zeros((H, W), dtype=bool)
    mask[y0:y0 + side, x0:x0 + side] = True
    return out, mask


def build_occluded_testset(frames, level: str, rng_seed: int, video_id: str = "") -> tuple:
    """Occlude every even-indexed frame; odd frames pass through unmasked.

    Returns ``(frames, masks)`` with uint8 frames.
    """
    frames = list(frames)
    if not frames:
        raise AugmentError("no frames to occlude")
    out_frames, masks = [], []
    for i, frame in enumerate(frames):
        if i % 2 == 0:
            rng = np.random.default_rng(derive_seed(rng_seed, video_id, i))
            img, mask = occlude_frame(frame, level, rng)
            out_frames.append(np.clip(np.round(img), 0, 255).astype(np.uint8))
        else:
            out_frames.append(np.asarray(frame, dtype=np.uint8).copy())
            mask = np.zeros(np.asarray(frame).shape[:2], dtype=bool)
        masks.append(mask)
    return out_frames, masks


def occluded_dir(frames_dir, level: str) -> Path:
    frames_dir = Path(frames_dir)
    return frames_dir.parent / f"{frames_dir.name}_occluded_{level}"


def write_occluded_testset(frames_dir, level: str, rng_seed: int, video_id: str | None = None, force: bool = False) -> Path:
    """Write ``<name>_occluded_<level>/`` beside ``frames_dir``: occluded
    frames under the original names plus ``<frame>_mask.png`` (0/255)."""
    frames_dir = Path(frames_dir)
    items = list_frames(frames_dir)
    out_dir = occluded_dir(frames_dir, level)
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise FileExistsError(f"{out_dir} exists; pass force to overwrite")
    out_dir.mkdir(parents=True, exist_ok=True)
    vid = video_id if video_id is not None else frames_dir.parent.name
    frames = [read_image(p) for _, p in items]
    occluded, masks = build_occluded_testset(frames, level, rng_seed, vid)
    for (_, p), img, mask in zip(items, occluded, masks):
        write_image(out_dir / f"{p.stem}.png", img)
        write_mask(out_dir / f"{p.stem}_mask.png", mask)
    return out_dir


def read_occluded_testset(out_dir) -> tuple:
    """Frames and masks of a written occluded set, in frame order."""
    out_dir = Path(out_dir)
    frames, masks = [], []
    for _, p in list_frames(out_dir):
        mpath = out_dir / f"{p.stem}_mask.png"
        if not mpath.exists():
            raise FileNotFoundError(f"missing occlusion mask {mpath}")
        frames.append(read_image(p))
        masks.append(read_mask(mpath))
    return frames, masks
