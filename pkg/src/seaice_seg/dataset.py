"""On-disk dataset layout, video-level splits, frame pairs and synthetic scenes.

Layout of one video directory::

    <video_id>/frames/00000.png   8-bit RGB
    <video_id>/labels/00000.png   8-bit single channel, ids in {0..5, 255}

The manifest is a JSON-lines file with one record per labeled frame.
"""
from __future__ import annotations

import io
import json
import logging
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from . import labels as L
from .annotate import ManualKeyframe
from .geometry import CameraModel

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class DatasetError(ValueError):
    pass


class LabelFormatError(DatasetError):
    pass


# ---------------------------------------------------------------------------
# label and image codecs


def encode_label(label: np.ndarray) -> bytes:
    """PNG bytes storing class ids verbatim in one 8-bit channel."""
    label = np.asarray(label)
    if label.ndim != 2:
        raise LabelFormatError(f"label map must be 2-D, got shape {label.shape}")
    _check_ids(label)
    buf = io.BytesIO()
    Image.fromarray(label.astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def decode_label(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data))
    if img.mode not in ("L", "P"):
        raise LabelFormatError(f"label image must be single-channel, got mode {img.mode}")
    arr = np.array(img, dtype=np.uint8)
    _check_ids(arr)
    return arr


def _check_ids(label: np.ndarray) -> None:
    present = np.unique(label)
    bad = [int(v) for v in present if int(v) not in L.VALID_IDS]
    if bad:
        raise LabelFormatError(f"label ids outside {{0..5, 255}}: {bad}")


def write_label(path, label: np.ndarray) -> None:
    Path(path).write_bytes(encode_label(label))


def read_label(path) -> np.ndarray:
    try:
        return decode_label(Path(path).read_bytes())
    except LabelFormatError as exc:
        raise LabelFormatError(f"{path}: {exc}") from None


def write_image(path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path)


def read_image(path) -> np.ndarray:
    return np.array(Image.open(path).convert("RGB"), dtype=np.uint8)


def read_mask(path) -> np.ndarray:
    return np.array(Image.open(path).convert("L")) > 127


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask, dtype=bool) * 255).astype(np.uint8), mode="L").save(path)


# ---------------------------------------------------------------------------
# manifest


@dataclass
class Record:
    video_id: str
    frame_index: int
    frame_path: str
    label_path: str
    split: str


@dataclass
class Manifest:
    records: list = field(default_factory=list)

    def split(self, name: str) -> list:
        return [r for r in self.records if r.split == name]

    def videos(self, split: str | None = None) -> dict:
        """video_id -> records sorted by frame index."""
        out: dict = {}
        for r in self.records:
            if split is None or r.split == split:
                out.setdefault(r.video_id, []).append(r)
        return {v: sorted(rs, key=lambda r: r.frame_index) for v, rs in out.items()}

    def counts(self) -> dict:
        c = Counter(r.split for r in self.records)
        return {s: c.get(s, 0) for s in SPLITS}

    def ratios(self) -> dict:
        total = len(self.records)
        return {s: (n / total if total else 0.0) for s, n in self.counts().items()}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r)) + "\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    records.append(Record(**json.loads(line)))
        return cls(records)


_INDEX_RE = re.compile(r"(\d+)$")


def _frame_index(path: Path) -> int:
    m = _INDEX_RE.search(path.stem)
    if m is None:
        raise DatasetError(f"cannot parse a frame index from {path.name}")
    return int(m.group(1))


def list_frames(frames_dir) -> list:
    """(index, path) pairs for the images in a directory, sorted by index."""
    frames_dir = Path(frames_dir)
    items = []
    seen = {}
    for p in sorted(frames_dir.iterdir()):
        if p.suffix.lower() not in IMAGE_SUFFIXES or p.stem.endswith("_mask"):
            continue
        idx = _frame_index(p)
        if idx in seen:
            raise DatasetError(f"duplicate frame index {idx} in {frames_dir}: {seen[idx].name}, {p.name}")
        seen[idx] = p
        items.append((idx, p))
    return sorted(items)


def build_manifest(video_dirs, split_assignment: dict) -> Manifest:
    """Collect every labeled frame, one split per video.

    ``split_assignment`` maps video id (the directory name) to a split.
    """
    video_dirs = [Path(v) for v in video_dirs]
    if not video_dirs:
        raise DatasetError("need at least one video directory")
    records = []
    for vdir in video_dirs:
        vid = vdir.name
        if vid not in split_assignment:
            raise DatasetError(f"no split assigned to video '{vid}'")
        split = split_assignment[vid]
        if split not in SPLITS:
            raise DatasetError(f"unknown split '{split}' for video '{vid}'")
        frames = list_frames(vdir / "frames")
        if not frames:
            raise DatasetError(f"video '{vid}' has no frames")
        indices = [i for i, _ in frames]
        if indices != list(range(indices[0], indices[0] + len(indices))):
            raise DatasetError(f"frame indices of video '{vid}' are not contiguous")
        for idx, fpath in frames:
            lpath = vdir / "labels" / f"{fpath.stem}.png"
            if not lpath.exists():
                raise DatasetError(f"missing label for frame {fpath} of video '{vid}'")
            records.append(Record(vid, idx, str(fpath), str(lpath), split))
    manifest = Manifest(records)
    counts = manifest.counts()
    for s, n in counts.items():
        if n == 0:
            log.warning("split '%s' is empty", s)
    log.info("manifest: %s", ", ".join(f"{s}={n} ({r:.1%})" for (s, n), r in zip(counts.items(), manifest.ratios().values())))
    return manifest


# ---------------------------------------------------------------------------
# frame pairs


@dataclass
class FramePair:
    frame_a: np.ndarray
    frame_b: np.ndarray
    label_a: np.ndarray
    label_b: np.ndarray
    video_id: str = ""
    index_a: int = 0
    stride: int = 1

    def __post_init__(self):
        if self.stride < 1:
            raise DatasetError("pair stride must be >= 1")
        shapes = {self.frame_a.shape[:2], self.frame_b.shape[:2], self.label_a.shape, self.label_b.shape}
        if len(shapes) != 1:
            raise DatasetError(f"pair members differ in size: {shapes}")

    @property
    def index_b(self) -> int:
        return self.index_a + self.stride


def pair_indices(n_frames: int, stride: int = 1) -> list:
    return [(i, i + stride) for i in range(max(0, n_frames - stride))]


def sample_pairs(manifest: Manifest, split: str, stride: int = 1) -> Iterator[FramePair]:
    """All (i, i + stride) pairs inside each video of a split, in order."""
    videos = manifest.videos(split)
    if not videos:
        raise DatasetError(f"split '{split}' is empty")
    if stride < 1:
        raise DatasetError("pair stride must be >= 1")
    if all(len(rs) <= stride for rs in videos.values()):
        log.warning("stride %d exceeds every video length in split '%s'", stride, split)
    for vid in sorted(videos):
        recs = videos[vid]
        for ia, ib in pair_indices(len(recs), stride):
            ra, rb = recs[ia], recs[ib]
            yield FramePair(
                read_image(ra.frame_path),
                read_image(rb.frame_path),
                read_label(ra.label_path),
                read_label(rb.label_path),
                video_id=vid,
                index_a=ra.frame_index,
                stride=stride,
            )


def load_video(records) -> tuple:
    """Frames and labels of one manifest video, in frame order."""
    frames = [read_image(r.frame_path) for r in records]
    labels = [read_label(r.label_path) for r in records]
    return frames, labels


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass
class SyntheticSceneSpec:
    seed: int = 0
    n_frames: int = 8
    height: int = 512
    width: int = 512
    floe_count: tuple = (40, 60)
    floe_axes: tuple = (10, 36)  # semi-axis range in pixels at the near field
    brash_count: tuple = (4, 8)
    flow: tuple = (4, 0)  # integer (dx, dy) translation per frame
    gradient_strength: float = 0.5
    iceberg: bool = True
    noise_std: float = 0.0
    sky_fraction: float = 0.25

    def __post_init__(self):
        if self.height % 64 or self.width % 64:
            raise DatasetError(f"scene size must be divisible by 64, got {self.height}x{self.width}")
        if self.n_frames < 1:
            raise DatasetError("n_frames must be >= 1")
        if any(int(v) != v for v in self.flow):
            raise DatasetError("synthetic flow must be integer pixels")
        self.flow = tuple(int(v) for v in self.flow)
        self.floe_count = tuple(self.floe_count)
        self.floe_axes = tuple(self.floe_axes)
        self.brash_count = tuple(self.brash_count)

    @property
    def roi_top_row(self) -> int:
        return int(round(self.sky_fraction * self.height))

    def camera_model(self, Y_star: float = 3.0, a: float = 800.0) -> CameraModel:
        return CameraModel(Y_star, a, self.width, self.height, self.height - 1, self.roi_top_row)


@dataclass
class SyntheticVideo:
    frames: list
    labels: list
    spec: SyntheticSceneSpec

    @property
    def flow(self) -> tuple:
        return self.spec.flow

    def keyframes(self, stride: int = 10) -> list:
        """Manual-class masks taken from ground truth every ``stride`` frames."""
        idx = list(range(0, len(self.labels), stride))
        if idx[-1] != len(self.labels) - 1:
            idx.append(len(self.labels) - 1)
        out = []
        for i in idx:
            lab = self.labels[i]
            out.append(
                ManualKeyframe(i, {"ship": lab == L.SHIP, "sky": lab == L.SKY, "iceberg": lab == L.ICEBERG})
            )
        return out


# RGB base colors; floes use three discrete tones
_WATER_RGB = np.array([30.0, 50.0, 78.0])
_BRASH_RGB = np.array([140.0, 162.0, 195.0])
_FLOE_RGB = np.array([[180.0, 185.0, 192.0], [212.0, 216.0, 222.0], [243.0, 246.0, 250.0]])
_ICEBERG_RGB = np.array([245.0, 248.0, 252.0])
_SHIP_RGB = np.array([70.0, 40.0, 38.0])
_SKY_RGB = np.array([175.0, 195.0, 215.0])
_HAZE_RGB = np.array([222.0, 226.0, 232.0])
_FLOE_RINGS = (0.25, 0.64)  # squared radii separating core, bare ice and rim
_BRASH_MAX_DEPTH = 0.3  # brash fields stay in the near field (fraction of ROI height)


def _ellipse_radius(shape, cy, cx, ry, rx, theta):
    """Squared normalized radius of a rotated ellipse (inf far outside)."""
    h, w = shape
    q = np.full(shape, np.inf)
    r = max(ry, rx)
    y0, y1 = max(0, int(cy - r) - 1), min(h, int(cy + r) + 2)
    x0, x1 = max(0, int(cx - r) - 1), min(w, int(cx + r) + 2)
    if y0 >= y1 or x0 >= x1:
        return q
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(theta), np.sin(theta)
    u = (dx * c + dy * s) / rx
    v = (-dx * s + dy * c) / ry
    q[y0:y1, x0:x1] = u * u + v * v
    return q


def _ellipse_mask(shape, cy, cx, ry, rx, theta):
    return _ellipse_radius(shape, cy, cx, ry, rx, theta) <= 1.0


def _polygon_mask(shape, pts):
    from PIL import ImageDraw

    img = Image.new("L", (shape[1], shape[0]), 0)
    ImageDraw.Draw(img).polygon([(float(x), float(y)) for y, x in pts], fill=1)
    return np.array(img, dtype=bool)


def _shift(arr, dy, dx, fill):
    """Translate content by (dy, dx) pixels, filling vacated pixels."""
    out = np.full_like(arr, fill)
    h, w = arr.shape[:2]
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = arr[ys, xs]
    return out


def ship_mask(height: int, width: int) -> np.ndarray:
    """Static bow silhouette at the bottom centre."""
    top = int(height * 0.88)
    pts = [
        (height, width * 0.28),
        (top + (height - top) * 0.35, width * 0.36),
        (top, width * 0.46),
        (top, width * 0.54),
        (top + (height - top) * 0.35, width * 0.64),
        (height, width * 0.72),
    ]
    return _polygon_mask((height, width), pts)


def synthesize_scene(spec: SyntheticSceneSpec) -> SyntheticVideo:
    """Render a seeded video of ice floes drifting over water.

    Floes, brash fields and the iceberg translate by ``spec.flow`` each
    frame with water entering at the borders; the sky band and the ship are
    static. The distance haze depends on the image row only, so with
    vertical motion pixel colors follow the row they land on.
    """
    rng = np.random.default_rng(spec.seed)
    H, W = spec.height, spec.width
    top = spec.roi_top_row
    rows = np.arange(H, dtype=np.float64)
    depth = np.clip((H - 1 - rows) / (H - 1 - top), 0.0, 1.0)  # 0 near, 1 horizon

    material = np.full((H, W), L.WATER, dtype=np.uint8)
    tone = np.zeros((H, W), dtype=np.uint8)

    n_brash = int(rng.integers(spec.brash_count[0], spec.brash_count[1] + 1))
    for _ in range(n_brash):
        d = rng.uniform(0.0, _BRASH_MAX_DEPTH * 0.7)
        cy = H - 1 - d * (H - 1 - top)
        cx = rng.uniform(0, W)
        ry = rng.uniform(8, 18) * (1 - 0.6 * d)
        rx = rng.uniform(30, 70) * (1 - 0.6 * d)
        m = _ellipse_mask((H, W), cy, cx, ry, rx, rng.uniform(-0.3, 0.3))
        m &= depth[:, None] < _BRASH_MAX_DEPTH
        material[m] = L.BRASH_ICE

    n_floe = int(rng.integers(spec.floe_count[0], spec.floe_count[1] + 1))
    for _ in range(n_floe):
        d = rng.uniform(0.0, 1.0)
        scale = 1.0 - 0.7 * d  # perspective shrink toward the horizon
        cy = H - 1 - d * (H - 1 - top)
        cx = rng.uniform(-0.05 * W, 1.05 * W)
        ry = rng.uniform(*spec.floe_axes) * scale * 0.6
        rx = rng.uniform(*spec.floe_axes) * scale
        q = _ellipse_radius((H, W), cy, cx, max(ry, 4.0), max(rx, 5.0), rng.uniform(-0.4, 0.4))
        q[:top] = np.inf
        m = q <= 1.0
        material[m] = L.ICE_FLOE
        # wet rim, bare ice, snow-covered core
        tone[m] = 2 - np.digitize(q[m], _FLOE_RINGS)

    if spec.iceberg:
        cx = rng.uniform(0.2 * W, 0.8 * W)
        base = top + 0.06 * (H - top)
        half = rng.uniform(0.06, 0.1) * W
        peak = top - rng.uniform(0.15, 0.35) * top
        pts = [
            (base, cx - half),
            (top + 0.01 * H, cx - 0.8 * half),
            (peak + 0.3 * (top - peak), cx - 0.4 * half),
            (peak, cx + 0.05 * half),
            (peak + 0.5 * (top - peak), cx + 0.5 * half),
            (top + 0.02 * H, cx + 0.9 * half),
            (base, cx + half),
        ]
        material[_polygon_mask((H, W), pts)] = L.ICEBERG

    ship = ship_mask(H, W)
    sky_rows = rows[:, None] < top
    noise_rng = np.random.default_rng([spec.seed, 1])
    dx, dy = spec.flow
    haze = (spec.gradient_strength * depth)[:, None, None]
    sky_shade = np.broadcast_to((rows / max(top, 1) * 20.0)[:, None, None], (H, W, 3))

    frames, labels = [], []
    for t in range(spec.n_frames):
        mat = _shift(material, t * dy, t * dx, L.WATER)
        ton = _shift(tone, t * dy, t * dx, 0)
        lab = mat.copy()
        lab[sky_rows & (lab != L.ICEBERG)] = L.SKY
        lab[ship] = L.SHIP

        rgb = np.empty((H, W, 3), dtype=np.float64)
        rgb[:] = _WATER_RGB
        rgb[lab == L.BRASH_ICE] = _BRASH_RGB
        floe = lab == L.ICE_FLOE
        rgb[floe] = _FLOE_RGB[ton[floe]]
        rgb[lab == L.ICEBERG] = _ICEBERG_RGB
        rgb = rgb + haze * (_HAZE_RGB - rgb)
        sky = lab == L.SKY
        rgb[sky] = _SKY_RGB + sky_shade[sky]
        rgb[lab == L.SHIP] = _SHIP_RGB
        if spec.noise_std > 0:
            rgb = rgb + noise_rng.normal(0.0, spec.noise_std, rgb.shape)
        frames.append(np.clip(np.round(rgb), 0, 255).astype(np.uint8))
        labels.append(lab)
    return SyntheticVideo(frames, labels, spec)


def write_video(video_dir, frames, labels=None) -> None:
    """Write frames (and labels) in the dataset directory layout."""
    video_dir = Path(video_dir)
    (video_dir / "frames").mkdir(parents=True, exist_ok=True)
    if labels is not None:
        (video_dir / "labels").mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        write_image(video_dir / "frames" / f"{i:05d}.png", frame)
        if labels is not None:
            write_label(video_dir / "labels" / f"{i:05d}.png", labels[i])


def write_keyframes(keyframe_dir, video_id: str, keyframes) -> None:
    keyframe_dir = Path(keyframe_dir)
    keyframe_dir.mkdir(parents=True, exist_ok=True)
    for kf in keyframes:
        for name, mask in kf.masks.items():
            write_mask(keyframe_dir / f"{video_id}_{kf.frame_index}_{name}.png", mask)


_KEYFRAME_RE = re.compile(r"^(?P<video>.+)_(?P<frame>\d+)_(?P<cls>ship|sky|iceberg)$")


def read_keyframes(keyframe_dir, video_id: str) -> list:
    """Parse ``<video>_<frame>_<class>.png`` mask files into keyframes."""
    by_frame: dict = {}
    for p in sorted(Path(keyframe_dir).glob("*.png")):
        m = _KEYFRAME_RE.match(p.stem)
        if not m or m.group("video") != video_id:
            continue
        by_frame.setdefault(int(m.group("frame")), {})[m.group("cls")] = read_mask(p)
    return [ManualKeyframe(i, masks) for i, masks in sorted(by_frame.items())]
