"""Segmentation metrics overall and restricted to occluded regions."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import labels as L

LEVELS = ("none", "light", "heavy")


class MetricError(ValueError):
    pass


def accumulate(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray | None = None,
               n_classes: int = L.N_CLASSES) -> np.ndarray:
    """Confusion counts, rows = ground truth, columns = prediction.

    Ignore pixels in ``truth`` are skipped; with ``mask`` only pixels where the
    mask is set are counted.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise MetricError(f"prediction {pred.shape} and truth {truth.shape} differ in shape")
    valid = truth < n_classes
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != truth.shape:
            raise MetricError(f"mask {mask.shape} and truth {truth.shape} differ in shape")
        valid &= mask
    t = truth[valid].astype(np.int64)
    p = pred[valid].astype(np.int64)
    if p.size and (p.min() < 0 or p.max() >= n_classes):
        raise MetricError("prediction contains ids outside the class range")
    return np.bincount(t * n_classes + p, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def _present(cm: np.ndarray) -> np.ndarray:
    cm = np.asarray(cm)
    if cm.sum() == 0:
        raise MetricError("confusion matrix is empty; metrics are undefined")
    return cm.sum(axis=1) > 0


def per_class_iou(cm: np.ndarray) -> np.ndarray:
    """IoU per class; NaN for classes absent from both truth and prediction."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    denom = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, tp / denom, np.nan)


def per_class_recall(cm: np.ndarray) -> np.ndarray:
    cm = np.asarray(cm, dtype=np.float64)
    support = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(support > 0, np.diag(cm) / support, np.nan)


def miou(cm: np.ndarray) -> float:
    """Mean IoU over classes present in the ground truth."""
    present = _present(cm)
    return float(np.mean(per_class_iou(cm)[present]))


def macc(cm: np.ndarray) -> float:
    """Mean per-class recall over classes present in the ground truth."""
    present = _present(cm)
    return float(np.mean(per_class_recall(cm)[present]))


@dataclass
class MetricsReport:
    scope: str  # "overall" | "occluded"
    level: str  # "none" | "light" | "heavy"
    confusion: list | None = None
    per_class_iou: list | None = None
    miou: float | None = None
    macc: float | None = None
    pixel_count: int = 0

    @property
    def applicable(self) -> bool:
        return self.miou is not None

    @classmethod
    def from_confusion(cls, cm: np.ndarray, scope: str, level: str) -> "MetricsReport":
        cm = np.asarray(cm, dtype=np.int64)
        if cm.sum() == 0:
            return cls(scope, level, cm.tolist(), None, None, None, 0)
        iou = per_class_iou(cm)
        return cls(
            scope,
            level,
            cm.tolist(),
            [None if np.isnan(v) else float(v) for v in iou],
            miou(cm),
            macc(cm),
            int(cm.sum()),
        )

    @classmethod
    def not_applicable(cls, scope: str, level: str) -> "MetricsReport":
        return cls(scope, level)


def evaluate_predictions(preds, truths, masks=None, level: str = "none"):
    """Overall and occluded-region reports from per-frame predictions.

    ``masks`` is a sequence of occlusion masks (or None per frame). Only
    frames with a nonempty mask enter the occluded-region matrix.
    """
    if level not in LEVELS:
        raise MetricError(f"unknown occlusion level '{level}'")
    overall = np.zeros((L.N_CLASSES, L.N_CLASSES), dtype=np.int64)
    occluded = np.zeros_like(overall)
    for i, (p, t) in enumerate(zip(preds, truths)):
        overall += accumulate(p, t)
        m = None if masks is None else masks[i]
        if m is not None and np.any(m):
            occluded += accumulate(p, t, m)
    overall_rep = MetricsReport.from_confusion(overall, "overall", level)
    if level == "none":
        occ_rep = MetricsReport.not_applicable("occluded", level)
    else:
        occ_rep = MetricsReport.from_confusion(occluded, "occluded", level)
    return overall_rep, occ_rep


@dataclass
class EvalVideo:
    """Frames of one test video with labels and optional occlusion masks."""

    frames: Sequence[np.ndarray]
    labels: Sequence[np.ndarray]
    masks: Sequence[np.ndarray] | None = None
    video_id: str = ""


def evaluate(predict: Callable, videos: Sequence[EvalVideo], level: str = "none"):
    """Run ``predict(frames) -> label maps`` per video and score it.

    Returns ``(overall, occluded)`` reports; the occluded-region report is
    marked not applicable for ``level == "none"``.
    """
    if level not in LEVELS:
        raise MetricError(f"unknown occlusion level '{level}'")
    preds, truths, masks = [], [], []
    for v in videos:
        if level != "none" and v.masks is None:
            raise MetricError(f"video '{v.video_id}' has no occlusion masks for level '{level}'")
        out = predict(list(v.frames))
        if len(out) != len(v.frames):
            raise MetricError(f"predictor returned {len(out)} maps for {len(v.frames)} frames")
        preds.extend(out)
        truths.extend(v.labels)
        masks.extend(v.masks if v.masks is not None else [None] * len(v.frames))
    return evaluate_predictions(preds, truths, masks, level)


# ---------------------------------------------------------------------------
# reporting


def relative_improvement(value: float, baseline: float) -> float:
    return value / baseline - 1.0


def _fmt(v) -> str:
    return "(-)" if v is None else f"{v:.3f}"


def format_table(rows: dict) -> str:
    """Text table with one row per network and occlusion level.

    ``rows`` maps a network name to a list of ``(overall, occluded)`` report
    pairs, one per occlusion level.
    """
    header = ("Network", "Occlusion Level", "Overall mIoU", "Overall mAcc", "Occluded mIoU", "Occluded mAcc")
    lines = [header]
    for name, pairs in rows.items():
        for overall, occ in pairs:
            lines.append(
                (name, overall.level.capitalize(), _fmt(overall.miou), _fmt(overall.macc), _fmt(occ.miou), _fmt(occ.macc))
            )
    widths = [max(len(r[i]) for r in lines) for i in range(len(header))]
    out = []
    for j, r in enumerate(lines):
        out.append(" | ".join(c.ljust(w) for c, w in zip(r, widths)))
        if j == 0:
            out.append("-+-".join("-" * w for w in widths))
    return "\n".join(out)


def comparison_line(name: str, value: float, baseline_name: str, baseline: float, scope: str = "occluded-region") -> str:
    gain = relative_improvement(value, baseline)
    return f"{name} vs {baseline_name} ({scope} mIoU): {value:.3f} / {baseline:.3f} -> {gain:+.1%}"


def write_records(path, reports) -> None:
    """One JSON record per report."""
    with open(path, "w", encoding="utf-8") as fh:
        for rep in reports:
            fh.write(json.dumps(asdict(rep)) + "\n")


def read_records(path) -> list:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(MetricsReport(**json.loads(line)))
    return out
