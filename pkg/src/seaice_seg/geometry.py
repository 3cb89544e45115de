"""Parametric camera model and distance-band partitions of the image plane.

The extrinsic part maps real-world distance along the sea surface to image
height (a perspective relation with a single free parameter once normalized).
The intrinsic part bends the iso-distance lines into ellipses whose foci sit
on the ROI bottom row. Composing the two gives every ROI pixel a normalized
distance ``z*`` in [0, 1], from which region bands and threshold fields follow.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OUTSIDE = -1  # region index for pixels above the ROI


class GeometryError(ValueError):
    """Invalid camera or partition parameters."""


def extrinsic_project(z, Y: float, f: float, y_b: float = 0.0):
    """Un-normalized perspective relation, measured from the image bottom.

    ``y = Y * (gamma - f / (z + f))`` with ``gamma = 1 - y_b / Y``.
    """
    if Y <= 0 or f <= 0:
        raise GeometryError(f"Y and f must be positive, got Y={Y}, f={f}")
    if not 0 <= y_b <= Y:
        raise GeometryError(f"y_b must lie in [0, Y], got {y_b}")
    z = np.asarray(z, dtype=np.float64)
    if np.any(z < 0):
        raise GeometryError("distances must be non-negative")
    gamma = 1.0 - y_b / Y
    return Y * (gamma - f / (z + f))


def _check_y_star(Y_star: float) -> None:
    if not Y_star > 1:
        raise GeometryError(f"Y_star must exceed 1, got {Y_star}")


def normalized_project(z_star, Y_star: float):
    """Normalized distance -> normalized image height, ``Y* z / (z + Y* - 1)``."""
    _check_y_star(Y_star)
    z = np.asarray(z_star, dtype=np.float64)
    if np.any((z < 0) | (z > 1)):
        raise GeometryError("z_star must lie in [0, 1]")
    # Y* - (1 - z) rather than z + Y* - 1 so z = 1 maps to exactly 1
    return Y_star * z / (Y_star - (1.0 - z))


def normalized_invert(y_star, Y_star: float):
    """Inverse of :func:`normalized_project`."""
    _check_y_star(Y_star)
    y = np.asarray(y_star, dtype=np.float64)
    if np.any((y < 0) | (y > 1)):
        raise GeometryError("y_star must lie in [0, 1]")
    return y * (Y_star - 1.0) / (Y_star - y)


def elliptic_mu(x, y, a: float):
    """Elliptic coordinate of (x, y) for foci at (+-a, 0).

    Uses the standard form ``acosh((d1 + d2) / (2a))``: constant along each
    confocal ellipse and zero on the segment between the foci.
    """
    if a <= 0:
        raise GeometryError(f"focus offset a must be positive, got {a}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d1 = np.hypot(x + a, y)
    d2 = np.hypot(x - a, y)
    ratio = (d1 + d2) / (2.0 * a)
    # triangle inequality gives ratio >= 1; clamp roundoff just below it
    ratio = np.where((ratio < 1.0) & (ratio >= 1.0 - 1e-12), 1.0, ratio)
    return np.arccosh(ratio)


@dataclass(frozen=True)
class CameraModel:
    """Normalized projection parameters and the ROI bounds in image rows.

    ``roi_bottom_row`` is the ROI edge closest to the camera (``y0``) and
    ``roi_top_row`` the horizon edge (``y_inf``); rows increase downward.
    """

    Y_star: float
    a: float
    image_width: int
    image_height: int
    roi_bottom_row: int
    roi_top_row: int

    def __post_init__(self):
        _check_y_star(self.Y_star)
        if self.a <= 0:
            raise GeometryError(f"a must be positive, got {self.a}")
        if self.image_width < 1 or self.image_height < 1:
            raise GeometryError("image dimensions must be positive")
        if not 0 <= self.roi_top_row < self.roi_bottom_row < self.image_height:
            raise GeometryError(
                "need 0 <= roi_top_row < roi_bottom_row < image_height, got "
                f"top={self.roi_top_row} bottom={self.roi_bottom_row} H={self.image_height}"
            )

    @property
    def f_star(self) -> float:
        return self.Y_star - 1.0

    def pixel_coordinates(self):
        """Camera-centred (x, y) per pixel: origin at the horizontal centre of
        the ROI bottom row, y pointing up the image."""
        rows = np.arange(self.image_height, dtype=np.float64)
        cols = np.arange(self.image_width, dtype=np.float64)
        x = cols[None, :] - (self.image_width - 1) / 2.0
        y = self.roi_bottom_row - rows[:, None]
        return np.broadcast_to(x, (self.image_height, self.image_width)), np.broadcast_to(
            y, (self.image_height, self.image_width)
        )

    def roi_mask(self) -> np.ndarray:
        """True for every pixel at or below the ROI top row."""
        mask = np.zeros((self.image_height, self.image_width), dtype=bool)
        mask[self.roi_top_row:] = True
        return mask

    def normalized_distance(self) -> np.ndarray:
        """Per-pixel ``z*`` in [0, 1]; NaN above the ROI.

        The elliptic coordinate is scaled by its value at the centre of the
        ROI top row, clipped to [0, 1] and mapped through the inverse
        extrinsic relation. Rows below ``roi_bottom_row`` clip to 0.
        """
        x, y = self.pixel_coordinates()
        mu = elliptic_mu(x, np.maximum(y, 0.0), self.a)
        mu_top = float(elliptic_mu(0.0, self.roi_bottom_row - self.roi_top_row, self.a))
        y_star = np.clip(mu / mu_top, 0.0, 1.0)
        z_star = normalized_invert(y_star, self.Y_star)
        return np.where(self.roi_mask(), z_star, np.nan)


@dataclass
class RegionPartition:
    region_index_map: np.ndarray  # int, OUTSIDE above the ROI
    n_regions: int
    boundaries_z_star: np.ndarray
    z_star: np.ndarray  # per-pixel normalized distance, NaN outside

    def region_mask(self, r: int) -> np.ndarray:
        return self.region_index_map == r

    @property
    def roi_mask(self) -> np.ndarray:
        return self.region_index_map != OUTSIDE

    def counts(self) -> np.ndarray:
        roi = self.region_index_map[self.roi_mask]
        return np.bincount(roi, minlength=self.n_regions)


def build_region_partition(model: CameraModel, n_regions: int) -> RegionPartition:
    """Split the ROI into ``n_regions`` bands of equal real-world depth.

    Bands are half-open in ``z*`` (``[k/n, (k+1)/n)``); the last band also
    holds ``z* = 1``.
    """
    if n_regions < 1:
        raise GeometryError(f"n_regions must be >= 1, got {n_regions}")
    z = model.normalized_distance()
    bounds = np.arange(n_regions + 1, dtype=np.float64) / n_regions
    roi = ~np.isnan(z)
    index = np.full(z.shape, OUTSIDE, dtype=np.int64)
    # searchsorted(..., "right") - 1 implements [lo, hi)
    band = np.searchsorted(bounds, z[roi], side="right") - 1
    index[roi] = np.minimum(band, n_regions - 1)
    return RegionPartition(index, n_regions, bounds, z)


@dataclass
class ThresholdField:
    threshold_map: np.ndarray  # float64, NaN = no threshold
    near_value: float
    far_value: float


def build_threshold_field(source, near_value: float, far_value: float) -> ThresholdField:
    """Linear threshold in ``z*`` between the near- and far-field values.

    ``source`` is a :class:`RegionPartition` or a :class:`CameraModel`. Values
    are not clamped to the intensity range, so a far value above 255 marks all
    far-field pixels.
    """
    if not (np.isfinite(near_value) and np.isfinite(far_value)):
        raise GeometryError("threshold values must be finite")
    if isinstance(source, RegionPartition):
        z = source.z_star
    elif isinstance(source, CameraModel):
        z = source.normalized_distance()
    else:
        raise TypeError(f"expected RegionPartition or CameraModel, got {type(source).__name__}")
    field = near_value + (far_value - near_value) * z
    return ThresholdField(field, float(near_value), float(far_value))


def partition_preview(partition: RegionPartition) -> np.ndarray:
    """8-bit single-channel rendering of the band layout (0 above the ROI)."""
    out = np.zeros(partition.region_index_map.shape, dtype=np.uint8)
    roi = partition.roi_mask
    out[roi] = (255 * (partition.region_index_map[roi] + 1) // partition.n_regions).astype(np.uint8)
    return out


def field_preview(field: ThresholdField) -> np.ndarray:
    """8-bit rendering of a threshold field, saturating at 255."""
    vals = np.nan_to_num(field.threshold_map, nan=0.0)
    return np.clip(np.round(vals), 0, 255).astype(np.uint8)
