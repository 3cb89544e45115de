"""Class taxonomy, ids and the preview palette."""
import numpy as np

WATER = 0
ICE_FLOE = 1
BRASH_ICE = 2
ICEBERG = 3
SHIP = 4
SKY = 5
IGNORE = 255

N_CLASSES = 6
CLASS_NAMES = ("water", "ice_floe", "brash_ice", "iceberg", "ship", "sky")
VALID_IDS = frozenset(range(N_CLASSES)) | {IGNORE}

# manually annotated classes, in merge priority order
MANUAL_CLASSES = ("ship", "sky", "iceberg")

PALETTE = np.array(
    [
        [20, 60, 160],  # water
        [240, 220, 40],  # ice floe
        [120, 200, 220],  # brash ice
        [150, 60, 190],  # iceberg
        [220, 30, 30],  # ship
        [150, 240, 150],  # sky
    ],
    dtype=np.uint8,
)


def colorize(label: np.ndarray) -> np.ndarray:
    """RGB rendering of a label map; ignore pixels are black."""
    out = np.zeros(label.shape + (3,), dtype=np.uint8)
    valid = label < N_CLASSES
    out[valid] = PALETTE[label[valid]]
    return out


def overlay(image: np.ndarray, label: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend the colorized label over an RGB image."""
    color = colorize(label).astype(np.float32)
    blended = (1 - alpha) * image.astype(np.float32) + alpha * color
    blended[label == IGNORE] = image[label == IGNORE]
    return np.clip(np.round(blended), 0, 255).astype(np.uint8)
