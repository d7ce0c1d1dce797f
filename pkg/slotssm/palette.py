from __future__ import annotations

from typing import Dict, List

import numpy as np

from .errors import ConfigError

PALETTE_NAMES: List[str] = ["black", "white", "red", "green", "blue", "yellow", "magenta"]
PALETTE = np.array(
    [
        [0, 0, 0],
        [255, 255, 255],
        [255, 0, 0],
        [0, 255, 0],
        [0, 0, 255],
        [255, 255, 0],
        [255, 0, 255],
    ],
    dtype=np.uint8,
)
BACKGROUND = 0
WHITE = 1
BALL_COLORS = (2, 3, 4, 5, 6)
NUM_CLASSES = len(PALETTE)

# distinct colors for slot-assignment maps
SLOT_COLORS = np.array(
    [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
        [250, 190, 190],
        [0, 128, 128],
        [170, 110, 40],
    ],
    dtype=np.uint8,
)


def parse_palette(text: str) -> np.ndarray:
    """'r,g,b;r,g,b;...' -> uint8 [n, 3]."""
    rows = [[int(v) for v in chunk.split(",")] for chunk in text.split(";") if chunk.strip()]
    arr = np.array(rows, dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.min() < 0 or arr.max() > 255:
        raise ConfigError(f"bad palette {text!r}")
    if len({tuple(r) for r in arr.tolist()}) != len(arr):
        raise ConfigError("palette colors must be pairwise distinct")
    return arr.astype(np.uint8)


def format_palette(palette: np.ndarray = PALETTE) -> str:
    return ";".join(",".join(str(int(v)) for v in row) for row in palette)


def quantize_colors(image: np.ndarray, palette: np.ndarray = PALETTE) -> np.ndarray:
    """Nearest palette color per pixel; equal distances resolve to the lowest class index."""
    pixels = np.asarray(image, dtype=np.int64)
    diff = pixels[..., None, :] - palette.astype(np.int64)
    dist = (diff * diff).sum(axis=-1)
    return np.argmin(dist, axis=-1).astype(np.int64)


def colorize_slots(assignment: np.ndarray) -> np.ndarray:
    return SLOT_COLORS[np.asarray(assignment, dtype=np.int64) % len(SLOT_COLORS)]


def palette_table(palette: np.ndarray = PALETTE) -> Dict[str, List[int]]:
    return {name: [int(v) for v in row] for name, row in zip(PALETTE_NAMES, palette)}
