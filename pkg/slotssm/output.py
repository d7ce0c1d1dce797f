from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ShapeError
from .util import ensure_dir


def write_manifest(path: Path, data: Dict) -> None:
    ensure_dir(path)
    path.write_text(json.dumps(data, ensure_ascii=False, indent=2, default=str), encoding="utf-8")


def append_metrics_row(path: Path, row: Mapping[str, object], config_text: str = "") -> None:
    """Append one row to a headered CSV; a new file starts with the config as `#` comment lines.

    Later rows are written against the existing header; columns it lacks are dropped.
    """
    ensure_dir(path)
    frame = pd.DataFrame([dict(row)])
    if not path.exists():
        with path.open("w", encoding="utf-8") as handle:
            for line in config_text.splitlines():
                handle.write(f"# {line}\n")
            frame.to_csv(handle, index=False)
        return
    frame = frame.reindex(columns=read_metrics(path).columns)
    frame.to_csv(path, mode="a", header=False, index=False)


def read_metrics(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def write_table_csv(path: Path, rows: Sequence[Mapping[str, object]]) -> pd.DataFrame:
    ensure_dir(path)
    frame = pd.DataFrame(list(rows))
    frame.to_csv(path, index=False)
    return frame


def write_gnuplot(data_path: Path, frame: pd.DataFrame, x: str, series: str, y: str, title: str, ylabel: str) -> Path:
    """Whitespace-separated data blocks, one per series, plus a .gp script plotting them."""
    ensure_dir(data_path)
    names: List[str] = []
    with data_path.open("w", encoding="utf-8") as handle:
        for name, group in frame.groupby(series, sort=False):
            names.append(str(name))
            handle.write(f"# {series}={name}\n")
            for xv, yv in zip(group[x], group[y]):
                handle.write(f"{xv} {'NaN' if pd.isna(yv) else yv}\n")
            handle.write("\n\n")
    script = data_path.with_suffix(".gp")
    plots = ", \\\n     ".join(
        f"'{data_path.name}' index {i} using 1:2 with linespoints title '{name}'" for i, name in enumerate(names)
    )
    script.write_text(
        f"set title '{title}'\nset xlabel '{x}'\nset ylabel '{ylabel}'\nset key left top\nset grid\n"
        f"set terminal pngcairo size 800,500\nset output '{data_path.stem}.png'\nplot {plots}\n",
        encoding="utf-8",
    )
    return script


def write_ppm(path: Path, image: np.ndarray) -> None:
    """Binary P6 image from u8 [H, W, 3] or floats in [0, 1]."""
    array = np.asarray(image)
    if array.ndim != 3 or array.shape[-1] != 3:
        raise ShapeError("write_ppm", array.shape, detail="expected [H, W, 3]")
    if array.dtype != np.uint8:
        array = np.clip(np.rint(array.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    ensure_dir(path)
    height, width, _ = array.shape
    path.write_bytes(f"P6\n{width} {height}\n255\n".encode("ascii") + np.ascontiguousarray(array).tobytes())


def read_ppm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P6" or len(parts) < 4:
        raise ShapeError("read_ppm", (len(raw),), detail=f"{path} is not a binary PPM written by write_ppm")
    width, height = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width, 3).copy()


def frame_strip(frames: np.ndarray, gap: int = 1) -> np.ndarray:
    """Lay [N, H, W, 3] frames left to right with a black gap column between them."""
    frames = np.asarray(frames)
    count, height, width, channels = frames.shape
    strip = np.zeros((height, count * width + (count - 1) * gap, channels), dtype=frames.dtype)
    for index, frame in enumerate(frames):
        start = index * (width + gap)
        strip[:, start:start + width] = frame
    return strip
