from __future__ import annotations

import numpy as np
import pytest

from slotssm.errors import ShapeError
from slotssm.output import append_metrics_row, frame_strip, read_metrics, read_ppm, write_gnuplot, write_ppm, write_table_csv


def test_ppm_keeps_bytes_and_scales_floats(tmp_path):
    image = np.random.default_rng(0).integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    write_ppm(tmp_path / "a.ppm", image)
    np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), image)
    write_ppm(tmp_path / "b.ppm", np.full((2, 2, 3), 0.5))
    assert (read_ppm(tmp_path / "b.ppm") == 128).all()
    with pytest.raises(ShapeError):
        write_ppm(tmp_path / "c.ppm", np.zeros((2, 2)))


def test_frame_strip_puts_gaps_between_frames():
    frames = np.ones((3, 2, 2, 3), dtype=np.uint8)
    strip = frame_strip(frames)
    assert strip.shape == (2, 8, 3)
    assert (strip[:, [2, 5]] == 0).all()
    assert strip.sum() == frames.sum()


def test_metrics_rows_follow_the_first_header(tmp_path):
    path = tmp_path / "m.csv"
    append_metrics_row(path, {"step": 1, "loss": 0.5}, config_text="seed=0\nhidden=8")
    append_metrics_row(path, {"step": 2, "loss": 0.25, "extra": 9})
    text = path.read_text()
    assert text.startswith("# seed=0\n# hidden=8\n")
    table = read_metrics(path)
    assert list(table.columns) == ["step", "loss"]
    assert table["loss"].tolist() == [0.5, 0.25]


def test_gnuplot_blocks_per_series(tmp_path):
    table = write_table_csv(
        tmp_path / "t.csv",
        [
            {"model": "a", "length": 1, "ms": 1.0},
            {"model": "a", "length": 2, "ms": 2.0},
            {"model": "b", "length": 1, "ms": float("nan")},
        ],
    )
    script = write_gnuplot(tmp_path / "t.dat", table, x="length", series="model", y="ms", title="T", ylabel="ms")
    data = (tmp_path / "t.dat").read_text()
    assert data.count("# model=") == 2
    assert "1 NaN" in data
    assert "index 1" in script.read_text()
