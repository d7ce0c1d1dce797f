from __future__ import annotations

import json
import logging

import numpy as np
import pytest

from slotssm import ops
from slotssm.errors import ConfigError, TrainingDivergedError
from slotssm.models import VideoPredictionModel
from slotssm.output import read_metrics
from slotssm.train import (
    CHECKPOINT_FILE,
    MANIFEST_FILE,
    METRICS_FILE,
    background_slot_check,
    train,
    train_blinking,
    train_oc_reconstruction,
    train_video_prediction,
)


def run(tiny, tmp_path, name, resume=None, **overrides):
    cfg = tiny(out_dir=str(tmp_path / name), **overrides)
    return train(cfg, resume=resume, progress=False)


def test_training_is_deterministic(tiny, tmp_path):
    a = run(tiny, tmp_path, "a", steps=3)
    b = run(tiny, tmp_path, "b", steps=3)
    assert a.step == b.step == 3
    assert a.losses == b.losses
    assert all(np.isfinite(a.losses))


def test_resume_continues_like_an_uninterrupted_run(tiny, tmp_path):
    whole = run(tiny, tmp_path, "whole", steps=4, eval_every=2)
    first = run(tiny, tmp_path, "first", steps=2, eval_every=2)
    rest = run(tiny, tmp_path, "rest", resume=first.checkpoint, steps=4, eval_every=2)
    assert rest.step == 4
    assert len(rest.losses) == 2
    np.testing.assert_array_equal(first.losses + rest.losses, whole.losses)


def test_eval_rows_land_in_the_metrics_file(tiny, tmp_path):
    result = run(tiny, tmp_path, "m", steps=3, eval_every=2)
    out = tmp_path / "m"
    assert result.metrics_path == out / METRICS_FILE
    table = read_metrics(out / METRICS_FILE)
    assert table["step"].tolist() == [2, 3]
    assert {"train_loss", "eval_bce", "rollout_mse", "wall_time"} <= set(table.columns)
    assert (out / METRICS_FILE).read_text().startswith("# ")
    assert (out / CHECKPOINT_FILE).exists()
    manifest = json.loads((out / MANIFEST_FILE).read_text())
    assert manifest["step"] == 3


def test_non_finite_loss_stops_training(tiny, tmp_path, monkeypatch, caplog):
    monkeypatch.setattr(VideoPredictionModel, "loss", lambda self, batch: ops.exp(self.decoder.pos.sum() * 0.0 + 1000.0))
    with caplog.at_level(logging.ERROR):
        with pytest.raises(TrainingDivergedError):
            run(tiny, tmp_path, "nan", steps=3)
    manifest = json.loads((tmp_path / "nan" / MANIFEST_FILE).read_text())
    assert manifest["diverged_at"] == 0
    assert "diverged" in caplog.text


def test_task_entry_points_check_the_task(tiny, tmp_path):
    cfg = tiny(out_dir=str(tmp_path / "x"))
    with pytest.raises(ConfigError):
        train_blinking(cfg)
    with pytest.raises(ConfigError):
        train_oc_reconstruction(cfg)
    assert train_video_prediction(cfg, progress=False).step == cfg.steps


def test_blinking_training_reports_color_scores(tiny, tmp_path):
    cfg = tiny(task="blinking", blink_steps=3, steps=1, out_dir=str(tmp_path / "blink"))
    result = train_blinking(cfg, progress=False)
    row = result.metrics[-1]
    assert {"eval_ce", "color_acc", "white_acc", "geometry_iou"} <= set(row)
    assert 0.0 <= row["color_acc"] <= 1.0


def test_oc_training_exports_masks(tiny, tmp_path):
    cfg = tiny(task="oc", variant="oc_slotssm", steps=1, out_dir=str(tmp_path / "oc"))
    result = train_oc_reconstruction(cfg, progress=False)
    assert {"eval_mse", "fg_ari", "miou"} <= set(result.metrics[-1])
    assert list((tmp_path / "oc" / "masks").glob("step000001_t*.ppm"))


def test_background_slot_check(caplog):
    gt = np.zeros((1, 2, 4, 4), dtype=int)
    gt[..., :2, :2] = 1
    covering = np.where(gt == 1, 0, 1)
    log = logging.getLogger("test")
    assert background_slot_check(covering, gt, num_slots=3, num_balls=1, log=log)
    with caplog.at_level(logging.WARNING):
        assert not background_slot_check(np.zeros_like(gt), np.ones_like(gt), num_slots=3, num_balls=1, log=log)
    assert "background" in caplog.text
    assert background_slot_check(np.zeros_like(gt), np.ones_like(gt), num_slots=2, num_balls=2, log=log)
