from __future__ import annotations

import pytest

from slotssm import util
from slotssm.config import ExperimentConfig
from slotssm.errors import ConfigError


def test_text_form_round_trips(tiny):
    cfg = tiny(layer_slots="2,3", layers=2, lr=1e-3, dtype="float64")
    again = ExperimentConfig.from_text(cfg.to_text())
    assert again == cfg
    assert again.slot_counts() == [2, 3]


def test_text_form_is_sorted_key_value_lines():
    lines = ExperimentConfig().to_text().splitlines()
    assert lines == sorted(lines)
    assert all("=" in line for line in lines)


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\n\nhidden = 32\nheads=4\nnum_slots=4\n", encoding="utf-8")
    cfg = ExperimentConfig.load(path, {"num_slots": "5", "steps": None})
    assert cfg.hidden == 32 and cfg.num_slots == 5
    assert cfg.steps == ExperimentConfig().steps


def test_unreadable_config_files(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.cfg")
    bad = tmp_path / "bad.cfg"
    bad.write_text("hidden 32\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(bad)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("hidden 32")


@pytest.mark.parametrize(
    "values",
    [
        {"colour": "red"},
        {"hidden": "wide"},
        {"task": "audio"},
        {"task": "oc", "variant": "slotssm"},
        {"task": "video", "variant": "oc_slotssm"},
        {"hidden": "30", "heads": "4"},
        {"image_size": "30"},
        {"beta2": "1.0"},
        {"dtype": "float16"},
        {"context": "0"},
    ],
)
def test_invalid_values_are_config_errors(values):
    with pytest.raises(ConfigError):
        ExperimentConfig().apply(values).validate()


def test_single_state_has_one_slot_per_layer():
    cfg = ExperimentConfig(variant="single_state", layers=3).validate()
    assert cfg.slot_counts() == [1, 1, 1]


def test_stack_config_covers_the_longest_sequence():
    cfg = ExperimentConfig(task="blinking", blink_steps=5, grid=4).validate()
    assert cfg.stack_config().max_steps == 64
    video = ExperimentConfig(episode_steps=8, context=10, horizon=20).validate()
    assert video.stack_config().max_steps == 30


def test_thread_pinning_reads_the_environment(monkeypatch):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        monkeypatch.delenv(var, raising=False)
    monkeypatch.setenv(util.THREAD_ENV, "3")
    assert util.pin_threads_from_env() == 3
    assert util.os.environ["OMP_NUM_THREADS"] == "3"
    monkeypatch.setenv(util.THREAD_ENV, "many")
    assert util.pin_threads_from_env() is None
