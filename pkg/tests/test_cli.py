from __future__ import annotations

import importlib.util
import json
from pathlib import Path

import pytest

from slotssm.dataset_io import read_dataset

SCRIPT = Path(__file__).resolve().parents[1] / "scripts" / "slotssm_cli.py"


@pytest.fixture(scope="module")
def cli():
    spec = importlib.util.spec_from_file_location("slotssm_cli", SCRIPT)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


@pytest.fixture
def config_file(tmp_path, tiny):
    path = tmp_path / "tiny.cfg"
    path.write_text("# tiny run\n" + tiny(out_dir=str(tmp_path / "run")).to_text(), encoding="utf-8")
    return path


def test_gen_data_writes_dataset_and_manifest(cli, config_file, tmp_path):
    out = tmp_path / "data" / "train.ssds"
    assert cli.main(["gen-data", "--config", str(config_file), "--out", str(out), "--count", "3", "--no-progress"]) == 0
    header, episodes = read_dataset(out)
    assert len(episodes) == 3 and header["steps"] == "4"
    manifest = json.loads(out.with_suffix(".json").read_text())
    assert manifest["count"] == 3


def test_train_then_inspect_the_checkpoint(cli, config_file, tmp_path, capsys):
    assert cli.main(["train", "--config", str(config_file), "--no-progress"]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    checkpoint = summary["checkpoint"]
    assert summary["step"] == 2

    assert cli.main(["eval", "--config", str(config_file), "--checkpoint", checkpoint]) == 0
    scores = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert set(scores) == {"eval_bce", "rollout_mse"}

    rollout = tmp_path / "rollout"
    assert cli.main(["rollout", "--checkpoint", checkpoint, "--out", str(rollout)]) == 0
    assert (rollout / "rollout_mse.csv").exists()
    assert (rollout / "predicted.ppm").exists()

    maps = tmp_path / "maps"
    assert cli.main(["render-attn", "--checkpoint", checkpoint, "--out", str(maps)]) == 0
    assert list(maps.iterdir())


def test_flags_override_the_file(cli, config_file):
    args = cli.parse_args(["train", "--config", str(config_file), "--num-slots", "3"])
    cfg = cli.load_config(args)
    assert cfg.num_slots == 3 and cfg.hidden == 8


def test_usage_errors_exit_with_two(cli, config_file, tmp_path):
    assert cli.main(["train", "--config", str(config_file), "--variant", "nope"]) == 2
    assert cli.main(["eval", "--config", str(config_file), "--checkpoint", str(tmp_path / "missing.ssck")]) == 2
    assert cli.main(["gradcheck", "--components", "op.nope"]) == 2
    assert cli.main(["train", "--config", str(tmp_path / "absent.cfg")]) == 2


def test_gradcheck_reports_json_lines(cli, capsys):
    assert cli.main(["gradcheck", "--components", "op.cross_entropy"]) == 0
    (line,) = capsys.readouterr().out.strip().splitlines()
    row = json.loads(line)
    assert row["component"] == "op.cross_entropy" and row["ok"]


def test_scan_check(cli, capsys):
    assert cli.main(["scan-check", "--lengths", "1,7"]) == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.strip().splitlines()]
    assert {row["dtype"] for row in rows} == {"float32", "float64"}
    assert {row["length"] for row in rows} == {1, 7}


def test_scan_check_fails_when_the_scans_disagree(cli, monkeypatch, caplog):
    def disagreeing(lengths, **kwargs):
        return [{"dtype": dtype, "length": length, "max_abs_diff": 0.5} for dtype in ("float32", "float64") for length in lengths]

    monkeypatch.setattr(cli, "scan_agreement", disagreeing)
    with caplog.at_level("ERROR"):
        assert cli.main(["scan-check", "--lengths", "3", "--trials", "1"]) == 1
    assert any(record.levelname == "ERROR" and "float64" in record.getMessage() for record in caplog.records)


def test_scan_check_bounds_are_per_dtype(cli, monkeypatch):
    diffs = {"float32": 5e-6, "float64": 2e-10}
    monkeypatch.setattr(cli, "scan_agreement", lambda lengths, **kwargs: [{"dtype": d, "length": 3, "max_abs_diff": v} for d, v in diffs.items()])
    assert cli.main(["scan-check", "--lengths", "3"]) == 1
    diffs["float64"] = 5e-11
    assert cli.main(["scan-check", "--lengths", "3"]) == 0
