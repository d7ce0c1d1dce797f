from __future__ import annotations

import struct

import numpy as np
import pytest

from slotssm.dataset_io import (
    blinking_to_episode,
    episode_to_blinking,
    iter_dataset,
    read_dataset,
    write_dataset,
)
from slotssm.errors import DatasetFormatError
from slotssm.palette import format_palette
from slotssm.synth import BallWorldConfig, BlinkingConfig, gen_blinking, gen_bouncing


def header(steps=4, size=16):
    return {"task": "video", "steps": steps, "height": size, "width": size, "palette": format_palette()}


@pytest.fixture
def episodes():
    cfg = BallWorldConfig(image_size=16, num_balls=2, steps=4)
    return [gen_bouncing(cfg, seed) for seed in range(3)]


def test_write_then_read_keeps_frames_masks_and_header(tmp_path, episodes):
    path = tmp_path / "sub" / "train.ssds"
    write_dataset(path, episodes, header())
    head, loaded = read_dataset(path)
    assert head["count"] == "3" and head["task"] == "video"
    assert len(loaded) == 3
    for want, got in zip(episodes, loaded):
        np.testing.assert_array_equal(got.frames, want.frames)
        np.testing.assert_array_equal(got.masks, want.masks)
        assert got.log.shape == (0, 2)


def test_blinking_log_survives_the_file(tmp_path):
    item = gen_blinking(BlinkingConfig(steps=5, image_size=16, num_balls=2), 3)
    path = tmp_path / "blink.ssds"
    write_dataset(path, [blinking_to_episode(item)], header(steps=5))
    _, (episode,) = read_dataset(path)
    np.testing.assert_array_equal(episode.log, item.log)
    back = episode_to_blinking(episode, 2, "earliest")
    np.testing.assert_array_equal(back.final_colors, item.final_colors)
    np.testing.assert_array_equal(back.target, item.target)


def test_header_needs_shape_keys(tmp_path, episodes):
    with pytest.raises(DatasetFormatError):
        write_dataset(tmp_path / "x.ssds", episodes, {"steps": 4})


def test_wrong_magic_is_rejected(tmp_path, episodes):
    path = tmp_path / "bad.ssds"
    write_dataset(path, episodes, header())
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError, match="magic"):
        read_dataset(path)


def test_unknown_version_is_rejected(tmp_path, episodes):
    path = tmp_path / "v2.ssds"
    write_dataset(path, episodes, header())
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 2)
    path.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError, match="version"):
        read_dataset(path)


def test_flipped_payload_byte_fails_the_checksum(tmp_path, episodes):
    path = tmp_path / "crc.ssds"
    write_dataset(path, episodes, header())
    raw = bytearray(path.read_bytes())
    raw[-10] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError, match="checksum"):
        read_dataset(path)


def test_truncated_file_is_rejected(tmp_path, episodes):
    path = tmp_path / "cut.ssds"
    write_dataset(path, episodes, header())
    path.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(DatasetFormatError, match="truncated"):
        read_dataset(path)


def test_missing_records_contradict_the_count(tmp_path, episodes):
    full = tmp_path / "full.ssds"
    write_dataset(full, episodes, header())
    one = tmp_path / "one.ssds"
    write_dataset(one, episodes[:1], header())
    record = len(full.read_bytes()) - len(one.read_bytes())
    path = tmp_path / "short.ssds"
    path.write_bytes(full.read_bytes()[:-record])
    with pytest.raises(DatasetFormatError, match="promises"):
        list(iter_dataset(path))