"""SSDS episode files.

Layout, little-endian: magic "SSDS", u32 version, u32 header length, header
(UTF-8 key=value lines), then one record per episode: u32 payload length,
payload (frames u8 [T, H, W, 3], masks u8 [T, H, W], assignment log as u16
(ball, color) pairs), u32 CRC-32 of the payload.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import BinaryIO, Dict, Iterator, List, Sequence, Tuple

import numpy as np

from .errors import DatasetFormatError
from .synth import BlinkingEpisode, Episode, final_colors
from .util import ensure_dir

MAGIC = b"SSDS"
VERSION = 1
REQUIRED_KEYS = ("steps", "height", "width")
_U32 = struct.Struct("<I")


def format_header(header: Dict[str, object]) -> bytes:
    lines = [f"{key}={header[key]}" for key in sorted(header)]
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_header(raw: bytes) -> Dict[str, str]:
    header: Dict[str, str] = {}
    for line in raw.decode("utf-8").splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise DatasetFormatError(f"bad header line {line!r}")
        key, value = line.split("=", 1)
        header[key.strip()] = value.strip()
    return header


def encode_episode(episode: Episode) -> bytes:
    log = np.asarray(episode.log, dtype=np.int64).reshape(-1, 2)
    if log.size and (log.min() < 0 or log.max() > 0xFFFF):
        raise DatasetFormatError("assignment log entries must fit in u16")
    return (
        np.ascontiguousarray(episode.frames, dtype=np.uint8).tobytes()
        + np.ascontiguousarray(episode.masks, dtype=np.uint8).tobytes()
        + log.astype("<u2").tobytes()
    )


def decode_episode(payload: bytes, steps: int, height: int, width: int) -> Episode:
    frame_bytes = steps * height * width * 3
    mask_bytes = steps * height * width
    rest = len(payload) - frame_bytes - mask_bytes
    if rest < 0 or rest % 4:
        raise DatasetFormatError(f"record of {len(payload)} bytes does not match a {steps}x{height}x{width} episode")
    frames = np.frombuffer(payload, dtype=np.uint8, count=frame_bytes).reshape(steps, height, width, 3).copy()
    masks = np.frombuffer(payload, dtype=np.uint8, count=mask_bytes, offset=frame_bytes).reshape(steps, height, width).copy()
    log = np.frombuffer(payload, dtype="<u2", offset=frame_bytes + mask_bytes).reshape(-1, 2).astype(np.int64)
    return Episode(frames, masks, log=log)


def write_dataset(path: Path, episodes: Sequence[Episode], header: Dict[str, object]) -> None:
    missing = [key for key in REQUIRED_KEYS if key not in header]
    if missing:
        raise DatasetFormatError(f"header is missing {missing}")
    ensure_dir(path)
    head = dict(header)
    head["count"] = len(episodes)
    raw = format_header(head)
    with path.open("wb") as handle:
        handle.write(MAGIC + _U32.pack(VERSION) + _U32.pack(len(raw)) + raw)
        for episode in episodes:
            payload = encode_episode(episode)
            handle.write(_U32.pack(len(payload)) + payload + _U32.pack(zlib.crc32(payload) & 0xFFFFFFFF))


def _read_exact(handle: BinaryIO, size: int, what: str) -> bytes:
    data = handle.read(size)
    if len(data) != size:
        raise DatasetFormatError(f"truncated file while reading {what}: wanted {size} bytes, got {len(data)}")
    return data


def read_header(handle: BinaryIO) -> Dict[str, str]:
    magic = _read_exact(handle, 4, "magic")
    if magic != MAGIC:
        raise DatasetFormatError(f"not an SSDS file (magic {magic!r})")
    (version,) = _U32.unpack(_read_exact(handle, 4, "version"))
    if version != VERSION:
        raise DatasetFormatError(f"unsupported SSDS version {version}; this reader understands version {VERSION}")
    (length,) = _U32.unpack(_read_exact(handle, 4, "header length"))
    header = parse_header(_read_exact(handle, length, "header"))
    missing = [key for key in REQUIRED_KEYS if key not in header]
    if missing:
        raise DatasetFormatError(f"header is missing {missing}")
    return header


def iter_dataset(path: Path) -> Iterator[Tuple[Dict[str, str], Episode]]:
    with path.open("rb") as handle:
        header = read_header(handle)
        steps, height, width = (int(header[key]) for key in REQUIRED_KEYS)
        index = 0
        while True:
            prefix = handle.read(4)
            if not prefix:
                break
            if len(prefix) != 4:
                raise DatasetFormatError(f"truncated record length at episode {index}")
            (length,) = _U32.unpack(prefix)
            payload = _read_exact(handle, length, f"episode {index}")
            (crc,) = _U32.unpack(_read_exact(handle, 4, f"checksum of episode {index}"))
            if zlib.crc32(payload) & 0xFFFFFFFF != crc:
                raise DatasetFormatError(f"checksum mismatch in episode {index}")
            yield header, decode_episode(payload, steps, height, width)
            index += 1
        if "count" in header and int(header["count"]) != index:
            raise DatasetFormatError(f"header promises {header['count']} episodes, file holds {index}")


def read_dataset(path: Path) -> Tuple[Dict[str, str], List[Episode]]:
    episodes: List[Episode] = []
    header: Dict[str, str] = {}
    with path.open("rb") as handle:
        header = read_header(handle)
    for _, episode in iter_dataset(path):
        episodes.append(episode)
    return header, episodes


def blinking_to_episode(item: BlinkingEpisode) -> Episode:
    if item.episode is not None:
        return item.episode
    frames = np.concatenate([item.context, item.target[None]], axis=0)
    return Episode(frames, item.masks, log=item.log)


def episode_to_blinking(episode: Episode, num_balls: int, variant: str) -> BlinkingEpisode:
    finals = final_colors(episode.log, num_balls, variant)
    return BlinkingEpisode(episode.frames[:-1], episode.frames[-1], episode.log, finals, episode.masks, episode)
