"""Slot-assignment images: decoder cross-attention argmax, or alpha argmax for OC models."""
from __future__ import annotations

from pathlib import Path
from typing import List

import numpy as np

from .errors import ConfigError
from .models import Batch, BlinkingModel, OCModel, VideoPredictionModel, to_unit
from .output import frame_strip, write_ppm
from .palette import colorize_slots
from .tensor import no_grad


def slot_maps(model, batch: Batch) -> np.ndarray:
    """Integer slot maps: [B, T, H, W] for video and OC models, [B, H, W] for the blinking target."""
    with no_grad():
        if isinstance(model, OCModel):
            decoded, _ = model(to_unit(batch.frames, model.dtype))
            return decoded.assignment
        if isinstance(model, VideoPredictionModel):
            model(to_unit(batch.frames, model.dtype))
        elif isinstance(model, BlinkingModel):
            model(model.sequence(batch.frames[:, :-1]))
        else:
            raise ConfigError(f"{type(model).__name__} has no attention or alpha head to render")
    return model.decoder.slot_assignment(model.last_attention)


def render_attention(model, batch: Batch, out_dir: Path, episode: int = 0) -> List[Path]:
    """Write one PPM per frame: the input frame beside its colored slot map."""
    maps = slot_maps(model, batch)
    if isinstance(model, BlinkingModel):
        frames = batch.frames[episode, -1:]
        episode_maps = maps[episode][None]
    else:
        frames = batch.frames[episode]
        episode_maps = maps[episode]
    paths = []
    for t, (frame, slot_map) in enumerate(zip(frames, episode_maps)):
        path = out_dir / f"attn_ep{episode:03d}_t{t:03d}.ppm"
        write_ppm(path, frame_strip(np.stack([frame, colorize_slots(slot_map)])))
        paths.append(path)
    return paths
