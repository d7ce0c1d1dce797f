"""Batches for training and evaluation, generated from seeds or read from an SSDS file.

Training batch b holds the episodes with seeds episode_seeds(cfg.seed, batch_size,
offset=b * batch_size); evaluation episodes use a disjoint seed range. A
BatchFeeder thread fills a bounded queue ahead of the training loop.
"""
from __future__ import annotations

import logging
import queue
import threading
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from .config import ExperimentConfig
from .dataset_io import episode_to_blinking, read_dataset
from .errors import ConfigError, DatasetFormatError
from .models import Batch
from .palette import PALETTE, format_palette, parse_palette
from .synth import BallWorldConfig, BlinkingConfig, Episode, episode_seeds, gen_blinking, gen_bouncing

EVAL_OFFSET = 10 ** 9


def world_config(cfg: ExperimentConfig, steps: Optional[int] = None) -> BallWorldConfig:
    return BallWorldConfig(image_size=cfg.image_size, num_balls=cfg.num_balls, steps=steps or cfg.episode_steps, seed=cfg.seed)


def blinking_config(cfg: ExperimentConfig) -> BlinkingConfig:
    return BlinkingConfig(steps=cfg.blink_steps, grid=cfg.grid, variant=cfg.blink_variant, image_size=cfg.image_size, num_balls=cfg.num_balls, seed=cfg.seed)


def expected_steps(cfg: ExperimentConfig, evaluation: bool = False) -> int:
    if cfg.task == "blinking":
        return cfg.blink_steps
    if cfg.task == "video" and evaluation:
        return cfg.context + cfg.horizon
    return cfg.episode_steps


def generate_episode(cfg: ExperimentConfig, seed: int, evaluation: bool = False) -> Episode:
    if cfg.task == "blinking":
        item = gen_blinking(blinking_config(cfg), seed)
        return item.episode
    return gen_bouncing(world_config(cfg, expected_steps(cfg, evaluation)), seed)


def dataset_header(cfg: ExperimentConfig, evaluation: bool = False) -> Dict[str, object]:
    header: Dict[str, object] = {
        "task": cfg.task,
        "steps": expected_steps(cfg, evaluation),
        "height": cfg.image_size,
        "width": cfg.image_size,
        "balls": cfg.num_balls,
        "palette": format_palette(),
        "seed": cfg.seed,
    }
    if cfg.task == "blinking":
        header["variant"] = cfg.blink_variant
        header["grid"] = cfg.grid
    return header


def collate(cfg: ExperimentConfig, episodes: List[Episode]) -> Batch:
    frames = np.stack([ep.frames for ep in episodes])
    masks = np.stack([ep.masks for ep in episodes])
    finals = None
    if cfg.task == "blinking":
        finals = np.stack([episode_to_blinking(ep, cfg.num_balls, cfg.blink_variant).final_colors for ep in episodes])
    return Batch(frames, masks, finals)


class EpisodeSource:
    """Episodes for a config: from cfg.dataset when set, otherwise generated on demand."""

    def __init__(self, cfg: ExperimentConfig, evaluation: bool = False) -> None:
        self.cfg = cfg
        self.evaluation = evaluation
        self.episodes: Optional[List[Episode]] = None
        if cfg.dataset and not evaluation:
            header, episodes = read_dataset(Path(cfg.dataset))
            steps = int(header["steps"])
            if steps != expected_steps(cfg) or int(header["height"]) != cfg.image_size:
                raise DatasetFormatError(
                    f"{cfg.dataset} holds {steps}-frame {header['height']}px episodes; config expects {expected_steps(cfg)}-frame {cfg.image_size}px"
                )
            if "palette" in header and parse_palette(header["palette"]).tolist() != PALETTE.tolist():
                raise DatasetFormatError(f"{cfg.dataset} was rendered with a different palette")
            if not episodes:
                raise DatasetFormatError(f"{cfg.dataset} holds no episodes")
            self.episodes = episodes

    def batch(self, index: int, size: Optional[int] = None) -> Batch:
        size = size or self.cfg.batch_size
        if self.episodes is not None:
            picks = [self.episodes[(index * size + i) % len(self.episodes)] for i in range(size)]
            return collate(self.cfg, picks)
        offset = EVAL_OFFSET if self.evaluation else 0
        seeds = episode_seeds(self.cfg.seed, size, offset=offset + index * size)
        return collate(self.cfg, [generate_episode(self.cfg, seed, self.evaluation) for seed in seeds])


_DONE = object()


class BatchFeeder:
    """Producer thread handing batches start..stop-1 to the consumer through a bounded queue."""

    def __init__(self, make: Callable[[int], Batch], start: int, stop: int, depth: int = 4, logger: Optional[logging.Logger] = None) -> None:
        if depth < 1:
            raise ConfigError("prefetch depth must be at least 1")
        self.make = make
        self.start = start
        self.stop = stop
        self.logger = logger or logging.getLogger(__name__)
        self.queue: "queue.Queue[object]" = queue.Queue(maxsize=depth)
        self._halt = threading.Event()
        self._thread = threading.Thread(target=self._run, name="batch-feeder", daemon=True)

    def _put(self, item: object) -> bool:
        while not self._halt.is_set():
            try:
                self.queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _run(self) -> None:
        try:
            for index in range(self.start, self.stop):
                if not self._put((index, self.make(index))):
                    return
        except Exception as exc:  # handed to the consumer
            self.logger.debug("batch producer stopped: %s", exc)
            self._put(exc)
            return
        self._put(_DONE)

    def __enter__(self) -> "BatchFeeder":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._halt.set()
        self._thread.join(timeout=5.0)

    def __iter__(self):
        while True:
            item = self.queue.get()
            if item is _DONE:
                return
            if isinstance(item, Exception):
                raise item
            yield item
