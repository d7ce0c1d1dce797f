"""Training loops for the three tasks.

One loop serves all of them: batches come from a BatchFeeder thread, each step
records a fresh graph, clips the global gradient norm and applies AdamW. At every
eval boundary a metrics row is appended and the checkpoint rewritten.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from tqdm import tqdm

from .checkpoint import capture, load_checkpoint, restore, save_checkpoint
from .config import ExperimentConfig
from .errors import ConfigError, NonFiniteError, TrainingDivergedError
from .evaluate import evaluate, oc_masks
from .feed import BatchFeeder, EpisodeSource
from .models import Batch, Model, OCModel, build_model
from .nn import make_rng
from .optim import AdamW, clip_grad_norm
from .output import append_metrics_row, write_manifest, write_ppm
from .palette import colorize_slots
from .tensor import Graph, backward, precision

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
CHECKPOINT_FILE = "checkpoint.ssck"
MANIFEST_FILE = "manifest.json"
BACKGROUND_SHARE = 0.5


@dataclass
class TrainResult:
    step: int
    losses: List[float]
    metrics: List[Dict[str, float]] = field(default_factory=list)
    checkpoint: Optional[Path] = None
    metrics_path: Optional[Path] = None


def build(cfg: ExperimentConfig):
    with precision(cfg.dtype):
        model = build_model(cfg, make_rng(cfg.seed))
    optimizer = AdamW(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps, weight_decay=cfg.weight_decay)
    return model, optimizer


def train_step(model: Model, optimizer: AdamW, batch: Batch, step: int, grad_clip: float) -> float:
    try:
        with Graph():
            loss = model.loss(batch)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(step, f"loss is {value}")
            backward(loss)
        clip_grad_norm(optimizer.params, grad_clip)
        optimizer.step()
    except NonFiniteError as exc:
        raise TrainingDivergedError(step, str(exc)) from exc
    optimizer.zero_grad()
    return value


def export_oc_masks(model: OCModel, batch: Batch, out_dir: Path, step: int) -> np.ndarray:
    masks = oc_masks(model, batch)
    for t, frame in enumerate(masks[0]):
        write_ppm(out_dir / "masks" / f"step{step:06d}_t{t:02d}.ppm", colorize_slots(frame))
    return masks


def background_slot_check(masks: np.ndarray, gt: np.ndarray, num_slots: int, num_balls: int, log: logging.Logger) -> bool:
    """Soft check: with spare slots, some slot should cover mostly background pixels."""
    if num_slots < num_balls + 1:
        return True
    for slot in range(num_slots):
        owned = masks == slot
        if owned.any() and (gt[owned] == 0).mean() > BACKGROUND_SHARE:
            return True
    log.warning("no slot covers mostly background pixels (%d slots, %d balls)", num_slots, num_balls)
    return False


def train(cfg: ExperimentConfig, resume: Optional[Path] = None, progress: bool = True, log: Optional[logging.Logger] = None) -> TrainResult:
    log = log or logger
    cfg.validate()
    out_dir = Path(cfg.out_dir)
    metrics_path = out_dir / METRICS_FILE
    ckpt_path = out_dir / CHECKPOINT_FILE
    config_text = cfg.to_text()

    model, optimizer = build(cfg)
    start = 0
    if resume is not None:
        ckpt = load_checkpoint(Path(resume))
        if ckpt.config_text != config_text:
            log.warning("resuming from %s with a different config", resume)
        start = restore(ckpt, model, optimizer)
        log.info("resumed from %s at step %d", resume, start)

    source = EpisodeSource(cfg)
    eval_batch = EpisodeSource(cfg, evaluation=True).batch(0, cfg.eval_episodes)
    log.info("task=%s variant=%s params=%d steps=%d..%d", cfg.task, cfg.variant, model.num_parameters(), start, cfg.steps)

    result = TrainResult(start, [], checkpoint=ckpt_path, metrics_path=metrics_path)
    began = time.perf_counter()
    last_loss = float("nan")
    with BatchFeeder(source.batch, start, cfg.steps, depth=cfg.prefetch, logger=log) as feeder:
        bar = tqdm(feeder, total=cfg.steps, initial=start, disable=not progress, desc=f"{cfg.task}/{cfg.variant}")
        for step, batch in bar:
            try:
                last_loss = train_step(model, optimizer, batch, step, cfg.grad_clip)
            except TrainingDivergedError:
                log.error("training diverged at step %d", step)
                write_manifest(out_dir / MANIFEST_FILE, {"config": cfg.to_dict(), "diverged_at": step, "metrics": str(metrics_path)})
                raise
            result.losses.append(last_loss)
            result.step = step + 1
            bar.set_postfix(loss=f"{last_loss:.4f}")
            if result.step % cfg.eval_every == 0 or result.step == cfg.steps:
                row = {"step": result.step, "wall_time": round(time.perf_counter() - began, 3), "train_loss": last_loss}
                row.update(evaluate(model, eval_batch, cfg.context, cfg.horizon))
                if isinstance(model, OCModel):
                    masks = export_oc_masks(model, eval_batch, out_dir, result.step)
                    background_slot_check(masks, eval_batch.masks, model.stack.num_slots, cfg.num_balls, log)
                append_metrics_row(metrics_path, row, config_text)
                result.metrics.append(row)
                log.info("step %d %s", result.step, " ".join(f"{k}={v:.5g}" for k, v in row.items() if k != "step"))
                save_checkpoint(ckpt_path, capture(model, optimizer, result.step, config_text))

    write_manifest(
        out_dir / MANIFEST_FILE,
        {"config": cfg.to_dict(), "step": result.step, "checkpoint": str(ckpt_path), "metrics": str(metrics_path), "final_loss": last_loss},
    )
    return result


def _require(cfg: ExperimentConfig, task: str) -> None:
    if cfg.task != task:
        raise ConfigError(f"config task is {cfg.task!r}, expected {task!r}")


def train_video_prediction(cfg: ExperimentConfig, **kwargs) -> TrainResult:
    _require(cfg, "video")
    return train(cfg, **kwargs)


def train_blinking(cfg: ExperimentConfig, **kwargs) -> TrainResult:
    _require(cfg, "blinking")
    return train(cfg, **kwargs)


def train_oc_reconstruction(cfg: ExperimentConfig, **kwargs) -> TrainResult:
    _require(cfg, "oc")
    return train(cfg, **kwargs)
