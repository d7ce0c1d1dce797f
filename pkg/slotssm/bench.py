"""Inference latency on patchified long sequences, and per-step cost of recurrent stepping."""
from __future__ import annotations

import logging
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .config import ExperimentConfig
from .errors import ConfigError, SequenceTooLongError
from .models import BlinkingModel, Model, build_model, is_recurrent
from .nn import make_rng
from .output import write_gnuplot, write_table_csv
from .tensor import Tensor, no_grad, precision

logger = logging.getLogger(__name__)

BENCH_BATCH = 6
MIN_REPS = 20


def median_time(fn: Callable[[], object], reps: int = MIN_REPS, warmup: int = 2) -> float:
    """Median wall time of fn in seconds over reps calls after warmup calls."""
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(max(reps, 1)):
        began = time.perf_counter()
        fn()
        times.append(time.perf_counter() - began)
    return float(np.median(times))


def length_config(base: ExperimentConfig, variant: str, length: int) -> ExperimentConfig:
    """Blinking-task config whose patchified sequence has `length` steps on base.grid."""
    cells = base.grid * base.grid
    if length % cells:
        raise ConfigError(f"sequence length {length} is not a multiple of {cells} patches per frame")
    return replace(base, task="blinking", variant=variant, blink_steps=length // cells + 1).validate()


def bench_latency(
    variants: Sequence[str],
    lengths: Sequence[int],
    base: Optional[ExperimentConfig] = None,
    batch: int = BENCH_BATCH,
    reps: int = MIN_REPS,
    warmup: int = 2,
    log: Optional[logging.Logger] = None,
) -> pd.DataFrame:
    """One row per (model, length): median forward latency in ms, or status "unavailable"."""
    log = log or logger
    base = base or ExperimentConfig(task="blinking")
    rows: List[Dict[str, object]] = []
    for variant in variants:
        for length in lengths:
            cfg = length_config(base, variant, length)
            row: Dict[str, object] = {"model": variant, "length": length, "batch": batch, "median_ms": float("nan"), "status": "ok"}
            with precision(cfg.dtype):
                model: BlinkingModel = build_model(cfg, make_rng(cfg.seed))
                side = cfg.image_size // cfg.grid
                patches = Tensor(make_rng(cfg.seed + 1).uniform(size=(batch, length, side, side, 3)))
            try:
                if hasattr(model.stack, "check_length"):
                    model.stack.check_length(length)

                def run() -> None:
                    with no_grad():
                        model(patches)

                row["median_ms"] = 1000.0 * median_time(run, reps, warmup)
            except SequenceTooLongError as exc:
                row["status"] = "unavailable"
                log.warning("%s at L=%d: %s", variant, length, exc)
            log.info("latency %s L=%d %s %.3f ms", variant, length, row["status"], row["median_ms"])
            rows.append(row)
    return pd.DataFrame(rows)


def _step_model(cfg: ExperimentConfig) -> Model:
    cfg.validate()
    with precision(cfg.dtype):
        return build_model(cfg, make_rng(cfg.seed))


def _carried_step_rows(model: Model, cfg: ExperimentConfig, times: Sequence[int], batch: int, reps: int) -> pd.DataFrame:
    stack = model.stack
    tokens = Tensor(make_rng(cfg.seed + 1).normal(size=(batch, 1, model.tokenizer.num_tokens, cfg.hidden)), dtype=model.dtype)
    rows = []
    with no_grad():
        state = stack.init_state((batch,))
        done = 0
        for target in sorted(times):
            while done < target:
                _, state = stack(tokens, state)
                done += 1
            frozen = state
            row_time = median_time(lambda: stack(tokens, frozen), reps, warmup=1)
            rows.append({"model": cfg.variant, "t": target, "median_ms": 1000.0 * row_time})
    return pd.DataFrame(rows)


def _prefix_step_rows(model: Model, cfg: ExperimentConfig, times: Sequence[int], batch: int, reps: int) -> pd.DataFrame:
    stack = model.stack
    longest = max(times) + 1
    if hasattr(stack, "check_length"):
        stack.check_length(longest)
    tokens = Tensor(make_rng(cfg.seed + 1).normal(size=(batch, longest, model.tokenizer.num_tokens, cfg.hidden)), dtype=model.dtype)
    rows = []
    with no_grad():
        for target in sorted(times):
            prefix = tokens[:, : target + 1]
            row_time = median_time(lambda: stack(prefix), reps, warmup=1)
            rows.append({"model": cfg.variant, "t": target, "median_ms": 1000.0 * row_time})
    return pd.DataFrame(rows)


def recurrent_step_latency(cfg: ExperimentConfig, times: Sequence[int], batch: int = BENCH_BATCH, reps: int = MIN_REPS) -> pd.DataFrame:
    """Median cost of one recurrent stack step taken after t earlier steps, for each t in times."""
    model = _step_model(cfg)
    if not is_recurrent(model.stack):
        raise ConfigError(f"variant {cfg.variant!r} has no recurrent stepping mode")
    return _carried_step_rows(model, cfg, times, batch, reps)


def step_latency(cfg: ExperimentConfig, times: Sequence[int], batch: int = BENCH_BATCH, reps: int = MIN_REPS) -> pd.DataFrame:
    """Median cost of the next output after t steps.

    Recurrent stacks take one step from their carried state. A stack without
    carried state has to re-read all t + 1 frames, so its cost grows with t.
    """
    model = _step_model(cfg)
    if is_recurrent(model.stack):
        return _carried_step_rows(model, cfg, times, batch, reps)
    return _prefix_step_rows(model, cfg, times, batch, reps)


def write_latency(out_dir: Path, table: pd.DataFrame) -> Dict[str, str]:
    csv_path = out_dir / "latency.csv"
    write_table_csv(csv_path, table.to_dict("records"))
    script = write_gnuplot(out_dir / "latency.dat", table, x="length", series="model", y="median_ms", title="Inference latency", ylabel="median ms")
    return {"csv": str(csv_path), "data": str(out_dir / "latency.dat"), "script": str(script)}
