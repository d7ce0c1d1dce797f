"""Command-line entry point: data generation, training, evaluation, benchmarks and numeric checks.

Every subcommand accepts --config <key=value file> and one flag per ExperimentConfig
field; flags override the file, which overrides the defaults. The configuration is
validated before anything is read from or written to the output locations.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, Sequence

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from slotssm.util import configure_logging, pin_threads_from_env

pin_threads_from_env()

from tqdm import tqdm  # noqa: E402

from slotssm.bench import BENCH_BATCH, MIN_REPS, bench_latency, step_latency, write_latency  # noqa: E402
from slotssm.checkpoint import load_checkpoint, restore  # noqa: E402
from slotssm.config import ExperimentConfig  # noqa: E402
from slotssm.dataset_io import write_dataset  # noqa: E402
from slotssm.errors import CheckpointError, ConfigError, DatasetFormatError, SequenceTooLongError, SlotSSMError  # noqa: E402
from slotssm.evaluate import evaluate, model_predictor, rollout_eval  # noqa: E402
from slotssm.feed import EVAL_OFFSET, EpisodeSource, dataset_header, generate_episode  # noqa: E402
from slotssm.gradcheck import COMPONENTS, GRADCHECK_TOL, gradcheck_suite  # noqa: E402
from slotssm.models import VideoPredictionModel  # noqa: E402
from slotssm.output import frame_strip, write_gnuplot, write_manifest, write_ppm, write_table_csv  # noqa: E402
from slotssm.palette import palette_table  # noqa: E402
from slotssm.render import render_attention  # noqa: E402
from slotssm.ssm import SCAN_TOLERANCE, scan_agreement  # noqa: E402
from slotssm.synth import episode_seeds  # noqa: E402
from slotssm.train import build, train  # noqa: E402

USAGE_ERRORS = (ConfigError, DatasetFormatError, CheckpointError, SequenceTooLongError)


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _config_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="Flat key=value config file.")
    parent.add_argument("--log-level", choices=["ERROR", "WARNING", "INFO", "DEBUG"], default="INFO")
    group = parent.add_argument_group("experiment config (overrides --config)")
    for name in ExperimentConfig.field_names():
        group.add_argument("--" + name.replace("_", "-"), dest=name, default=None, metavar=name.upper())
    return parent


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Slot state-space model lab.")
    sub = parser.add_subparsers(dest="command", required=True)
    parent = _config_parent()

    p = sub.add_parser("gen-data", parents=[parent], help="Generate an SSDS episode file.")
    p.add_argument("--out", required=True, help="Dataset file to write.")
    p.add_argument("--count", type=int, default=64, help="Number of episodes.")
    p.add_argument("--eval-split", action="store_true", help="Use the evaluation seed range and episode length.")
    p.add_argument("--no-progress", action="store_true")

    p = sub.add_parser("train", parents=[parent], help="Train the configured task.")
    p.add_argument("--resume", help="Checkpoint to continue from.")
    p.add_argument("--no-progress", action="store_true")

    for name, text in (("eval", "Evaluate a checkpoint."), ("rollout", "Autoregressive rollout of a video checkpoint."), ("render-attn", "Export slot-assignment images.")):
        p = sub.add_parser(name, parents=[parent], help=text)
        p.add_argument("--checkpoint", required=True)
        if name != "eval":
            p.add_argument("--out", help="Output directory (default: <out_dir>/<command>).")
        if name == "render-attn":
            p.add_argument("--episode", type=int, default=0)

    p = sub.add_parser("bench-latency", parents=[parent], help="Inference latency against sequence length.")
    p.add_argument("--variants", default="slotssm,slot_transformer,slot_rnn")
    p.add_argument("--lengths", default="80,160,320,640")
    p.add_argument("--batch", type=int, default=BENCH_BATCH)
    p.add_argument("--reps", type=int, default=MIN_REPS)
    p.add_argument("--per-step-times", default="", help="Also time the next step after t steps, e.g. 10,1000.")
    p.add_argument("--out", help="Output directory (default: <out_dir>/bench).")

    p = sub.add_parser("gradcheck", parents=[parent], help="Finite-difference gradient checks at toy shapes.")
    p.add_argument("--components", default=",".join(COMPONENTS))
    p.add_argument("--max-coords", type=int, default=8)
    p.add_argument("--tol", type=float, default=GRADCHECK_TOL)

    p = sub.add_parser("scan-check", parents=[parent], help="Parallel vs sequential scan agreement.")
    p.add_argument("--lengths", default="1,2,7,64,255,256,257,1000,2048")
    p.add_argument("--trials", type=int, default=1)
    return parser.parse_args(argv)


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {name: getattr(args, name) for name in ExperimentConfig.field_names() if getattr(args, name, None) is not None}
    return ExperimentConfig.load(Path(args.config) if args.config else None, overrides)


def checkpoint_config(args: argparse.Namespace):
    ckpt = load_checkpoint(Path(args.checkpoint))
    overrides = {name: getattr(args, name) for name in ExperimentConfig.field_names() if getattr(args, name, None) is not None}
    cfg = ExperimentConfig.from_text(ckpt.config_text).apply(overrides).validate()
    model, _ = build(cfg)
    restore(ckpt, model)
    return cfg, model


def cmd_gen_data(args, cfg: ExperimentConfig, logger) -> int:
    out = Path(args.out)
    if args.count < 1:
        raise ConfigError("--count must be positive")
    offset = EVAL_OFFSET if args.eval_split else 0
    seeds = episode_seeds(cfg.seed, args.count, offset=offset)
    episodes = [generate_episode(cfg, seed, args.eval_split) for seed in tqdm(seeds, disable=args.no_progress, desc="episodes")]
    header = dataset_header(cfg, args.eval_split)
    header["seed_range"] = f"{seeds[0]}..{seeds[-1]}"
    write_dataset(out, episodes, header)
    write_manifest(out.with_suffix(".json"), {"dataset": str(out), "count": len(episodes), "header": header, "palette": palette_table()})
    logger.info("wrote %d episodes to %s", len(episodes), out)
    return 0


def cmd_train(args, cfg: ExperimentConfig, logger) -> int:
    result = train(cfg, resume=Path(args.resume) if args.resume else None, progress=not args.no_progress, log=logger)
    print(json.dumps({"step": result.step, "checkpoint": str(result.checkpoint), "metrics": str(result.metrics_path)}))
    return 0


def cmd_eval(args, cfg: ExperimentConfig, logger) -> int:
    cfg, model = checkpoint_config(args)
    batch = EpisodeSource(cfg, evaluation=True).batch(0, cfg.eval_episodes)
    scores = evaluate(model, batch, cfg.context, cfg.horizon)
    print(json.dumps(scores))
    return 0


def cmd_rollout(args, cfg: ExperimentConfig, logger) -> int:
    cfg, model = checkpoint_config(args)
    if not isinstance(model, VideoPredictionModel):
        raise ConfigError(f"rollout needs a video checkpoint, got task {cfg.task!r}")
    out = Path(args.out) if args.out else Path(cfg.out_dir) / "rollout"
    batch = EpisodeSource(cfg, evaluation=True).batch(0, cfg.eval_episodes)
    result = rollout_eval(model_predictor(model), batch.frames, cfg.context, cfg.horizon)
    table = write_table_csv(out / "rollout_mse.csv", [{"model": cfg.variant, "step": i + 1, "mse": float(v)} for i, v in enumerate(result.curve)])
    write_gnuplot(out / "rollout_mse.dat", table, x="step", series="model", y="mse", title="Rollout MSE", ylabel="MSE")
    write_ppm(out / "truth.ppm", frame_strip(result.targets[0]))
    write_ppm(out / "predicted.ppm", frame_strip(result.predictions[0]))
    logger.info("mean rollout MSE over %d steps: %.6f", cfg.horizon, result.mean)
    print(json.dumps({"rollout_mse": result.mean, "curve": [float(v) for v in result.curve]}))
    return 0


def cmd_render_attn(args, cfg: ExperimentConfig, logger) -> int:
    cfg, model = checkpoint_config(args)
    out = Path(args.out) if args.out else Path(cfg.out_dir) / "attention"
    batch = EpisodeSource(cfg, evaluation=True).batch(0, max(cfg.eval_episodes, args.episode + 1))
    paths = render_attention(model, batch, out, episode=args.episode)
    logger.info("wrote %d slot maps to %s", len(paths), out)
    return 0


def cmd_bench(args, cfg: ExperimentConfig, logger) -> int:
    variants = [v for v in args.variants.split(",") if v.strip()]
    lengths = _int_list(args.lengths)
    out = Path(args.out) if args.out else Path(cfg.out_dir) / "bench"
    table = bench_latency(variants, lengths, base=cfg, batch=args.batch, reps=args.reps, log=logger)
    paths: Dict[str, str] = write_latency(out, table)
    if args.per_step_times:
        steps = step_latency(cfg, _int_list(args.per_step_times), batch=args.batch, reps=args.reps)
        write_table_csv(out / "per_step.csv", steps.to_dict("records"))
        paths["per_step"] = str(out / "per_step.csv")
    write_manifest(out / "manifest.json", {"config": cfg.to_dict(), "output": paths})
    print(table.to_string(index=False))
    return 0


def cmd_gradcheck(args, cfg: ExperimentConfig, logger) -> int:
    names = [n for n in args.components.split(",") if n.strip()]
    unknown = [n for n in names if n not in COMPONENTS]
    if unknown:
        raise ConfigError(f"unknown gradcheck components {unknown}; choose from {list(COMPONENTS)}")
    results = gradcheck_suite(names, seed=cfg.seed, max_coords=args.max_coords)
    failed = [name for name, err in results.items() if not err < args.tol]
    for name, err in results.items():
        print(json.dumps({"component": name, "max_rel_err": err, "ok": name not in failed}))
    if failed:
        logger.error("gradient check failed for %s", ", ".join(failed))
        return 1
    return 0


def cmd_scan_check(args, cfg: ExperimentConfig, logger) -> int:
    rows = scan_agreement(_int_list(args.lengths), trials=args.trials, chunk=cfg.chunk, seed=cfg.seed)
    for row in rows:
        print(json.dumps(row))
    worst = {dtype: max(r["max_abs_diff"] for r in rows if r["dtype"] == dtype) for dtype in SCAN_TOLERANCE}
    logger.info("worst difference float32=%.3g float64=%.3g", worst["float32"], worst["float64"])
    failed = [dtype for dtype, diff in worst.items() if not diff < SCAN_TOLERANCE[dtype]]
    if failed:
        logger.error("parallel scan disagrees with the sequential scan for %s", ", ".join(f"{d} ({worst[d]:.3g} >= {SCAN_TOLERANCE[d]:g})" for d in failed))
        return 1
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "rollout": cmd_rollout,
    "render-attn": cmd_render_attn,
    "bench-latency": cmd_bench,
    "gradcheck": cmd_gradcheck,
    "scan-check": cmd_scan_check,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    logger = configure_logging(args.log_level, "slotssm_cli")
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](args, cfg, logger)
    except USAGE_ERRORS as exc:
        logger.error("%s", exc)
        return 2
    except SlotSSMError as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
