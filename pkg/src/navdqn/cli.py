"""Command-line entry points: ``train``, ``eval``, ``replay`` and ``metrics``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .config import ConfigError, RunConfig, load_config, write_snapshot
from .env import NavEnv
from .episode_log import LogFormatError, StepLogWriter, log_header, replay_log
from .evaluation import (
    EvalError,
    MetricsSummary,
    default_goals,
    evaluate,
    load_goals,
    summarize,
    write_metrics,
    write_runs,
)
from .nn import CheckpointError, ShapeError, load_checkpoint
from .rl import STREAM_ENV, TrainResult, stream, train_loop

log = logging.getLogger("navdqn")


class CLIError(Exception):
    pass


def _prepare_out(path: str | Path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CLIError(f"output directory {out} is not writable: {exc}") from exc
    return out


def checkpoint_meta(cfg: RunConfig) -> dict:
    return {
        "stage_kind": cfg.stage.kind.value,
        "n_beams": cfg.env.n_beams,
        "goal_in_observation": cfg.env.goal_in_observation,
        "input_width": cfg.env.input_width(cfg.stage.semantic),
    }


def cmd_train(cfg: RunConfig) -> TrainResult:
    """Train on ``cfg``; writes the resolved config, episode log, step log and checkpoints."""
    out = _prepare_out(cfg.out_dir)
    write_snapshot(cfg, out / "config.resolved.yaml")

    def env_factory() -> NavEnv:
        return NavEnv(cfg.stage, cfg.env, stream(cfg.seed, STREAM_ENV))

    writer = StepLogWriter(out / "steps.jsonl.gz", log_header(cfg.seed, cfg.stage, cfg.env)) if cfg.log_steps else None
    try:
        result = train_loop(
            cfg.train,
            env_factory,
            seed=cfg.seed,
            log_path=out / "train_log.jsonl",
            checkpoint_dir=out / "checkpoints",
            on_step=writer,
            checkpoint_meta=checkpoint_meta(cfg),
        )
    finally:
        if writer is not None:
            writer.close()
    return result


def cmd_eval(
    cfg: RunConfig,
    checkpoint: str | Path,
    goals_path: str | Path | None = None,
    name: str | None = None,
) -> MetricsSummary:
    out = _prepare_out(cfg.out_dir)
    write_snapshot(cfg, out / "config.resolved.yaml")
    expected = cfg.env.input_width(cfg.stage.semantic)
    net = load_checkpoint(checkpoint, expected_input=expected).net
    if goals_path is not None:
        goals = load_goals(goals_path)
    elif cfg.eval.goals is not None:
        goals = list(cfg.eval.goals)
    else:
        goals = default_goals()
    result = evaluate(
        net,
        cfg.stage,
        cfg.env,
        goals,
        seed=cfg.seed,
        runs_per_goal=cfg.eval.runs_per_goal,
        timeout_s=cfg.eval.timeout_s,
        max_attempts=cfg.eval.max_attempts,
        noise_sigma=cfg.eval.noise_sigma,
    )
    approach = name or Path(checkpoint).stem
    summary = summarize(approach, result)
    (out / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2))
    write_runs(result.successes + result.failures, out / "runs.jsonl")
    write_metrics([summary], out, {approach: result.successes})
    return summary


def cmd_metrics(summary_paths: Sequence[str | Path], out_dir: str | Path) -> Path:
    summaries = [MetricsSummary.from_dict(json.loads(Path(p).read_text())) for p in summary_paths]
    return write_metrics(summaries, _prepare_out(out_dir))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="navdqn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, help="YAML run configuration")
        p.add_argument("--seed", type=int, help="run seed (u64)")
        p.add_argument("--stage", choices=["static", "dynamic", "semantic"])
        p.add_argument("--out", type=Path, help="output directory")

    p_train = sub.add_parser("train", help="train a Q-network")
    common(p_train)

    p_eval = sub.add_parser("eval", help="run the fixed-goal evaluation protocol")
    common(p_eval)
    p_eval.add_argument("--checkpoint", type=Path, required=True)
    p_eval.add_argument("--goals", type=Path, help="YAML file with a 'goals' list")
    p_eval.add_argument("--timeout-s", type=float, dest="timeout_s")
    p_eval.add_argument("--runs-per-goal", type=int, dest="runs_per_goal")
    p_eval.add_argument("--name", help="approach name in the metrics table")

    p_replay = sub.add_parser("replay", help="re-simulate a step log and report divergence")
    p_replay.add_argument("log", type=Path)
    p_replay.add_argument("--seed", type=int, help="override the logged seed")

    p_metrics = sub.add_parser("metrics", help="merge eval summaries into one CSV")
    p_metrics.add_argument("summaries", type=Path, nargs="+")
    p_metrics.add_argument("--out", type=Path, required=True)
    return parser


def _resolve(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config, seed=args.seed, stage=args.stage, out_dir=args.out)
    evo = {k: getattr(args, k) for k in ("timeout_s", "runs_per_goal") if getattr(args, k, None) is not None}
    if evo:
        cfg = dataclasses.replace(cfg, eval=dataclasses.replace(cfg.eval, **evo))
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "train":
            cfg = _resolve(args)
            result = cmd_train(cfg)
            last = result.records[-1]["mean_success"] if result.records else 0.0
            print(f"trained {result.steps} steps, {len(result.records)} episodes, mean_success={last:.3f}")
            print(f"checkpoint: {result.checkpoint}")
        elif args.command == "eval":
            cfg = _resolve(args)
            s = cmd_eval(cfg, args.checkpoint, args.goals, args.name)
            print(
                f"{s.approach}: distance={s.mean_distance:.3f} m time={s.mean_time:.2f} s "
                f"error_rate={s.error_rate:.2f}% obstacles_hit={s.obstacles_hit}"
            )
        elif args.command == "replay":
            report = replay_log(args.log, seed=args.seed)
            print(report)
            return 0 if report.exact else 1
        elif args.command == "metrics":
            print(cmd_metrics(args.summaries, args.out))
    except (ConfigError, CLIError, CheckpointError, ShapeError, EvalError, LogFormatError, FileNotFoundError) as exc:
        print(f"navdqn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
