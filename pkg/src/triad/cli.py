"""Command-line entry points: run, bench, serve, inspect-buffer."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from typing import List, Optional

from .buffer import ExperienceBuffer
from .config import (
    DATA_DIR_ENV,
    ConfigError,
    build_run_config,
    load_config_file,
    validate_config,
)
from .orchestrator import DataPaths, OrchestratorError, run, run_bench


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="triad",
        description="desk-scale decoupled reinforcement fine-tuning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute the run described by a config file")
    run_p.add_argument("--config", required=True, help="YAML config path")
    run_p.add_argument("--seed", type=int, default=None, help="override config seed")

    bench_p = sub.add_parser("bench", help="evaluate checkpoints on eval tasksets")
    bench_p.add_argument("--config", required=True)
    bench_p.add_argument("--seed", type=int, default=None)

    serve_p = sub.add_parser("serve", help="start the HTTP gateway")
    serve_p.add_argument("--config", default=None, help="optional YAML config path")
    serve_p.add_argument("--port", type=int, default=8000)

    inspect_p = sub.add_parser("inspect-buffer", help="print buffer statistics")
    inspect_p.add_argument("--config", default=None)
    return parser


def _resolve_data_dir(config_path: Optional[str]) -> tuple:
    raw = load_config_file(config_path) if config_path else {}
    full = validate_config(raw)
    data_dir = os.environ.get(DATA_DIR_ENV) or full["data_dir"]
    return data_dir, full


def _cmd_run(args: argparse.Namespace) -> int:
    config = build_run_config(load_config_file(args.config))
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    report = run(config)
    print(
        f"run {report.run_id} finished: mode={report.mode} steps={report.steps} "
        f"version={report.final_version} status={report.status}"
        + (f" ({report.reason})" if report.reason else "")
    )
    if report.metrics_path:
        print(f"metrics: {report.metrics_path}")
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    config = build_run_config(load_config_file(args.config))
    config = replace(config, mode="bench")
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    config.validate()
    report = run_bench(config)
    for row in report.bench_rows:
        if row["failed"]:
            print(f"{row['checkpoint']} x {row['eval_set']}: FAILED ({row['error']})")
        else:
            print(
                f"{row['checkpoint']} x {row['eval_set']}: "
                f"reward={row['mean_reward']:.4f} "
                f"success={row['success_rate']:.4f} "
                f"rounds={row['mean_env_rounds']:.2f} "
                f"tasks={row['tasks']}"
            )
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .gateway import create_app

    data_dir, full = _resolve_data_dir(args.config)
    app = create_app(data_dir, ui_dir=full.get("ui_dir"))
    uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")
    return 0


def _cmd_inspect_buffer(args: argparse.Namespace) -> int:
    data_dir, _ = _resolve_data_dir(args.config)
    paths = DataPaths(data_dir)
    buffer = ExperienceBuffer(paths.buffer)
    try:
        stats = buffer.stats()
        for key in sorted(stats):
            print(f"{key}={stats[key]}")
        for task_key, row in sorted(buffer.task_stats().items()):
            detail = " ".join(f"{k}={v}" for k, v in row.items())
            print(f"task {task_key}: {detail}")
    finally:
        buffer.close()
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "bench": _cmd_bench,
        "serve": _cmd_serve,
        "inspect-buffer": _cmd_inspect_buffer,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, OrchestratorError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
