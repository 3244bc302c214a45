"""Command-line entry point: ``tracklearn {run,eval,bench,replay}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as config_mod
from .exceptions import ConfigValidationError, TrackLearnError
from .experiment import bench, evaluate_snapshot, replay_run, run_experiment
from .pipeline import MODES

logger = logging.getLogger("tracklearn")


def _parse_seeds(text: str):
    if ".." in text:
        a, b = text.split("..", 1)
        return list(range(int(a), int(b) + 1))
    return [int(s) for s in text.split(",") if s.strip()]


def _load(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.from_dict({})
    return config_mod.override(
        cfg,
        seed=getattr(args, "seed", None),
        mode=getattr(args, "mode", None),
        output_dir=getattr(args, "output_dir", None),
        frames=getattr(args, "frames", None),
    )


def _default_output(cfg: config_mod.RunConfig) -> Path:
    if cfg.output_dir:
        return Path(cfg.output_dir)
    root = Path(os.environ.get(config_mod.OUTPUT_ROOT_ENV, "runs"))
    return root / f"{cfg.mode}_seed{cfg.seed}"


def _run_one(cfg, out, stream, dump_stream):
    art = run_experiment(cfg, out, stream, dump_stream)
    return {k: v for k, v in art.summary.items() if k != "config"}


def cmd_run(args) -> int:
    cfg = _load(args)
    out = _default_output(cfg)
    if args.seeds:
        seeds = _parse_seeds(args.seeds)
        jobs = []
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            for s in seeds:
                c = config_mod.override(cfg, seed=s)
                jobs.append(pool.submit(_run_one, c, out / f"seed_{s}", None, args.dump_stream))
            results = [j.result() for j in jobs]
        for r in results:
            print(json.dumps(r))
        return 0 if all(r["status"] == "completed" for r in results) else 2
    summary = _run_one(cfg, out, args.stream, args.dump_stream)
    print(json.dumps(summary, indent=1))
    return 0 if summary["status"] == "completed" else 2


def cmd_eval(args) -> int:
    cfg = _load(args)
    report = evaluate_snapshot(args.snapshot, cfg)
    print(json.dumps(report, indent=1))
    return 0


def cmd_bench(args) -> int:
    cfg = _load(args)
    report = bench(cfg, frames=min(args.bench_frames, cfg.world.frames), calls=args.calls)
    for key in ("f", "4f"):
        r = report[key]
        print(f"{key:>2} (f={r['feature_dim']}): predict {r['predict_ns']:.0f} ns, update {r['update_ns']:.0f} ns")
    print(f"per frame: {report['frame_ns']:.0f} ns")
    print(f"prediction-time ratio 4f/f: {report['predict_ratio_4f_over_f']:.3f}")
    if args.json:
        print(json.dumps(report))
    return 0


def cmd_replay(args) -> int:
    report = replay_run(args.run_dir)
    print(json.dumps(report, indent=1))
    return 0 if report["identical"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracklearn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, output=True):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--frames", type=int)
        if output:
            p.add_argument("--output-dir", help=f"defaults to ${config_mod.OUTPUT_ROOT_ENV}/<mode>_seed<seed>")

    p = sub.add_parser("run", help="run an experiment")
    common(p)
    p.add_argument("--seeds", help="sweep, e.g. 0..4 or 1,5,9; one subdirectory per seed")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--stream", help="replay a dumped cluster stream instead of simulating")
    p.add_argument("--dump-stream", action="store_true", help="also write stream.jsonl")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="evaluate a model snapshot")
    p.add_argument("snapshot")
    common(p, output=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time prediction, update and frame processing")
    common(p, output=False)
    p.add_argument("--bench-frames", type=int, default=500)
    p.add_argument("--calls", type=int, default=100_000)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("replay", help="replay a run's sample log and compare with its final snapshot")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigValidationError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return 2
    except TrackLearnError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
