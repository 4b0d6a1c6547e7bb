"""Command-line orchestration: preprocess, train, eval, report.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure (with any
checkpoints already on disk preserved).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_run_config

SMOKE_MAX_ITERATIONS = 30
SMOKE_MAX_PEDS = 3


class UsageError(Exception):
    """Usage error carrying the message; mapped to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _limit_blas_threads() -> None:
    # The dense nets here are small enough that single-threaded BLAS is both
    # faster and reproducible across machines with different core counts.
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(1)
    except ImportError:
        pass


def _apply_smoke(cfg: RunConfig) -> None:
    cfg.irl.max_iterations = min(cfg.irl.max_iterations, SMOKE_MAX_ITERATIONS)
    cfg.checkpoint_interval = min(cfg.checkpoint_interval, SMOKE_MAX_ITERATIONS)
    cfg.seeds = cfg.seeds[:1]


def _prepare_cache(cfg: RunConfig) -> None:
    from . import runner
    cache = cfg.resolved_cache_dir()
    if not (cache / "scene.npz").exists():
        runner.preprocess_manifest(cfg.manifest_path, cache, cfg.episode.dt)


def _train_worker(cfg: RunConfig, seed: int, resume: bool,
                  stop_after: int | None, smoke_peds: bool) -> int:
    _limit_blas_threads()
    from . import runner
    scene, expert_set = runner.load_cache(cfg.resolved_cache_dir())
    if smoke_peds and len(scene.tracks) > SMOKE_MAX_PEDS:
        scene.tracks = scene.tracks[:SMOKE_MAX_PEDS]
        scene.__post_init__()
        expert_set.trajectories = expert_set.trajectories[:SMOKE_MAX_PEDS]
    runner.train_seed(cfg, seed, scene, expert_set, resume=resume,
                      stop_after=stop_after)
    return seed


def cmd_preprocess(args) -> int:
    from . import runner
    manifest = Path(args.manifest)
    out_dir = Path(args.out) if args.out else manifest.parent / f"{manifest.stem}_cache"
    summary = runner.preprocess_manifest(manifest, out_dir)
    print(f"cached {summary['tracks']} tracks / "
          f"{summary['expert_trajectories']} expert trajectories -> {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(Path(args.config))
    if args.seeds:
        cfg.seeds = [int(s) for s in args.seeds]
        cfg.validate()
    if args.smoke:
        _apply_smoke(cfg)
    if args.max_iterations is not None:
        cfg.irl.max_iterations = args.max_iterations
    _prepare_cache(cfg)
    if args.workers > 1 and len(cfg.seeds) > 1:
        with concurrent.futures.ProcessPoolExecutor(args.workers) as pool:
            futures = [pool.submit(_train_worker, cfg, seed, args.resume,
                                   args.stop_after, args.smoke)
                       for seed in cfg.seeds]
            for fut in futures:
                fut.result()
    else:
        for seed in cfg.seeds:
            _train_worker(cfg, seed, args.resume, args.stop_after, args.smoke)
    print(f"trained seeds {cfg.seeds} -> {cfg.run_dir()}")
    return 0


def cmd_eval(args) -> int:
    from . import runner, trajdata
    cfg = load_run_config(Path(args.config))
    manifest_path = Path(args.manifest)
    dataset = args.dataset or manifest_path.stem
    manifest = trajdata.parse_manifest(manifest_path)
    scene, _ = trajdata.scene_from_manifest(manifest, manifest_path.parent)
    seeds = [int(args.seed)] if args.seed is not None else cfg.seeds
    for seed in seeds:
        if args.checkpoint:
            ckpt = Path(args.checkpoint)
        else:
            ckpt = runner.latest_checkpoint(runner.seed_dir(cfg, seed) / "checkpoints")
            if ckpt is None:
                raise FileNotFoundError(
                    f"no checkpoint found for seed {seed}; train first")
        out_dir = runner.seed_dir(cfg, seed) / "metrics" / dataset
        summary = runner.evaluate_checkpoint(cfg, ckpt, scene, out_dir)
        print(f"seed {seed}: {summary['episodes']} episodes, "
              f"goal_success={summary['goal_success']:.3f} -> {out_dir}")
    return 0


def cmd_report(args) -> int:
    from . import report
    cfg = load_run_config(Path(args.config))
    datasets = args.datasets or []
    if not datasets:
        # Discover datasets from the first seed's metrics directory.
        from .runner import seed_dir
        metrics_dir = seed_dir(cfg, cfg.seeds[0]) / "metrics"
        if metrics_dir.exists():
            datasets = sorted(p.name for p in metrics_dir.iterdir() if p.is_dir())
    out_dir = report.build_report(cfg, datasets)
    print(f"report -> {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="socnav",
                     description="Socially-compliant navigation from "
                                 "pedestrian observations")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="clean a scene and cache expert features")
    p.add_argument("--manifest", required=True, help="scene manifest path")
    p.add_argument("--out", help="cache directory (default: <manifest>_cache)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one run per seed")
    p.add_argument("--config", required=True, help="run config (INI)")
    p.add_argument("--seeds", nargs="*", help="override the config seed list")
    p.add_argument("--resume", action="store_true",
                   help="continue from the latest checkpoint")
    p.add_argument("--smoke", action="store_true",
                   help="cap iterations and pedestrians for a fast sanity run")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel seed workers")
    p.add_argument("--max-iterations", type=int, default=None,
                   help="override the configured iteration count")
    p.add_argument("--stop-after", type=int, default=None,
                   help=argparse.SUPPRESS)  # simulate a kill for resume tests
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run the evaluation protocol on a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True, help="evaluation scene manifest")
    p.add_argument("--seed", default=None, help="evaluate one seed only")
    p.add_argument("--checkpoint", default=None,
                   help="explicit checkpoint path (default: latest per seed)")
    p.add_argument("--dataset", default=None,
                   help="dataset label for metric files (default: manifest stem)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="aggregate per-seed metrics into "
                                      "mean/CI tables and figures")
    p.add_argument("--config", required=True)
    p.add_argument("--datasets", nargs="*",
                   help="dataset labels (default: discovered)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    _limit_blas_threads()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure; checkpoints stay on disk
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
