"""Run orchestration shared by the CLI and the test suite.

Handles the on-disk run layout (out/<run-name>/seed_<s>/{checkpoints,logs,
metrics}), checkpoint serialization, deterministic log rewriting, resumable
training, and checkpoint evaluation.  Every output byte is a pure function of
(config, seed); no timestamps are written.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import metrics, simenv, trajdata
from .config import RunConfig
from .irl import Trainer
from .metrics import EmptyEvalSet, collect_eval_episode
from .sac import SACAgent
from .simenv import CrowdSim
from .trajdata import ExpertSet, Scene

CHECKPOINT_FORMAT = "socnav-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointVersionMismatch(ValueError):
    """Checkpoint written by an incompatible format version."""


def _fmt(x) -> str:
    """Shortest exact decimal form; deterministic across runs."""
    return repr(float(x))


def save_checkpoint(path: Path, state: dict) -> None:
    arrays: dict[str, np.ndarray] = {}

    def strip(obj):
        if isinstance(obj, np.ndarray):
            key = f"a{len(arrays)}"
            arrays[key] = obj
            return {"__npz__": key}
        if isinstance(obj, dict):
            return {k: strip(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [strip(v) for v in obj]
        if isinstance(obj, (np.integer,)):
            return int(obj)
        if isinstance(obj, (np.floating,)):
            return float(obj)
        return obj

    meta = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "state": strip(state)}
    blob = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, __meta__=blob, **arrays)


def load_checkpoint(path: Path) -> dict:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if (meta.get("format") != CHECKPOINT_FORMAT
                or meta.get("version") != CHECKPOINT_VERSION):
            raise CheckpointVersionMismatch(
                f"{path} is not a version-{CHECKPOINT_VERSION} checkpoint")

        def restore(obj):
            if isinstance(obj, dict):
                if set(obj) == {"__npz__"}:
                    return data[obj["__npz__"]].copy()
                return {k: restore(v) for k, v in obj.items()}
            if isinstance(obj, list):
                return [restore(v) for v in obj]
            return obj

        return restore(meta["state"])


def seed_dir(cfg: RunConfig, seed: int) -> Path:
    return cfg.run_dir() / f"seed_{seed}"


def latest_checkpoint(checkpoint_dir: Path) -> Path | None:
    candidates = sorted(Path(checkpoint_dir).glob("ckpt_*.npz"))
    return candidates[-1] if candidates else None


def write_training_logs(log_dir: Path, trainer: Trainer) -> None:
    """Full deterministic rewrite of the per-update CSV logs."""
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    with (log_dir / "sac_log.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "critic_loss", "actor_loss", "alpha",
                    "mean_episode_return"])
        for m, critic, actor, alpha, ret in trainer.logs.sac_rows:
            w.writerow([int(m), _fmt(critic), _fmt(actor), _fmt(alpha), _fmt(ret)])
    with (log_dir / "irl_log.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective", "l_obs", "l_is", "env_interactions",
                    "feature_rmse"])
        for m, obj, lo, li, steps, rmse in trainer.logs.irl_rows:
            w.writerow([int(m), _fmt(obj), _fmt(lo), _fmt(li), int(steps),
                        _fmt(rmse)])
    with (log_dir / "interactions.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["env_interactions", "irl_updates"])
        for env_steps, irl_updates in trainer.logs.interactions.pairs:
            w.writerow([int(env_steps), int(irl_updates)])


def train_seed(cfg: RunConfig, seed: int, scene: Scene, expert_set: ExpertSet,
               resume: bool = False, stop_after: int | None = None,
               max_iterations: int | None = None) -> Trainer:
    """Train one seed to completion (or to `stop_after`), checkpointing at the
    configured interval.  With resume=True, picks up the latest checkpoint."""
    sdir = seed_dir(cfg, seed)
    ckpt_dir = sdir / "checkpoints"
    log_dir = sdir / "logs"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_dir.mkdir(parents=True, exist_ok=True)
    (sdir / "metrics").mkdir(parents=True, exist_ok=True)
    (sdir / "resolved_config.json").write_text(cfg.to_json() + "\n")

    trainer = Trainer(scene, expert_set, cfg.irl, cfg.sac_config(), seed,
                      algorithm=cfg.algorithm, episode_config=cfg.episode)
    if resume:
        existing = latest_checkpoint(ckpt_dir)
        if existing is not None:
            trainer.load_state_dict(load_checkpoint(existing))
    m_max = cfg.irl.max_iterations if max_iterations is None else max_iterations
    while True:
        target = min(m_max,
                     (trainer.iteration // cfg.checkpoint_interval + 1)
                     * cfg.checkpoint_interval)
        if stop_after is not None:
            target = min(target, stop_after)
        trainer.run(max_iterations=target)
        save_checkpoint(ckpt_dir / f"ckpt_{trainer.iteration:09d}.npz",
                        trainer.state_dict())
        write_training_logs(log_dir, trainer)
        if trainer.iteration >= m_max or (stop_after is not None
                                          and trainer.iteration >= stop_after):
            break
    return trainer


def load_policy(cfg: RunConfig, checkpoint_path: Path) -> SACAgent:
    state = load_checkpoint(checkpoint_path)
    agent = SACAgent(cfg.sac_config(), np.random.default_rng(0))
    agent.load_state_dict(state["agent"])
    return agent


def evaluate_checkpoint(cfg: RunConfig, checkpoint_path: Path, eval_scene: Scene,
                        out_dir: Path) -> dict:
    """One deterministic-policy episode per pedestrian in the eval scene;
    exports per-seed metric CSVs and episode traces."""
    if not eval_scene.ped_ids:
        raise EmptyEvalSet("evaluation scene has no pedestrians")
    agent = load_policy(cfg, checkpoint_path)

    def policy_fn(obs):
        return agent.act(obs, deterministic=True).env_action

    out_dir = Path(out_dir)
    trace_dir = out_dir / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)
    env = CrowdSim(eval_scene, cfg.episode)
    episodes = []
    for pid in eval_scene.ped_ids:
        episode, outcomes = collect_eval_episode(env, policy_fn, pid)
        episodes.append(episode)
        simenv.write_episode_trace(trace_dir / f"trace_{pid}.csv", outcomes,
                                   cfg.episode.dt)

    success = metrics.goal_success(episodes)
    with (out_dir / "episodes.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ped_id", "terminal", "steps"])
        for e in episodes:
            w.writerow([e.replaced_ped_id, e.terminal.value, len(e.agent_xy) - 1])
    with (out_dir / "goal_success.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episodes", "goal_success"])
        w.writerow([len(episodes), _fmt(success)])
    with (out_dir / "intrusions.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ped_id", "intimate", "personal"])
        total = metrics.IntrusionCounts()
        for e in episodes:
            c = metrics.proxemic_counts(e)
            total.intimate += c.intimate
            total.personal += c.personal
            w.writerow([e.replaced_ped_id, c.intimate, c.personal])
        w.writerow(["total", total.intimate, total.personal])
    drift_series = metrics.aggregate_drift(episodes)
    with (out_dir / "drift.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mean_distance"])
        for t, d in drift_series:
            w.writerow([_fmt(t), _fmt(d)])
    return {"episodes": len(episodes), "goal_success": success,
            "intimate": total.intimate, "personal": total.personal}


def preprocess_manifest(manifest_path: Path, out_dir: Path,
                        episode_dt: float = 0.04) -> dict:
    """Build, clean, and cache the scene plus its expert feature trajectories."""
    manifest = trajdata.parse_manifest(manifest_path)
    scene, report = trajdata.scene_from_manifest(manifest,
                                                 Path(manifest_path).parent)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trajdata.save_scene(out_dir / "scene.npz", scene)
    expert_set = trajdata.build_expert_set(scene, dt=episode_dt)
    trajdata.save_expert_set(out_dir / "expert_features.npz", expert_set)
    report_dict = report.__dict__ if report is not None else {
        "kept": len(scene.tracks), "too_short": 0, "outside_roi": 0,
        "unmappable": 0, "collision": 0}
    (out_dir / "cleaning_report.json").write_text(
        json.dumps(report_dict, sort_keys=True) + "\n")
    return {"tracks": len(scene.tracks), "expert_trajectories": len(expert_set)}


def load_cache(cache_dir: Path) -> tuple[Scene, ExpertSet]:
    cache_dir = Path(cache_dir)
    scene = trajdata.load_scene(cache_dir / "scene.npz")
    expert_set = trajdata.load_expert_set(cache_dir / "expert_features.npz")
    return scene, expert_set
