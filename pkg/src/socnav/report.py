"""Cross-seed aggregation: mean/CI tables and the matching figures.

Reads the per-seed metric CSVs and training logs of a run, writes one
aggregate CSV per metric (per-seed columns plus mean and 95% CI columns) and
renders a PNG figure alongside each table.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

import numpy as np  # noqa: E402

from .config import RunConfig  # noqa: E402
from .metrics import mean_ci, moving_average  # noqa: E402
from .runner import _fmt, seed_dir  # noqa: E402

RMSE_WINDOW = 100


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _seeds_with(cfg: RunConfig, relpath: str) -> list[int]:
    """Configured seeds that actually produced the given per-seed file."""
    return [s for s in cfg.seeds if (seed_dir(cfg, s) / relpath).exists()]


def _write_table(path: Path, index_name: str, index: list,
                 per_seed: dict[int, np.ndarray]) -> None:
    seeds = sorted(per_seed)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([index_name, *[f"seed_{s}" for s in seeds], "mean", "ci95"])
        for i, idx in enumerate(index):
            vals = [per_seed[s][i] for s in seeds]
            mean, ci = mean_ci(vals)
            w.writerow([idx, *[_fmt(v) for v in vals], _fmt(mean), _fmt(ci)])


def aggregate_goal_success(cfg: RunConfig, dataset: str, out_dir: Path) -> None:
    seeds = _seeds_with(cfg, f"metrics/{dataset}/goal_success.csv")
    if not seeds:
        return
    per_seed = {}
    for seed in seeds:
        _, rows = _read_csv(seed_dir(cfg, seed) / "metrics" / dataset
                            / "goal_success.csv")
        per_seed[seed] = np.array([float(rows[0][1])])
    _write_table(out_dir / f"goal_success_{dataset}.csv", "metric",
                 ["goal_success"], per_seed)
    seeds = sorted(per_seed)
    vals = [per_seed[s][0] for s in seeds]
    mean, ci = mean_ci(vals)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar([f"seed {s}" for s in seeds], vals, color="tab:blue", alpha=0.7)
    ax.axhline(mean, color="tab:red", label=f"mean = {mean:.2f} +- {ci:.2f}")
    ax.set_ylabel("goal-reaching success rate")
    ax.set_ylim(0, 1.05)
    ax.set_title(f"Goal success ({dataset})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / f"goal_success_{dataset}.png", dpi=120)
    plt.close(fig)


def aggregate_intrusions(cfg: RunConfig, dataset: str, out_dir: Path) -> None:
    seeds = _seeds_with(cfg, f"metrics/{dataset}/intrusions.csv")
    if not seeds:
        return
    per_seed = {}
    for seed in seeds:
        _, rows = _read_csv(seed_dir(cfg, seed) / "metrics" / dataset
                            / "intrusions.csv")
        total = next(r for r in rows if r[0] == "total")
        per_seed[seed] = np.array([float(total[1]), float(total[2])])
    _write_table(out_dir / f"intrusions_{dataset}.csv", "space",
                 ["intimate", "personal"], per_seed)
    seeds = sorted(per_seed)
    means, cis = [], []
    for i in range(2):
        m, c = mean_ci([per_seed[s][i] for s in seeds])
        means.append(m)
        cis.append(c)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar(["intimate", "personal"], means, yerr=cis, capsize=6,
           color=["tab:red", "tab:orange"], alpha=0.8)
    ax.set_ylabel("intrusion count")
    ax.set_title(f"Proxemic intrusions ({dataset})")
    fig.tight_layout()
    fig.savefig(out_dir / f"intrusions_{dataset}.png", dpi=120)
    plt.close(fig)


def aggregate_drift(cfg: RunConfig, dataset: str, out_dir: Path) -> None:
    seeds = _seeds_with(cfg, f"metrics/{dataset}/drift.csv")
    if not seeds:
        return
    per_seed = {}
    times = None
    for seed in seeds:
        _, rows = _read_csv(seed_dir(cfg, seed) / "metrics" / dataset
                            / "drift.csv")
        t = np.array([float(r[0]) for r in rows])
        d = np.array([float(r[1]) for r in rows])
        if times is None or len(t) < len(times):
            times = t
        per_seed[seed] = d
    n = len(times)
    per_seed = {s: v[:n] for s, v in per_seed.items()}
    _write_table(out_dir / f"drift_{dataset}.csv", "t",
                 [_fmt(t) for t in times], per_seed)
    seeds = sorted(per_seed)
    stack = np.vstack([per_seed[s] for s in seeds])
    mean = stack.mean(axis=0)
    if len(seeds) > 1:
        ci = 1.96 * stack.std(axis=0, ddof=1) / np.sqrt(len(seeds))
    else:
        ci = np.zeros_like(mean)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(times, mean, color="tab:blue", label="mean drift")
    ax.fill_between(times, mean - ci, mean + ci, color="tab:blue", alpha=0.25,
                    label="95% CI")
    ax.set_xlabel("time since episode start [s]")
    ax.set_ylabel("distance from ground truth [m]")
    ax.set_title(f"Drift ({dataset})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / f"drift_{dataset}.png", dpi=120)
    plt.close(fig)


def aggregate_feature_rmse(cfg: RunConfig, out_dir: Path) -> None:
    seeds = _seeds_with(cfg, "logs/irl_log.csv")
    if not seeds:
        return
    per_seed = {}
    iters = None
    for seed in seeds:
        _, rows = _read_csv(seed_dir(cfg, seed) / "logs" / "irl_log.csv")
        if not rows:
            return
        it = np.array([int(r[0]) for r in rows])
        rmse = moving_average(np.array([float(r[5]) for r in rows]), RMSE_WINDOW)
        if iters is None or len(it) < len(iters):
            iters = it
        per_seed[seed] = rmse
    n = len(iters)
    per_seed = {s: v[:n] for s, v in per_seed.items()}
    _write_table(out_dir / "feature_rmse.csv", "iteration",
                 [int(i) for i in iters], per_seed)
    seeds = sorted(per_seed)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for s in seeds:
        ax.plot(iters, per_seed[s], alpha=0.35, label=f"seed {s}")
    stack = np.vstack([per_seed[s] for s in seeds])
    ax.plot(iters, stack.mean(axis=0), color="black", linewidth=1.6, label="mean")
    ax.set_xlabel("iteration")
    ax.set_ylabel(f"feature RMSE (window {RMSE_WINDOW})")
    ax.set_title("Expert feature matching")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_dir / "feature_rmse.png", dpi=120)
    plt.close(fig)


def aggregate_interactions(cfg: RunConfig, out_dir: Path) -> None:
    seeds = _seeds_with(cfg, "logs/interactions.csv")
    if not seeds:
        return
    per_seed = {}
    updates = None
    for seed in seeds:
        _, rows = _read_csv(seed_dir(cfg, seed) / "logs" / "interactions.csv")
        if not rows:
            return
        env = np.array([int(r[0]) for r in rows], dtype=np.float64)
        upd = np.array([int(r[1]) for r in rows])
        if updates is None or len(upd) < len(updates):
            updates = upd
        per_seed[seed] = env
    n = len(updates)
    per_seed = {s: v[:n] for s, v in per_seed.items()}
    _write_table(out_dir / "env_interactions.csv", "irl_updates",
                 [int(u) for u in updates], per_seed)
    seeds = sorted(per_seed)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    stack = np.vstack([per_seed[s] for s in seeds])
    ax.plot(updates, stack.mean(axis=0), color="tab:green")
    ax.set_xlabel("reward-learning updates")
    ax.set_ylabel("environment interactions")
    ax.set_title("Interactions per reward update (fixed ratio)")
    fig.tight_layout()
    fig.savefig(out_dir / "env_interactions.png", dpi=120)
    plt.close(fig)


def build_report(cfg: RunConfig, datasets: list[str]) -> Path:
    """Aggregate every metric found for the given datasets; returns the
    report directory."""
    out_dir = cfg.run_dir() / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    for dataset in datasets:
        aggregate_goal_success(cfg, dataset, out_dir)
        aggregate_intrusions(cfg, dataset, out_dir)
        aggregate_drift(cfg, dataset, out_dir)
    aggregate_feature_rmse(cfg, out_dir)
    aggregate_interactions(cfg, out_dir)
    return out_dir
