"""Evaluation metrics for social navigation policies.

Proxemic intrusions count, per evaluation step and pedestrian, how often the
agent enters intimate ([0, 0.5] m) or personal ((0.5, 1.2] m) distance.
Drift tracks the l2 distance from the replaced pedestrian's recorded
positions over an initial horizon.  Goal success is the fraction of episodes
that end at the goal (collision and timeout both count as failure).  Feature
RMSE compares mean expert and policy state vectors during training, and the
interaction counter records the fixed ratio of environment steps to reward
updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import trajdata
from .simenv import CrowdSim, StepOutcome, Terminal
from .trajdata import WorldTrack

INTIMATE_MAX = 0.5
PERSONAL_MAX = 1.2


class EmptyEvalSet(ValueError):
    """Metrics requested over zero evaluation episodes."""


class DimensionMismatch(ValueError):
    """Feature vectors of different lengths."""


@dataclass
class EvalEpisode:
    replaced_ped_id: int
    start_time: float
    dt: float
    agent_xy: np.ndarray                   # (T+1, 2), row 0 is the reset state
    ped_snapshots: list[np.ndarray]        # per row: (n_i, 2) pedestrian positions
    terminal: Terminal
    ground_truth: WorldTrack

    @property
    def times(self) -> np.ndarray:
        """Episode-relative timestamps, multiples of dt."""
        return self.dt * np.arange(len(self.agent_xy))


@dataclass
class IntrusionCounts:
    intimate: int = 0
    personal: int = 0


def proxemic_counts(episode: EvalEpisode) -> IntrusionCounts:
    """Per time step and pedestrian: intimate if distance in [0, 0.5],
    personal if in (0.5, 1.2]; the intervals never double-count."""
    counts = IntrusionCounts()
    for agent, peds in zip(episode.agent_xy, episode.ped_snapshots):
        if len(peds) == 0:
            continue
        d = np.hypot(peds[:, 0] - agent[0], peds[:, 1] - agent[1])
        counts.intimate += int(np.sum(d <= INTIMATE_MAX))
        counts.personal += int(np.sum((d > INTIMATE_MAX) & (d <= PERSONAL_MAX)))
    return counts


def drift(episode: EvalEpisode, horizon: float = 10.0) -> np.ndarray:
    """(t, distance) rows against the replaced pedestrian's recorded track,
    truncated at the horizon, the episode end, and the track end."""
    rows = []
    track = episode.ground_truth
    for t, agent in zip(episode.times, episode.agent_xy):
        if t > horizon + 1e-9:
            break
        abs_t = episode.start_time + t
        if abs_t > track.end_time + 1e-9:
            break
        gt = trajdata.interpolate_position(track, abs_t)
        rows.append((t, float(np.hypot(agent[0] - gt[0], agent[1] - gt[1]))))
    return np.array(rows).reshape(-1, 2)


def aggregate_drift(episodes: list[EvalEpisode],
                    horizon: float = 10.0) -> np.ndarray:
    """Mean drift per step index across episodes (series aligned at start)."""
    if not episodes:
        raise EmptyEvalSet("no episodes to aggregate")
    series = [drift(e, horizon) for e in episodes]
    n_steps = max(len(s) for s in series)
    dt = episodes[0].dt
    out = []
    for k in range(n_steps):
        vals = [s[k, 1] for s in series if len(s) > k]
        out.append((k * dt, float(np.mean(vals))))
    return np.array(out).reshape(-1, 2)


def goal_success(episodes: list[EvalEpisode]) -> float:
    """Fraction of episodes that reached the goal; collisions and timeouts
    are failures."""
    if not episodes:
        raise EmptyEvalSet("goal success over zero episodes")
    hits = sum(1 for e in episodes if e.terminal is Terminal.GOAL_REACHED)
    return hits / len(episodes)


def feature_rmse(expert_mean: np.ndarray, policy_mean: np.ndarray) -> float:
    expert_mean = np.asarray(expert_mean, dtype=np.float64)
    policy_mean = np.asarray(policy_mean, dtype=np.float64)
    if expert_mean.shape != policy_mean.shape:
        raise DimensionMismatch(
            f"mean vectors differ: {expert_mean.shape} vs {policy_mean.shape}")
    diff = expert_mean - policy_mean
    return float(np.sqrt(np.mean(diff * diff)))


def moving_average(series, window: int = 100) -> np.ndarray:
    """Trailing moving average; prefix entries average what is available."""
    series = np.asarray(series, dtype=np.float64)
    out = np.empty_like(series)
    csum = np.concatenate([[0.0], np.cumsum(series)])
    for i in range(len(series)):
        lo = max(0, i - window + 1)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out


@dataclass
class InteractionCounter:
    """One (env_interactions, irl_updates) pair recorded per reward update."""

    pairs: list[tuple[int, int]] = field(default_factory=list)

    def record(self, env_interactions: int, irl_updates: int) -> None:
        if self.pairs:
            last = self.pairs[-1]
            if env_interactions < last[0] or irl_updates < last[1]:
                raise ValueError("interaction counters must be nondecreasing")
        self.pairs.append((env_interactions, irl_updates))


def mean_ci(values) -> tuple[float, float]:
    """Across-seed mean and 95% half width (1.96 * standard error)."""
    values = np.asarray(values, dtype=np.float64)
    mean = float(np.mean(values))
    if len(values) < 2:
        return mean, 0.0
    stderr = float(np.std(values, ddof=1) / np.sqrt(len(values)))
    return mean, 1.96 * stderr


def collect_eval_episode(env: CrowdSim, policy_fn, ped_id: int,
                         start_time: float | None = None
                         ) -> tuple[EvalEpisode, list[StepOutcome]]:
    """Roll one deterministic evaluation episode, replacing `ped_id`.

    `policy_fn` maps a feature vector to a simulator Action.  Returns the
    episode record plus the raw outcomes for trace export.
    """
    outcome = env.reset(ped_id, start_time)
    outcomes = [outcome]
    agent_xy = [(outcome.agent.x, outcome.agent.y)]
    snapshots = [np.array([(x, y) for _, x, y
                           in env.pedestrian_positions(env.sim_time)]).reshape(-1, 2)]
    while outcome.terminal is Terminal.RUNNING:
        outcome = env.step(policy_fn(outcome.features))
        outcomes.append(outcome)
        agent_xy.append((outcome.agent.x, outcome.agent.y))
        snapshots.append(np.array([(x, y) for _, x, y
                                   in env.pedestrian_positions(env.sim_time)]
                                  ).reshape(-1, 2))
    episode = EvalEpisode(
        replaced_ped_id=ped_id,
        start_time=env.start_time,
        dt=env.config.dt,
        agent_xy=np.array(agent_xy),
        ped_snapshots=snapshots,
        terminal=outcome.terminal,
        ground_truth=env.scene.track(ped_id),
    )
    return episode, outcomes
