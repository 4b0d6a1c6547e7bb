"""Agent-centric state features: ring-sector collision risk plus goal layout.

Pedestrians inside two concentric rings around the agent are binned into
heading-relative angular sectors; each occupied cell carries the normalized
approach speed of its most threatening pedestrian, floored so that stationary
neighbors remain visible.  Goal distance, goal bearing in the agent's heading
frame, and the agent's own speed complete the vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

INNER_RADIUS = 0.65
OUTER_RADIUS = 1.0
N_SECTORS = 8
PRESENCE_FLOOR = 0.25
MAX_SPEED = 1.5

N_RISK = 2 * N_SECTORS
GOAL_DIST_IDX = N_RISK
BEARING_COS_IDX = N_RISK + 1
BEARING_SIN_IDX = N_RISK + 2
SPEED_IDX = N_RISK + 3
FEATURE_DIM = N_RISK + 4


@dataclass(frozen=True)
class AgentKinematics:
    """Planar pose and speed; heading in radians, wrapped to (-pi, pi]."""

    x: float
    y: float
    heading: float
    speed: float


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    return np.pi - (np.pi - a) % (2.0 * np.pi)


def extract(agent: AgentKinematics, peds: Iterable[Sequence[float]],
            goal: Sequence[float], roi_diag: float) -> np.ndarray:
    """Feature vector for one agent state.

    `peds` holds (x, y, vx, vy) per visible pedestrian.  Sector 0 is centered
    on the agent's heading; the inner ring occupies the first 8 slots.
    Per-cell contributions combine by max, so adding a pedestrian never
    lowers a risk cell.
    """
    if roi_diag <= 0:
        raise ValueError("roi_diag must be positive")
    out = np.zeros(FEATURE_DIM)
    avx = agent.speed * np.cos(agent.heading)
    avy = agent.speed * np.sin(agent.heading)
    for px, py, pvx, pvy in peds:
        dx, dy = px - agent.x, py - agent.y
        dist = np.hypot(dx, dy)
        if dist > OUTER_RADIUS:
            continue
        if dist > 1e-12:
            rel = wrap_angle(np.arctan2(dy, dx) - agent.heading)
            sector = int(np.floor((rel + np.pi / N_SECTORS)
                                  / (2.0 * np.pi / N_SECTORS))) % N_SECTORS
            approach = -((pvx - avx) * dx + (pvy - avy) * dy) / dist
        else:
            sector = 0
            approach = 0.0
        ring = 0 if dist <= INNER_RADIUS else 1
        w = max(PRESENCE_FLOOR, min(max(approach / MAX_SPEED, 0.0), 1.0))
        cell = ring * N_SECTORS + sector
        if w > out[cell]:
            out[cell] = w
    gx, gy = float(goal[0]), float(goal[1])
    goal_dist = np.hypot(gx - agent.x, gy - agent.y)
    out[GOAL_DIST_IDX] = min(goal_dist / roi_diag, 1.0)
    if goal_dist > 1e-12:
        bearing = wrap_angle(np.arctan2(gy - agent.y, gx - agent.x) - agent.heading)
        out[BEARING_COS_IDX] = np.cos(bearing)
        out[BEARING_SIN_IDX] = np.sin(bearing)
    else:
        out[BEARING_COS_IDX] = 1.0
        out[BEARING_SIN_IDX] = 0.0
    out[SPEED_IDX] = min(max(agent.speed / MAX_SPEED, 0.0), 1.0)
    return out
