"""Hand-crafted baseline reward for the comparison SAC agent.

Three additive parts: progress projected onto the goal direction, a sparse
goal bonus, and a collision/proximity penalty keyed to the pedestrian disc
radius.  Used only by the `sac_handcrafted` training path.
"""

from __future__ import annotations

import numpy as np

APPROACH_SCALE = 0.1
PROXIMITY_SCALE = 0.01


def r_approach(x_t: np.ndarray, x_prev: np.ndarray, x_goal: np.ndarray) -> float:
    """Progress of the step x_prev -> x_t along the unit direction to the goal.

    The goal direction is anchored at the previous position; at the goal the
    direction is undefined and the term is zero (the episode ends there).
    """
    d_rg = np.asarray(x_goal, dtype=float) - np.asarray(x_prev, dtype=float)
    norm = float(np.hypot(*d_rg))
    if norm <= 1e-9:
        return 0.0
    delta = np.asarray(x_t, dtype=float) - np.asarray(x_prev, dtype=float)
    return APPROACH_SCALE * float(delta @ d_rg) / norm


def r_goal(x_r: np.ndarray, x_goal: np.ndarray, goal_radius: float) -> float:
    """1 inside the goal disc (boundary inclusive), else 0."""
    d = np.hypot(*(np.asarray(x_r, dtype=float) - np.asarray(x_goal, dtype=float)))
    return 1.0 if d <= goal_radius else 0.0


def r_col(d_min: float, r_ped: float) -> float:
    """-1 inside the collision band, a mild proximity penalty farther out.

    Branches are checked in order so the collision branch shadows the
    proximity branch; beyond 4 radii the term is zero.
    """
    if d_min < 0:
        raise ValueError("d_min must be nonnegative")
    if d_min < 2.0 * r_ped:
        return -1.0
    if d_min < 4.0 * r_ped:
        return -PROXIMITY_SCALE * d_min
    return 0.0


def total(x_t: np.ndarray, x_prev: np.ndarray, x_goal: np.ndarray,
          goal_radius: float, d_min: float, r_ped: float) -> float:
    return (r_approach(x_t, x_prev, x_goal)
            + r_col(d_min, r_ped)
            + r_goal(x_t, x_goal, goal_radius))
