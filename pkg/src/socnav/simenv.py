"""Deterministic episodic crowd simulator.

Recorded pedestrians are replayed open-loop from a scene; one of them is
removed and replaced by the learning agent, whose goal is that pedestrian's
final position.  The agent moves with instantaneous speed response and a
bounded heading rate.  Episodes end on goal arrival, collision, or timeout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import features, trajdata
from .features import AgentKinematics, wrap_angle
from .trajdata import Scene

MAX_TARGET_SPEED = features.MAX_SPEED     # m/s
MAX_HEADING_RATE = 270.0                  # deg/s, symmetric bound


class UnknownPedestrian(KeyError):
    """reset() asked for a ped_id the scene does not contain."""


class EpisodeFinished(RuntimeError):
    """step() called after a terminal outcome."""


class Terminal(Enum):
    RUNNING = "running"
    GOAL_REACHED = "goal_reached"
    TIMEOUT = "timeout"
    COLLISION = "collision"


@dataclass
class Action:
    target_speed: float    # m/s, clamped to [0, MAX_TARGET_SPEED]
    heading_rate: float    # deg/s, clamped to [-MAX_HEADING_RATE, +MAX_HEADING_RATE]


@dataclass(frozen=True)
class EpisodeConfig:
    dt: float = 0.04
    goal_radius: float = 0.10
    max_steps: int = 1000
    pedestrian_radius: float = 0.10

    @property
    def collision_distance(self) -> float:
        return 2.0 * self.pedestrian_radius


@dataclass
class StepOutcome:
    features: np.ndarray
    terminal: Terminal
    agent: AgentKinematics
    step_index: int
    min_ped_distance: float = float("inf")


class CrowdSim:
    """One mutable episode at a time; the scene itself is never modified."""

    def __init__(self, scene: Scene, config: EpisodeConfig = EpisodeConfig()):
        self.scene = scene
        self.config = config
        self._terminal = Terminal.RUNNING
        self._started = False

    def reset(self, ped_id: int, start_time: float | None = None) -> StepOutcome:
        """Replace `ped_id` with the agent at `start_time` (track start if omitted).

        The agent inherits the pedestrian's position, heads along its next
        dataset displacement, starts at speed zero, and aims for the track's
        final position.  No terminal checks happen at reset.
        """
        if ped_id not in self.scene.ped_ids:
            raise UnknownPedestrian(f"ped_id {ped_id} not in scene")
        track = self.scene.track(ped_id)
        if start_time is None:
            start_time = track.start_time
        pos = trajdata.interpolate_position(track, start_time)
        vel = trajdata.track_velocity(track, start_time, self.scene.frame_dt)
        heading = float(np.arctan2(vel[1], vel[0])) if np.hypot(*vel) > 1e-9 else 0.0
        self._ped_id = ped_id
        self._start_time = float(start_time)
        self._goal = track.goal.copy()
        self._agent = AgentKinematics(float(pos[0]), float(pos[1]), heading, 0.0)
        self._step_index = 0
        self._terminal = Terminal.RUNNING
        self._started = True
        return self._outcome()

    def step(self, action: Action) -> StepOutcome:
        """Advance one timestep.  Out-of-range actions are clamped."""
        if not self._started:
            raise EpisodeFinished("reset() must be called before step()")
        if self._terminal is not Terminal.RUNNING:
            raise EpisodeFinished(f"episode already ended: {self._terminal.value}")
        speed = min(max(action.target_speed, 0.0), MAX_TARGET_SPEED)
        rate = min(max(action.heading_rate, -MAX_HEADING_RATE), MAX_HEADING_RATE)
        dt = self.config.dt
        heading = wrap_angle(self._agent.heading + np.radians(rate) * dt)
        x = self._agent.x + speed * np.cos(heading) * dt
        y = self._agent.y + speed * np.sin(heading) * dt
        self._agent = AgentKinematics(x, y, heading, speed)
        self._step_index += 1
        d_min = self._min_ped_distance()
        if np.hypot(x - self._goal[0], y - self._goal[1]) <= self.config.goal_radius:
            self._terminal = Terminal.GOAL_REACHED
        elif d_min < self.config.collision_distance:
            self._terminal = Terminal.COLLISION
        elif self._step_index >= self.config.max_steps:
            self._terminal = Terminal.TIMEOUT
        return self._outcome(d_min)

    def pedestrian_positions(self, t: float) -> list[tuple[int, float, float]]:
        """Interpolated positions of pedestrians whose tracks span scene time t."""
        return [(pid, float(p[0]), float(p[1]))
                for pid, p, _ in trajdata.pedestrian_states(self.scene, t,
                                                            exclude=self._ped_id)]

    @property
    def sim_time(self) -> float:
        return self._start_time + self._step_index * self.config.dt

    @property
    def start_time(self) -> float:
        return self._start_time

    @property
    def goal(self) -> np.ndarray:
        return self._goal

    @property
    def agent(self) -> AgentKinematics:
        return self._agent

    @property
    def replaced_ped_id(self) -> int:
        return self._ped_id

    def current_pedestrians(self) -> list[tuple[float, float, float, float]]:
        """(x, y, vx, vy) rows for the feature extractor at the current time."""
        return [(p[0], p[1], v[0], v[1])
                for _, p, v in trajdata.pedestrian_states(self.scene, self.sim_time,
                                                          exclude=self._ped_id)]

    def _min_ped_distance(self) -> float:
        d = float("inf")
        for _, p, _ in trajdata.pedestrian_states(self.scene, self.sim_time,
                                                  exclude=self._ped_id):
            d = min(d, float(np.hypot(p[0] - self._agent.x, p[1] - self._agent.y)))
        return d

    def _outcome(self, d_min: float | None = None) -> StepOutcome:
        feats = features.extract(self._agent, self.current_pedestrians(),
                                 (self._goal[0], self._goal[1]), self.scene.roi.diag)
        if d_min is None:
            d_min = self._min_ped_distance()
        return StepOutcome(feats, self._terminal, self._agent,
                           self._step_index, d_min)


def write_episode_trace(path: Path, outcomes: list[StepOutcome], dt: float) -> None:
    """CSV trace: t, agent_x, agent_y, heading, speed, terminal."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "agent_x", "agent_y", "heading", "speed", "terminal"])
        for o in outcomes:
            writer.writerow([repr(o.step_index * dt), repr(o.agent.x), repr(o.agent.y),
                             repr(o.agent.heading), repr(o.agent.speed),
                             o.terminal.value])
