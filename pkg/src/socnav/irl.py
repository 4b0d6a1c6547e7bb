"""Reward learning over the replay buffer, interleaved with policy updates.

A state-only reward network is fit by likelihood ascent: observed expert
feature trajectories push their discounted rewards up, while an
importance-sampling term over a mixture of replay-buffer segments and the
same expert trajectories pushes down wherever the current policy (or a
constant stand-in density for the actionless experts) already covers.  The
policy trains with SAC on replay batches relabeled through the current
reward network, so reward learning itself consumes no environment steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import features, metrics, neural, rewards
from .neural import adamw_init, adamw_step, backward, forward
from .sac import (ReplayBuffer, SACAgent, SACConfig, Transition,
                  TrajectorySegment)
from .simenv import CrowdSim, EpisodeConfig, Terminal
from .trajdata import ExpertSet, ExpertTrajectory, Scene


class EmptyTrajectorySet(ValueError):
    """An expert trajectory collection with no members."""


class MissingAction(ValueError):
    """A buffer segment reached the objective without policy densities."""


@dataclass
class IRLConfig:
    discount: float = 0.99            # gamma of the discounted objective
    sigma_t: float = 1.0              # expert-density std for the constant branch
    n_expert: int = 16                # expert trajectories per reward update
    n_buffer: int = 16                # buffer segments per reward update
    policy_interval: int = 1          # iterations between policy updates
    reward_interval: int = 3          # iterations between reward updates
    reward_lr: float = 1e-4
    lr_decay: float = 0.9999
    weight_decay: float = 1e-4
    segment_max_len: int = 64
    reward_hidden: tuple[int, ...] = (128, 128)
    max_iterations: int = 1000


def expert_density_constant(sigma_t: float) -> float:
    """Density of a Gaussian policy at its mean with std sigma_t."""
    if sigma_t <= 0:
        raise ValueError("sigma_t must be positive")
    return 1.0 / (sigma_t * math.sqrt(2.0 * math.pi))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _segment_rewards(net: neural.MLP, seg: TrajectorySegment) -> np.ndarray:
    r, _ = forward(net, seg.states)
    return np.asarray(r, dtype=np.float64).reshape(-1)


def l_obs(net: neural.MLP, trajectories: list[TrajectorySegment],
          discount: float) -> float:
    """Mean over trajectories of the discounted reward sum, gamma^t anchored
    at each trajectory's episode-relative step indices."""
    if not trajectories:
        raise EmptyTrajectorySet("l_obs needs at least one trajectory")
    total = 0.0
    for seg in trajectories:
        g = discount ** seg.step_indices.astype(np.float64)
        total += float(g @ _segment_rewards(net, seg))
    return total / len(trajectories)


def a_term(net: neural.MLP, seg: TrajectorySegment, discount: float,
           sigma_t: float) -> float:
    """Per-segment importance-sampling sum: log(exp(gamma^t R) + density).

    Buffer segments use the current-policy density of their stored actions
    (precomputed into seg.policy_log_probs); expert segments use the constant
    expert-density approximation and never evaluate the policy.
    """
    if len(seg) == 0:
        return 0.0
    g = discount ** seg.step_indices.astype(np.float64)
    x = g * _segment_rewards(net, seg)
    if seg.source == "buffer":
        if seg.policy_log_probs is None:
            raise MissingAction(
                "buffer segment lacks current-policy action densities")
        lp = np.asarray(seg.policy_log_probs, dtype=np.float64)
    else:
        lp = np.full(len(seg), math.log(expert_density_constant(sigma_t)))
    return float(np.sum(np.logaddexp(x, lp)))


def l_is(net: neural.MLP, segments: list[TrajectorySegment], discount: float,
         sigma_t: float) -> float:
    """Mean a_term over the buffer/expert mixture."""
    if not segments:
        raise EmptyTrajectorySet("l_is needs at least one segment")
    return sum(a_term(net, s, discount, sigma_t) for s in segments) / len(segments)


def objective_gradient(net: neural.MLP, expert_segments: list[TrajectorySegment],
                       buffer_segments: list[TrajectorySegment],
                       discount: float, sigma_t: float
                       ) -> tuple[np.ndarray, float, float, float]:
    """Gradient and value of L = l_obs(experts) - l_is(buffer + experts).

    The expert segments enter both terms, matching the shared-sample mixture.
    Returns (dL/dparams, L, l_obs value, l_is value).
    """
    if not expert_segments:
        raise EmptyTrajectorySet("reward update needs expert trajectories")
    for seg in buffer_segments:
        if seg.policy_log_probs is None:
            raise MissingAction(
                "buffer segment lacks current-policy action densities")
    n_e, n_mix = len(expert_segments), len(buffer_segments) + len(expert_segments)
    log_c = math.log(expert_density_constant(sigma_t))
    mixture = [s for s in buffer_segments + expert_segments if len(s) > 0]

    states = np.vstack([s.states for s in mixture])
    g = np.concatenate([discount ** s.step_indices.astype(np.float64)
                        for s in mixture])
    lp = np.concatenate([
        np.asarray(s.policy_log_probs, dtype=np.float64) if s.source == "buffer"
        else np.full(len(s), log_c)
        for s in mixture])
    is_expert = np.concatenate([
        np.full(len(s), s.source != "buffer") for s in mixture])

    r, tape = forward(net, states)
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    x = g * r
    l_is_val = float(np.sum(np.logaddexp(x, lp))) / n_mix
    l_obs_val = float(np.sum((g * r)[is_expert])) / n_e

    # d l_obs / d R = gamma^t / n_e on expert rows;
    # d l_is  / d R = gamma^t * sigmoid(x - log p) / n_mix on every row.
    cot = -g * _sigmoid(x - lp) / n_mix
    cot[is_expert] += g[is_expert] / n_e
    grad, _ = backward(net, tape, cot.astype(net.flat.dtype)[:, None])
    return grad.astype(np.float64), l_obs_val - l_is_val, l_obs_val, l_is_val


def expert_window(traj: ExpertTrajectory, max_len: int,
                  rng: np.random.Generator) -> TrajectorySegment:
    """The whole trajectory, or a random contiguous window if longer than
    max_len; the window keeps its episode-relative start index."""
    if len(traj) <= max_len:
        start = 0
        feats = traj.features
    else:
        start = int(rng.integers(0, len(traj) - max_len + 1))
        feats = traj.features[start:start + max_len]
    return TrajectorySegment(states=feats, t0=traj.t0 + start, source="expert")


def sample_expert_windows(expert_set: ExpertSet, n: int, max_len: int,
                          rng: np.random.Generator) -> list[TrajectorySegment]:
    if len(expert_set) == 0:
        raise EmptyTrajectorySet("expert set is empty")
    picks = rng.integers(0, len(expert_set), size=n)
    return [expert_window(expert_set.trajectories[int(i)], max_len, rng)
            for i in picks]


def relabel_rewards(batch, net: neural.MLP) -> None:
    """Overwrite the batch's reward slots with the reward network evaluated at
    the stored next-state features.  All other fields are untouched."""
    r, _ = forward(net, batch.next_states)
    batch.rewards = np.asarray(r).reshape(-1).astype(batch.rewards.dtype)


def update_reward(net: neural.MLP, opt: neural.AdamWState,
                  expert_set: ExpertSet, buffer: ReplayBuffer,
                  config: IRLConfig, policy_log_prob_fn,
                  rng: np.random.Generator) -> dict[str, float]:
    """One likelihood-ascent step on the reward parameters.

    Samples n_expert expert windows and n_buffer buffer segments, evaluates
    the current policy's density of the stored buffer actions once (it does
    not depend on the reward parameters), and ascends l_obs - l_is.
    """
    expert_segs = sample_expert_windows(expert_set, config.n_expert,
                                        config.segment_max_len, rng)
    buffer_segs = buffer.sample_segments(config.n_buffer,
                                         config.segment_max_len, rng)
    all_logp = np.asarray(policy_log_prob_fn(
        np.vstack([s.states for s in buffer_segs]),
        np.vstack([s.actions_pre for s in buffer_segs])), dtype=np.float64)
    offset = 0
    for seg in buffer_segs:
        seg.policy_log_probs = all_logp[offset:offset + len(seg)].copy()
        offset += len(seg)
    grad, value, obs_val, is_val = objective_gradient(
        net, expert_segs, buffer_segs, config.discount, config.sigma_t)
    adamw_step(opt, net.flat, (-grad).astype(net.flat.dtype))
    sampled = np.vstack([s.states for s in buffer_segs])
    return {"objective": value, "l_obs": obs_val, "l_is": is_val,
            "buffer_feature_mean": np.asarray(sampled, dtype=np.float64).mean(axis=0)}


@dataclass
class TrainLogs:
    """Accumulated per-update rows; the CLI streams them to CSV."""

    irl_rows: list[tuple] = field(default_factory=list)
    sac_rows: list[tuple] = field(default_factory=list)
    interactions: metrics.InteractionCounter = field(
        default_factory=metrics.InteractionCounter)


class Trainer:
    """Interleaved policy/reward training on one scene.

    Every `policy_interval`-th iteration takes one environment step, stores
    the transition, and runs one SAC update on a relabeled batch; every
    `reward_interval`-th iteration runs one reward ascent step from the
    buffer, with no environment interaction.  `algorithm="sac_handcrafted"`
    instead fills rewards at store time from the baseline reward and never
    touches the reward network.
    """

    def __init__(self, scene: Scene, expert_set: ExpertSet, irl_config: IRLConfig,
                 sac_config: SACConfig, seed: int,
                 algorithm: str = "replay_irl",
                 episode_config: EpisodeConfig = EpisodeConfig()):
        if algorithm not in ("replay_irl", "sac_handcrafted"):
            raise ValueError(f"unknown algorithm {algorithm!r}")
        if algorithm == "replay_irl" and len(expert_set) == 0:
            raise EmptyTrajectorySet("replay_irl needs expert trajectories")
        self.scene = scene
        self.expert_set = expert_set
        self.irl_config = irl_config
        self.sac_config = sac_config
        self.algorithm = algorithm
        self.episode_config = episode_config
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.agent = SACAgent(sac_config, self.rng)
        if algorithm == "replay_irl":
            self.reward_net = neural.init_mlp(
                [sac_config.obs_dim, *irl_config.reward_hidden, 1], self.rng,
                dtype=sac_config.dtype)
            self.reward_opt = adamw_init(
                self.reward_net.flat.size, irl_config.reward_lr,
                weight_decay=irl_config.weight_decay,
                lr_decay=irl_config.lr_decay, dtype=sac_config.dtype)
        else:
            self.reward_net = None
            self.reward_opt = None
        self.buffer = ReplayBuffer(sac_config.buffer_capacity, sac_config.obs_dim,
                                   sac_config.action_dim, dtype=sac_config.dtype)
        self.env = CrowdSim(scene, episode_config)
        if expert_set.trajectories:
            self.expert_feature_mean = np.mean(
                np.vstack([t.features for t in expert_set.trajectories]), axis=0)
        else:
            self.expert_feature_mean = np.zeros(sac_config.obs_dim)
        self.iteration = 0
        self.env_steps = 0
        self.policy_updates = 0
        self.reward_updates = 0
        self.episode_id = 0
        self.episode_return = 0.0
        self.recent_returns: list[float] = []
        self._rr_index = 0
        self.logs = TrainLogs()
        self._reset_episode(first=True)

    def _reset_episode(self, first: bool = False) -> None:
        if not first:
            self.episode_id += 1
            self._rr_index = (self._rr_index + 1) % len(self.scene.ped_ids)
            self.recent_returns.append(self.episode_return)
            del self.recent_returns[:-10]
        self.episode_return = 0.0
        ped_id = self.scene.ped_ids[self._rr_index]
        self._outcome = self.env.reset(ped_id)

    def run(self, max_iterations: int | None = None,
            stop_after: int | None = None) -> None:
        """Advance the Algorithm-1 loop up to the configured iteration count.

        `stop_after` halts early at that absolute iteration (used to exercise
        checkpoint/resume); calling run() again continues where it left off.
        """
        end = self.irl_config.max_iterations if max_iterations is None else max_iterations
        while self.iteration < end:
            m = self.iteration + 1
            if m % self.irl_config.policy_interval == 0:
                self._update_policy(m)
            if (self.algorithm == "replay_irl"
                    and m % self.irl_config.reward_interval == 0):
                self._update_reward(m)
            self.iteration = m
            if stop_after is not None and m >= stop_after:
                return

    def _update_policy(self, m: int) -> None:
        obs = self._outcome.features
        prev_pos = np.array([self.env.agent.x, self.env.agent.y])
        exploring = self.env_steps < self.sac_config.random_steps
        sample = self.agent.act_random() if exploring else self.agent.act(obs)
        outcome = self.env.step(sample.env_action)
        done = outcome.terminal is not Terminal.RUNNING
        if self.algorithm == "sac_handcrafted":
            reward = rewards.total(
                np.array([outcome.agent.x, outcome.agent.y]), prev_pos,
                self.env.goal, self.episode_config.goal_radius,
                outcome.min_ped_distance, self.episode_config.pedestrian_radius)
        else:
            reward = float("nan")
        self.buffer.store(Transition(
            state=obs, action_pre=sample.pre_squash, action=sample.squashed,
            log_prob=sample.log_prob, next_state=outcome.features,
            episode_id=self.episode_id, t=outcome.step_index - 1, done=done,
            reward=reward))
        self.env_steps += 1
        if self.algorithm == "sac_handcrafted":
            self.episode_return += reward
        self._outcome = outcome
        if done:
            self._reset_episode()
        if exploring:
            return

        batch = self.buffer.sample_batch(self.sac_config.batch_size, self.rng)
        if self.algorithm == "replay_irl":
            relabel_rewards(batch, self.reward_net)
        losses = self.agent.update(batch)
        self.policy_updates += 1
        mean_return = (float(np.mean(self.recent_returns))
                       if self.recent_returns and self.algorithm == "sac_handcrafted"
                       else float("nan"))
        self.logs.sac_rows.append((m, losses["critic_loss"], losses["actor_loss"],
                                   losses["alpha"], mean_return))

    def _update_reward(self, m: int) -> None:
        stats = update_reward(self.reward_net, self.reward_opt, self.expert_set,
                              self.buffer, self.irl_config,
                              self.agent.log_prob_of, self.rng)
        self.reward_updates += 1
        self.logs.interactions.record(self.env_steps, self.reward_updates)
        rmse = metrics.feature_rmse(self.expert_feature_mean,
                                    stats["buffer_feature_mean"])
        self.logs.irl_rows.append((m, stats["objective"], stats["l_obs"],
                                   stats["l_is"], self.env_steps, rmse))

    def state_dict(self) -> dict:
        """Everything needed to resume bit-identically, including RNG state
        and the full buffer contents."""
        b = self.buffer
        return {
            "version": 1,
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "policy_updates": self.policy_updates,
            "reward_updates": self.reward_updates,
            "episode_id": self.episode_id,
            "episode_return": self.episode_return,
            "recent_returns": list(self.recent_returns),
            "rr_index": self._rr_index,
            "rng_state": self.rng.bit_generator.state,
            "agent": self.agent.state_dict(),
            "reward_net": (self.reward_net.flat.copy()
                           if self.reward_net is not None else None),
            "reward_opt": ({"m": self.reward_opt.m.copy(),
                            "v": self.reward_opt.v.copy(),
                            "step": self.reward_opt.step}
                           if self.reward_opt is not None else None),
            # When size < capacity the ring has never wrapped, so the first
            # `size` physical slots are exactly the live region.
            "buffer": {
                "states": b.states[:b.size].copy(),
                "actions_pre": b.actions_pre[:b.size].copy(),
                "actions": b.actions[:b.size].copy(),
                "log_probs": b.log_probs[:b.size].copy(),
                "next_states": b.next_states[:b.size].copy(),
                "rewards": b.rewards[:b.size].copy(),
                "t": b.t[:b.size].copy(),
                "episode_ids": b.episode_ids[:b.size].copy(),
                "dones": b.dones[:b.size].copy(),
                "ptr": b.ptr,
                "size": b.size,
            },
            "env": {
                "ped_id": self.env.replaced_ped_id,
                "start_time": self.env._start_time,
                "agent": (self.env.agent.x, self.env.agent.y,
                          self.env.agent.heading, self.env.agent.speed),
                "step_index": self.env._step_index,
                "terminal": self.env._terminal.value,
            },
            "interaction_pairs": np.array(self.logs.interactions.pairs,
                                          dtype=np.int64).reshape(-1, 2),
            "irl_rows": np.array(self.logs.irl_rows,
                                 dtype=np.float64).reshape(-1, 6),
            "sac_rows": np.array(self.logs.sac_rows,
                                 dtype=np.float64).reshape(-1, 5),
        }

    def load_state_dict(self, state: dict) -> None:
        if state.get("version") != 1:
            raise ValueError("unsupported trainer checkpoint version")
        self.iteration = int(state["iteration"])
        self.env_steps = int(state["env_steps"])
        self.policy_updates = int(state["policy_updates"])
        self.reward_updates = int(state["reward_updates"])
        self.episode_id = int(state["episode_id"])
        self.episode_return = float(state["episode_return"])
        self.recent_returns = list(state["recent_returns"])
        self._rr_index = int(state["rr_index"])
        self.rng.bit_generator.state = state["rng_state"]
        self.agent.load_state_dict(state["agent"])
        if self.reward_net is not None and state["reward_net"] is not None:
            self.reward_net.flat[:] = state["reward_net"]
            self.reward_opt.m[:] = state["reward_opt"]["m"]
            self.reward_opt.v[:] = state["reward_opt"]["v"]
            self.reward_opt.step = int(state["reward_opt"]["step"])
        b = self.buffer
        sb = state["buffer"]
        n = len(sb["states"])
        b.states[:n] = sb["states"]
        b.actions_pre[:n] = sb["actions_pre"]
        b.actions[:n] = sb["actions"]
        b.log_probs[:n] = sb["log_probs"]
        b.next_states[:n] = sb["next_states"]
        b.rewards[:n] = sb["rewards"]
        b.t[:n] = sb["t"]
        b.episode_ids[:n] = sb["episode_ids"]
        b.dones[:n] = sb["dones"]
        b.ptr = int(sb["ptr"])
        b.size = int(sb["size"])
        env_state = state["env"]
        self._outcome = self.env.reset(int(env_state["ped_id"]),
                                       float(env_state["start_time"]))
        x, y, heading, speed = env_state["agent"]
        self.env._agent = features.AgentKinematics(float(x), float(y),
                                                   float(heading), float(speed))
        self.env._step_index = int(env_state["step_index"])
        self.env._terminal = Terminal(env_state["terminal"])
        self._outcome = self.env._outcome()
        self.logs.interactions.pairs = [(int(a), int(b))
                                        for a, b in state["interaction_pairs"]]
        self.logs.irl_rows = [
            (int(r[0]), r[1], r[2], r[3], int(r[4]), r[5])
            for r in np.asarray(state["irl_rows"]).reshape(-1, 6)]
        self.logs.sac_rows = [
            (int(r[0]), r[1], r[2], r[3], r[4])
            for r in np.asarray(state["sac_rows"]).reshape(-1, 5)]
