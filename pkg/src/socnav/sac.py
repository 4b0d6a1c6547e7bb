"""Soft actor-critic with automatic entropy tuning, plus the replay buffer
that doubles as the importance-sampling source for reward learning.

The policy is a tanh-squashed diagonal Gaussian whose squashed output is
mapped affinely onto the simulator action box.  Twin critics with Polyak
targets follow the standard recipe; all gradients are assembled by hand on
the dense-network core, which keeps the whole update deterministic given the
caller's random generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import neural
from .neural import MLP, adamw_init, adamw_step, backward, forward, grad_input_only
from .simenv import MAX_HEADING_RATE, MAX_TARGET_SPEED, Action


class EmptyBuffer(RuntimeError):
    """Sampling requested from a buffer with no stored transitions."""


class UnlabeledReward(ValueError):
    """sac_update received a batch whose reward slots were never filled."""


LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class Transition:
    """One agent step; the reward slot stays NaN until relabeling fills it."""

    state: np.ndarray
    action_pre: np.ndarray     # pre-squash Gaussian sample u
    action: np.ndarray         # tanh(u), in (-1, 1) per dimension
    log_prob: float            # behavior log-density at storage time (diagnostic)
    next_state: np.ndarray
    episode_id: int
    t: int
    done: bool
    reward: float = float("nan")


@dataclass
class TransitionBatch:
    states: np.ndarray
    actions_pre: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    t: np.ndarray
    episode_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.states)


@dataclass
class TrajectorySegment:
    """Contiguous run of steps from one episode; expert segments carry no actions."""

    states: np.ndarray
    t0: int
    source: str                           # "buffer" or "expert"
    actions_pre: np.ndarray | None = None
    actions: np.ndarray | None = None
    policy_log_probs: np.ndarray | None = None   # filled before reward updates

    def __len__(self) -> int:
        return len(self.states)

    @property
    def step_indices(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.states))


class ReplayBuffer:
    """FIFO ring of transitions with episode-respecting segment sampling."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int,
                 dtype=np.float64):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, obs_dim), dtype=dtype)
        self.actions_pre = np.zeros((capacity, action_dim), dtype=dtype)
        self.actions = np.zeros((capacity, action_dim), dtype=dtype)
        self.log_probs = np.zeros(capacity, dtype=dtype)
        self.next_states = np.zeros((capacity, obs_dim), dtype=dtype)
        self.rewards = np.full(capacity, np.nan, dtype=dtype)
        self.t = np.zeros(capacity, dtype=np.int64)
        self.episode_ids = np.zeros(capacity, dtype=np.int64)
        self.dones = np.zeros(capacity, dtype=bool)
        self.ptr = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def store(self, tr: Transition) -> None:
        i = self.ptr
        self.states[i] = tr.state
        self.actions_pre[i] = tr.action_pre
        self.actions[i] = tr.action
        self.log_probs[i] = tr.log_prob
        self.next_states[i] = tr.next_state
        self.rewards[i] = tr.reward
        self.t[i] = tr.t
        self.episode_ids[i] = tr.episode_id
        self.dones[i] = tr.done
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _physical(self, logical: np.ndarray) -> np.ndarray:
        start = (self.ptr - self.size) % self.capacity
        return (start + logical) % self.capacity

    def sample_batch(self, n: int, rng: np.random.Generator) -> TransitionBatch:
        """n transitions drawn uniformly with replacement."""
        if self.size == 0:
            raise EmptyBuffer("cannot sample from an empty buffer")
        idx = self._physical(rng.integers(0, self.size, size=n))
        return TransitionBatch(
            states=self.states[idx].copy(),
            actions_pre=self.actions_pre[idx].copy(),
            actions=self.actions[idx].copy(),
            rewards=self.rewards[idx].copy(),
            next_states=self.next_states[idx].copy(),
            dones=self.dones[idx].copy(),
            t=self.t[idx].copy(),
            episode_ids=self.episode_ids[idx].copy(),
        )

    def sample_segments(self, count: int, max_len: int,
                        rng: np.random.Generator) -> list[TrajectorySegment]:
        """Each segment starts at a uniformly chosen stored transition and runs
        forward within its episode, up to max_len steps or the newest data."""
        if self.size == 0:
            raise EmptyBuffer("cannot sample from an empty buffer")
        start = (self.ptr - self.size) % self.capacity
        segments = []
        for j0 in rng.integers(0, self.size, size=count):
            j = int(j0)
            phys = [(start + j) % self.capacity]
            while len(phys) < max_len:
                pj, pn = phys[-1], (start + j + 1) % self.capacity
                if (self.dones[pj] or j + 1 >= self.size
                        or self.episode_ids[pn] != self.episode_ids[pj]
                        or self.t[pn] != self.t[pj] + 1):
                    break
                phys.append(pn)
                j += 1
            idx = np.array(phys)
            segments.append(TrajectorySegment(
                states=self.states[idx].copy(),
                t0=int(self.t[idx[0]]),
                source="buffer",
                actions_pre=self.actions_pre[idx].copy(),
                actions=self.actions[idx].copy(),
            ))
        return segments


def squashed_to_env(a: np.ndarray) -> Action:
    """Map a squashed action in (-1, 1)^2 onto the simulator action box."""
    speed = 0.5 * (float(a[0]) + 1.0) * MAX_TARGET_SPEED
    rate = float(a[1]) * MAX_HEADING_RATE
    return Action(target_speed=speed, heading_rate=rate)


def _tanh_correction(u: np.ndarray) -> np.ndarray:
    # log(1 - tanh(u)^2) == 2*(log 2 - u - softplus(-2u)), summed over dims
    return np.sum(2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u)), axis=-1)


def gaussian_tanh_log_prob(mean: np.ndarray, log_std: np.ndarray,
                           u: np.ndarray) -> np.ndarray:
    """log-density of a = tanh(u) where u ~ N(mean, exp(log_std)^2)."""
    std = np.exp(log_std)
    z = (u - mean) / std
    gauss = np.sum(-0.5 * _LOG_2PI - log_std - 0.5 * z * z, axis=-1)
    return gauss - _tanh_correction(u)


@dataclass
class SACConfig:
    obs_dim: int = 20
    action_dim: int = 2
    hidden: tuple[int, ...] = (256, 256)
    lr: float = 3e-4
    lr_decay: float = 0.9999
    weight_decay: float = 1e-4
    discount: float = 0.99
    tau: float = 0.005
    batch_size: int = 512
    target_entropy: float = -2.0
    initial_alpha: float = 1.0
    random_steps: int = 0          # uniform-exploration env steps before updates
    buffer_capacity: int = 1_000_000
    dtype: type = np.float64


@dataclass
class ActionSample:
    env_action: Action
    log_prob: float
    pre_squash: np.ndarray
    squashed: np.ndarray


class SACAgent:
    """Owns policy/critic parameters and their optimizers; randomness comes
    from the generator passed at construction."""

    def __init__(self, config: SACConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        c = config
        self.actor = neural.init_mlp(
            [c.obs_dim, *c.hidden, 2 * c.action_dim], rng, dtype=c.dtype)
        self.critic1 = neural.init_mlp(
            [c.obs_dim + c.action_dim, *c.hidden, 1], rng, dtype=c.dtype)
        self.critic2 = neural.init_mlp(
            [c.obs_dim + c.action_dim, *c.hidden, 1], rng, dtype=c.dtype)
        self.target1 = self.critic1.copy()
        self.target2 = self.critic2.copy()
        self.log_alpha = np.full(1, np.log(c.initial_alpha), dtype=c.dtype)
        kw = dict(weight_decay=c.weight_decay, lr_decay=c.lr_decay, dtype=c.dtype)
        self.actor_opt = adamw_init(self.actor.flat.size, c.lr, **kw)
        self.critic1_opt = adamw_init(self.critic1.flat.size, c.lr, **kw)
        self.critic2_opt = adamw_init(self.critic2.flat.size, c.lr, **kw)
        self.alpha_opt = adamw_init(1, c.lr, weight_decay=0.0,
                                    lr_decay=c.lr_decay, dtype=c.dtype)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    def _policy_params(self, states: np.ndarray):
        out, tape = forward(self.actor, states)
        out = np.atleast_2d(out)
        a_dim = self.config.action_dim
        mean = out[:, :a_dim]
        log_std_raw = out[:, a_dim:]
        log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std, log_std_raw, tape

    def act(self, obs: np.ndarray, deterministic: bool = False) -> ActionSample:
        """Sample (or take the mean of) the squashed policy at one observation."""
        mean, log_std, _, _ = self._policy_params(obs.reshape(1, -1))
        std = np.exp(log_std)
        if deterministic:
            u = mean
        else:
            u = mean + std * self.rng.standard_normal(mean.shape)
        a = np.tanh(u)
        logp = float(gaussian_tanh_log_prob(mean, log_std, u)[0])
        return ActionSample(squashed_to_env(a[0]), logp, u[0].copy(), a[0].copy())

    def act_random(self) -> ActionSample:
        """Uniform action over the squashed box, for initial exploration."""
        c = self.config
        a = self.rng.uniform(-1.0, 1.0, size=c.action_dim)
        u = np.arctanh(np.clip(a, -1.0 + 1e-6, 1.0 - 1e-6))
        log_prob = -c.action_dim * float(np.log(2.0))   # uniform box density
        return ActionSample(squashed_to_env(a), log_prob, u, a)

    def log_prob_of(self, states: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Current-policy log-density of stored pre-squash actions (tanh-corrected)."""
        mean, log_std, _, _ = self._policy_params(states)
        return gaussian_tanh_log_prob(mean, log_std, u)

    def _actor_grad(self, states: np.ndarray,
                    eps: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """Actor loss mean(alpha*logpi - min twin Q) for the reparameterized
        sample u = mean + std*eps, its gradient w.r.t. the actor parameters,
        and the sample's log-probs.  Critic parameters are held fixed; the
        minimum picks each sample's smaller critic for the backward path."""
        c = self.config
        n = len(states)
        alpha = self.alpha
        mean, log_std, log_std_raw, actor_tape = self._policy_params(states)
        std = np.exp(log_std)
        u = mean + std * eps
        a = np.tanh(u)
        logp = gaussian_tanh_log_prob(mean, log_std, u)
        sa = np.hstack([states, a])
        q1, tape1 = forward(self.critic1, sa)
        q2, tape2 = forward(self.critic2, sa)
        q_min = np.minimum(q1[:, 0], q2[:, 0])
        loss = float(np.mean(alpha * logp - q_min))
        pick1 = (q1[:, 0] <= q2[:, 0]).astype(c.dtype)
        dq_da = (grad_input_only(self.critic1, tape1, (pick1 / n)[:, None])
                 + grad_input_only(self.critic2, tape2, ((1.0 - pick1) / n)[:, None])
                 )[:, c.obs_dim:]
        # d logpi / du is the tanh-correction term only: the Gaussian part is
        # a function of eps alone under the reparameterization.
        dlogp_du = 2.0 * a
        da_du = 1.0 - a * a
        dl_da = -dq_da
        cot_mean = (alpha / n) * dlogp_du + dl_da * da_du
        cot_log_std = ((alpha / n) * (-1.0 + dlogp_du * std * eps)
                       + dl_da * da_du * std * eps)
        cot_log_std *= (log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX)
        grad, _ = backward(self.actor, actor_tape,
                           np.hstack([cot_mean, cot_log_std]))
        return loss, grad, logp

    def critic_targets(self, batch: TransitionBatch) -> np.ndarray:
        """r + gamma * (min twin target Q - alpha * log pi) on the next state,
        with no bootstrap past a terminal transition.  Draws one standard
        normal block of shape (n, action_dim) from the generator."""
        c = self.config
        mean, log_std, _, _ = self._policy_params(batch.next_states)
        std = np.exp(log_std)
        u = mean + std * self.rng.standard_normal(mean.shape).astype(c.dtype)
        a = np.tanh(u)
        logp = gaussian_tanh_log_prob(mean, log_std, u)
        sa = np.hstack([batch.next_states, a])
        q1, _ = forward(self.target1, sa)
        q2, _ = forward(self.target2, sa)
        q = np.minimum(q1[:, 0], q2[:, 0])
        not_done = 1.0 - batch.dones.astype(c.dtype)
        return batch.rewards + c.discount * not_done * (q - self.alpha * logp)

    def update(self, batch: TransitionBatch) -> dict[str, float]:
        """One SAC iteration: critics, actor, temperature, Polyak targets.

        Generator draw order: one (n, action_dim) normal block for the critic
        target, then one for the actor's reparameterized sample.
        """
        if np.any(np.isnan(batch.rewards)):
            raise UnlabeledReward("batch contains unfilled reward slots")
        c = self.config
        n = len(batch)
        alpha = self.alpha

        # Critics.
        y = self.critic_targets(batch)
        sa = np.hstack([batch.states, batch.actions])
        critic_losses = []
        for critic, opt in ((self.critic1, self.critic1_opt),
                            (self.critic2, self.critic2_opt)):
            q, tape = forward(critic, sa)
            err = q[:, 0] - y
            critic_losses.append(float(np.mean(err * err)))
            grad, _ = backward(critic, tape, (2.0 * err / n)[:, None])
            adamw_step(opt, critic.flat, grad)

        # Actor, with a fresh reparameterized sample.
        eps = self.rng.standard_normal(
            (n, c.action_dim)).astype(c.dtype)
        actor_loss, grad_actor, logp = self._actor_grad(batch.states, eps)
        adamw_step(self.actor_opt, self.actor.flat, grad_actor)

        # Temperature, on the detached log-probs of the fresh sample.
        alpha_grad = np.array([-np.mean(logp + c.target_entropy)], dtype=c.dtype)
        alpha_loss = float(-self.log_alpha[0] * np.mean(logp + c.target_entropy))
        adamw_step(self.alpha_opt, self.log_alpha, alpha_grad)

        # Polyak averaging.
        for online, target in ((self.critic1, self.target1),
                               (self.critic2, self.target2)):
            target.flat += c.tau * (online.flat - target.flat)

        return {
            "critic_loss": 0.5 * (critic_losses[0] + critic_losses[1]),
            "q1_loss": critic_losses[0],
            "q2_loss": critic_losses[1],
            "actor_loss": actor_loss,
            "alpha_loss": alpha_loss,
            "alpha": alpha,
            "mean_log_prob": float(np.mean(logp)),
        }

    def state_dict(self) -> dict:
        """Checkpointable copy of all parameters and optimizer state."""
        def opt_state(o):
            return {"m": o.m.copy(), "v": o.v.copy(), "step": o.step}
        return {
            "actor": self.actor.flat.copy(),
            "critic1": self.critic1.flat.copy(),
            "critic2": self.critic2.flat.copy(),
            "target1": self.target1.flat.copy(),
            "target2": self.target2.flat.copy(),
            "log_alpha": self.log_alpha.copy(),
            "actor_opt": opt_state(self.actor_opt),
            "critic1_opt": opt_state(self.critic1_opt),
            "critic2_opt": opt_state(self.critic2_opt),
            "alpha_opt": opt_state(self.alpha_opt),
        }

    def load_state_dict(self, state: dict) -> None:
        for name in ("actor", "critic1", "critic2", "target1", "target2"):
            getattr(self, name).flat[:] = state[name]
        self.log_alpha[:] = state["log_alpha"]
        for name in ("actor_opt", "critic1_opt", "critic2_opt", "alpha_opt"):
            opt = getattr(self, name)
            opt.m[:] = state[name]["m"]
            opt.v[:] = state[name]["v"]
            opt.step = int(state[name]["step"])
