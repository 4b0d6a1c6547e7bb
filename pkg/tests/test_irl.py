"""Reward-learning objective, its gradient, and the interleaved trainer."""

import math

import numpy as np
import pytest

from socnav import irl, neural, sac
from socnav.irl import (EmptyTrajectorySet, IRLConfig, MissingAction, Trainer,
                        a_term, expert_density_constant, expert_window, l_is,
                        l_obs, objective_gradient, relabel_rewards,
                        sample_expert_windows, update_reward)
from socnav.neural import MLP, adamw_init, backward, forward, mlp_layers
from socnav.sac import SACConfig, TrajectorySegment
from socnav.trajdata import (ExpertSet, ExpertTrajectory, Rect,
                             SyntheticSceneConfig, build_expert_set,
                             generate_synthetic_scene)

DIM = 3


def const_net(value=0.0, dim=DIM):
    """Reward net computing exactly `value` everywhere (zero weights)."""
    layers = mlp_layers([dim, 4, 1])
    flat = np.zeros(sum(l.n_params for l in layers))
    flat[-1] = value   # output bias
    return MLP(layers, flat)


def linear_net(w, dim=DIM):
    """Single linear layer: R(s) = w . s."""
    layers = mlp_layers([dim, 1])
    return MLP(layers, np.append(np.asarray(w, dtype=float), 0.0))


def expert_seg(states, t0=0):
    return TrajectorySegment(states=np.atleast_2d(np.asarray(states, float)),
                             t0=t0, source="expert")


def buffer_seg(states, logp, t0=0):
    states = np.atleast_2d(np.asarray(states, float))
    return TrajectorySegment(states=states, t0=t0, source="buffer",
                             actions_pre=np.zeros((len(states), 2)),
                             actions=np.zeros((len(states), 2)),
                             policy_log_probs=np.asarray(logp, float).reshape(-1))


class TestLObs:
    def test_single_state_single_trajectory(self, rng):
        net = const_net(2.5)
        assert l_obs(net, [expert_seg(np.ones(DIM))], 0.5) == pytest.approx(2.5)

    def test_geometric_sum(self):
        # R = 1 everywhere, three steps, gamma 0.5: 1 + 0.5 + 0.25.
        net = const_net(1.0)
        seg = expert_seg(np.zeros((3, DIM)))
        assert l_obs(net, [seg], 0.5) == pytest.approx(1.75)

    def test_mean_over_identical_trajectories(self):
        net = const_net(1.0)
        seg = expert_seg(np.zeros((3, DIM)))
        one = l_obs(net, [seg], 0.5)
        two = l_obs(net, [seg, expert_seg(np.zeros((3, DIM)))], 0.5)
        assert one == pytest.approx(two)

    def test_discount_anchored_at_segment_t0(self):
        # A window starting mid-episode at t0 contributes gamma^t0 first.
        net = const_net(1.0)
        seg = expert_seg(np.zeros((2, DIM)), t0=3)
        assert l_obs(net, [seg], 0.5) == pytest.approx(0.5**3 + 0.5**4)

    def test_empty_set_raises(self):
        with pytest.raises(EmptyTrajectorySet):
            l_obs(const_net(), [], 0.9)


class TestATerm:
    def test_expert_branch_closed_form(self):
        # R = 0, sigma_T = 1, one state: log(1 + 1/sqrt(2*pi)).
        net = const_net(0.0)
        val = a_term(net, expert_seg(np.zeros(DIM)), 0.99, sigma_t=1.0)
        assert val == pytest.approx(math.log(1.0 + 0.3989422804014327))

    def test_buffer_branch_log_two(self):
        # R = 0, pi(a|s) = 1 (log prob 0), one state: log(e^0 + 1) = log 2.
        net = const_net(0.0)
        val = a_term(net, buffer_seg(np.zeros(DIM), [0.0]), 0.99, sigma_t=1.0)
        assert val == pytest.approx(math.log(2.0))

    def test_empty_segment_is_zero(self):
        net = const_net(1.0)
        seg = expert_seg(np.zeros((0, DIM)))
        assert a_term(net, seg, 0.99, 1.0) == 0.0

    def test_buffer_without_densities_raises(self):
        net = const_net(0.0)
        seg = TrajectorySegment(states=np.zeros((2, DIM)), t0=0, source="buffer")
        with pytest.raises(MissingAction):
            a_term(net, seg, 0.99, 1.0)

    def test_expert_branch_never_uses_policy(self):
        # Expert branch works with no action data at all and depends only on
        # sigma_t through the constant density.
        net = const_net(0.7)
        seg = expert_seg(np.zeros((4, DIM)))
        v1 = a_term(net, seg, 0.9, sigma_t=1.0)
        v2 = a_term(net, seg, 0.9, sigma_t=2.0)
        assert v1 != v2

    def test_numerically_stable_at_large_rewards(self):
        net = const_net(500.0)
        val = a_term(net, expert_seg(np.zeros(DIM)), 1.0, sigma_t=1.0)
        assert np.isfinite(val)
        assert val == pytest.approx(500.0)   # log(e^500 + c) ~ 500
        net = const_net(-500.0)
        val = a_term(net, buffer_seg(np.zeros(DIM), [0.0]), 1.0, 1.0)
        assert val == pytest.approx(0.0, abs=1e-12)   # log(e^-500 + 1) ~ 0


class TestLIS:
    def test_all_expert_mean(self):
        net = const_net(0.0)
        segs = [expert_seg(np.zeros(DIM)), expert_seg(np.zeros((2, DIM)))]
        vals = [a_term(net, s, 0.9, 1.0) for s in segs]
        assert l_is(net, segs, 0.9, 1.0) == pytest.approx(np.mean(vals))

    def test_mixed_two_term_mean(self):
        net = const_net(0.0)
        e = expert_seg(np.zeros(DIM))
        b = buffer_seg(np.zeros(DIM), [0.0])
        expected = 0.5 * (math.log(1 + expert_density_constant(1.0))
                          + math.log(2.0))
        assert l_is(net, [b, e], 0.99, 1.0) == pytest.approx(expected)

    def test_empty_raises(self):
        with pytest.raises(EmptyTrajectorySet):
            l_is(const_net(), [], 0.9, 1.0)


class TestObjectiveGradient:
    def _random_instance(self, rng, n_states=4):
        net = MLP(mlp_layers([DIM, 6, 1]),
                  rng.normal(scale=0.4, size=DIM * 6 + 6 + 6 + 1))
        experts = [expert_seg(rng.normal(size=(3, DIM)), t0=1),
                   expert_seg(rng.normal(size=(2, DIM)))]
        buffers = [buffer_seg(rng.normal(size=(3, DIM)),
                              rng.normal(size=3), t0=2),
                   buffer_seg(rng.normal(size=(1, DIM)), rng.normal(size=1))]
        return net, experts, buffers

    def test_value_consistent_with_l_obs_l_is(self, rng):
        net, experts, buffers = self._random_instance(rng)
        _, value, obs_val, is_val = objective_gradient(net, experts, buffers,
                                                       0.9, 1.0)
        assert obs_val == pytest.approx(l_obs(net, experts, 0.9))
        assert is_val == pytest.approx(l_is(net, buffers + experts, 0.9, 1.0))
        assert value == pytest.approx(obs_val - is_val)

    def test_gradient_matches_finite_differences(self, rng):
        # The spec-level oracle: d(l_obs - l_is)/dtheta vs central
        # differences, relative error < 1e-4, on a <= 200 parameter net.
        net, experts, buffers = self._random_instance(rng)
        assert net.flat.size <= 200
        grad, _, _, _ = objective_gradient(net, experts, buffers, 0.9, 1.0)

        def value(theta):
            probe = MLP(net.layers, theta)
            return (l_obs(probe, experts, 0.9)
                    - l_is(probe, buffers + experts, 0.9, 1.0))

        numeric = neural.finite_difference_gradient(value, net.flat.copy())
        assert neural.max_relative_error(grad, numeric) < 1e-4

    def test_shared_state_ascent_never_decreases_reward(self, rng):
        # One shared state, expert trajectory == buffer segment, policy
        # density forced to the expert constant: dL/dR = c/(e^R + c) > 0,
        # so the ascent direction increases R at the shared state.
        state = rng.normal(size=DIM)
        log_c = math.log(expert_density_constant(1.0))
        for r0 in (-2.0, 0.0, 3.0):
            net = const_net(r0)
            experts = [expert_seg(state)]
            buffers = [buffer_seg(state, [log_c])]
            grad, _, _, _ = objective_gradient(net, experts, buffers, 0.99, 1.0)
            _, tape = forward(net, state.reshape(1, -1))
            dr_dtheta, _ = backward(net, tape, np.ones((1, 1)))
            assert float(grad @ dr_dtheta) > 0.0

    def test_missing_densities_raise(self, rng):
        net = const_net(0.0)
        seg = TrajectorySegment(states=np.zeros((1, DIM)), t0=0, source="buffer")
        with pytest.raises(MissingAction):
            objective_gradient(net, [expert_seg(np.zeros(DIM))], [seg], 0.9, 1.0)


class TestExpertWindows:
    def test_short_trajectory_taken_whole(self, rng):
        traj = ExpertTrajectory(rng.normal(size=(5, DIM)), t0=0)
        seg = expert_window(traj, 10, rng)
        assert len(seg) == 5 and seg.t0 == 0

    def test_long_trajectory_windowed_with_episode_time(self, rng):
        traj = ExpertTrajectory(rng.normal(size=(50, DIM)), t0=0)
        for _ in range(20):
            seg = expert_window(traj, 8, rng)
            assert len(seg) == 8
            assert 0 <= seg.t0 <= 42
            assert np.array_equal(seg.states,
                                  traj.features[seg.t0:seg.t0 + 8])

    def test_sample_requires_nonempty_set(self, rng):
        with pytest.raises(EmptyTrajectorySet):
            sample_expert_windows(ExpertSet([]), 4, 8, rng)


class TestRelabel:
    def _batch(self, rng, n=5):
        return sac.TransitionBatch(
            states=rng.normal(size=(n, DIM)),
            actions_pre=rng.normal(size=(n, 2)),
            actions=np.tanh(rng.normal(size=(n, 2))),
            rewards=np.full(n, np.nan),
            next_states=rng.normal(size=(n, DIM)),
            dones=np.zeros(n, dtype=bool),
            t=np.arange(n),
            episode_ids=np.zeros(n, dtype=np.int64),
        )

    def test_zero_net_zero_rewards(self, rng):
        batch = self._batch(rng)
        relabel_rewards(batch, const_net(0.0))
        assert np.all(batch.rewards == 0.0)

    def test_linear_net_dot_product(self, rng):
        w = np.array([0.5, -1.0, 2.0])
        batch = self._batch(rng)
        relabel_rewards(batch, linear_net(w))
        assert np.allclose(batch.rewards, batch.next_states @ w)

    def test_idempotent_and_preserves_other_fields(self, rng):
        batch = self._batch(rng)
        snapshot = {name: getattr(batch, name).copy()
                    for name in ("states", "actions_pre", "actions",
                                 "next_states", "dones", "t", "episode_ids")}
        net = const_net(1.5)
        relabel_rewards(batch, net)
        first = batch.rewards.copy()
        relabel_rewards(batch, net)
        assert np.array_equal(first, batch.rewards)
        for name, arr in snapshot.items():
            assert np.array_equal(arr, getattr(batch, name))


def rows_equal(a, b):
    """Exact row equality, treating NaN slots (unused returns) as equal."""
    return np.array_equal(np.asarray(a, dtype=float),
                          np.asarray(b, dtype=float), equal_nan=True)


def tiny_scene(n_peds=2):
    cfg = SyntheticSceneConfig(ped_count=n_peds, roi=Rect(0, 0, 10, 10),
                               pattern="crossing", start_stagger=60.0,
                               speed_range=(1.0, 1.5))
    return generate_synthetic_scene(cfg, seed=3)


def tiny_trainer(max_iterations, seed=0, algorithm="replay_irl",
                 reward_interval=3, policy_interval=1):
    scene = tiny_scene()
    expert_set = build_expert_set(scene)
    irl_cfg = IRLConfig(max_iterations=max_iterations,
                        reward_interval=reward_interval,
                        policy_interval=policy_interval,
                        segment_max_len=16, n_expert=4, n_buffer=4,
                        reward_hidden=(8, 8))
    sac_cfg = SACConfig(hidden=(8, 8), batch_size=8, buffer_capacity=5000)
    return Trainer(scene, expert_set, irl_cfg, sac_cfg, seed=seed,
                   algorithm=algorithm)


class TestUpdateReward:
    def test_ascends_objective_and_logs(self, rng):
        trainer = tiny_trainer(6)
        trainer.run()
        assert len(trainer.logs.irl_rows) == 2

    def test_lr_decay_shrinks_second_step(self):
        # Same sample stream twice from zero moments: with a near-constant
        # gradient the AdamW step scales by the decay factor.
        rng_data = np.random.default_rng(0)
        net = MLP(mlp_layers([DIM, 4, 1]),
                  rng_data.normal(scale=0.3, size=DIM * 4 + 4 + 4 + 1))
        expert = ExpertSet([ExpertTrajectory(rng_data.normal(size=(6, DIM)))])
        buffer = sac.ReplayBuffer(100, DIM, 2)
        for k in range(6):
            u = rng_data.normal(size=2)
            buffer.store(sac.Transition(
                state=rng_data.normal(size=DIM), action_pre=u,
                action=np.tanh(u), log_prob=-1.0,
                next_state=rng_data.normal(size=DIM), episode_id=0, t=k,
                done=(k == 5)))
        cfg = IRLConfig(n_expert=2, n_buffer=2, segment_max_len=4,
                        reward_lr=1e-4, lr_decay=0.9999, weight_decay=0.0)

        def logp_fn(states, u):
            return np.full(len(states), -1.0)

        opt = adamw_init(net.flat.size, cfg.reward_lr, weight_decay=0.0,
                         lr_decay=cfg.lr_decay)
        before = net.flat.copy()
        update_reward(net, opt, expert, buffer, cfg, logp_fn,
                      np.random.default_rng(5))
        step1 = np.linalg.norm(net.flat - before)
        mid = net.flat.copy()
        update_reward(net, opt, expert, buffer, cfg, logp_fn,
                      np.random.default_rng(5))
        step2 = np.linalg.norm(net.flat - mid)
        assert step2 < step1
        assert step2 / step1 == pytest.approx(0.9999, abs=5e-3)


class TestTrainerSchedule:
    def test_m_zero_returns_initial_parameters(self):
        trainer = tiny_trainer(0)
        theta0 = trainer.reward_net.flat.copy()
        actor0 = trainer.agent.actor.flat.copy()
        trainer.run()
        assert np.array_equal(trainer.reward_net.flat, theta0)
        assert np.array_equal(trainer.agent.actor.flat, actor0)
        assert trainer.policy_updates == 0 and trainer.reward_updates == 0

    def test_nine_policy_three_reward_updates(self):
        trainer = tiny_trainer(9)
        trainer.run()
        assert trainer.policy_updates == 9
        assert trainer.reward_updates == 3

    def test_interactions_slope_exactly_three(self):
        trainer = tiny_trainer(30)
        trainer.run()
        pairs = trainer.logs.interactions.pairs
        assert pairs == [(3 * k, k) for k in range(1, 11)]

    def test_zero_variance_across_seeds(self):
        runs = []
        for seed in (0, 1, 2):
            trainer = tiny_trainer(12, seed=seed)
            trainer.run()
            runs.append(trainer.logs.interactions.pairs)
        assert runs[0] == runs[1] == runs[2]

    def test_handcrafted_never_touches_reward_net(self):
        trainer = tiny_trainer(6, algorithm="sac_handcrafted")
        assert trainer.reward_net is None
        trainer.run()
        assert trainer.reward_updates == 0
        assert trainer.policy_updates == 6
        # Rewards in the buffer come from the baseline reward, never NaN.
        assert not np.any(np.isnan(trainer.buffer.rewards[:trainer.buffer.size]))

    def test_replay_irl_buffer_rewards_stay_nan(self):
        trainer = tiny_trainer(6)
        trainer.run()
        # Stored slots are never filled in place; relabeling happens on the
        # sampled batch copies.
        assert np.all(np.isnan(trainer.buffer.rewards[:trainer.buffer.size]))

    def test_determinism_same_seed(self):
        a = tiny_trainer(12, seed=7)
        a.run()
        b = tiny_trainer(12, seed=7)
        b.run()
        assert np.array_equal(a.reward_net.flat, b.reward_net.flat)
        assert np.array_equal(a.agent.actor.flat, b.agent.actor.flat)
        assert rows_equal(a.logs.irl_rows, b.logs.irl_rows)
        assert rows_equal(a.logs.sac_rows, b.logs.sac_rows)

    def test_checkpoint_roundtrip_resumes_identically(self):
        full = tiny_trainer(14, seed=4)
        full.run()

        half = tiny_trainer(14, seed=4)
        half.run(stop_after=7)
        state = half.state_dict()

        resumed = tiny_trainer(14, seed=4)
        resumed.load_state_dict(state)
        resumed.run()
        assert np.array_equal(full.reward_net.flat, resumed.reward_net.flat)
        assert np.array_equal(full.agent.actor.flat, resumed.agent.actor.flat)
        assert rows_equal(full.logs.irl_rows, resumed.logs.irl_rows)
        assert rows_equal(full.logs.sac_rows, resumed.logs.sac_rows)
        assert full.logs.interactions.pairs == resumed.logs.interactions.pairs
