"""Exploratory run: replay-buffer IRL on the empty toy scene.

Tracks the windowed feature RMSE and deterministic goal success over
training, mirroring what the acceptance checks will measure.
"""

import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

threadpool_limits(1)

from socnav import irl, metrics, sac
from socnav.metrics import moving_average
from socnav.sac import SACConfig
from socnav.simenv import CrowdSim
from socnav.trajdata import (Rect, SyntheticSceneConfig, build_expert_set,
                             generate_synthetic_scene)


def eval_success(trainer, scene):
    env = CrowdSim(scene, trainer.episode_config)

    def policy(obs):
        return trainer.agent.act(obs, deterministic=True).env_action

    episodes = []
    for pid in scene.ped_ids:
        ep, _ = metrics.collect_eval_episode(env, policy, pid)
        episodes.append(ep)
    return metrics.goal_success(episodes), [e.terminal.value for e in episodes]


def main():
    total = int(sys.argv[1]) if len(sys.argv) > 1 else 50_000
    interval = int(sys.argv[2]) if len(sys.argv) > 2 else 5_000
    seed = int(sys.argv[3]) if len(sys.argv) > 3 else 0
    scene_cfg = SyntheticSceneConfig(ped_count=8, roi=Rect(0, 0, 10, 10),
                                     pattern="crossing", start_stagger=60.0,
                                     speed_range=(1.0, 1.5))
    scene = generate_synthetic_scene(scene_cfg, seed=7)
    expert = build_expert_set(scene)
    trainer = irl.Trainer(
        scene, expert,
        irl.IRLConfig(max_iterations=total),
        SACConfig(buffer_capacity=total + 10, dtype=np.float32),
        seed=seed, algorithm="replay_irl")
    t0 = time.time()
    for k in range(interval, total + 1, interval):
        trainer.run(max_iterations=k)
        success, terminals = eval_success(trainer, scene)
        rmse = np.array([row[5] for row in trainer.logs.irl_rows])
        ma = moving_average(rmse, 100)
        early = np.mean(ma[: max(1, np.sum(
            np.array([r[0] for r in trainer.logs.irl_rows]) <= 1000))])
        print(f"[{time.time()-t0:7.1f}s] iter {k}: success={success:.2f} "
              f"rmse_ma_now={ma[-1]:.4f} rmse_ma_first1000={early:.4f} "
              f"obj={trainer.logs.irl_rows[-1][1]:.3f} "
              f"alpha={trainer.agent.alpha:.4f} episodes={trainer.episode_id} "
              f"terminals={[t[:4] for t in terminals]}", flush=True)


if __name__ == "__main__":
    main()
