"""Probe baseline-SAC variants: initial exploration steps and initial alpha."""

import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

threadpool_limits(1)

from socnav import irl, metrics, sac
from socnav.sac import SACConfig
from socnav.simenv import CrowdSim
from socnav.trajdata import (Rect, SyntheticSceneConfig, build_expert_set,
                             generate_synthetic_scene)


def eval_success(trainer, scene):
    env = CrowdSim(scene, trainer.episode_config)

    def policy(obs):
        return trainer.agent.act(obs, deterministic=True).env_action

    episodes = []
    dists = []
    for pid in scene.ped_ids:
        ep, _ = metrics.collect_eval_episode(env, policy, pid)
        episodes.append(ep)
        goal = scene.track(pid).goal
        dists.append(float(np.hypot(*(ep.agent_xy[-1] - goal))))
    return metrics.goal_success(episodes), dists


def main():
    total = int(sys.argv[1])
    interval = int(sys.argv[2])
    random_steps = int(sys.argv[3])
    alpha0 = float(sys.argv[4])
    seed = int(sys.argv[5]) if len(sys.argv) > 5 else 0
    scene_cfg = SyntheticSceneConfig(ped_count=8, roi=Rect(0, 0, 10, 10),
                                     pattern="crossing", start_stagger=60.0,
                                     speed_range=(1.0, 1.5))
    scene = generate_synthetic_scene(scene_cfg, seed=7)
    expert = build_expert_set(scene)
    trainer = irl.Trainer(
        scene, expert,
        irl.IRLConfig(max_iterations=total),
        SACConfig(buffer_capacity=total + 10, dtype=np.float32,
                  random_steps=random_steps, initial_alpha=alpha0),
        seed=seed, algorithm="sac_handcrafted")
    t0 = time.time()
    for k in range(interval, total + 1, interval):
        trainer.run(max_iterations=k)
        success, dists = eval_success(trainer, scene)
        ret = trainer.recent_returns[-4:] if trainer.recent_returns else []
        print(f"[{time.time()-t0:7.1f}s] iter {k}: success={success:.2f} "
              f"final_dists={[round(d,2) for d in dists]} "
              f"returns={[round(r,2) for r in ret]} "
              f"alpha={trainer.agent.alpha:.4f}", flush=True)
        if success >= 0.8:
            print(f"threshold reached at {k}")
            break


if __name__ == "__main__":
    main()
