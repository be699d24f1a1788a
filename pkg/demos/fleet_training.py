"""Four sensors sharing one haze map, trained by deep Q-learning.

Devices decide in turn within each slot, so the network scores one
device's choice at a time.  The script prints the greedy policy's J_bar on a
held-out trajectory while training runs, then compares the final policy
with random and evenly spaced readings on fresh trajectories.
"""

import sys

import numpy as np

from airsense import Fleet, PlanningConfig, TrainConfig, evaluate_schedule, greedy_rollout, q_learning_train
from airsense import random_rollout, sample_trajectory, uniform_schedule
from airsense.synthetic import haze_chain, random_location_params

LOCATIONS = [0, 2, 3, 5]


def main(seed=0):
    env = haze_chain()
    cfg = PlanningConfig(K=6, L=4, T=200, E=40, delta_T=10)
    fleet = Fleet(cfg, random_location_params(6, 1), LOCATIONS)
    tc = TrainConfig(episodes=200, gradient_steps=100, epsilon=(0.3, 0.05), gamma=0.99,
                     eval_every=20, seed=seed)

    def progress(ep, row):
        if not np.isnan(row[3]):
            print(f"  episode {ep + 1:>3}  epsilon {row[1]:.2f}  greedy J_bar {row[3]:7.3f}", flush=True)

    print(f"training on {cfg.T}-slot episodes, {cfg.E} readings per device")
    net = q_learning_train(fleet, env, tc, progress=progress).net

    trajs = [sample_trajectory(env, cfg.T, [seed, 1, s]) for s in range(20)]
    uni = uniform_schedule(cfg, LOCATIONS)
    results = {
        "q-learning": [greedy_rollout(net, tr, fleet).J_bar for tr in trajs],
        "random": [random_rollout(fleet, tr, [seed, 2, i]).J_bar for i, tr in enumerate(trajs)],
        "uniform": [evaluate_schedule(uni, tr, fleet.params, cfg).J_bar for tr in trajs],
    }
    print("\nmean J_bar over 20 fresh trajectories")
    for name, js in results.items():
        print(f"  {name:<10} {np.mean(js):7.3f} +/- {np.std(js, ddof=1) / np.sqrt(len(js)):.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
