"""One battery-limited sensor: optimal policy against evenly spaced readings.

The device may read in 100 of 500 slots and must not sleep more than 10 in a
row.  The optimal policy is solved once by backward induction and then
replayed on fresh haze trajectories.  It saves its readings for stretches
where the haze level is moving, which is where the estimate goes stale.
"""

import time

import numpy as np

from airsense import PlanningConfig, dp_solve, evaluate_schedule, run_policy, sample_trajectory, uniform_schedule
from airsense.synthetic import SIGMA0_SQ, SIGMA_D_SQ, haze_chain, random_location_params


def readings_near_changes(row, traj, window=2):
    """Share of readings (slots 1..T) taken within ``window`` slots after a level change."""
    changed = np.flatnonzero(np.diff(traj) != 0) + 1
    near = np.zeros(traj.size, dtype=bool)
    for t in changed:
        near[t:t + window + 1] = True
    sensed = np.flatnonzero(row[1:]) + 1
    return near[sensed].mean(), near[1:].mean()


def main():
    env = haze_chain()
    params = random_location_params(2, 0, sigma0_sq=SIGMA0_SQ, sigma_d_sq=SIGMA_D_SQ)
    cfg = PlanningConfig(K=2, L=1, T=500, E=100, delta_T=10)

    t0 = time.perf_counter()
    policy = dp_solve(cfg, env, params, 0, keep_values=False)
    print(f"solved {cfg.T} stages over {env.n_states} haze levels in {time.perf_counter() - t0:.1f}s")
    # the value is the expected total reward, minus the error summed over locations and slots
    print(f"expected J_bar under the chain: {-policy.expected_value(env) / (cfg.K * cfg.T):.3f}\n")

    uni = uniform_schedule(cfg, [0])
    print(f"{'trajectory':>10} {'dp':>8} {'uniform':>8}  dp readings near changes")
    dp_j, uni_j = [], []
    for i, seed in enumerate(np.random.SeedSequence(2024).spawn(10)):
        traj = sample_trajectory(env, cfg.T, seed)
        run = run_policy(policy, traj, params)
        dp_j.append(run.J_bar)
        uni_j.append(evaluate_schedule(uni, traj, params, cfg).J_bar)
        share, base = readings_near_changes(run.schedule.phi[0], traj)
        print(f"{i:>10} {dp_j[-1]:8.3f} {uni_j[-1]:8.3f}  {100 * share:4.0f}% (slots near changes: {100 * base:.0f}%)")

    gain = 1 - np.mean(dp_j) / np.mean(uni_j)
    print(f"\nmean J_bar: dp {np.mean(dp_j):.3f}, uniform {np.mean(uni_j):.3f}, reduction {100 * gain:.1f}%")


if __name__ == "__main__":
    main()
