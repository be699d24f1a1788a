"""Where to put three sensors among twelve candidate sites.

Sites come in three neighbourhoods whose readings share a common noise
term, so a sensor in one neighbourhood says little about another.  The
pairwise parameters are turned into a distance matrix, embedded in the
plane, and clustered; the clusters seed a genetic search whose result is
checked against brute force over all 220 subsets.
"""

import time

from airsense import (
    GAConfig,
    PlanningConfig,
    ScheduleEvaluator,
    difference_matrix,
    embed,
    evolve,
    initial_pool,
    kmeans_cluster,
    sample_trajectory,
)
from airsense.location import exhaustive_best, random_pool
from airsense.schedule import uniform_rows
from airsense.synthetic import grouped_layout, grouped_params, haze_chain

K, L, T, E = 12, 3, 100, 20
SEED = 4


def main():
    params = grouped_params(K, L, SEED)
    _, _, groups = grouped_layout(K, L, SEED)
    cfg = PlanningConfig(K, L, T, E, 10)

    dm = difference_matrix(params)
    emb = embed(dm)
    clustering = kmeans_cluster(emb, L, SEED)
    print(f"metric repair added {dm.delta_applied:.3g} (triangle) + {dm.euclidean_offset:.3g} (euclidean) off the diagonal")
    print("true neighbourhood of each site:", groups.tolist())
    print("cluster found for each site:    ", clustering.labels.tolist(), "\n")

    traj = sample_trajectory(haze_chain(), T, SEED)
    ev = ScheduleEvaluator(params, traj, uniform_rows(T, E, L))

    t0 = time.perf_counter()
    best_locs, best = exhaustive_best(ev, K, L)
    print(f"brute force: {list(best_locs)} J_bar {best:.3f} ({ev.calls} evaluations, {time.perf_counter() - t0:.1f}s)")

    for label, pool in [("clustered", initial_pool(clustering.clusters, 12, SEED, K)),
                        ("random", random_pool(K, L, 12, SEED))]:
        ev.calls = 0
        ev.cache.clear()
        start = min(ev(g) for g in pool)
        evo = evolve(GAConfig.for_pool(12), cfg, ev, SEED, pool=pool)
        print(f"{label:>9} seed: generation 0 best {start:.3f}, final {list(evo.best.locations)} "
              f"J_bar {evo.best.fitness:.3f} after {evo.rounds} rounds, {ev.calls} evaluations")

    sites = {int(k): int(g) for k, g in zip(range(K), groups)}
    print("\nneighbourhoods covered by the brute-force choice:", sorted({sites[k] for k in best_locs}))


if __name__ == "__main__":
    main()
