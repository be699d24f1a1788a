import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airsense.environment import sample_trajectory
from airsense.errors import DegenerateInputError, DomainError
from airsense.inference import InferenceParams
from airsense.location import (
    DifferenceMatrix,
    GAConfig,
    Gene,
    ScheduleEvaluator,
    difference_matrix,
    embed,
    evolve,
    exhaustive_best,
    initial_pool,
    kmeans_cluster,
    mutate,
    random_pool,
    recombine,
    select,
    triangle_violation,
)
from airsense.schedule import PlanningConfig, uniform_rows
from airsense.synthetic import grouped_layout, grouped_params, haze_chain, random_pair_params


def _pair_distances(X):
    return np.linalg.norm(X[:, None] - X[None], axis=-1)


def test_triangle_violation_values():
    theta = np.array([[0, 1, 5], [1, 0, 1], [5, 1, 0]], dtype=float)
    assert triangle_violation(theta) == pytest.approx(3.0)
    ok = np.array([[0, 3, 4], [3, 0, 5], [4, 5, 0]], dtype=float)
    assert triangle_violation(ok) == 0.0


def test_difference_matrix_hand_value():
    mu = np.array([[0, 0.3], [-0.3, 0]])
    var = np.array([[0, 0.16], [0.16, 0]])
    dm = difference_matrix(InferenceParams(0.0037, 10.89, mu, var))
    assert dm.theta[0, 1] == pytest.approx(0.5)
    assert dm.delta_applied == 0.0 and dm.euclidean_offset == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10_000))
def test_repaired_matrix_is_metric(K, seed):
    dm = difference_matrix(random_pair_params(K, seed))
    th = dm.theta
    assert np.allclose(th, th.T)
    assert np.all(np.diag(th) == 0)
    assert np.all(th[~np.eye(K, dtype=bool)] > 0)
    assert triangle_violation(th) <= 1e-12
    assert dm.delta_applied >= 0 and dm.euclidean_offset >= 0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10_000))
def test_embedding_reproduces_distances(K, seed):
    dm = difference_matrix(random_pair_params(K, seed))
    emb = embed(dm)
    dist = _pair_distances(emb.coords)
    off = ~np.eye(K, dtype=bool)
    if K > 1:
        assert np.max(np.abs(dist[off] - dm.theta[off]) / dm.theta[off]) < 1e-6
    assert emb.residual < 1e-6 * max(dm.theta.max(), 1)


def test_embedding_of_known_points():
    pts = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0], [3.0, 4.0]])
    emb = embed(DifferenceMatrix(_pair_distances(pts)))
    assert emb.residual < 1e-12
    assert emb.coords[1].tolist()[:1] == [3.0]


def test_triangle_repair_alone_can_leave_non_euclidean_matrix():
    # four points, all pairs at 1 except one pair at 2: metric but not embeddable
    theta = np.ones((4, 4)) - np.eye(4)
    theta[0, 1] = theta[1, 0] = 2.0
    assert triangle_violation(theta) <= 0
    assert embed(DifferenceMatrix(theta)).residual > 1e-3


def test_kmeans_recovers_groups():
    K, L = 9, 3
    params = grouped_params(K, L, seed=0)
    _, _, groups = grouped_layout(K, L, 0)
    cl = kmeans_cluster(embed(difference_matrix(params)), L, seed=1)
    assert sorted(map(tuple, cl.clusters)) == sorted(tuple(np.flatnonzero(groups == g)) for g in range(L))
    assert all(a >= b - 1e-12 for a, b in zip(cl.inertia, cl.inertia[1:]))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(0, 10_000), st.data())
def test_kmeans_partitions(K, seed, data):
    L = data.draw(st.integers(1, K))
    cl = kmeans_cluster(embed(difference_matrix(random_pair_params(K, seed))), L, seed)
    assert sorted(k for c in cl.clusters for k in c) == list(range(K))
    assert all(len(c) > 0 for c in cl.clusters)
    assert all(a >= b - 1e-9 for a, b in zip(cl.inertia, cl.inertia[1:]))
    with pytest.raises(DomainError):
        kmeans_cluster(embed(difference_matrix(random_pair_params(K, seed))), K + 1, seed)


def test_gene_basics():
    g = Gene.from_locations(5, [4, 1])
    assert g.bits.tolist() == [0, 1, 0, 0, 1]
    assert g.locations == (1, 4)
    assert len(g) == 5
    with pytest.raises(DomainError):
        Gene([0, 2])


def test_ga_config():
    cfg = GAConfig.for_pool(20)
    assert (cfg.elite, cfg.sampled) == (2, 18)
    with pytest.raises(DomainError):
        GAConfig(pool_size=10, elite=2, sampled=7)
    with pytest.raises(DomainError):
        GAConfig(p_mutation=1.5)


def test_pools():
    pool = initial_pool([[0, 1], [2], [3, 4, 5]], 6, seed=0, K=7)
    for g in pool:
        locs = g.locations
        assert len(locs) == 3 and locs[0] in (0, 1) and locs[1] == 2 and locs[2] in (3, 4, 5)
    assert len(initial_pool([[0], [1]], 3, seed=0)[0]) == 2
    with pytest.raises(DomainError):
        initial_pool([[0], []], 2, seed=0)
    rp = random_pool(8, 3, 10, seed=2)
    assert all(g.bits.sum() == 3 and len(g) == 8 for g in rp)


def test_mutate():
    rng = np.random.default_rng(0)
    g = Gene([1, 0, 1, 0])
    assert [m.bits.tolist() for m in mutate(g, GAConfig(p_mutation=0.0), rng)] == [[1, 0, 1, 0]] * 3
    assert [m.bits.tolist() for m in mutate(g, GAConfig(p_mutation=1.0), rng)] == [[0, 1, 0, 1]] * 3
    assert g.bits.tolist() == [1, 0, 1, 0]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=2, max_size=12), st.integers(0, 10_000))
def test_recombine_conserves_bits(bits, seed):
    rng = np.random.default_rng(seed)
    g1 = Gene(bits)
    g2 = Gene(rng.integers(0, 2, len(bits)))
    a, b = recombine(g1, g2, rng)
    assert np.array_equal(a.bits + b.bits, g1.bits + g2.bits)


def test_recombine_position():
    a, b = recombine(Gene([1, 1, 1, 1]), Gene([0, 0, 0, 0]), None, position=1)
    assert a.bits.tolist() == [1, 0, 0, 0] and b.bits.tolist() == [0, 1, 1, 1]
    with pytest.raises(DomainError):
        recombine(Gene([1, 1]), Gene([0, 0]), None, position=2)
    with pytest.raises(DomainError):
        recombine(Gene([1, 1]), Gene([0, 0, 1]), None)


def test_select_rules():
    rng = np.random.default_rng(0)
    genes = [Gene([1, 0, 0], 5.0), Gene([1, 0, 0], 5.0), Gene([0, 0, 0], 0.0), Gene([1, 1, 1], 0.1),
             Gene([0, 1, 0], 3.0), Gene([0, 0, 1], 9.0), Gene([1, 1, 0], 4.0)]
    cfg = GAConfig(pool_size=3, elite=1, sampled=2)
    out = select(genes, cfg, rng, L=2)
    assert out[0].bits.tolist() == [0, 1, 0]
    keys = [g.key for g in out]
    assert len(set(keys)) == len(keys) == 3
    assert all(1 <= g.bits.sum() <= 2 for g in out)
    # the worst gene has zero weight and is never drawn while better ones remain
    assert Gene([0, 0, 1]).key not in keys
    with pytest.raises(DomainError):
        select([Gene([1, 0])], cfg, rng, L=1)
    with pytest.raises(DegenerateInputError):
        select([Gene([0, 0], 1.0)], cfg, rng, L=1)


def test_select_fills_with_zero_weight_genes():
    rng = np.random.default_rng(0)
    genes = [Gene([1, 0, 0], 1.0), Gene([0, 1, 0], 2.0), Gene([0, 0, 1], 2.0)]
    out = select(genes, GAConfig(pool_size=3, elite=1, sampled=2), rng, L=1)
    assert len(out) == 3


def _instance(seed, K=8, L=3, T=60, E=12):
    params = grouped_params(K, L, seed)
    traj = sample_trajectory(haze_chain(), T, seed)
    return params, ScheduleEvaluator(params, traj, uniform_rows(T, E, L)), PlanningConfig(K, L, T, E, 10)


def test_evaluator_caches_and_checks():
    _, ev, _ = _instance(0)
    g = Gene.from_locations(8, [0, 3])
    assert ev(g) == ev(Gene(g.bits.copy()))
    assert ev.calls == 1
    with pytest.raises(DomainError):
        ev(Gene.from_locations(8, [0, 1, 2, 3]))
    with pytest.raises(DomainError):
        ScheduleEvaluator(ev.params, ev.trajectory, np.ones((2, 5)))


def test_evolve_history_and_budget():
    _, ev, planning = _instance(1)
    evo = evolve(GAConfig.for_pool(12, max_rounds=10), planning, ev, seed=3)
    assert evo.history[0] >= evo.history[-1]
    assert all(a >= b for a, b in zip(evo.history, evo.history[1:]))
    assert evo.best.fitness == evo.history[-1]
    assert all(1 <= g.bits.sum() <= planning.L for g in evo.pool)
    assert evo.rounds <= 10


def test_evolve_reproducible_and_stalls():
    _, ev, planning = _instance(2)
    cfg = GAConfig.for_pool(10, max_rounds=50, stall_limit=3)
    a = evolve(cfg, planning, ev, seed=5)
    b = evolve(cfg, planning, ev, seed=5)
    assert a.history == b.history
    assert a.rounds < 50
    tail = a.history[-4:]
    assert len(set(tail)) == 1


def test_exhaustive_best_and_ga_agree_on_small_instance():
    _, ev, planning = _instance(4, K=6, L=2)
    locs, best = exhaustive_best(ev, 6, 2)
    assert len(locs) == 2
    evo = evolve(GAConfig.for_pool(10), planning, ev, seed=0)
    assert evo.best.fitness <= best * 1.05
    # a subset of fewer devices can never beat the best full subset here
    assert min(ev(Gene.from_locations(6, [k])) for k in range(6)) >= best
