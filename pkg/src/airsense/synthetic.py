"""Synthetic chains, noise models and traces with known ground truth.

Used by the demos, the command line ``simulate`` subcommand and the
calibration round-trip tests.
"""

from __future__ import annotations

import numpy as np

from .environment import EnvironmentModel, TraceSet, stationary_distribution
from .inference import InferenceParams

SIGMA0_SQ = 0.0037
SIGMA_D_SQ = 10.89


def haze_chain(n_levels=16, lo=20, hi=300, stay=0.7, jump=0.05) -> EnvironmentModel:
    """Birth-death chain over geometrically spaced levels with rare jumps.

    From each level the chain stays with probability ``stay``, jumps to a
    uniformly random level with probability ``jump`` and otherwise steps to
    a neighbour (reflecting at the ends).
    """
    values = np.unique(np.rint(np.geomspace(lo, hi, n_levels)).astype(np.int64))
    n = values.size
    P = np.full((n, n), jump / n)
    step = (1.0 - stay - jump) / 2
    for i in range(n):
        P[i, i] += stay
        P[i, max(i - 1, 0)] += step
        P[i, min(i + 1, n - 1)] += step
    P /= P.sum(axis=1, keepdims=True)
    return EnvironmentModel(values, stationary_distribution(P), P)


def random_chain(n_states, seed, lo=20, hi=300, concentration=1.0) -> EnvironmentModel:
    """Chain with Dirichlet rows over ``n_states`` distinct random integers."""
    rng = np.random.default_rng(seed)
    values = np.sort(rng.choice(np.arange(lo, hi + 1), size=n_states, replace=False))
    P = rng.dirichlet(np.full(n_states, concentration), size=n_states)
    return EnvironmentModel(values, stationary_distribution(P), P)


def location_params(offsets, spreads, groups=None, group_spreads=None,
                    sigma0_sq=SIGMA0_SQ, sigma_d_sq=SIGMA_D_SQ) -> InferenceParams:
    """Pair statistics of locations ``y_k = mu (1 + offsets[k] + u_g + n_k)``.

    ``spreads[k]`` is the variance of location ``k``'s own normalized noise
    ``n_k``.  Locations sharing a group id in ``groups`` also share the
    fluctuation ``u_g`` of variance ``group_spreads[g]``, which cancels
    within a group.  The pair shift is ``offsets[b] - offsets[a]``; the pair
    variance is ``spreads[a] + spreads[b]``, plus both group variances when
    ``a`` and ``b`` sit in different groups.
    """
    c = np.asarray(offsets, dtype=float)
    s = np.asarray(spreads, dtype=float)
    mu_pair = c[None, :] - c[:, None]
    sigma_pair_sq = s[:, None] + s[None, :]
    if groups is not None:
        g = np.asarray(groups)
        v = np.asarray(group_spreads, dtype=float)[g]
        sigma_pair_sq = sigma_pair_sq + np.where(g[:, None] != g[None, :], v[:, None] + v[None, :], 0.0)
    np.fill_diagonal(sigma_pair_sq, 0.0)
    return InferenceParams(sigma0_sq, sigma_d_sq, mu_pair, sigma_pair_sq)


def random_location_params(K, seed, **kw) -> InferenceParams:
    """Offsets and spreads drawn so pair statistics stay in typical ranges.

    Pair shifts fall in [-0.15, 0.15] and pair variances in [0.001, 0.1].
    """
    rng = np.random.default_rng(seed)
    return location_params(rng.uniform(-0.075, 0.075, K), rng.uniform(0.0005, 0.05, K), **kw)


def random_pair_params(K, seed, sigma0_sq=SIGMA0_SQ, sigma_d_sq=SIGMA_D_SQ) -> InferenceParams:
    """Unstructured pair tables: independent uniform entries per pair."""
    rng = np.random.default_rng(seed)
    mu = np.triu(rng.uniform(-0.15, 0.15, (K, K)), 1)
    var = np.triu(rng.uniform(0.001, 0.1, (K, K)), 1)
    return InferenceParams(sigma0_sq, sigma_d_sq, mu - mu.T, var + var.T)


def grouped_params(K, n_groups, seed, spread=0.002, separation=0.12, group_spread=0.02,
                   **kw) -> InferenceParams:
    """Locations in ``n_groups`` tight groups with well separated offsets.

    Members of a group share a fluctuation of variance ``group_spread``, so
    cross-group pairs are both shifted and noisy.
    """
    offsets, spreads, groups = grouped_layout(K, n_groups, seed, spread, separation)
    return location_params(offsets, spreads, groups, np.full(n_groups, group_spread), **kw)


def grouped_layout(K, n_groups, seed, spread=0.002, separation=0.12):
    """``(offsets, spreads, groups)`` behind :func:`grouped_params`."""
    rng = np.random.default_rng(seed)
    groups = np.arange(K) % n_groups
    centers = (np.arange(n_groups) - (n_groups - 1) / 2) * separation
    offsets = centers[groups] + rng.uniform(-0.005, 0.005, K)
    spreads = rng.uniform(0.5, 1.5, K) * spread
    return offsets, spreads, groups


def measurement_traces(mu, n_locations, sigma0_sq, seed) -> TraceSet:
    """Readings ``mu_t (1 + e)`` whose per-slot mean is exactly ``mu_t``.

    The noise is centered across locations and rescaled so its per-slot
    spread is an unbiased draw of variance ``sigma0_sq``.
    """
    rng = np.random.default_rng(seed)
    mu = np.asarray(mu, dtype=float)
    e = rng.normal(0.0, np.sqrt(sigma0_sq), (n_locations, mu.size))
    e = (e - e.mean(axis=0)) * np.sqrt(n_locations / (n_locations - 1))
    return TraceSet.from_matrix(mu * (1.0 + e))


def random_walk_traces(n_locations, T, sigma_d_sq, seed, start=200.0) -> TraceSet:
    """Independent Gaussian random walks with step variance ``sigma_d_sq``."""
    rng = np.random.default_rng(seed)
    steps = rng.normal(0.0, np.sqrt(sigma_d_sq), (n_locations, T - 1))
    y = start + np.concatenate([np.zeros((n_locations, 1)), np.cumsum(steps, axis=1)], axis=1)
    return TraceSet.from_matrix(y)


def location_traces(mu, offsets, spreads, seed, groups=None, group_spreads=None) -> TraceSet:
    """Readings ``mu_t (1 + c_k + u_gt + n_kt)`` centered so the slot mean is ``mu_t``.

    Their pair statistics are those of :func:`location_params` with the
    same arguments; centering removes a term common to all locations and
    so leaves every pairwise difference unchanged.
    """
    rng = np.random.default_rng(seed)
    mu = np.asarray(mu, dtype=float)
    c = np.asarray(offsets, dtype=float)
    s = np.asarray(spreads, dtype=float)
    dev = c[:, None] + rng.normal(size=(c.size, mu.size)) * np.sqrt(s)[:, None]
    if groups is not None:
        g = np.asarray(groups)
        v = np.asarray(group_spreads, dtype=float)
        shared = rng.normal(size=(v.size, mu.size)) * np.sqrt(v)[:, None]
        dev += shared[g]
    dev -= dev.mean(axis=0)
    return TraceSet.from_matrix(mu * (1.0 + dev))
