"""Coarse air-quality Markov chain and calibration from traces."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InsufficientDataError

_STOCH_TOL = 1e-9


@dataclass
class EnvironmentModel:
    """Finite Markov chain over integer coarse values.

    ``transition[i, j]`` is the probability of moving from ``values[i]`` to
    ``values[j]`` in one slot.
    """

    values: np.ndarray
    stationary: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64).ravel()
        self.stationary = np.asarray(self.stationary, dtype=float).ravel()
        self.transition = np.asarray(self.transition, dtype=float)
        n = self.values.size
        if n == 0:
            raise DomainError("value space is empty")
        if self.stationary.shape != (n,) or self.transition.shape != (n, n):
            raise DomainError(
                f"shape mismatch: {n} values, stationary {self.stationary.shape}, "
                f"transition {self.transition.shape}"
            )
        if np.any(np.diff(self.values) <= 0):
            raise DomainError("values must be strictly increasing")
        for name, arr in (("stationary", self.stationary), ("transition", self.transition)):
            if np.any(arr < 0) or np.any(arr > 1) or not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} entries must lie in [0, 1]")
        if abs(self.stationary.sum() - 1) > _STOCH_TOL:
            raise DomainError("stationary distribution must sum to 1")
        if np.any(np.abs(self.transition.sum(axis=1) - 1) > _STOCH_TOL):
            raise DomainError("transition rows must sum to 1")

    @property
    def n_states(self) -> int:
        return self.values.size

    def index_of(self, value) -> np.ndarray:
        """Index of the nearest value in the value space (ties go low)."""
        return nearest_index(self.values, value)


def nearest_index(values, x) -> np.ndarray:
    """Index of the entry of sorted ``values`` nearest to each ``x`` (ties go low)."""
    values = np.asarray(values, dtype=float)
    x = np.asarray(x, dtype=float)
    if values.size == 1:
        return np.zeros(x.shape, dtype=np.intp)
    idx = np.clip(np.searchsorted(values, x), 1, values.size - 1)
    lo, hi = values[idx - 1], values[idx]
    return np.where(x - lo <= hi - x, idx - 1, idx)


@dataclass
class TraceSet:
    """Readings ``value`` at integer slot ``t`` and location id ``location``."""

    t: np.ndarray
    location: np.ndarray
    value: np.ndarray
    slot_length: str | None = None
    _grid: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64).ravel()
        self.location = np.asarray(self.location, dtype=np.int64).ravel()
        self.value = np.asarray(self.value, dtype=float).ravel()
        if not (self.t.shape == self.location.shape == self.value.shape):
            raise DomainError("t, location and value must have the same length")
        if self.t.size and len(set(zip(self.t.tolist(), self.location.tolist()))) != self.t.size:
            raise DomainError("at most one reading per (t, location)")

    @classmethod
    def from_matrix(cls, y, slot_length=None):
        """Build from a dense (n_locations, n_slots) array; NaN marks a gap."""
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[None, :]
        loc, t = np.nonzero(~np.isnan(y))
        return cls(t=t, location=loc, value=y[loc, t], slot_length=slot_length)

    def grid(self):
        """Dense view: (location ids, first slot, matrix with NaN gaps)."""
        if self._grid is None:
            if self.t.size == 0:
                raise InsufficientDataError("trace set is empty")
            locs = np.unique(self.location)
            t0 = int(self.t.min())
            n_t = int(self.t.max()) - t0 + 1
            y = np.full((locs.size, n_t), np.nan)
            y[np.searchsorted(locs, self.location), self.t - t0] = self.value
            self._grid = (locs, t0, y)
        return self._grid

    def slot_means(self):
        """Cross-location mean per slot (NaN where no location reported)."""
        _, _, y = self.grid()
        counts = np.sum(~np.isnan(y), axis=0)
        with np.errstate(invalid="ignore"):
            return np.where(counts > 0, np.nansum(y, axis=0) / np.maximum(counts, 1), np.nan)


def stationary_distribution(transition) -> np.ndarray:
    """Left eigenvector of ``transition`` for eigenvalue 1, normalized."""
    P = np.asarray(transition, dtype=float)
    w, v = np.linalg.eig(P.T)
    i = int(np.argmin(np.abs(w - 1)))
    pi = np.abs(np.real(v[:, i]))
    return pi / pi.sum()


def sample_trajectory(model: EnvironmentModel, T: int, seed) -> np.ndarray:
    """Draw ``mu_0..mu_T`` from the chain; ``mu_0`` from the stationary law."""
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(model.transition, axis=1)
    cdf[:, -1] = 1.0
    rows = cdf.tolist()
    u = rng.random(T + 1).tolist()
    top = model.n_states - 1
    start = np.cumsum(model.stationary).tolist()
    i = min(bisect.bisect_right(start, u[0]), top)
    idx = [i]
    for x in u[1:]:
        i = min(bisect.bisect_right(rows[i], x), top)
        idx.append(i)
    idx = np.asarray(idx)
    return model.values[idx].astype(float)


def estimate_chain(traces: TraceSet) -> EnvironmentModel:
    """Empirical chain of the (integer-rounded) per-slot cross-location mean."""
    means = traces.slot_means()
    present = ~np.isnan(means)
    if present.sum() < 2 or not np.any(present[1:] & present[:-1]):
        raise InsufficientDataError("need at least two consecutive slots")
    mu = np.rint(means[present]).astype(np.int64)
    values, counts = np.unique(mu, return_counts=True)
    n = values.size
    stationary = counts / counts.sum()
    full = np.full(means.shape, -1, dtype=np.intp)
    full[present] = np.searchsorted(values, mu)
    pairs = present[:-1] & present[1:]
    src, dst = full[:-1][pairs], full[1:][pairs]
    bigram = np.zeros((n, n))
    np.add.at(bigram, (src, dst), 1.0)
    rows = bigram.sum(axis=1)
    transition = np.where(rows[:, None] > 0, bigram / np.maximum(rows, 1)[:, None], 0.0)
    # rows never left fall back to staying put
    empty = rows == 0
    transition[empty, empty.nonzero()[0]] = 1.0
    return EnvironmentModel(values, stationary, transition)


def _bin_edges(stationary, n_bins):
    """Split states into ``n_bins`` contiguous groups of roughly equal mass."""
    n = stationary.size
    cum = np.cumsum(stationary)
    edges = [0]
    for b in range(1, n_bins):
        cut = int(np.searchsorted(cum, b / n_bins * cum[-1], side="right"))
        cut = max(cut, edges[-1] + 1)
        cut = min(cut, n - (n_bins - b))
        edges.append(cut)
    edges.append(n)
    return edges


def quantize_values(model: EnvironmentModel, n_bins: int) -> EnvironmentModel:
    """Lump the value space into ``n_bins`` contiguous bins.

    Bins carry roughly equal stationary mass.  Each bin is represented by its
    probability-weighted mean value (rounded); transitions are lumped with
    stationary weights and rows renormalized.
    """
    n = model.n_states
    if not 1 <= n_bins <= n:
        raise DomainError(f"n_bins must be in [1, {n}], got {n_bins}")
    if n_bins == n:
        return EnvironmentModel(model.values.copy(), model.stationary.copy(), model.transition.copy())
    edges = _bin_edges(model.stationary, n_bins)
    group = np.empty(n, dtype=np.intp)
    for b in range(n_bins):
        group[edges[b]:edges[b + 1]] = b
    member = np.zeros((n, n_bins))
    member[np.arange(n), group] = 1.0
    pi = model.stationary
    mass = pi @ member
    values = np.empty(n_bins, dtype=np.int64)
    for b in range(n_bins):
        sl = slice(edges[b], edges[b + 1])
        w = pi[sl]
        vals = model.values[sl].astype(float)
        values[b] = int(np.rint(np.average(vals, weights=w) if w.sum() > 0 else vals.mean()))
    # an all-zero-mass bin still needs a valid row: weight members equally
    weights = np.where(mass[group] > 0, pi, 1.0)
    flow = (weights[:, None] * model.transition) @ member
    lumped = member.T @ flow
    lumped /= lumped.sum(axis=1, keepdims=True)
    return EnvironmentModel(values, mass / mass.sum(), lumped)


def calibrate_measurement_variance(traces: TraceSet, min_mean: float = 1.0) -> float:
    """Normalized spread of readings around the per-slot mean.

    Slots with fewer than two reporting locations or a mean below
    ``min_mean`` are skipped.
    """
    _, _, y = traces.grid()
    counts = np.sum(~np.isnan(y), axis=0)
    mu = traces.slot_means()
    use = (counts >= 2) & (mu >= min_mean) & (mu > 0)
    if not np.any(use):
        raise InsufficientDataError("no slot with two or more locations and a positive mean")
    sub, m = y[:, use], mu[use]
    per_slot = np.nanmean((sub - m) ** 2, axis=0) / m**2
    return float(per_slot.mean())


def calibrate_temporal_variance(traces: TraceSet) -> float:
    """Mean squared one-slot change per location."""
    _, _, y = traces.grid()
    if y.shape[1] < 2:
        raise InsufficientDataError("need at least two consecutive slots")
    diff2 = (y[:, 1:] - y[:, :-1]) ** 2
    ok = ~np.isnan(diff2)
    cols = ok.any(axis=0)
    if not np.any(cols):
        raise InsufficientDataError("no location reports in two consecutive slots")
    per_slot = np.nanmean(diff2[:, cols], axis=0)
    return float(per_slot.mean())


def calibrate_pairwise(traces: TraceSet, min_mean: float = 30.0):
    """Normalized mean shift and residual variance for every location pair.

    Returns ``(locations, mu_pair, sigma_pair_sq)`` where ``locations`` are
    the location ids indexing the matrix rows.  A pair is estimated over the
    slots in which both locations report and the cross-location mean is at
    least ``min_mean``.
    """
    locs, _, y = traces.grid()
    mu = traces.slot_means()
    K = locs.size
    mu_pair = np.zeros((K, K))
    sigma_pair_sq = np.zeros((K, K))
    good = mu >= min_mean
    for a in range(K):
        for b in range(a + 1, K):
            use = good & ~np.isnan(y[a]) & ~np.isnan(y[b])
            if not np.any(use):
                raise InsufficientDataError(
                    f"locations {locs[a]} and {locs[b]} share no usable slot"
                )
            m = mu[use]
            shift = float(np.mean((y[b, use] - y[a, use]) / m))
            resid = float(np.mean((y[a, use] + m * shift - y[b, use]) ** 2 / m**2))
            mu_pair[a, b], mu_pair[b, a] = shift, -shift
            sigma_pair_sq[a, b] = sigma_pair_sq[b, a] = resid
    return locs, mu_pair, sigma_pair_sq
