"""Deployment location selection: difference matrix, embedding, clustering
and a genetic search over K-bit selection genes.

A gene's fitness is the average joint error ``J_bar`` of a fixed power
control matrix run on a fixed trajectory with devices at the selected
locations (lower is better).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, NamedTuple

import numpy as np

from .errors import DegenerateInputError, DomainError
from .inference import InferenceParams
from .schedule import PlanningConfig, Schedule, evaluate_schedule


@dataclass
class DifferenceMatrix:
    """Pairwise location dissimilarity after metric repair.

    ``delta_applied`` is the offset added to every off-diagonal entry to
    restore the triangle inequality; ``euclidean_offset`` is the further
    offset that makes the matrix embeddable in Euclidean space.
    """

    theta: np.ndarray
    delta_applied: float = 0.0
    euclidean_offset: float = 0.0

    @property
    def K(self):
        return self.theta.shape[0]


def triangle_violation(theta) -> float:
    """Largest ``theta[i, j] - theta[i, k] - theta[k, j]`` over all triples."""
    theta = np.asarray(theta, dtype=float)
    detour = np.min(theta[:, :, None] + theta[None, :, :], axis=1)
    return float(np.max(theta - detour))


def _centered(X):
    K = X.shape[0]
    J = np.eye(K) - 1.0 / K
    return -0.5 * J @ X @ J


def _gram_min_eig(theta):
    return float(np.linalg.eigvalsh(_centered(theta**2))[0])


def _euclidean_offset(theta):
    """Smallest constant that makes ``theta`` Euclidean when added off the diagonal.

    It is the largest real eigenvalue of the block matrix
    ``[[0, 2 B(theta^2)], [-I, -4 B(theta)]]`` with ``B`` the double
    centering ``-J X J / 2``; zero when ``theta`` already embeds.
    """
    K = theta.shape[0]
    scale = max(float(theta.max()), 1e-12)
    # the centered Gram matrix always has one zero eigenvalue; allow rounding
    if K < 3 or _gram_min_eig(theta) >= -1e-12 * scale**2:
        return 0.0
    M = np.block([[np.zeros((K, K)), 2 * _centered(theta**2)],
                  [-np.eye(K), -4 * _centered(theta)]])
    w = np.linalg.eigvals(M)
    real = w.real[np.abs(w.imag) <= 1e-9 * max(1.0, float(np.abs(w).max()))]
    c = max(float(real.max()), 0.0) if real.size else 0.0
    # a small margin keeps the embedding strictly nondegenerate
    return c + 1e-9 * scale


def difference_matrix(params: InferenceParams, euclidean: bool = True) -> DifferenceMatrix:
    """``sqrt(mu_pair^2 + sigma_pair_sq)`` repaired to a metric.

    The largest triangle violation over all triples is added to every
    off-diagonal entry.  With ``euclidean`` set, a further constant offset
    makes the matrix exactly embeddable, which the triangle repair alone
    does not guarantee for more than three locations.
    """
    theta = np.sqrt(params.mu_pair**2 + params.sigma_pair_sq)
    theta = 0.5 * (theta + theta.T)
    off = 1.0 - np.eye(theta.shape[0])
    delta = max(triangle_violation(theta), 0.0)
    theta = theta + delta * off
    extra = _euclidean_offset(theta) if euclidean else 0.0
    theta = theta + extra * off
    return DifferenceMatrix(theta, delta, extra)


class Embedding(NamedTuple):
    coords: np.ndarray
    residual: float


def embed(dm: DifferenceMatrix) -> Embedding:
    """Place locations one at a time so their distances reproduce ``theta``.

    Location 0 sits at the origin and location 1 on the first axis.  Each
    later location solves the difference-of-squares linear system against
    the earlier ones (least squares, minimum norm) and takes the remaining
    squared distance to the origin on its own new axis, clamped at zero.
    ``residual`` is the largest absolute distance error.
    """
    theta = np.asarray(dm.theta, dtype=float)
    K = theta.shape[0]
    D = max(K - 1, 1)
    X = np.zeros((K, D))
    if K >= 2:
        X[1, 0] = theta[0, 1]
    for k in range(2, K):
        prev = X[1:k, :k - 1]
        rhs = 0.5 * (np.sum(prev**2, axis=1) + theta[0, k] ** 2 - theta[1:k, k] ** 2)
        y = np.linalg.lstsq(prev, rhs, rcond=None)[0]
        X[k, :k - 1] = y
        X[k, k - 1] = np.sqrt(max(theta[0, k] ** 2 - float(y @ y), 0.0))
    dist = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=-1)
    return Embedding(X, float(np.max(np.abs(dist - theta))) if K else 0.0)


class Clustering(NamedTuple):
    clusters: list
    labels: np.ndarray
    centers: np.ndarray
    inertia: list


def kmeans_cluster(emb: Embedding, L: int, seed, max_iter: int = 100) -> Clustering:
    """Lloyd's algorithm from a seeded farthest-point initialization.

    ``inertia`` records the within-cluster sum of squares after every
    assignment step.  A cluster that empties is reseeded with the point
    farthest from its current center.
    """
    X = np.asarray(emb.coords, dtype=float)
    K = X.shape[0]
    if not 1 <= L <= K:
        raise DomainError(f"need 1 <= L <= K, got L={L}, K={K}")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(K))
    chosen = [first]
    d2 = np.sum((X - X[first]) ** 2, axis=1)
    for _ in range(1, L):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    centers = X[chosen].copy()
    labels = None
    inertia = []
    for _ in range(max_iter):
        dist = np.sum((X[:, None, :] - centers[None]) ** 2, axis=-1)
        new = np.argmin(dist, axis=1)
        for c in range(L):
            if not np.any(new == c):
                far = int(np.argmax(dist[np.arange(K), new]))
                new[far] = c
        inertia.append(float(np.sum((X - centers[new]) ** 2)))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centers = np.stack([X[labels == c].mean(axis=0) for c in range(L)])
    clusters = [sorted(np.flatnonzero(labels == c).tolist()) for c in range(L)]
    return Clustering(clusters, labels, centers, inertia)


# -- genes -----------------------------------------------------------------


@dataclass
class Gene:
    bits: np.ndarray
    fitness: float | None = None

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.int8).ravel()
        if not np.all((self.bits == 0) | (self.bits == 1)):
            raise DomainError("gene bits must be 0-1")

    @property
    def key(self) -> bytes:
        return self.bits.tobytes()

    @property
    def locations(self) -> tuple:
        return tuple(np.flatnonzero(self.bits).tolist())

    def __len__(self):
        return self.bits.size

    @classmethod
    def from_locations(cls, K, locations):
        bits = np.zeros(K, dtype=np.int8)
        bits[list(locations)] = 1
        return cls(bits)


@dataclass(frozen=True)
class GAConfig:
    """Genetic search settings; ``elite + sampled`` is the pool size."""

    pool_size: int = 40
    elite: int = 4
    sampled: int = 36
    copies: int = 3
    p_mutation: float = 0.1
    max_rounds: int = 25
    stall_limit: int = 6

    def __post_init__(self):
        if self.elite + self.sampled != self.pool_size:
            raise DomainError("elite + sampled must equal pool_size")
        if min(self.pool_size, self.copies) < 1 or min(self.elite, self.sampled, self.max_rounds) < 0:
            raise DomainError("invalid GA sizes")
        if not 0 <= self.p_mutation <= 1:
            raise DomainError("p_mutation must lie in [0, 1]")

    @classmethod
    def for_pool(cls, H, **kw):
        """Pool of ``H`` with a tenth kept as elites."""
        elite = max(1, round(0.1 * H))
        return cls(pool_size=H, elite=elite, sampled=H - elite, **kw)


def initial_pool(clusters, C: int, seed, K: int | None = None) -> list:
    """``C`` genes taking one random location from every cluster."""
    if not clusters or any(len(c) == 0 for c in clusters):
        raise DomainError("clusters must be nonempty")
    K = K if K is not None else 1 + max(max(c) for c in clusters)
    rng = np.random.default_rng(seed)
    return [Gene.from_locations(K, [c[rng.integers(len(c))] for c in clusters]) for _ in range(C)]


def random_pool(K: int, L: int, C: int, seed) -> list:
    """``C`` genes with ``L`` uniformly random locations each."""
    rng = np.random.default_rng(seed)
    return [Gene.from_locations(K, rng.choice(K, size=L, replace=False)) for _ in range(C)]


def mutate(g: Gene, cfg: GAConfig, rng) -> list:
    """``cfg.copies`` copies with each bit flipped with probability ``p_mutation``."""
    flips = rng.random((cfg.copies, len(g))) < cfg.p_mutation
    return [Gene(np.where(f, 1 - g.bits, g.bits)) for f in flips]


def recombine(g1: Gene, g2: Gene, rng, position: int | None = None):
    """Swap the suffixes after a crossover position in ``[1, K-1]``."""
    K = len(g1)
    if len(g2) != K:
        raise DomainError("genes differ in length")
    if K < 2:
        return Gene(g1.bits.copy()), Gene(g2.bits.copy())
    g = int(rng.integers(1, K)) if position is None else int(position)
    if not 1 <= g <= K - 1:
        raise DomainError(f"crossover position must lie in [1, {K - 1}]")
    a = np.concatenate([g1.bits[:g], g2.bits[g:]])
    b = np.concatenate([g2.bits[:g], g1.bits[g:]])
    return Gene(a), Gene(b)


def select(pool, cfg: GAConfig, rng, L: int) -> list:
    """Keep distinct, in-budget genes: elites by fitness plus weighted draws.

    Genes without any selected location are dropped too, since they
    cannot produce a map.  The remaining ``sampled`` slots are drawn
    without replacement with weight ``max J - J``, uniformly if all
    weights vanish.
    """
    seen = {}
    for g in pool:
        if g.fitness is None:
            raise DomainError("every gene needs a fitness before selection")
        n = int(g.bits.sum())
        if 1 <= n <= L and g.key not in seen:
            seen[g.key] = g
    cand = sorted(seen.values(), key=lambda g: (g.fitness, g.key))
    if not cand:
        raise DegenerateInputError("no admissible gene left after filtering")
    keep = cand[:cfg.elite]
    rest = cand[cfg.elite:]
    n = min(cfg.sampled, len(rest))
    if n:
        fit = np.array([g.fitness for g in rest])
        w = fit.max() - fit
        pos = np.flatnonzero(w > 0)
        if pos.size >= n:
            idx = rng.choice(len(rest), size=n, replace=False, p=w / w.sum())
        else:
            # every positive-weight gene goes in; zero-weight ones fill up uniformly
            zero = np.flatnonzero(w <= 0)
            idx = np.concatenate([pos, rng.choice(zero, size=n - pos.size, replace=False)])
        keep += [rest[i] for i in sorted(idx)]
    return keep


class Evolution(NamedTuple):
    best: Gene
    history: list
    rounds: int
    pool: list


def evolve(cfg: GAConfig, planning: PlanningConfig, evaluator: Callable, seed,
           pool=None) -> Evolution:
    """Mutate, recombine and select until ``max_rounds`` or a stall.

    ``pool`` is the initial gene pool (random if omitted).  ``history[i]``
    is the best fitness after round ``i`` (``history[0]`` is the initial
    pool); elitism keeps it non-increasing.
    """
    rng = np.random.default_rng(seed)
    if pool is None:
        pool = random_pool(planning.K, planning.L, cfg.pool_size, rng.integers(2**63))
    pool = [Gene(g.bits.copy(), g.fitness) for g in pool]

    def score(genes):
        for g in genes:
            if g.fitness is None:
                g.fitness = float(evaluator(g))

    score(pool)
    pool = select(pool, cfg, rng, planning.L)
    history = [pool[0].fitness]
    stall = 0
    rounds = 0
    for rounds in range(1, cfg.max_rounds + 1):
        offspring = [m for g in pool for m in mutate(g, cfg, rng)]
        order = rng.permutation(len(pool))
        for i in range(0, len(order) - 1, 2):
            offspring.extend(recombine(pool[order[i]], pool[order[i + 1]], rng))
        # selection drops these anyway; skip scoring them
        offspring = [g for g in offspring if 1 <= g.bits.sum() <= planning.L]
        score(offspring)
        pool = select(pool + offspring, cfg, rng, planning.L)
        best = pool[0].fitness
        stall = stall + 1 if best >= history[-1] else 0
        history.append(min(best, history[-1]))
        if stall >= cfg.stall_limit:
            break
    return Evolution(pool[0], history, rounds, pool)


@dataclass
class ScheduleEvaluator:
    """Fitness of a gene: ``J_bar`` of fixed power-control rows on one trajectory.

    ``rows`` is the (L, T+1) power control matrix; a gene with ``L'``
    locations uses its first ``L'`` rows.  Results are cached per gene.
    """

    params: InferenceParams
    trajectory: np.ndarray
    rows: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)
    calls: int = 0

    def __post_init__(self):
        self.trajectory = np.asarray(self.trajectory, dtype=float)
        self.rows = np.asarray(self.rows, dtype=np.int8)
        if self.rows.ndim != 2 or self.rows.shape[1] != self.trajectory.size:
            raise DomainError("rows must be (L, T+1) matching the trajectory")

    def __call__(self, gene: Gene) -> float:
        key = gene.key
        if key not in self.cache:
            locs = gene.locations
            if not 1 <= len(locs) <= self.rows.shape[0]:
                raise DomainError(f"gene selects {len(locs)} locations; rows cover {self.rows.shape[0]}")
            self.calls += 1
            s = Schedule.from_rows(self.params.K, locs, self.rows[:len(locs)])
            self.cache[key] = evaluate_schedule(s, self.trajectory, self.params, check=False).J_bar
        return self.cache[key]


def exhaustive_best(evaluator: Callable, K: int, L: int):
    """Best ``L``-subset by full enumeration; returns ``(locations, J_bar)``."""
    best = None
    for locs in combinations(range(K), L):
        j = evaluator(Gene.from_locations(K, locs))
        if best is None or j < best[1]:
            best = (locs, j)
    return best
