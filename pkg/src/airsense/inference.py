"""Gaussian measurement, temporal/spatial inference, fusion and joint error.

Every unmeasured cell of the air-quality map is inferred from the most recent
reading of each deployed device: the reading is pushed forward in time
(variance grows linearly with the age), shifted to the target location with
the normalized pairwise statistics, and the per-device results are combined
by precision weighting.  Measured cells bypass inference entirely.

The scalar functions (:func:`measurement_estimate`, :func:`temporal_extend`,
:func:`spatial_shift`, :func:`fuse`, :func:`infer_map`) are the reference
path.  :func:`joint_error_map` evaluates the same rule for all locations at
once, optionally for a batch of scenarios, and is what the planners call in
their inner loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateInputError, DomainError


@dataclass(frozen=True)
class Estimate:
    """Gaussian belief about one location's value at one slot."""

    mean: float
    variance: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.variance)):
            raise DomainError(f"non-finite estimate ({self.mean}, {self.variance})")
        if self.variance < 0:
            raise DomainError(f"negative variance {self.variance}")


@dataclass(frozen=True)
class LastMeasurement:
    """Most recent reading of one deployed device.

    ``age`` is the number of slots since the reading was taken and
    ``recorded_mean`` the coarse value at that time.
    """

    location: int
    age: int
    recorded_mean: float
    recorded_variance: float

    def __post_init__(self):
        if self.age < 0:
            raise DomainError(f"negative age {self.age}")
        if self.recorded_variance < 0:
            raise DomainError(f"negative variance {self.recorded_variance}")


class InferenceParams:
    """Noise model of the sensing network.

    Parameters
    ----------
    sigma0_sq : float
        Normalized measurement variance; a reading of value ``mu`` has
        variance ``mu**2 * sigma0_sq``.
    sigma_d_sq : float
        Variance added per slot of temporal extrapolation.
    mu_pair, sigma_pair_sq : (K, K) array_like
        Normalized mean shift and added variance when inferring location
        ``k'`` from location ``k``.  ``mu_pair`` must be antisymmetric and
        ``sigma_pair_sq`` symmetric, both with zero diagonal.
    """

    def __init__(self, sigma0_sq, sigma_d_sq, mu_pair, sigma_pair_sq, *, atol=1e-12):
        mu_pair = np.array(mu_pair, dtype=float, ndmin=2)
        sigma_pair_sq = np.array(sigma_pair_sq, dtype=float, ndmin=2)
        if sigma0_sq < 0 or sigma_d_sq < 0:
            raise DomainError("variances must be nonnegative")
        K = mu_pair.shape[0]
        if mu_pair.shape != (K, K) or sigma_pair_sq.shape != (K, K):
            raise DomainError(
                f"pair matrices must be square and equal-shaped, got "
                f"{mu_pair.shape} and {sigma_pair_sq.shape}"
            )
        if not (np.all(np.isfinite(mu_pair)) and np.all(np.isfinite(sigma_pair_sq))):
            raise DomainError("pair matrices must be finite")
        if np.any(sigma_pair_sq < 0):
            raise DomainError("sigma_pair_sq must be nonnegative")
        if np.any(np.abs(np.diag(mu_pair)) > atol) or np.any(np.abs(np.diag(sigma_pair_sq)) > atol):
            raise DomainError("pair matrices must have a zero diagonal")
        if not np.allclose(mu_pair, -mu_pair.T, rtol=0, atol=atol):
            raise DomainError("mu_pair must be antisymmetric")
        if not np.allclose(sigma_pair_sq, sigma_pair_sq.T, rtol=0, atol=atol):
            raise DomainError("sigma_pair_sq must be symmetric")
        self.sigma0_sq = float(sigma0_sq)
        self.sigma_d_sq = float(sigma_d_sq)
        self.mu_pair = mu_pair
        self.sigma_pair_sq = sigma_pair_sq
        self.mu_pair.flags.writeable = False
        self.sigma_pair_sq.flags.writeable = False

    @property
    def K(self) -> int:
        return self.mu_pair.shape[0]

    @classmethod
    def uniform(cls, K, sigma0_sq=0.0037, sigma_d_sq=10.89):
        """Parameters for ``K`` statistically identical locations."""
        return cls(sigma0_sq, sigma_d_sq, np.zeros((K, K)), np.zeros((K, K)))

    def __repr__(self):
        return (
            f"InferenceParams(K={self.K}, sigma0_sq={self.sigma0_sq}, "
            f"sigma_d_sq={self.sigma_d_sq})"
        )

    def __eq__(self, other):
        if not isinstance(other, InferenceParams):
            return NotImplemented
        return (
            self.sigma0_sq == other.sigma0_sq
            and self.sigma_d_sq == other.sigma_d_sq
            and np.array_equal(self.mu_pair, other.mu_pair)
            and np.array_equal(self.sigma_pair_sq, other.sigma_pair_sq)
        )


def measurement_estimate(mu_t: float, params: InferenceParams) -> Estimate:
    """Belief produced by a direct reading when the coarse value is ``mu_t``."""
    if mu_t < 0:
        raise DomainError(f"coarse value must be nonnegative, got {mu_t}")
    return Estimate(mu_t, mu_t * mu_t * params.sigma0_sq)


def temporal_extend(est: Estimate, tau: int, params: InferenceParams) -> Estimate:
    """Carry ``est`` forward ``tau`` slots."""
    if tau < 0:
        raise DomainError(f"tau must be nonnegative, got {tau}")
    return Estimate(est.mean, est.variance + tau * params.sigma_d_sq)


def spatial_shift(est: Estimate, mu_t: float, k: int, k_prime: int, params: InferenceParams) -> Estimate:
    """Infer the value at ``k_prime`` from a belief about ``k``."""
    K = params.K
    if not (0 <= k < K and 0 <= k_prime < K):
        raise IndexError(f"location index out of range for K={K}: {k}, {k_prime}")
    return Estimate(
        est.mean + mu_t * params.mu_pair[k, k_prime],
        est.variance + mu_t * mu_t * params.sigma_pair_sq[k, k_prime],
    )


def fuse(estimates: Sequence[Estimate]) -> Estimate:
    """Precision-weighted combination of independent Gaussian beliefs."""
    estimates = list(estimates)
    if not estimates:
        raise DomainError("cannot fuse an empty list of estimates")
    if any(e.variance <= 0 for e in estimates):
        raise DegenerateInputError("fusion requires strictly positive variances")
    if len(estimates) == 1:
        return estimates[0]
    precision = math.fsum(1.0 / e.variance for e in estimates)
    weighted = math.fsum(e.mean / e.variance for e in estimates)
    variance = 1.0 / precision
    return Estimate(weighted * variance, variance)


def joint_error(est: Estimate, mu_t: float) -> float:
    """Spread of ``est`` around the coarse value: sqrt(var + deviation**2)."""
    dev = est.mean - mu_t
    return math.sqrt(est.variance + dev * dev)


def infer_map(
    last: Sequence[LastMeasurement],
    mu_t: float,
    params: InferenceParams,
    sensing_now: Iterable[int] = (),
) -> list[tuple[Estimate, float]]:
    """Estimate and joint error for every location at the current slot.

    ``sensing_now`` holds indices into ``last`` of the devices reading this
    slot; those entries must have age 0 and ``recorded_mean == mu_t``.
    """
    last = list(last)
    if not last:
        raise DomainError("at least one deployed device is required")
    sensing_now = set(sensing_now)
    measured = {last[i].location for i in sensing_now}
    out = []
    for k0 in range(params.K):
        if k0 in measured:
            est = measurement_estimate(mu_t, params)
            # deviation of a direct reading is taken as zero
            out.append((est, math.sqrt(est.variance)))
            continue
        parts = []
        for m in last:
            est = Estimate(m.recorded_mean, m.recorded_variance)
            est = temporal_extend(est, m.age, params)
            parts.append(spatial_shift(est, mu_t, m.location, k0, params))
        fused = fuse(parts)
        out.append((fused, joint_error(fused, mu_t)))
    return out


def joint_error_map(locations, age, recorded, sensing, mu, params: InferenceParams) -> np.ndarray:
    """Vectorized joint errors for all ``K`` locations.

    Parameters
    ----------
    locations : (L,) int array
        Location of each device.
    age, recorded, sensing : (..., L) arrays
        Slots since the last reading, the coarse value at that reading, and
        whether the device reads in the current slot.  Leading dimensions
        index independent scenarios.
    mu : float or (...) array
        Current coarse value per scenario.

    Returns
    -------
    (..., K) array of joint errors.  Recorded variances are taken as
    ``recorded**2 * sigma0_sq``.
    """
    locations = np.asarray(locations, dtype=np.intp)
    age = np.asarray(age, dtype=float)
    recorded = np.asarray(recorded, dtype=float)
    sensing = np.asarray(sensing, dtype=bool)
    mu = np.asarray(mu, dtype=float)
    if locations.ndim != 1 or locations.size == 0:
        raise DomainError("at least one deployed device is required")
    mu_b = mu[..., None, None]
    spair = params.sigma_pair_sq[locations]  # (L, K)
    mpair = params.mu_pair[locations]
    base_var = recorded * recorded * params.sigma0_sq + age * params.sigma_d_sq
    var = base_var[..., :, None] + mu_b * mu_b * spair
    mean = recorded[..., :, None] + mu_b * mpair
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = 1.0 / var
        prec_sum = prec.sum(axis=-2)
        fused_var = 1.0 / prec_sum
        fused_mean = (mean * prec).sum(axis=-2) * fused_var
    dev = fused_mean - mu[..., None]
    J = np.sqrt(fused_var + dev * dev)
    onehot = locations[:, None] == np.arange(params.K)[None, :]  # (L, K)
    measured = (sensing[..., :, None] & onehot).any(axis=-2)
    if np.any(~measured & ~np.isfinite(J)):
        raise DegenerateInputError("zero-variance intermediate estimate at an unmeasured location")
    direct = np.broadcast_to(mu * math.sqrt(params.sigma0_sq), J.shape[:-1])[..., None]
    return np.where(measured, direct, J)

