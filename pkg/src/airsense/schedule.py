"""Sensing schedules: feasibility, evaluation and the uniform baseline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DomainError
from .inference import InferenceParams, joint_error_map


@dataclass(frozen=True)
class PlanningConfig:
    """Sizes and budgets of a planning problem.

    ``E`` counts sensings in slots ``1..T`` (the mandatory reading at slot 0
    is free); ``delta_T`` is the longest allowed run of sleeping slots.
    """

    K: int
    L: int
    T: int
    E: int
    delta_T: int

    def __post_init__(self):
        for name in ("K", "L", "T", "E", "delta_T"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.L > self.K:
            raise ConfigError(f"L <= K violated: L={self.L}, K={self.K}")

    def check(self):
        """Raise :class:`ConfigError` unless the strict model invariants hold."""
        if not self.L < self.K:
            raise ConfigError(f"L < K violated: L={self.L}, K={self.K}")
        if not self.E < self.T:
            raise ConfigError(f"E < T violated: E={self.E}, T={self.T}")
        if not self.delta_T * self.E > self.T:
            raise ConfigError(
                f"delta_T*E > T violated: {self.delta_T}*{self.E} <= {self.T}"
            )
        return self


class Violation(NamedTuple):
    kind: str  # "energy", "sleep", "deployment" or "budget"
    location: int
    slot: int


class Schedule:
    """0-1 sensing matrix over ``K`` locations and slots ``0..T``."""

    def __init__(self, phi, deployed):
        phi = np.asarray(phi)
        if phi.ndim != 2 or phi.shape[1] < 2:
            raise DomainError(f"phi must be (K, T+1) with T >= 1, got {phi.shape}")
        if not np.all((phi == 0) | (phi == 1)):
            raise DomainError("phi must be 0-1")
        self.phi = phi.astype(np.int8)
        self.deployed = tuple(sorted(int(k) for k in deployed))
        if len(set(self.deployed)) != len(self.deployed):
            raise DomainError("deployed locations must be distinct")
        if any(not 0 <= k < self.K for k in self.deployed):
            raise DomainError("deployed location out of range")

    @property
    def K(self):
        return self.phi.shape[0]

    @property
    def T(self):
        return self.phi.shape[1] - 1

    @classmethod
    def from_rows(cls, K, deployed, rows):
        """Place per-device rows (ordered like ``deployed``) into a K-row matrix."""
        rows = np.asarray(rows)
        phi = np.zeros((K, rows.shape[1]), dtype=np.int8)
        for k, row in zip(deployed, rows):
            phi[k] = row
        return cls(phi, deployed)

    def __eq__(self, other):
        if not isinstance(other, Schedule):
            return NotImplemented
        return self.deployed == other.deployed and np.array_equal(self.phi, other.phi)

    def __repr__(self):
        return f"Schedule(K={self.K}, T={self.T}, deployed={list(self.deployed)}, sensings={int(self.phi[:, 1:].sum())})"


def validate_schedule(s: Schedule, cfg: PlanningConfig) -> list[Violation]:
    """List every violated constraint; an empty list means feasible."""
    if s.phi.shape != (cfg.K, cfg.T + 1):
        raise DomainError(f"schedule shape {s.phi.shape} != ({cfg.K}, {cfg.T + 1})")
    out = []
    if len(s.deployed) > cfg.L:
        out.append(Violation("budget", -1, -1))
    deployed = set(s.deployed)
    for k in range(cfg.K):
        row = s.phi[k]
        if k not in deployed:
            out.extend(Violation("deployment", k, int(t)) for t in np.flatnonzero(row))
            continue
        if row[0] != 1:
            out.append(Violation("deployment", k, 0))
        used = int(row[1:].sum())
        if used > cfg.E:
            last = int(np.flatnonzero(row[1:])[cfg.E]) + 1
            out.append(Violation("energy", k, last))
        w = cfg.delta_T + 1
        if row.size >= w:
            window = np.convolve(row, np.ones(w, dtype=int), mode="valid")
            out.extend(Violation("sleep", k, int(t)) for t in np.flatnonzero(window == 0))
    return out


def device_history(phi_rows, trajectory):
    """Age and recorded value of each device's latest reading per slot.

    ``phi_rows`` is (L, T+1) with a reading at slot 0.  Returns ``(age,
    recorded)`` shaped (T+1, L).
    """
    phi_rows = np.asarray(phi_rows, dtype=bool)
    trajectory = np.asarray(trajectory, dtype=float)
    n = phi_rows.shape[1]
    slots = np.arange(n)
    last = np.where(phi_rows, slots, -1)
    last = np.maximum.accumulate(last, axis=1)
    if np.any(last < 0):
        raise DomainError("every deployed device must read at slot 0")
    age = (slots - last).T
    recorded = trajectory[last].T
    return age, recorded


class Evaluation(NamedTuple):
    J_bar: float
    per_slot: np.ndarray


def evaluate_schedule(
    s: Schedule,
    trajectory,
    params: InferenceParams,
    cfg: PlanningConfig | None = None,
    *,
    check: bool = True,
) -> Evaluation:
    """Average joint error of the map over slots ``1..T``.

    ``per_slot[t-1]`` is the mean joint error over all ``K`` locations at
    slot ``t``.  With ``cfg`` given and ``check`` set, infeasible schedules
    are rejected; structural problems (readings on undeployed locations,
    missing slot-0 readings) are always rejected.
    """
    trajectory = np.asarray(trajectory, dtype=float)
    if trajectory.shape != (s.T + 1,):
        raise DomainError(f"trajectory must have length T+1={s.T + 1}, got {trajectory.shape}")
    if s.K != params.K:
        raise DomainError(f"schedule has K={s.K} but params have K={params.K}")
    if not s.deployed:
        raise DomainError("no deployed devices")
    undeployed = np.setdiff1d(np.arange(s.K), s.deployed)
    if s.phi[undeployed].any():
        raise DomainError("readings scheduled at undeployed locations")
    if check and cfg is not None:
        bad = validate_schedule(s, cfg)
        if bad:
            raise DomainError(f"infeasible schedule: {bad[0]} (+{len(bad) - 1} more)")
    locs = np.asarray(s.deployed)
    rows = s.phi[locs]
    age, recorded = device_history(rows, trajectory)
    J = joint_error_map(locs, age[1:], recorded[1:], rows[:, 1:].T.astype(bool), trajectory[1:], params)
    per_slot = J.mean(axis=1)
    return Evaluation(float(per_slot.mean()), per_slot)


def uniform_rows(T: int, E: int, n: int = 1) -> np.ndarray:
    """Rows sensing at slot 0 and at ``i*T // E`` for ``i = 1..E``.

    Readings are spread over the whole horizon, so no silent run exceeds
    ``ceil(T / E) - 1`` slots.
    """
    E = min(E, T)
    row = np.zeros(T + 1, dtype=np.int8)
    row[0] = 1
    row[np.arange(1, E + 1) * T // E] = 1
    return np.tile(row, (n, 1))


def uniform_schedule(cfg: PlanningConfig, deployed) -> Schedule:
    """Evenly spaced sensing for every deployed device."""
    deployed = sorted(deployed)
    return Schedule.from_rows(cfg.K, deployed, uniform_rows(cfg.T, cfg.E, len(deployed)))
