"""Exact power control for one device by backward dynamic programming.

State ``(t, p, d, r, e)``: slot, remaining sensings, slots since the last
reading, coarse value recorded at that reading, current coarse value.  The
reward of a slot is minus the summed joint error over all ``K`` locations of
the map the device supports.

Action rules: a depleted device (``p == 0``) must sleep and its ``d`` stays
clamped at ``delta_T``; a device with power that has slept until
``d == delta_T`` must read.  With ``guard`` enabled (the default) a device
may additionally only spend a reading if enough budget is left to honour the
sleep bound for the rest of the horizon, so every executed schedule is
feasible.  ``guard=False`` gives the bare rules.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .environment import EnvironmentModel, nearest_index
from .errors import DomainError, ResourceError
from .inference import InferenceParams, joint_error_map
from .schedule import PlanningConfig, Schedule, evaluate_schedule

log = logging.getLogger(__name__)

SLEEP, SENSE = 0, 1

DEFAULT_MEMORY_BUDGET = 1 << 30


class SingleState(NamedTuple):
    t: int
    p: int
    d: int
    r: float
    e: float


def readings_needed(t: int, d: int, T: int, delta_T: int) -> int:
    """Fewest readings in slots ``t..T`` that keep the sleep bound from ``(t, d)``."""
    first = t + delta_T - d
    if first > T:
        return 0
    return 1 + (T - first) // delta_T


def available_actions(t: int, p: int, d: int, cfg: PlanningConfig, guard: bool = True) -> tuple:
    if p <= 0:
        return (SLEEP,)
    if d >= cfg.delta_T:
        return (SENSE,)
    if guard and p - 1 < readings_needed(t + 1, 1, cfg.T, cfg.delta_T):
        return (SLEEP,)
    return (SLEEP, SENSE)


def slot_reward(device: int, d: int, r: float, e: float, params: InferenceParams) -> float:
    """Reward of a slot where the device's latest reading is ``d`` slots old.

    ``d == 0`` means the device reads in this slot (``r`` must equal ``e``).
    """
    J = joint_error_map([device], [d], [r], [d == 0], e, params)
    return -float(J.sum())


def single_step(s: SingleState, a: int, next_e: float, cfg: PlanningConfig,
                params: InferenceParams, device: int = 0, guard: bool = True):
    """Apply ``a`` in ``s``; returns ``(next_state, reward)``."""
    if s.t < 1 or s.t > cfg.T:
        raise DomainError(f"no action at slot {s.t}")
    if a not in available_actions(s.t, s.p, s.d, cfg, guard):
        raise DomainError(f"action {a} unavailable in {s}")
    if a == SENSE:
        reward = slot_reward(device, 0, s.e, s.e, params)
        nxt = SingleState(s.t + 1, s.p - 1, 1, s.e, next_e)
    else:
        reward = slot_reward(device, s.d, s.r, s.e, params)
        nxt = SingleState(s.t + 1, s.p, min(s.d + 1, cfg.delta_T), s.r, next_e)
    return nxt, reward


@dataclass
class PolicyTable:
    """Optimal action (and optionally value) for every state.

    Arrays are indexed ``[t-1, p, d-1, r_idx, e_idx]`` with ``r_idx``/``e_idx``
    positions in ``values``.  ``value`` is ``None`` unless the solve kept it;
    ``initial_value`` (the ``t = 1`` layer) is always kept.
    """

    cfg: PlanningConfig
    device: int
    values: np.ndarray
    action: np.ndarray
    initial_value: np.ndarray
    value: np.ndarray | None = None
    guard: bool = True

    def _index(self, s: SingleState):
        r = int(np.flatnonzero(self.values == s.r)[0])
        e = int(np.flatnonzero(self.values == s.e)[0])
        return s.t - 1, s.p, s.d - 1, r, e

    def act(self, s: SingleState) -> int:
        return int(self.action[self._index(s)])

    def value_of(self, s: SingleState) -> float:
        if s.t == self.cfg.T + 1:
            return 0.0
        idx = self._index(s)
        if self.value is None:
            if s.t != 1:
                raise DomainError("values beyond t=1 were not kept; solve with keep_values=True")
            return float(self.initial_value[idx[1:]])
        return float(self.value[idx])

    def expected_value(self, env: EnvironmentModel) -> float:
        """E[V(S_1)] with ``mu_0`` stationary and ``mu_1`` one step later."""
        v1 = self.initial_value[self.cfg.E, 0]  # (r, e)
        return float(np.sum(env.stationary[:, None] * env.transition * v1))


def _memory_estimate(cfg, n_values, keep_values):
    layer = (cfg.E + 1) * cfg.delta_T * n_values * n_values
    per_t = 1 + (8 if keep_values else 0)
    return cfg.T * layer * per_t + 6 * 8 * layer


def dp_solve(cfg: PlanningConfig, env: EnvironmentModel, params: InferenceParams,
             device: int = 0, *, guard: bool = True, keep_values: bool = True,
             memory_budget: int = DEFAULT_MEMORY_BUDGET) -> PolicyTable:
    """Backward induction from ``t = T+1`` (value 0) down to ``t = 1``.

    Ties between actions go to sleeping.
    """
    if not 0 <= device < params.K:
        raise DomainError(f"device location {device} out of range")
    if params.K != cfg.K:
        raise DomainError(f"params have K={params.K} but cfg has K={cfg.K}")
    Y = env.n_states
    need = _memory_estimate(cfg, Y, keep_values)
    if need > memory_budget:
        raise ResourceError(
            f"state space needs ~{need / 2**20:.0f} MiB (> {memory_budget / 2**20:.0f} MiB); "
            f"quantize the value space to fewer bins or pass keep_values=False"
        )
    T, E, DT = cfg.T, cfg.E, cfg.delta_T
    vals = env.values.astype(float)
    P = env.transition

    d_grid = np.arange(1, DT + 1, dtype=float)
    # sleeping reward R0[d-1, r, e]; reading reward R1[e]
    R0 = -joint_error_map(
        [device],
        np.broadcast_to(d_grid[:, None, None, None], (DT, Y, Y, 1)),
        np.broadcast_to(vals[None, :, None, None], (DT, Y, Y, 1)),
        np.zeros((DT, Y, Y, 1), dtype=bool),
        np.broadcast_to(vals[None, None, :], (DT, Y, Y)),
        params,
    ).sum(axis=-1)
    R1 = -joint_error_map([device], np.zeros((Y, 1)), vals[:, None], np.ones((Y, 1), dtype=bool), vals, params).sum(axis=-1)

    p_grid = np.arange(E + 1)
    d_idx = np.arange(DT)
    next_d = np.minimum(d_idx + 1, DT - 1)
    can_read = p_grid > 0
    must_read = (d_idx == DT - 1)[None, :] & can_read[:, None]  # (E+1, DT)

    action = np.zeros((T, E + 1, DT, Y, Y), dtype=bool)
    value = np.zeros((T, E + 1, DT, Y, Y)) if keep_values else None
    V = np.zeros((E + 1, DT, Y, Y))
    eye = np.arange(Y)
    for t in range(T, 0, -1):
        EV = V @ P.T  # expectation over the next coarse value
        Q0 = R0[None] + EV[:, next_d]
        # reading: (p-1, d=1, r=e); broadcast over current d and r
        read_next = np.full((E + 1, Y), -np.inf)
        read_next[1:] = EV[:-1, 0][:, eye, eye]
        Q1 = np.broadcast_to((R1[None, :] + read_next)[:, None, None, :], Q0.shape).copy()
        allowed1 = np.broadcast_to(can_read[:, None], (E + 1, DT)).copy()
        if guard:
            ok = p_grid - 1 >= readings_needed(t + 1, 1, T, DT)
            allowed1 &= ok[:, None] | must_read
        Q1[~allowed1] = -np.inf
        Q0[must_read] = -np.inf
        act = Q1 > Q0
        V = np.where(act, Q1, Q0)
        action[t - 1] = act
        if keep_values:
            value[t - 1] = V
    return PolicyTable(cfg, device, env.values.copy(), action, V.copy(), value, guard)


class PolicyRun(NamedTuple):
    schedule: Schedule
    J_bar: float
    snapped: int


def run_policy(policy: PolicyTable, trajectory, params: InferenceParams) -> PolicyRun:
    """Execute the table online against ``trajectory`` (``mu_0..mu_T``).

    Coarse values outside the table's value space are snapped to the nearest
    one for decision making; the count is reported as ``snapped``.  The
    schedule is scored on the true trajectory.
    """
    cfg = policy.cfg
    trajectory = np.asarray(trajectory, dtype=float)
    if trajectory.shape != (cfg.T + 1,):
        raise DomainError(f"trajectory must have length {cfg.T + 1}")
    env_vals = policy.values
    idx = nearest_index(env_vals, trajectory)
    snapped = int(np.sum(env_vals[idx] != trajectory))
    if snapped:
        log.warning("%d trajectory values snapped to the nearest bin", snapped)
    row = np.zeros(cfg.T + 1, dtype=np.int8)
    row[0] = 1
    p, d, r = cfg.E, 1, int(idx[0])
    for t in range(1, cfg.T + 1):
        e = int(idx[t])
        if policy.action[t - 1, p, d - 1, r, e]:
            row[t] = 1
            p, d, r = p - 1, 1, e
        else:
            d = min(d + 1, cfg.delta_T)
    schedule = Schedule.from_rows(cfg.K, [policy.device], row[None, :])
    ev = evaluate_schedule(schedule, trajectory, params,
                           PlanningConfig(cfg.K, 1, cfg.T, cfg.E, cfg.delta_T),
                           check=policy.guard)
    return PolicyRun(schedule, ev.J_bar, snapped)

