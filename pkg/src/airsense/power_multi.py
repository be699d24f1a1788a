"""Multi-device power control via a turn-taking MDP and deep Q-learning.

Within a slot the ``L`` devices decide one after another, so every state has
at most two actions.  The reward of device ``l``'s decision is the change in
summed joint error it causes; the rewards of one slot telescope to minus
the slot's total joint error once all devices have acted.

A :class:`Fleet` binds the planning sizes, the noise model and the device
locations.  Device indices are 0-based in code (turn ``l`` runs over
``0..L-1``).
"""

from __future__ import annotations

import csv
import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .environment import EnvironmentModel, sample_trajectory
from .errors import DomainError
from .inference import InferenceParams, joint_error_map
from .mlp import QNetwork, layer_sizes, mlp_train_batch
from .power_single import SENSE, SLEEP, readings_needed
from .schedule import PlanningConfig, Schedule, evaluate_schedule


class MultiState(NamedTuple):
    """Turn-taking state; ``d[j] == 0`` marks a device that read this slot."""

    t: int
    p: tuple
    d: tuple
    r: tuple
    e: float
    l: int


def power_deficiency(t, p, T, E) -> float:
    """Logistic score of remaining time per remaining reading vs. the pace T/E.

    Above 0.5 when the device is short of power; 1 for a depleted device.
    """
    if p <= 0:
        return 1.0
    z = (T - t) / p - T / E
    return 0.5 * (1.0 + math.tanh(0.5 * z))


class Fleet:
    """``L`` devices at fixed ``locations`` sharing one noise model."""

    def __init__(self, cfg: PlanningConfig, params: InferenceParams, locations, guard: bool = True):
        locations = tuple(int(k) for k in locations)
        if len(locations) != cfg.L:
            raise DomainError(f"expected {cfg.L} device locations, got {len(locations)}")
        if len(set(locations)) != cfg.L or any(not 0 <= k < cfg.K for k in locations):
            raise DomainError(f"invalid device locations {locations}")
        if params.K != cfg.K:
            raise DomainError(f"params have K={params.K} but cfg has K={cfg.K}")
        self.cfg = cfg
        self.params = params
        self.locations = locations
        self.guard = guard
        self._locs = np.asarray(locations)
        self.n_features = 5 * cfg.L + cfg.K + 3

    # -- rules ---------------------------------------------------------

    def available(self, t, p, d) -> tuple:
        """Actions open to a device with ``p`` readings left, asleep for ``d`` slots."""
        cfg = self.cfg
        if p <= 0:
            return (SLEEP,)
        if d >= cfg.delta_T:
            return (SENSE,)
        if self.guard and p - 1 < readings_needed(t + 1, 1, cfg.T, cfg.delta_T):
            return (SLEEP,)
        return (SLEEP, SENSE)

    def initial_state(self, mu0, mu1) -> MultiState:
        L = self.cfg.L
        return MultiState(1, (self.cfg.E,) * L, (1,) * L, (float(mu0),) * L, float(mu1), 0)

    def slot_error(self, d, r, e) -> float:
        """Summed joint error of the map given ages ``d`` (0 = reading now)."""
        d = np.asarray(d, dtype=float)
        return float(joint_error_map(self._locs, d, r, d == 0, e, self.params).sum())

    def step(self, s: MultiState, a: int, next_e=None):
        """Apply device ``s.l``'s action; returns ``(next_state, reward)``.

        ``next_e`` (the next slot's coarse value) must be given exactly when
        the last device of the slot acts.
        """
        cfg = self.cfg
        l = s.l
        if not 1 <= s.t <= cfg.T:
            raise DomainError(f"no action at slot {s.t}")
        if a not in self.available(s.t, s.p[l], s.d[l]):
            raise DomainError(f"action {a} unavailable for device {l} in {s}")
        last = l == cfg.L - 1
        if last and next_e is None:
            raise DomainError("next_e is required when the last device acts")
        if not last and next_e is not None:
            raise DomainError("next_e must only be given when the last device acts")
        before = self.slot_error(s.d, s.r, s.e) if l > 0 else 0.0
        p, d, r = list(s.p), list(s.d), list(s.r)
        if a == SENSE:
            p[l] -= 1
            d[l] = 0
            r[l] = s.e
        after = self.slot_error(d, r, s.e)
        reward = before - after
        if not last:
            return MultiState(s.t, tuple(p), tuple(d), tuple(r), s.e, l + 1), reward
        d = tuple(min(x + 1, cfg.delta_T) for x in d)
        return MultiState(s.t + 1, tuple(p), d, tuple(r), float(next_e), 0), reward

    # -- features ------------------------------------------------------

    def _scenarios(self, t, l, p, d, r, e):
        """Slot errors for: device ``l`` sleeps, ``l`` reads, each later device reads.

        Returns ``(J, totals, later)`` where ``J`` is (M, K) per-location
        errors and ``later`` lists the devices whose extra scenario is row
        ``2 + i``.
        """
        L = self.cfg.L
        later = [j for j in range(l + 1, L) if SENSE in self.available(t, p[j], d[j])]
        M = 2 + len(later)
        D = np.tile(np.asarray(d, dtype=float), (M, 1))
        R = np.tile(np.asarray(r, dtype=float), (M, 1))
        D[1, l] = 0.0
        R[1, l] = e
        for i, j in enumerate(later):
            D[2 + i, j] = 0.0
            R[2 + i, j] = e
        J = joint_error_map(self._locs, D, R, D == 0, e, self.params)
        return J, J.sum(axis=1), later

    def _features_from(self, t, l, p, J, totals, later):
        cfg = self.cfg
        L, K = cfg.L, cfg.K
        f0 = np.zeros(self.n_features)
        f0[l] = 1.0
        f0[L:2 * L] = p
        f0[-1] = cfg.T - t
        f1 = f0.copy()
        o3 = 2 * L
        dec = J[0] - J[1]
        f1[o3:o3 + K] = dec
        f1[o3 + K:o3 + K + L] = dec[self._locs] * power_deficiency(t, p[l], cfg.T, cfg.E)
        f1[o3 + K + L] = 1.0
        o4 = o3 + K + L + 1
        for i, j in enumerate(later):
            gain = totals[0] - totals[2 + i]
            f0[o4 + j] = gain
            f0[o4 + L + j] = gain * power_deficiency(t, p[j], cfg.T, cfg.E)
        f0[o4 + 2 * L] = 1.0
        return f0, f1

    def feature_vector(self, s: MultiState, a: int, net: QNetwork | None = None) -> np.ndarray:
        """Feature vector of ``(s, a)``; normalized with ``net``'s bounds if given.

        Layout: turn one-hot (L) | remaining power (L) | reading utility
        (K per-location decreases, L PD-weighted decreases at the device
        locations, 1) | waiting utility (L decreases if each later device
        reads, L PD-weighted, 1) | remaining slots.
        """
        if a not in self.available(s.t, s.p[s.l], s.d[s.l]):
            raise DomainError(f"action {a} unavailable in {s}")
        J, totals, later = self._scenarios(s.t, s.l, s.p, s.d, s.r, s.e)
        f = self._features_from(s.t, s.l, np.asarray(s.p, dtype=float), J, totals, later)[a]
        return net.normalize(f) if net is not None else f

    # -- episodes ------------------------------------------------------

    def run_episode(self, trajectory, choose: Callable, want_features: bool = False,
                    on_reward: Callable | None = None):
        """Drive one episode over ``trajectory`` (``mu_0..mu_T``).

        ``choose(t, l, avail, features)`` returns the action; ``features`` is
        ``None`` unless ``want_features``, else the pair of raw vectors for
        (sleep, read).  ``on_reward(reward)`` is called after every step.
        Returns ``(rows, steps)`` where ``rows`` is the (L, T+1) reading
        matrix and ``steps`` a list of ``(features_of_taken_action, reward,
        avail, both_features)`` when features were requested, else rewards.
        """
        cfg = self.cfg
        L, T = cfg.L, cfg.T
        traj = np.asarray(trajectory, dtype=float)
        if traj.shape != (T + 1,):
            raise DomainError(f"trajectory must have length {T + 1}")
        rows = np.zeros((L, T + 1), dtype=np.int8)
        rows[:, 0] = 1
        p = np.full(L, cfg.E)
        d = np.ones(L, dtype=float)
        r = np.full(L, traj[0])
        steps = []
        for t in range(1, T + 1):
            e = traj[t]
            for l in range(L):
                avail = self.available(t, p[l], d[l])
                J, totals, later = self._scenarios(t, l, p, d, r, e)
                feats = self._features_from(t, l, p.astype(float), J, totals, later) if want_features else None
                a = choose(t, l, avail, feats)
                if a not in avail:
                    raise DomainError(f"policy chose unavailable action {a}")
                base = totals[0] if l > 0 else 0.0
                reward = base - totals[a]
                if a == SENSE:
                    p[l] -= 1
                    d[l] = 0.0
                    r[l] = e
                    rows[l, t] = 1
                steps.append((feats[a], reward, avail, feats) if want_features else reward)
                if on_reward is not None:
                    on_reward(reward)
            d = np.minimum(d + 1, cfg.delta_T)
        return rows, steps

    def schedule_of(self, rows) -> Schedule:
        return Schedule.from_rows(self.cfg.K, self.locations, rows)

    def score(self, rows, trajectory) -> float:
        """Average joint error of executed rows on the true trajectory."""
        return evaluate_schedule(self.schedule_of(rows), trajectory, self.params,
                                 self.cfg, check=self.guard).J_bar


class Rollout(NamedTuple):
    schedule: Schedule
    J_bar: float


def random_rollout(fleet: Fleet, trajectory, seed) -> Rollout:
    """Uniformly random choice among the available actions."""
    rng = np.random.default_rng(seed)

    def choose(t, l, avail, feats):
        return avail[rng.integers(len(avail))] if len(avail) > 1 else avail[0]

    rows, _ = fleet.run_episode(trajectory, choose)
    return Rollout(fleet.schedule_of(rows), fleet.score(rows, trajectory))


def _greedy(net, avail, feats):
    if len(avail) == 1:
        return avail[0]
    q = net.forward(net.normalize(np.vstack(feats)))
    return SENSE if q[1] > q[0] else SLEEP


def greedy_rollout(net: QNetwork, trajectory, fleet: Fleet) -> Rollout:
    """Follow ``argmax_a Q(s, a)`` among available actions (ties sleep)."""
    rows, _ = fleet.run_episode(trajectory, lambda t, l, avail, feats: _greedy(net, avail, feats),
                                want_features=True)
    return Rollout(fleet.schedule_of(rows), fleet.score(rows, trajectory))


# -- Q-learning ----------------------------------------------------------


@dataclass
class TrainConfig:
    """Deep Q-learning hyperparameters.

    ``epsilon`` is interpolated linearly from ``epsilon[0]`` at the first
    episode to ``epsilon[1]`` at the last.  The replay buffer keeps the
    newest ``buffer_capacity`` samples (default ``10 * batch_size``).
    Before the Q-learning episodes, ``bootstrap_episodes`` random-policy
    episodes provide Monte-Carlo return targets for ``bootstrap_epochs``
    passes of minibatch (``minibatch`` rows) gradient steps.  Each bootstrap
    episode reads with its own probability, drawn uniformly from the
    ``bootstrap_sense_prob`` range, whenever it has a choice; varying the
    rate spreads the visited budgets.  Each Q-learning
    episode ends with ``gradient_steps`` steps on minibatches drawn from one
    replay sample of ``min(batch_size, len(buffer))`` entries.
    """

    episodes: int = 200
    batch_size: int = 100_000
    epsilon: tuple = (0.1, 0.0)
    gamma: float = 1.0
    learning_rate: float = 1e-3
    seed: int = 0
    gradient_steps: int = 1
    buffer_capacity: int | None = None
    bootstrap_episodes: int = 20
    bootstrap_epochs: int = 30
    bootstrap_sense_prob: tuple = (0.0, 1.0)
    minibatch: int = 256
    eval_every: int = 10
    hidden: list | None = None

    def __post_init__(self):
        lo, hi = self.epsilon
        if not (0 <= lo <= 1 and 0 <= hi <= 1):
            raise DomainError("epsilon must lie in [0, 1]")
        if not 0 <= self.gamma <= 1:
            raise DomainError("gamma must lie in [0, 1]")
        if self.episodes < 0 or self.batch_size < 1:
            raise DomainError("episodes must be >= 0 and batch_size >= 1")

    @property
    def capacity(self):
        return self.buffer_capacity or 10 * self.batch_size

    def epsilon_at(self, episode):
        lo, hi = self.epsilon
        if self.episodes <= 1:
            return float(lo)
        return float(lo + (hi - lo) * episode / (self.episodes - 1))


class ReplayBuffer:
    """FIFO store of (features, target) pairs."""

    def __init__(self, capacity, n_features):
        self.capacity = int(capacity)
        self.X = np.zeros((self.capacity, n_features))
        self.y = np.zeros(self.capacity)
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def extend(self, X, y):
        for x, v in zip(np.atleast_2d(X), np.ravel(y)):
            self.X[self._next] = x
            self.y[self._next] = v
            self._next = (self._next + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def sample(self, n, rng):
        """``min(n, size)`` distinct entries, uniformly."""
        idx = rng.choice(self.size, size=min(n, self.size), replace=False)
        return self.X[idx], self.y[idx]


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def add(self, episode, epsilon, episode_J, rollout_J, batch_mse):
        self.rows.append((episode, epsilon, episode_J, rollout_J, batch_mse))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "epsilon", "episode_J", "rollout_J", "batch_mse"])
            w.writerows(self.rows)


class TrainResult(NamedTuple):
    net: QNetwork
    log: TrainLog


def _returns_to_go(rewards, gamma):
    out = np.empty(len(rewards))
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def _fit(net, X, y, epochs, minibatch, lr, rng):
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for lo in range(0, len(y), minibatch):
            idx = order[lo:lo + minibatch]
            mlp_train_batch(net, X[idx], y[idx], lr=lr)


def q_learning_train(fleet: Fleet, env: EnvironmentModel, tc: TrainConfig,
                     progress: Callable | None = None) -> TrainResult:
    """Deep Q-learning with experience replay; returns the latest network."""
    cfg = fleet.cfg
    rng = np.random.default_rng(tc.seed)
    seeds = np.random.SeedSequence(tc.seed).spawn(3)
    traj_rng = np.random.default_rng(seeds[0])
    act_rng = np.random.default_rng(seeds[1])

    def new_trajectory():
        return sample_trajectory(env, cfg.T, traj_rng.integers(2**63))

    sizes = [fleet.n_features, *(tc.hidden or layer_sizes(cfg.K, cfg.L)[1:-1]), 1]
    net = QNetwork(sizes, seed=int(seeds[2].generate_state(1)[0]))

    # bootstrap: random-policy episodes with Monte-Carlo returns
    feats, targets, all_feats = [], [], []
    for _ in range(max(tc.bootstrap_episodes, 1)):
        traj = new_trajectory()
        sense_prob = act_rng.uniform(*tc.bootstrap_sense_prob)

        def choose_random(t, l, avail, f):
            if len(avail) == 1:
                return avail[0]
            return SENSE if act_rng.random() < sense_prob else SLEEP

        _, steps = fleet.run_episode(traj, choose_random, want_features=True)
        feats.extend(s[0] for s in steps)
        all_feats.extend(x for s in steps for x in s[3])
        targets.append(_returns_to_go([s[1] for s in steps], tc.gamma))
    all_feats = np.asarray(all_feats)
    net.input_lo = all_feats.min(axis=0)
    net.input_hi = all_feats.max(axis=0)
    G = np.concatenate(targets)
    net.reward_scale = float(np.mean([abs(g[0]) for g in targets])) or 1.0
    X0 = net.normalize(np.asarray(feats))
    y0 = G / net.reward_scale
    _fit(net, X0, y0, tc.bootstrap_epochs, tc.minibatch, tc.learning_rate, rng)

    eval_traj = new_trajectory()
    buffer = ReplayBuffer(tc.capacity, fleet.n_features)
    log = TrainLog()
    scale = net.reward_scale
    for ep in range(tc.episodes):
        eps = tc.epsilon_at(ep)
        traj = new_trajectory()
        last = {}  # features and scaled reward of the previous step

        def choose(t, l, avail, f):
            Xn = net.normalize(np.vstack(f))
            q = net.forward(Xn)
            if "reward" in last:
                buffer.extend(last["x"], last["reward"] + tc.gamma * max(q[a] for a in avail))
            if len(avail) == 1:
                a = avail[0]
            elif act_rng.random() < eps:
                a = avail[act_rng.integers(len(avail))]
            else:
                a = SENSE if q[1] > q[0] else SLEEP
            last["x"] = Xn[a]
            return a

        def on_reward(reward):
            last["reward"] = reward / scale

        rows, _ = fleet.run_episode(traj, choose, want_features=True, on_reward=on_reward)
        # terminal transition: target is the reward alone
        buffer.extend(last["x"], last["reward"])
        mse = float("nan")
        bx, by = buffer.sample(tc.batch_size, rng)
        for i in range(tc.gradient_steps):
            lo = (i * tc.minibatch) % len(by)
            _, mse = mlp_train_batch(net, bx[lo:lo + tc.minibatch], by[lo:lo + tc.minibatch],
                                     lr=tc.learning_rate)
        episode_J = fleet.score(rows, traj)
        rollout_J = float("nan")
        if tc.eval_every and ((ep + 1) % tc.eval_every == 0 or ep == tc.episodes - 1):
            rollout_J = greedy_rollout(net, eval_traj, fleet).J_bar
        log.add(ep, eps, episode_J, rollout_J, mse)
        if progress is not None:
            progress(ep, log.rows[-1])
    return TrainResult(net, log)


# -- exact solvers for small instances -------------------------------------


def _values_index(env):
    return {float(v): i for i, v in enumerate(env.values)}


def exact_turn_value(fleet: Fleet, env: EnvironmentModel, mu0, mu1) -> float:
    """Optimal ``V(S_1)`` of the turn-taking MDP by exhaustive recursion."""
    P = env.transition
    vals = [float(v) for v in env.values]
    pos = _values_index(env)
    T, L = fleet.cfg.T, fleet.cfg.L

    @functools.lru_cache(maxsize=None)
    def V(s: MultiState):
        if s.t == T + 1:
            return 0.0
        best = -math.inf
        for a in fleet.available(s.t, s.p[s.l], s.d[s.l]):
            if s.l < L - 1:
                nxt, rwd = fleet.step(s, a)
                q = rwd + V(nxt)
            else:
                q = 0.0
                for j, pj in enumerate(P[pos[s.e]]):
                    if pj == 0:
                        continue
                    nxt, rwd = fleet.step(s, a, vals[j])
                    q += pj * (rwd + V(nxt))
            best = max(best, q)
        return best

    return V(fleet.initial_state(mu0, mu1))


def exact_joint_value(fleet: Fleet, env: EnvironmentModel, mu0, mu1) -> float:
    """Optimal ``V(S_1)`` of the joint-action MDP (all devices act at once)."""
    P = env.transition
    vals = [float(v) for v in env.values]
    pos = _values_index(env)
    cfg = fleet.cfg
    T, L = cfg.T, cfg.L

    @functools.lru_cache(maxsize=None)
    def V(t, p, d, r, e):
        if t == T + 1:
            return 0.0
        best = -math.inf
        choices = [fleet.available(t, p[l], d[l]) for l in range(L)]
        for acts in itertools.product(*choices):
            p2, d2, r2 = list(p), list(d), list(r)
            for l, a in enumerate(acts):
                if a == SENSE:
                    p2[l] -= 1
                    d2[l] = 0
                    r2[l] = e
            reward = -fleet.slot_error(d2, r2, e)
            d3 = tuple(min(x + 1, cfg.delta_T) for x in d2)
            q = reward
            for j, pj in enumerate(P[pos[e]]):
                if pj:
                    q += pj * V(t + 1, tuple(p2), d3, tuple(r2), vals[j])
            best = max(best, q)
        return best

    return V(1, (cfg.E,) * L, (1,) * L, (float(mu0),) * L, float(mu1))
