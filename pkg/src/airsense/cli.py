"""Command line experiment runner.

Every subcommand reads an optional JSON ``--config``, writes its artifacts
and a ``report.json`` into ``--out`` and echoes the resolved config and
seeds in the report.  One ``--seed`` fans out to named per-component
seeds, so sub-experiments are reproducible on their own.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io, synthetic
from .environment import (
    calibrate_measurement_variance,
    calibrate_pairwise,
    calibrate_temporal_variance,
    estimate_chain,
    quantize_values,
    sample_trajectory,
)
from .errors import AirsenseError, ConfigError, InsufficientDataError, ParseError, ResourceError
from .inference import InferenceParams
from .location import (
    GAConfig,
    ScheduleEvaluator,
    difference_matrix,
    embed,
    evolve,
    initial_pool,
    kmeans_cluster,
)
from .power_multi import Fleet, TrainConfig, greedy_rollout, q_learning_train, random_rollout
from .power_single import dp_solve, run_policy
from .schedule import PlanningConfig, evaluate_schedule, uniform_rows, uniform_schedule

log = logging.getLogger("airsense")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_PARSE, EXIT_RESOURCE, EXIT_DATA = 0, 2, 3, 4, 5, 6


def child_seed(master: int, name: str) -> int:
    """Seed for component ``name`` derived from the master seed."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


# -- config helpers ------------------------------------------------------------


class Context:
    def __init__(self, args):
        self.args = args
        self.config_path = Path(args.config) if args.config else None
        self.base = self.config_path.parent if self.config_path else Path.cwd()
        self.config = io.load_json(self.config_path) if self.config_path else {}
        if not isinstance(self.config, dict):
            raise ParseError("config must be a JSON object")
        self.seed = int(args.seed if args.seed is not None else self.config.get("seed", 0))
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.seeds = {}
        self.t0 = time.perf_counter()

    def get(self, key, default=None):
        return self.config.get(key, default)

    def require(self, key):
        if key not in self.config:
            raise ConfigError(f"config is missing {key!r}")
        return self.config[key]

    def seed_for(self, name):
        s = child_seed(self.seed, name)
        self.seeds[name] = s
        return s

    def path(self, p):
        p = Path(p)
        p = p if p.is_absolute() else self.base / p
        if not p.exists():
            raise ConfigError(f"referenced file does not exist: {p}")
        return p

    def planning(self, strict=True) -> PlanningConfig:
        cfg = PlanningConfig(**self.require("planning"))
        return cfg.check() if strict else cfg

    def params(self) -> InferenceParams:
        entry = self.require("params")
        if isinstance(entry, str):
            return io.params_from_dict(io.load_json(self.path(entry)))
        syn = entry.get("synthetic") if isinstance(entry, dict) else None
        if not syn:
            raise ConfigError("params must be a path or {'synthetic': {...}}")
        kind = syn.get("kind", "location")
        K = int(syn["K"]) if "K" in syn else self.planning(strict=False).K
        seed = int(syn.get("seed", self.seed_for("params")))
        kw = {k: syn[k] for k in ("sigma0_sq", "sigma_d_sq") if k in syn}
        if kind == "location":
            return synthetic.random_location_params(K, seed, **kw)
        if kind == "pair":
            return synthetic.random_pair_params(K, seed, **kw)
        if kind == "grouped":
            kw.update({k: float(syn[k]) for k in ("spread", "separation", "group_spread") if k in syn})
            return synthetic.grouped_params(K, int(syn.get("groups", 3)), seed, **kw)
        if kind == "uniform":
            return InferenceParams.uniform(K, **kw)
        raise ConfigError(f"unknown synthetic params kind {kind!r}")

    def env(self):
        entry = self.require("env")
        if isinstance(entry, str):
            env = io.env_from_dict(io.load_json(self.path(entry)))
        else:
            syn = entry.get("synthetic") if isinstance(entry, dict) else None
            if not syn:
                raise ConfigError("env must be a path or {'synthetic': {...}}")
            syn = dict(syn)
            kind = syn.pop("kind", "haze")
            if kind == "haze":
                env = synthetic.haze_chain(**syn)
            elif kind == "random":
                env = synthetic.random_chain(int(syn.pop("n_states")), int(syn.pop("seed", self.seed_for("env"))), **syn)
            else:
                raise ConfigError(f"unknown synthetic env kind {kind!r}")
        bins = self.args.quantize_bins or self.get("quantize_bins")
        return quantize_values(env, int(bins)) if bins else env

    def trajectories(self, env, T, n, name="trajectories"):
        base = self.seed_for(name)
        seeds = np.random.SeedSequence(base).spawn(n)
        return [sample_trajectory(env, T, s) for s in seeds]

    def report(self, name, body, **extra):
        doc = io._doc("report", command=name, seed=self.seed, seeds=dict(self.seeds),
                      config=self.config, **body, **extra)
        doc["wall_time_s"] = round(time.perf_counter() - self.t0, 3)
        io.save_json(doc, self.out / "report.json")
        return doc


def _summary(values):
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return {"mean": float(v.mean()), "stderr": se, "values": v.tolist()}


# -- subcommands ---------------------------------------------------------------


def cmd_simulate(ctx: Context):
    """Synthetic traces from a chain and a location model."""
    K = int(ctx.get("K", 10))
    T = int(ctx.get("T", 1000))
    env = ctx.env() if "env" in ctx.config else synthetic.haze_chain()
    mu = sample_trajectory(env, T - 1, ctx.seed_for("trajectory"))
    rng = np.random.default_rng(ctx.seed_for("locations"))
    offsets = rng.uniform(-0.075, 0.075, K)
    spreads = rng.uniform(0.0005, 0.05, K)
    traces = synthetic.location_traces(mu, offsets, spreads, ctx.seed_for("noise"))
    io.write_traces_csv(traces, ctx.out / "traces.csv")
    truth = synthetic.location_params(offsets, spreads)
    io.save_json(io.params_to_dict(truth, range(K)), ctx.out / "true_params.json")
    return ctx.report("simulate", {"K": K, "T": T, "n_readings": int(traces.t.size)})


def cmd_calibrate(ctx: Context):
    """Noise parameters and a value chain estimated from a trace CSV."""
    traces = io.read_traces_csv(_traces_path(ctx))
    s0 = calibrate_measurement_variance(traces, float(ctx.get("min_mean_measurement", 1.0)))
    sd = calibrate_temporal_variance(traces)
    locs, mu_pair, var_pair = calibrate_pairwise(traces, float(ctx.get("min_mean_pair", 30.0)))
    params = InferenceParams(s0, sd, mu_pair, var_pair)
    env = estimate_chain(traces)
    bins = ctx.args.quantize_bins or ctx.get("quantize_bins")
    if bins:
        env = quantize_values(env, min(int(bins), env.n_states))
    io.save_json(io.params_to_dict(params, locs), ctx.out / "params.json")
    io.save_json(io.env_to_dict(env), ctx.out / "env.json")
    return ctx.report("calibrate", {"sigma0_sq": s0, "sigma_d_sq": sd, "locations": locs.tolist(),
                                    "n_states": env.n_states})


def cmd_fit_env(ctx: Context):
    """Value chain from traces, or the configured chain, written as env.json."""
    if ctx.args.traces or "traces" in ctx.config:
        env = estimate_chain(io.read_traces_csv(_traces_path(ctx)))
        bins = ctx.args.quantize_bins or ctx.get("quantize_bins")
        if bins:
            env = quantize_values(env, min(int(bins), env.n_states))
    else:
        env = ctx.env()
    io.save_json(io.env_to_dict(env), ctx.out / "env.json")
    return ctx.report("fit-env", {"n_states": env.n_states, "values": env.values.tolist()})


def _traces_path(ctx):
    p = ctx.args.traces or ctx.get("traces")
    if not p:
        raise ConfigError("no trace file given (--traces or config 'traces')")
    p = Path(p)
    if not p.is_absolute() and not ctx.args.traces:
        p = ctx.base / p
    if not p.exists():
        raise ConfigError(f"referenced file does not exist: {p}")
    return p


def cmd_plan_single(ctx: Context):
    """Optimal single-device sensing policy, compared with uniform sensing."""
    cfg = ctx.planning()
    if cfg.L != 1:
        raise ConfigError(f"plan-single needs L=1, got L={cfg.L}")
    params, env = ctx.params(), ctx.env()
    device = int(ctx.get("device", 0))
    policy = dp_solve(cfg, env, params, device, keep_values=bool(ctx.get("keep_values", False)))
    io.save_policy(policy, ctx.out / "policy.npz")
    n = int(ctx.get("n_trajectories", 20))
    dp_j, uni_j, snapped = [], [], 0
    uni = uniform_schedule(cfg, [device])
    ev = policy.expected_value(env)
    for tr in ctx.trajectories(env, cfg.T, n):
        run = run_policy(policy, tr, params)
        dp_j.append(run.J_bar)
        snapped += run.snapped
        uni_j.append(evaluate_schedule(uni, tr, params, cfg).J_bar)
    return ctx.report("plan-single", {
        "planning": io.planning_to_dict(cfg), "expected_value": ev,
        "expected_J_bar": -ev / (cfg.K * cfg.T),
        "J_bar": {"dp": _summary(dp_j), "uniform": _summary(uni_j)}, "snapped": snapped})


def _locations(ctx, cfg):
    locs = ctx.get("locations", list(range(cfg.L)))
    if len(locs) != cfg.L:
        raise ConfigError(f"expected {cfg.L} locations, got {len(locs)}")
    return [int(k) for k in locs]


def _train_config(ctx) -> TrainConfig:
    raw = dict(ctx.get("train", {}))
    raw.setdefault("seed", ctx.seed_for("train"))
    for key in ("epsilon", "bootstrap_sense_prob"):
        if key in raw:
            raw[key] = tuple(raw[key])
    try:
        return TrainConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad train config: {exc}") from None


def cmd_train_multi(ctx: Context):
    """Q-learning for a multi-device fleet, compared with random sensing."""
    cfg = ctx.planning()
    params, env = ctx.params(), ctx.env()
    fleet = Fleet(cfg, params, _locations(ctx, cfg))
    tc = _train_config(ctx)
    res = q_learning_train(fleet, env, tc)
    io.save_json(res.net.to_dict(), ctx.out / "net.json")
    res.log.write_csv(ctx.out / "train_log.csv")
    n = int(ctx.get("n_trajectories", 10))
    trajs = ctx.trajectories(env, cfg.T, n, "evaluation")
    q = [greedy_rollout(res.net, tr, fleet).J_bar for tr in trajs]
    rnd_seed = ctx.seed_for("random_policy")
    r = [random_rollout(fleet, tr, [rnd_seed, i]).J_bar for i, tr in enumerate(trajs)]
    return ctx.report("train-multi", {"planning": io.planning_to_dict(cfg), "train": asdict(tc),
                                      "J_bar": {"q-learning": _summary(q), "random": _summary(r)}})


def cmd_select_locations(ctx: Context):
    """Genetic search for the device locations, seeded by clustering."""
    cfg = ctx.planning()
    params, env = ctx.params(), ctx.env()
    gcfg = GAConfig(**ctx.get("ga", {}))
    traj = sample_trajectory(env, cfg.T, ctx.seed_for("fitness_trajectory"))
    rows = uniform_rows(cfg.T, cfg.E, cfg.L)
    evaluator = ScheduleEvaluator(params, traj, rows)
    pool = None
    if ctx.get("clustering", True):
        dm = difference_matrix(params)
        clusters = kmeans_cluster(embed(dm), cfg.L, ctx.seed_for("kmeans")).clusters
        pool = initial_pool(clusters, gcfg.pool_size, ctx.seed_for("pool"), K=cfg.K)
    evo = evolve(gcfg, cfg, evaluator, ctx.seed_for("ga"), pool=pool)
    io.save_json(io.genes_to_dict(evo.pool, evo.history), ctx.out / "genes.json")
    return ctx.report("select-locations", {
        "planning": io.planning_to_dict(cfg), "ga": asdict(gcfg),
        "best_locations": list(evo.best.locations), "best_J_bar": evo.best.fitness,
        "history": evo.history, "rounds": evo.rounds, "evaluations": evaluator.calls})


STRATEGIES = ("uniform", "dp", "q-learning", "random")


def cmd_evaluate(ctx: Context):
    """Mean J_bar of several sensing strategies on shared trajectories."""
    cfg = ctx.planning()
    params, env = ctx.params(), ctx.env()
    locs = _locations(ctx, cfg)
    names = ctx.get("strategies", ["uniform", "random"])
    bad = [s for s in names if s not in STRATEGIES]
    if bad:
        raise ConfigError(f"unknown strategies {bad}; choose from {list(STRATEGIES)}")
    n = int(ctx.get("n_trajectories", 20))
    trajs = ctx.trajectories(env, cfg.T, n)
    fleet = Fleet(cfg, params, locs)
    runners = {}
    if "uniform" in names:
        uni = uniform_schedule(cfg, locs)
        runners["uniform"] = lambda i, tr: evaluate_schedule(uni, tr, params, cfg).J_bar
    if "dp" in names:
        if cfg.L != 1:
            raise ConfigError(f"the dp strategy needs L=1, got L={cfg.L}")
        policy = dp_solve(cfg, env, params, locs[0], keep_values=False)
        runners["dp"] = lambda i, tr: run_policy(policy, tr, params).J_bar
    if "q-learning" in names:
        net_path = ctx.get("net")
        if not net_path:
            raise ConfigError("the q-learning strategy needs 'net' (a trained network file)")
        net = io.net_from_dict(io.load_json(ctx.path(net_path)))
        if net.n_inputs != fleet.n_features:
            raise ConfigError(f"network expects {net.n_inputs} features, instance has {fleet.n_features}")
        runners["q-learning"] = lambda i, tr: greedy_rollout(net, tr, fleet).J_bar
    if "random" in names:
        rs = ctx.seed_for("random_policy")
        runners["random"] = lambda i, tr: random_rollout(fleet, tr, [rs, i]).J_bar
    results = {name: _summary([runners[name](i, tr) for i, tr in enumerate(trajs)]) for name in names}
    rows = [["strategy", "mean_J_bar", "stderr"]] + [[k, v["mean"], v["stderr"]] for k, v in results.items()]
    (ctx.out / "summary.csv").write_text("".join(",".join(map(str, r)) + "\n" for r in rows))
    return ctx.report("evaluate", {"planning": io.planning_to_dict(cfg), "locations": locs,
                                   "n_trajectories": n, "J_bar": results})


COMMANDS = {
    "calibrate": cmd_calibrate,
    "fit-env": cmd_fit_env,
    "plan-single": cmd_plan_single,
    "train-multi": cmd_train_multi,
    "select-locations": cmd_select_locations,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="airsense", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).splitlines()[0])
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--quantize-bins", type=int, help="lump the value space into this many bins")
        if name in ("calibrate", "fit-env"):
            p.add_argument("--traces", help="trace CSV with header t,location,value")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx = Context(args)
        doc = COMMANDS[args.command](ctx)
    except ParseError as exc:
        return _fail("parse", exc, EXIT_PARSE)
    except ResourceError as exc:
        return _fail("resource", exc, EXIT_RESOURCE)
    except InsufficientDataError as exc:
        return _fail("insufficient-data", exc, EXIT_DATA)
    except (AirsenseError, ValueError, TypeError) as exc:
        return _fail("validation", exc, EXIT_VALIDATION)
    except OSError as exc:
        return _fail("io", exc, EXIT_VALIDATION)
    print(f"{args.command}: wrote {ctx.out / 'report.json'}")
    if "J_bar" in doc:
        for name, s in doc["J_bar"].items():
            print(f"  {name:<12} J_bar = {s['mean']:.4f} +/- {s['stderr']:.4f}")
    return EXIT_OK


def _fail(category, exc, code):
    print(f"error[{category}]: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
