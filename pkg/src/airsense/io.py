"""File formats: trace CSV, JSON documents, schedule CSV and policy tables.

Every JSON document carries ``schema_version`` and a ``kind`` tag.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .environment import EnvironmentModel, TraceSet
from .errors import DomainError, ParseError
from .inference import InferenceParams
from .location import Gene
from .mlp import QNetwork
from .power_single import PolicyTable
from .schedule import PlanningConfig, Schedule

SCHEMA_VERSION = 1
TRACE_HEADER = ["t", "location", "value"]


# -- traces ----------------------------------------------------------------


def read_traces_csv(path, slot_length=None) -> TraceSet:
    """Parse a ``t,location,value`` CSV; errors name the offending line."""
    t, loc, val = [], [], []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty trace file", line=1)
        if [h.strip() for h in header] != TRACE_HEADER:
            raise ParseError(f"expected header {','.join(TRACE_HEADER)}, got {','.join(header)}", line=1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line=line)
            try:
                ti, ki, v = int(row[0]), int(row[1]), float(row[2])
            except ValueError as exc:
                raise ParseError(f"bad field: {exc}", line=line) from None
            if ti < 0:
                raise ParseError(f"slot must be >= 0, got {ti}", line=line)
            if not math.isfinite(v):
                raise ParseError(f"value must be finite, got {row[2]}", line=line)
            if (ti, ki) in seen:
                raise ParseError(f"duplicate reading for t={ti}, location={ki}", line=line)
            seen.add((ti, ki))
            t.append(ti)
            loc.append(ki)
            val.append(v)
    if not t:
        raise ParseError("trace file has no readings", line=2)
    return TraceSet(t, loc, val, slot_length=slot_length)


def write_traces_csv(traces: TraceSet, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for ti, ki, v in zip(traces.t.tolist(), traces.location.tolist(), traces.value.tolist()):
            w.writerow([ti, ki, repr(v)])


# -- JSON documents ----------------------------------------------------------


def _doc(kind, **body):
    return {"schema_version": SCHEMA_VERSION, "kind": kind, **body}


def _check_doc(doc, kind):
    if not isinstance(doc, dict):
        raise ParseError(f"expected a JSON object for {kind}")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {doc.get('schema_version')!r}")
    if doc.get("kind") != kind:
        raise ParseError(f"expected kind {kind!r}, got {doc.get('kind')!r}")


def _field(doc, name):
    try:
        return doc[name]
    except KeyError:
        raise ParseError(f"missing field {name!r} in {doc.get('kind')} document") from None


def env_to_dict(env: EnvironmentModel) -> dict:
    return _doc("environment", values=env.values.tolist(), stationary=env.stationary.tolist(),
                transition=env.transition.tolist())


def env_from_dict(doc) -> EnvironmentModel:
    _check_doc(doc, "environment")
    return EnvironmentModel(_field(doc, "values"), _field(doc, "stationary"), _field(doc, "transition"))


def params_to_dict(p: InferenceParams, locations=None) -> dict:
    body = dict(sigma0_sq=p.sigma0_sq, sigma_d_sq=p.sigma_d_sq, mu_pair=p.mu_pair.tolist(),
                sigma_pair_sq=p.sigma_pair_sq.tolist())
    if locations is not None:
        body["locations"] = [int(k) for k in locations]
    return _doc("inference_params", **body)


def params_from_dict(doc) -> InferenceParams:
    _check_doc(doc, "inference_params")
    return InferenceParams(float(_field(doc, "sigma0_sq")), float(_field(doc, "sigma_d_sq")),
                           np.asarray(_field(doc, "mu_pair"), dtype=float),
                           np.asarray(_field(doc, "sigma_pair_sq"), dtype=float))


def planning_to_dict(cfg: PlanningConfig) -> dict:
    return dict(K=cfg.K, L=cfg.L, T=cfg.T, E=cfg.E, delta_T=cfg.delta_T)


def net_to_dict(net: QNetwork) -> dict:
    return net.to_dict()


def net_from_dict(doc) -> QNetwork:
    _check_doc(doc, "qnetwork")
    return QNetwork.from_dict(doc)


def genes_to_dict(genes, history=None) -> dict:
    body = dict(genes=[{"bits": g.bits.tolist(), "fitness": g.fitness} for g in genes])
    if history is not None:
        body["history"] = [float(h) for h in history]
    return _doc("gene_pool", **body)


def genes_from_dict(doc) -> list:
    _check_doc(doc, "gene_pool")
    return [Gene(g["bits"], g.get("fitness")) for g in _field(doc, "genes")]


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        x = float(x)
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def save_json(doc, path):
    Path(path).write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})", line=exc.lineno) from None


# -- schedules and policies ----------------------------------------------------


def write_schedule_csv(s: Schedule, path):
    """Rows are locations, columns slots ``0..T``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["location", *range(s.T + 1)])
        for k in range(s.K):
            w.writerow([k, *s.phi[k].tolist()])


def read_schedule_csv(path) -> Schedule:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "location":
            raise ParseError("expected a header starting with 'location'", line=1)
        rows = []
        for row in reader:
            if not row:
                continue
            try:
                k = int(row[0])
                vals = [int(v) for v in row[1:]]
            except ValueError as exc:
                raise ParseError(f"bad field: {exc}", line=reader.line_num) from None
            if k != len(rows):
                raise ParseError(f"expected location {len(rows)}, got {k}", line=reader.line_num)
            if len(vals) != len(header) - 1:
                raise ParseError("row length differs from header", line=reader.line_num)
            rows.append(vals)
    if not rows:
        raise ParseError("schedule has no rows", line=2)
    phi = np.asarray(rows)
    try:
        return Schedule(phi, np.flatnonzero(phi.any(axis=1)))
    except DomainError as exc:
        raise ParseError(str(exc)) from None


def save_policy(policy: PolicyTable, path):
    """Policy table as a compressed ``.npz`` archive."""
    cfg = policy.cfg
    arrays = dict(schema_version=SCHEMA_VERSION, planning=np.array([cfg.K, cfg.L, cfg.T, cfg.E, cfg.delta_T]),
                  device=policy.device, guard=policy.guard, values=policy.values,
                  action=np.packbits(policy.action, axis=None), action_shape=np.array(policy.action.shape),
                  initial_value=policy.initial_value)
    if policy.value is not None:
        arrays["value"] = policy.value
    np.savez_compressed(path, **arrays)


def load_policy(path) -> PolicyTable:
    with np.load(path) as z:
        if int(z["schema_version"]) != SCHEMA_VERSION:
            raise ParseError(f"unsupported schema_version {int(z['schema_version'])}")
        shape = tuple(z["action_shape"])
        action = np.unpackbits(z["action"], count=int(np.prod(shape))).reshape(shape).astype(bool)
        cfg = PlanningConfig(*(int(x) for x in z["planning"]))
        value = z["value"] if "value" in z.files else None
        return PolicyTable(cfg, int(z["device"]), z["values"], action, z["initial_value"], value,
                           bool(z["guard"]))
