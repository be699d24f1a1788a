import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from airsense import io
from airsense.cli import (
    EXIT_DATA,
    EXIT_OK,
    EXIT_PARSE,
    EXIT_RESOURCE,
    EXIT_USAGE,
    EXIT_VALIDATION,
    child_seed,
    main,
)
from airsense.environment import TraceSet
from airsense.errors import ParseError
from airsense.location import Gene
from airsense.power_single import dp_solve
from airsense.schedule import PlanningConfig, uniform_schedule
from airsense.synthetic import haze_chain, random_pair_params


# -- file formats --------------------------------------------------------------


def _write(path, text):
    path.write_text(text)
    return path


def test_trace_csv_round_trip(tmp_path):
    ts = TraceSet([0, 0, 1, 3], [2, 5, 2, 5], [1.5, 2.25, 1e-3, 300.0])
    io.write_traces_csv(ts, tmp_path / "t.csv")
    back = io.read_traces_csv(tmp_path / "t.csv")
    assert back.t.tolist() == ts.t.tolist()
    assert back.location.tolist() == ts.location.tolist()
    assert back.value.tolist() == ts.value.tolist()


@pytest.mark.parametrize("text,line", [
    ("", 1),
    ("time,loc,val\n1,1,1\n", 1),
    ("t,location,value\n", 2),
    ("t,location,value\n0,1,5\n1,1\n", 3),
    ("t,location,value\n0,1,5\n1,x,2\n", 3),
    ("t,location,value\n0,1,5\n0,1,6\n", 3),
    ("t,location,value\n-1,1,5\n", 2),
    ("t,location,value\n0,1,nan\n", 2),
])
def test_trace_csv_errors_name_the_line(tmp_path, text, line):
    with pytest.raises(ParseError) as info:
        io.read_traces_csv(_write(tmp_path / "bad.csv", text))
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_json_documents_round_trip(tmp_path):
    env = haze_chain(5)
    io.save_json(io.env_to_dict(env), tmp_path / "env.json")
    back = io.env_from_dict(io.load_json(tmp_path / "env.json"))
    assert np.array_equal(back.values, env.values)
    assert np.array_equal(back.transition, env.transition)

    p = random_pair_params(3, 1)
    io.save_json(io.params_to_dict(p, [4, 7, 9]), tmp_path / "p.json")
    doc = io.load_json(tmp_path / "p.json")
    assert doc["locations"] == [4, 7, 9] and doc["schema_version"] == 1
    assert io.params_from_dict(doc) == p

    genes = [Gene([1, 0, 1], 2.5), Gene([0, 1, 1], None)]
    io.save_json(io.genes_to_dict(genes, [3.0, 2.5]), tmp_path / "g.json")
    gd = io.load_json(tmp_path / "g.json")
    assert gd["history"] == [3.0, 2.5]
    back = io.genes_from_dict(gd)
    assert [g.bits.tolist() for g in back] == [[1, 0, 1], [0, 1, 1]]
    assert back[0].fitness == 2.5 and back[1].fitness is None


def test_json_document_checks(tmp_path):
    with pytest.raises(ParseError):
        io.env_from_dict({"schema_version": 2, "kind": "environment"})
    with pytest.raises(ParseError):
        io.env_from_dict({"schema_version": 1, "kind": "inference_params"})
    with pytest.raises(ParseError):
        io.env_from_dict({"schema_version": 1, "kind": "environment", "values": [1]})
    with pytest.raises(ParseError) as info:
        io.load_json(_write(tmp_path / "x.json", '{\n "a": }'))
    assert info.value.line == 2
    io.save_json({"x": np.float64(np.inf), "n": np.int64(3), "a": np.arange(2)}, tmp_path / "y.json")
    assert io.load_json(tmp_path / "y.json") == {"x": None, "n": 3, "a": [0, 1]}


def test_schedule_csv_round_trip(tmp_path):
    s = uniform_schedule(PlanningConfig(4, 2, 10, 3, 4), [1, 3])
    io.write_schedule_csv(s, tmp_path / "s.csv")
    assert io.read_schedule_csv(tmp_path / "s.csv") == s
    with pytest.raises(ParseError):
        io.read_schedule_csv(_write(tmp_path / "b.csv", "location,0,1\n1,1,0\n"))
    with pytest.raises(ParseError):
        io.read_schedule_csv(_write(tmp_path / "c.csv", "location,0,1\n0,1\n"))


def test_policy_round_trip(tmp_path):
    cfg = PlanningConfig(2, 1, 8, 3, 4)
    pol = dp_solve(cfg, haze_chain(4), random_pair_params(2, 0), device=1)
    io.save_policy(pol, tmp_path / "pol.npz")
    back = io.load_policy(tmp_path / "pol.npz")
    assert back.cfg == cfg and back.device == 1 and back.guard
    assert np.array_equal(back.action, pol.action)
    assert np.array_equal(back.value, pol.value)
    assert np.array_equal(back.initial_value, pol.initial_value)


# -- command line ----------------------------------------------------------------


def test_child_seed_is_stable_and_distinct():
    assert child_seed(7, "train") == child_seed(7, "train")
    assert child_seed(7, "train") != child_seed(7, "kmeans")
    assert child_seed(7, "train") != child_seed(8, "train")
    assert 0 <= child_seed(0, "x") < 2**63


def _config(tmp_path, name="cfg.json", **body):
    path = tmp_path / name
    path.write_text(json.dumps(body))
    return str(path)


SMALL = dict(
    planning=dict(K=4, L=2, T=30, E=6, delta_T=6),
    params={"synthetic": {"kind": "grouped", "groups": 2, "seed": 1}},
    env={"synthetic": {"kind": "haze", "n_levels": 6}},
)


def _report(out):
    return json.loads((out / "report.json").read_text())


def test_simulate_then_calibrate(tmp_path):
    sim = tmp_path / "sim"
    assert main(["simulate", "--config", _config(tmp_path, K=4, T=3000), "--seed", "3", "--out", str(sim)]) == 0
    truth = io.params_from_dict(io.load_json(sim / "true_params.json"))
    cal = tmp_path / "cal"
    assert main(["calibrate", "--traces", str(sim / "traces.csv"), "--out", str(cal), "--quantize-bins", "8"]) == 0
    got = io.params_from_dict(io.load_json(cal / "params.json"))
    off = ~np.eye(4, dtype=bool)
    assert np.allclose(got.mu_pair[off], truth.mu_pair[off], rtol=0.1, atol=0.01)
    assert np.allclose(got.sigma_pair_sq[off], truth.sigma_pair_sq[off], rtol=0.15)
    env = io.env_from_dict(io.load_json(cal / "env.json"))
    assert env.n_states == 8
    rep = _report(cal)
    assert rep["command"] == "calibrate" and rep["schema_version"] == 1 and "wall_time_s" in rep


def test_fit_env_from_config(tmp_path):
    out = tmp_path / "fit"
    assert main(["fit-env", "--config", _config(tmp_path, **SMALL), "--out", str(out), "--quantize-bins", "3"]) == 0
    env = io.env_from_dict(io.load_json(out / "env.json"))
    assert env.n_states == 3


def test_plan_single_and_evaluate(tmp_path):
    cfg = dict(SMALL, planning=dict(K=3, L=1, T=40, E=8, delta_T=8), n_trajectories=6)
    out = tmp_path / "plan"
    assert main(["plan-single", "--config", _config(tmp_path, **cfg), "--out", str(out)]) == 0
    rep = _report(out)
    assert set(rep["J_bar"]) == {"dp", "uniform"}
    assert rep["expected_J_bar"] == pytest.approx(-rep["expected_value"] / (3 * 40))
    assert rep["expected_J_bar"] > 0
    assert (out / "policy.npz").exists()
    ev = tmp_path / "ev"
    cfg["strategies"] = ["uniform", "dp", "random"]
    assert main(["evaluate", "--config", _config(tmp_path, "e.json", **cfg), "--out", str(ev)]) == 0
    with open(ev / "summary.csv") as fh:
        rows = list(csv.reader(fh))
    assert [r[0] for r in rows[1:]] == ["uniform", "dp", "random"]


def test_train_select_and_evaluate_network(tmp_path):
    cfg = dict(SMALL, n_trajectories=3,
               train=dict(episodes=3, batch_size=200, bootstrap_episodes=2, bootstrap_epochs=1, eval_every=0))
    out = tmp_path / "train"
    assert main(["train-multi", "--config", _config(tmp_path, **cfg), "--out", str(out)]) == 0
    assert set(_report(out)["J_bar"]) == {"q-learning", "random"}
    assert len((out / "train_log.csv").read_text().splitlines()) == 4

    sel = tmp_path / "sel"
    gcfg = dict(SMALL, ga=dict(pool_size=6, elite=1, sampled=5, max_rounds=3))
    assert main(["select-locations", "--config", _config(tmp_path, "g.json", **gcfg), "--out", str(sel)]) == 0
    rep = _report(sel)
    assert len(rep["best_locations"]) <= 2 and rep["history"] == sorted(rep["history"], reverse=True)
    assert io.load_json(sel / "genes.json")["kind"] == "gene_pool"

    ev = tmp_path / "ev"
    ecfg = dict(SMALL, n_trajectories=2, strategies=["q-learning", "uniform"], net=str(out / "net.json"))
    assert main(["evaluate", "--config", _config(tmp_path, "e.json", **ecfg), "--out", str(ev)]) == 0


def test_same_seed_gives_identical_reports(tmp_path):
    cfg = _config(tmp_path, **dict(SMALL, strategies=["uniform", "random"], n_trajectories=4))
    docs = []
    for name in ("a", "b"):
        assert main(["evaluate", "--config", cfg, "--seed", "11", "--out", str(tmp_path / name)]) == 0
        doc = _report(tmp_path / name)
        doc.pop("wall_time_s")
        docs.append(json.dumps(doc, sort_keys=True))
    assert docs[0] == docs[1]
    assert json.loads(docs[0])["seed"] == 11 and json.loads(docs[0])["seeds"]


def test_exit_codes(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["nonsense"]) == EXIT_USAGE
    bad_plan = dict(SMALL, planning=dict(K=4, L=2, T=30, E=4, delta_T=6))
    assert main(["evaluate", "--config", _config(tmp_path, **bad_plan), "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert "delta_T*E > T" in capsys.readouterr().err
    assert main(["evaluate", "--config", _config(tmp_path, "n.json", seed=1), "--out", str(tmp_path)]) == EXIT_VALIDATION
    (tmp_path / "broken.json").write_text("{")
    assert main(["evaluate", "--config", str(tmp_path / "broken.json"), "--out", str(tmp_path)]) == EXIT_PARSE
    (tmp_path / "empty.csv").write_text("")
    assert main(["calibrate", "--traces", str(tmp_path / "empty.csv"), "--out", str(tmp_path)]) == EXIT_PARSE
    assert "line 1" in capsys.readouterr().err
    (tmp_path / "one.csv").write_text("t,location,value\n0,0,5\n1,0,6\n")
    assert main(["calibrate", "--traces", str(tmp_path / "one.csv"), "--out", str(tmp_path)]) == EXIT_DATA
    big = dict(SMALL, planning=dict(K=3, L=1, T=3000, E=400, delta_T=10), env={"synthetic": {"kind": "haze", "n_levels": 200, "lo": 1, "hi": 500}})
    assert main(["plan-single", "--config", _config(tmp_path, "big.json", **big), "--out", str(tmp_path)]) == EXIT_RESOURCE
    assert main(["evaluate", "--config", _config(tmp_path, "m.json", **dict(SMALL, strategies=["dp"])),
                 "--out", str(tmp_path)]) == EXIT_VALIDATION
    missing = dict(SMALL, params="nowhere.json")
    assert main(["evaluate", "--config", _config(tmp_path, "x.json", **missing), "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert EXIT_OK == 0


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "airsense", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for name in ("calibrate", "fit-env", "plan-single", "train-multi", "select-locations", "evaluate", "simulate"):
        assert name in proc.stdout
