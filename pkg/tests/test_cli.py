import csv
import itertools
import json

import pytest

from qkdnet import cli
from qkdnet.topology import NetworkTopology


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_generate_is_byte_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(["generate", "--nodes", 20, "--seed", 1, "--out", a], capsys)[0] == 0
    assert run(["generate", "--nodes", 20, "--seed", 1, "--out", b], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    meta = json.loads(a.read_text())["meta"]
    assert meta["seed"] == 1 and meta["config"]["num_nodes"] == 20


def test_pipeline(tmp_path, capsys):
    t, s, m = tmp_path / "t.json", tmp_path / "s.json", tmp_path / "m.csv"
    run(["generate", "--nodes", 15, "--seed", 2, "--out", t], capsys)
    code, out, _ = run(["simulate", t, "--out", s, "--metrics", m], capsys)
    assert code == 0 and json.loads(out)["seed"] == 2
    rows = list(csv.DictReader(open(m)))
    topo = NetworkTopology.load(s)
    assert len(rows) == topo.num_edges and set(rows[0]) >= {"u", "v", "qber", "key_rate_bps"}

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": {"hidden": 16, "heads": 2}, "training": {"epochs": 5}}))
    model = tmp_path / "m.npz"
    code, out, _ = run(["train", s, "--config", cfg, "--out", model, "--log", tmp_path / "log.csv"], capsys)
    assert code == 0 and model.exists()
    code, out, _ = run(["evaluate", s, "--config", cfg, "--folds", 2, "--out", tmp_path / "e.json"], capsys)
    assert code == 0 and json.loads(out)["folds"] == 2
    code, out, _ = run(["optimize", s, "--config", cfg, "--model", model, "--out", tmp_path / "o.json",
                        "--report", tmp_path / "r.json"], capsys)
    assert code == 0 and "total_key_rate_bps" in json.loads(out)
    code, out, _ = run(["attack", s, "--strategy", "random", "--fraction", 0.2, "--out", tmp_path / "a.csv"], capsys)
    assert code == 0 and json.loads(out)["steps"] == 3


def test_analyze_k4_fixture(tmp_path, capsys):
    k4 = tmp_path / "k4.json"
    k4.write_text(json.dumps({
        "meta": {"unit_to_km": 0.125},
        "nodes": [{"id": i, "x": x, "y": y} for i, (x, y) in enumerate([(0, 0), (10, 0), (0, 10), (10, 10)])],
        "edges": [{"u": u, "v": v} for u, v in itertools.combinations(range(4), 2)],
    }))
    code, out, _ = run(["analyze", k4, "--out", tmp_path / "r.json"], capsys)
    assert code == 0
    assert json.loads(out)["algebraic_connectivity"] == pytest.approx(4.0)
    assert json.loads((tmp_path / "r.json").read_text())["table1"]["Node Conn."] == 3


def error(err):
    return json.loads(err.strip().splitlines()[-1])


def test_unknown_flag_exit_code(tmp_path, capsys):
    code, _, err = run(["generate", "--out", tmp_path / "x.json", "--bogus"], capsys)
    assert code == cli.EXIT_CODES["usage"] and error(err)["error"] == "usage"


def test_malformed_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, _, err = run(["generate", "--config", bad, "--out", tmp_path / "x.json"], capsys)
    assert code == cli.EXIT_CODES["config"] and error(err)["exit_code"] == code
    bad.write_text(json.dumps({"topology": {"num_nodes": -3}}))
    assert run(["generate", "--config", bad, "--out", tmp_path / "x.json"], capsys)[0] == cli.EXIT_CODES["config"]
    bad.write_text(json.dumps({"channel": {"unknown_knob": 1}}))
    assert run(["generate", "--config", bad, "--out", tmp_path / "x.json"], capsys)[0] == cli.EXIT_CODES["config"]


def test_missing_file_exit_code(tmp_path, capsys):
    code, _, err = run(["analyze", tmp_path / "nope.json"], capsys)
    assert code == cli.EXIT_CODES["missing_file"] and error(err)["error"] == "missing_file"
    code, _, _ = run(["generate", "--config", tmp_path / "nope.json", "--out", tmp_path / "x.json"], capsys)
    assert code == cli.EXIT_CODES["missing_file"]


def test_exit_codes_are_distinct():
    failures = {k: v for k, v in cli.EXIT_CODES.items()}
    assert len(set(failures.values())) == len(failures) and 0 not in failures.values()


def test_training_needs_simulated_topology(tmp_path, capsys):
    t = tmp_path / "t.json"
    run(["generate", "--nodes", 10, "--seed", 1, "--out", t], capsys)
    code, _, err = run(["train", t, "--out", tmp_path / "m.npz"], capsys)
    assert code == cli.EXIT_CODES["invalid_input"]


def test_sweep_and_report(tmp_path, capsys):
    cfg = tmp_path / "default.json"
    cfg.write_text(json.dumps({"experiment": {"node_counts": [10, 20], "seeds_per_size": 1},
                               "model": {"hidden": 16, "heads": 2}, "training": {"epochs": 5}}))
    out = tmp_path / "sweep"
    code, _, _ = run(["sweep", "--config", cfg, "--out", out], capsys)
    assert code == 0
    for name in ("tables1.csv", "tables2.csv", "training_loss.svg", "validation_auc.svg",
                 "key_rate_vs_distance.svg", "qber_histogram.svg"):
        assert (out / name).exists(), name
    code, _, _ = run(["report", out], capsys)
    assert code == 0 and "Avg. QBER" in (out / "report.md").read_text()
