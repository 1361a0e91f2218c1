"""Command-line front end: reports, exit codes, determinism, fan-out.

Covers: analysis report content on the builtin banks and on JSON topologies,
the bound-violation error path, byte-identical repeated simulations, detection
exit codes on the benchmark and breaker scenarios, the mitigation flag's
effect on regulation error, and multi-run fan-out.
"""

import json

import numpy as np
import pytest

from resilient_mm.cli import (
    EXIT_DETECTED,
    EXIT_ERROR,
    EXIT_OK,
    main,
)
from resilient_mm.model import topology_to_json
from resilient_mm.model import OperationMode, PlantTopology


def write_two_sensor_topology(tmp_path, with_supports=True):
    """Single-model topology with both sensors vulnerable (zeros 0.1, 1.2)."""
    topo = PlantTopology(
        operation_modes=[
            OperationMode(
                A=np.array([[0.1, 1.0], [0.0, 1.2]]),
                B=np.zeros((2, 1)),
                C=np.eye(2),
                D=np.zeros((2, 1)),
            )
        ],
        calG=np.zeros((2, 0)),
        calH=np.eye(2),
        Q=1e-4 * np.eye(2),
        R=1e-4 * np.eye(2),
    )
    doc = topology_to_json(topo)
    if with_supports:
        doc["supports"] = [{"q_m": 0, "actuators": [], "sensors": [0, 1]}]
    path = tmp_path / "topo.json"
    path.write_text(json.dumps(doc))
    return path


def test_analyze_benchmark(tmp_path):
    out = tmp_path / "out"
    code = main(["analyze", "--topology", "builtin:benchmark", "--out", str(out)])
    assert code == EXIT_OK
    report = json.loads((out / "analysis.json").read_text())
    assert report["n_modes"] == 5
    assert all(v["strongly_detectable"] for v in report["detectability"])
    assert report["correctable_bound"]["p_star"] == 5
    assert report["correctable_bound"]["all_within_bound"]


def test_analyze_bound_violation(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(
        ["analyze", "--topology", "builtin:benchmark", "--p", "6", "--out", str(out)]
    )
    assert code == EXIT_ERROR
    assert "p* = l" in capsys.readouterr().err


def test_analyze_two_sensor_topology(tmp_path):
    topo_path = write_two_sensor_topology(tmp_path)
    out = tmp_path / "out"
    code = main(["analyze", "--topology", str(topo_path), "--out", str(out)])
    assert code == EXIT_OK
    report = json.loads((out / "analysis.json").read_text())
    verdict = report["detectability"][0]
    assert not verdict["strongly_detectable"]
    zeros = sorted(z[0] for z in verdict["invariant_zeros"])
    assert zeros == pytest.approx([0.1, 1.2], abs=1e-6)


def test_enumerate_counts(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["enumerate", "--topology", "builtin:benchmark", "--out", str(out)])
    assert code == EXIT_OK
    assert capsys.readouterr().out.strip() == "5"
    doc = json.loads((out / "modes.json").read_text())
    assert doc["count"] == 5


def test_simulate_benchmark_deterministic_and_detected(tmp_path):
    cfg = {
        "topology": "builtin:benchmark",
        "scenario": "builtin:benchmark",
        "horizon": 420,
        "seed": 42,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    code1 = main(["simulate", "--config", str(cfg_path), "--out", str(out1)])
    code2 = main(["simulate", "--config", str(cfg_path), "--out", str(out2)])
    assert code1 == code2 == EXIT_DETECTED
    assert (out1 / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()
    summary = json.loads((out1 / "summary.json").read_text())
    assert summary["detection"]["attack_detected"]
    assert summary["detection"]["identified_mode"] == 2  # true location set


def test_simulate_breaker_switch_detected(tmp_path):
    cfg = {
        "topology": "builtin:three_area_breakers",
        "scenario": "builtin:three_area_breakers",
        "horizon": 900,
        "seed": 11,
        "window": 150,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "out"
    code = main(["simulate", "--config", str(cfg_path), "--out", str(out)])
    summary = json.loads((out / "summary.json").read_text())
    assert summary["detection"]["attack_detected"]
    assert summary["final_q_hat"] == 2
    assert code == EXIT_DETECTED


def test_simulate_mitigate_flag_reduces_error(tmp_path):
    base = {
        "topology": "builtin:three_area_mitigation",
        "scenario": "builtin:three_area_mitigation",
        "horizon": 700,
        "seed": 5,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(base))
    out_plain = tmp_path / "plain"
    out_mit = tmp_path / "mit"
    code_plain = main(["simulate", "--config", str(cfg_path), "--out", str(out_plain)])
    code_mit = main(
        ["simulate", "--config", str(cfg_path), "--out", str(out_mit), "--mitigate"]
    )
    assert code_plain in (EXIT_OK, EXIT_DETECTED, 11)
    assert code_mit in (EXIT_OK, EXIT_DETECTED, 11)

    def tail_rms(out_dir):
        rows = (out_dir / "trace.csv").read_text().splitlines()[2:]
        data = np.array([[float(v) for v in r.split(",")] for r in rows])
        x_true = data[-150:, 2 : 2 + 6]
        return float(np.sqrt((x_true**2).mean()))

    assert tail_rms(out_mit) < tail_rms(out_plain)


def test_simulate_requires_seed(tmp_path):
    cfg = {"topology": "builtin:benchmark", "scenario": "builtin:benchmark"}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    # builtin scenario supplies a default seed through the builder; force the
    # missing-seed path with an explicit null marker
    cfg["seed"] = None
    cfg_path.write_text(json.dumps(cfg))
    code = main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
    assert code == EXIT_ERROR


def test_simulate_multi_run_fanout(tmp_path):
    cfg = {
        "topology": "builtin:benchmark",
        "scenario": "builtin:benchmark",
        "horizon": 150,
        "seed": 42,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "runs"
    code = main(
        ["simulate", "--config", str(cfg_path), "--out", str(out), "--runs", "2"]
    )
    assert code in (EXIT_OK, EXIT_DETECTED, 11)
    summaries = json.loads((out / "summary.json").read_text())
    assert [s["seed"] for s in summaries] == [42, 43]
    assert (out / "trace_seed42.csv").exists()
    assert (out / "trace_seed43.csv").exists()


def test_redteam_mirror_pair(tmp_path):
    out = tmp_path / "rt"
    cfg = {
        "topology": "builtin:mirror_pair",
        "scenario": "builtin:mirror_pair",
        "seed": 7,
        "horizon": 6000,
        "moment_runs": 10,
        "refine": 1,
        "redteam_window": 400,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    code = main(["redteam", "--config", str(cfg_path), "--out", str(out)])
    doc = json.loads((out / "redteam.json").read_text())
    assert doc["feasible"]
    assert code == 11  # masquerade holds: indistinguishable
    assert doc["band_fraction"] >= 0.8
