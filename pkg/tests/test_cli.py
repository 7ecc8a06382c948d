import csv
import json
import subprocess
import sys

import pytest

from basepar.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def test_module_entry_point(tmp_path):
    p = subprocess.run([sys.executable, "-m", "basepar.cli", "base-symbolic", "--model", "pendulum",
                        "--out", tmp_path], capture_output=True, text=True)
    assert p.returncode == 0
    assert "3 base parameters" in p.stdout


def test_single_sample_pendulum_observation(tmp_path):
    assert run("observation", "--model", "pendulum", "--samples", 1, "--out", tmp_path) == 0
    rows = list(csv.reader(open(tmp_path / "W.csv")))
    assert len(rows) == 2 and len(rows[0]) == 10
    meta = json.loads((tmp_path / "observation.json").read_text())
    assert meta["underdetermined"] and meta["gravity_on"]
    assert json.loads((tmp_path / "manifest.json").read_text())["command"] == "observation"


def test_outputs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run("base-numeric", "--model", "twolink", "--digits-ladder", "30,45", "--out", d) == 0
    names = sorted(p.name for p in a.iterdir() if p.name != "manifest.json")
    assert names == ["base_numeric.json", "base_numeric.txt"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_workers_do_not_change_results(tmp_path):
    for w in (1, 3):
        assert run("svdscan", "--model", "twolink", "--workers", w, "--out", tmp_path / str(w)) == 0
    assert (tmp_path / "1" / "spectra.csv").read_bytes() == (tmp_path / "3" / "spectra.csv").read_bytes()


def test_svdscan_with_double_precision(tmp_path):
    assert run("svdscan", "--model", "pendulum", "--with-dp", "--out", tmp_path) == 0
    ridge = json.loads((tmp_path / "ridge.json").read_text())
    assert ridge["ridge"]["rank"] == 3 and ridge["ridge"]["certified"]
    assert ridge["double_precision"]["tolerance_cut_rank@1e-12"] == 3


@pytest.mark.parametrize("model", ["pendulum", "twolink"])
def test_compare_agrees(tmp_path, model):
    assert run("compare", "--model", model, "--digits-ladder", "30,60", "--out", tmp_path) == 0
    assert json.loads((tmp_path / "compare.json").read_text())["pass"]


def test_invariance_passes(tmp_path):
    assert run("invariance", "--model", "twolink", "--digits", "native", "--out", tmp_path) == 0


def test_sla_symbolic_count(tmp_path, capsys):
    assert run("base-symbolic", "--out", tmp_path) == 0
    assert "41 base parameters" in capsys.readouterr().out
    assert json.loads((tmp_path / "base_symbolic.json").read_text())["solution"]["count"] == 41


def test_zero_tolerance_is_a_breach(tmp_path):
    assert run("compare", "--model", "twolink", "--tol", 0, "--out", tmp_path) == 3
    assert not (tmp_path / "manifest.json").exists()


def test_unreachable_trajectory_is_a_numeric_failure(tmp_path):
    traj = tmp_path / "wide.json"
    traj.write_text(json.dumps({"harmonics": [[["2.5", "1"]], [["0.1", "1"]]], "period": "2*pi",
                                "samples": 12}))
    assert run("observation", "--digits", "native", "--trajectory", traj, "--out", tmp_path) == 2


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["observation", "--digits", "many"],
    ["observation", "--digits-ladder", "30"],
    ["observation", "--model", "no/such/model"],
    ["base-numeric", "--model", "twolink", "--pin", "Qxx9"],
    ["compare", "--model", "twolink", "--pin", "m1,my1"],
], ids=lambda a: " ".join(a) or "empty")
def test_usage_errors(tmp_path, argv):
    with pytest.raises(SystemExit) as exc:
        code = run(*argv, "--out", tmp_path) if argv else run()
        raise SystemExit(code)
    assert exc.value.code == 1
