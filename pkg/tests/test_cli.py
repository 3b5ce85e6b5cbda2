import csv
import json
import os

import pytest

from helpers import spec_path
from optswitch.cli import main


def _run(tmp_path, *argv):
    return main(list(argv) + ["--out", str(tmp_path)])


def test_validate_exit_codes(tmp_path):
    assert _run(tmp_path, "validate", "--spec", spec_path("single_plant")) == 0
    report = json.load(open(tmp_path / "validation.json"))
    assert report["passed"] and "spec_hash" in report
    assert _run(tmp_path, "validate", "--spec", spec_path("negative_cost")) == 1
    assert not json.load(open(tmp_path / "validation.json"))["passed"]


def test_malformed_problem_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run(tmp_path, "validate", "--spec", str(bad)) == 2
    bad.write_text(json.dumps({"horizon": -1}))
    assert _run(tmp_path, "solve", "--spec", str(bad)) == 2
    assert _run(tmp_path, "solve", "--spec", str(tmp_path / "missing.json")) == 2


def test_solve_trivial(tmp_path, capsys):
    assert _run(tmp_path, "solve", "--spec", spec_path("trivial")) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["root_value"] == 0.0 and summary["converged"]
    for name in ("field.bin", "field.json", "convergence.csv", "solve_summary.json", "manifest_solve.json"):
        assert (tmp_path / name).exists()
    manifest = json.load(open(tmp_path / "manifest_solve.json"))
    assert manifest["command"] == "solve" and "field.bin" in manifest["outputs"]


def test_unconverged_solve_and_evaluate(tmp_path):
    assert _run(tmp_path, "solve", "--spec", spec_path("single_plant"), "--kmax", "1") == 3
    assert _run(tmp_path, "evaluate", "--spec", spec_path("single_plant"), "--paths", "100") == 3


def test_field_from_other_problem(tmp_path):
    other = tmp_path / "other"
    assert _run(other, "solve", "--spec", spec_path("trivial")) == 0
    assert _run(tmp_path, "evaluate", "--spec", spec_path("single_plant"),
                "--field", str(other / "field.json"), "--paths", "100") == 4
    assert _run(tmp_path, "evaluate", "--spec", spec_path("single_plant"), "--paths", "100") == 4


def test_zero_paths_writes_no_event_logs(tmp_path):
    assert _run(tmp_path, "solve", "--spec", spec_path("trivial")) == 0
    assert _run(tmp_path, "evaluate", "--spec", spec_path("trivial"), "--paths", "0") == 0
    assert not any(f.startswith("events_") for f in os.listdir(tmp_path))
    report = json.load(open(tmp_path / "report.json"))
    assert report["n_paths"] == 0


def test_evaluate_outputs(tmp_path):
    assert _run(tmp_path, "solve", "--spec", spec_path("trivial")) == 0
    assert _run(tmp_path, "evaluate", "--spec", spec_path("trivial"), "--paths", "50") == 0
    events = sorted(f for f in os.listdir(tmp_path) if f.startswith("events_"))
    assert len(events) == 5
    regions = json.load(open(tmp_path / "policy_regions.json"))
    assert regions["regions"]


def test_slice_export(tmp_path):
    spec = spec_path("two_plant")
    assert _run(tmp_path, "solve", "--spec", spec, "--slice", "t,w0;a=1,0;b=1,1") == 0
    rows = list(csv.reader(open(tmp_path / "slice.csv")))
    assert rows[0] == ["t", "w0", "value"] and len(rows) > 100
    assert _run(tmp_path, "solve", "--spec", spec, "--slice", "t,nu0;a=0,0;b=1,0") == 0
    assert _run(tmp_path, "solve", "--spec", spec, "--slice", "t,q9") == 2


def test_simulate(tmp_path):
    assert _run(tmp_path, "simulate", "--spec", spec_path("single_plant"), "--paths", "500", "--seed", "3") == 0
    summary = json.load(open(tmp_path / "simulation.json"))
    assert summary["n_paths"] == 500 and sum(summary["final_mode_counts"].values()) == 500
    rows = list(csv.reader(open(tmp_path / "paths.csv")))
    assert len(rows) > 1


def test_rerun_identical_sidecar(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(a, "solve", "--spec", spec_path("single_plant")) == 0
    assert _run(b, "solve", "--spec", spec_path("single_plant")) == 0
    assert (a / "field.json").read_bytes() == (b / "field.json").read_bytes()


def test_negative_paths_rejected(tmp_path):
    with pytest.raises(SystemExit):
        _run(tmp_path, "simulate", "--spec", spec_path("trivial"), "--paths", "-1")
