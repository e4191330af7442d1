import csv
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from tfc_homotopy.cli import EXIT_CONFIG, RunConfig, main, run


def _summary(path):
    return json.loads((path / "summary.json").read_text())


def test_run_synthetic2_dcm(tmp_path):
    assert main(["run", "--problem", "synthetic2", "--tracker", "dcm",
                 "--out", str(tmp_path)]) == 0
    s = _summary(tmp_path)
    assert s["outcome"] == "success"
    assert s["final_x"] == [1.0]
    for name in ("trace.jsonl", "trace.csv", "events.jsonl", "summary.json"):
        assert (tmp_path / name).exists()
    for key in ("outcome", "final_x", "residual_norm", "switches", "omega_history",
                "wall_time", "seed"):
        assert key in s


def test_run_example1_pam_diverges(tmp_path):
    code = main(["run", "--problem", "example1", "--tracker", "pam",
                 "--homotopy", "convex_fixed_point", "--out", str(tmp_path)])
    assert code == 3
    assert _summary(tmp_path)["outcome"] == "diverged"


def test_run_example1_dcm_stalls(tmp_path):
    assert main(["run", "--problem", "example1", "--tracker", "dcm",
                 "--out", str(tmp_path)]) == 2


@pytest.mark.slow
def test_run_example3_tfc(tmp_path):
    code = main(["run", "--problem", "example3", "--tracker", "tfc",
                 "--homotopy", "tfc_poly", "--seed", "0", "--out", str(tmp_path)])
    assert code == 0
    np.testing.assert_allclose(_summary(tmp_path)["final_x"], [0.0, 0.0, math.pi], atol=1e-4)


@pytest.mark.parametrize("argv", [
    ["run", "--problem", "nope"],
    ["run", "--problem", "example1", "--tracker", "newton"],
    ["run", "--problem", "example1", "--tracker", "tfc", "--homotopy", "convex_newton"],
    ["run", "--problem", "example1", "--tracker", "dcm", "--homotopy", "tfc_poly"],
    ["run", "--problem", "example1", "--format", "xml"],
    ["run", "--tracker", "dcm"],
])
def test_configuration_errors(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == EXIT_CONFIG
    assert capsys.readouterr().err


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"problem": "synthetic2", "tracker": "dcm",
                               "tracker_params": {"dkappa_default": 0.5}}))
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--dkappa", "0.25", "--out", str(out)]) == 0
    assert _summary(out)["accepted"] == 5


def test_format_subset(tmp_path):
    assert main(["run", "--problem", "synthetic2", "--tracker", "dcm", "--format", "jsonl",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "trace.jsonl").exists()
    assert not (tmp_path / "trace.csv").exists()
    assert (tmp_path / "events.jsonl").exists()


def test_csv_rows_match_accepted_events(tmp_path):
    assert main(["run", "--problem", "example1", "--tracker", "tfc",
                 "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "trace.csv").read_text().splitlines()[1:]
    events = [json.loads(ln) for ln in (tmp_path / "events.jsonl").read_text().splitlines()]
    assert len(rows) == sum(e["event_kind"] == "step_accepted" for e in events)


def test_summary_reproducible(tmp_path):
    texts = []
    for d in ("a", "b"):
        rc = RunConfig("example1", "tfc", seed=7, output_dir=str(tmp_path / d))
        assert run(rc) == 0
        s = _summary(tmp_path / d)
        s.pop("wall_time")
        texts.append(json.dumps(s, sort_keys=True))
    assert texts[0] == texts[1]
    a = (tmp_path / "a" / "trace.jsonl").read_text().splitlines()
    b = (tmp_path / "b" / "trace.jsonl").read_text().splitlines()
    assert a[1:] == b[1:]  # the meta line carries wall time


def _rows(path):
    with open(path / "compare.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def test_compare_example1(tmp_path):
    assert main(["compare", "--problem", "example1", "--trackers", "dcm", "pam", "tfc",
                 "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path)
    assert [r["tracker"] for r in rows] == ["dcm", "pam", "tfc"]
    assert [r["outcome"] == "success" for r in rows] == [False, False, True]
    assert set(rows[0]) == {"tracker", "homotopy", "outcome", "final_kappa", "residual",
                            "switches", "accepted", "halvings", "wall_time"}


def test_compare_synthetic2_equivalence(tmp_path):
    assert main(["compare", "--problem", "synthetic2", "--trackers", "dcm", "tfc",
                 "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path)
    assert all(r["outcome"] == "success" for r in rows)
    assert rows[0]["accepted"] == rows[1]["accepted"]


def test_compare_needs_two(tmp_path):
    assert main(["compare", "--problem", "synthetic2", "--trackers", "dcm",
                 "--out", str(tmp_path)]) == EXIT_CONFIG


def test_compare_mixed_problems(tmp_path):
    paths = []
    for i, prob in enumerate(("synthetic2", "synthetic3")):
        f = tmp_path / f"{i}.json"
        f.write_text(json.dumps({"problem": prob, "tracker": "dcm"}))
        paths.append(str(f))
    assert main(["compare", *paths, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tfc_homotopy.cli", "run", "--problem",
                           "synthetic5", "--tracker", "dcm", "--out", str(tmp_path)],
                          capture_output=True, text=True,
                          env=dict(os.environ, HOMOTOPY_LOG="info"))
    assert proc.returncode == 3
    assert "INFO" in proc.stderr
