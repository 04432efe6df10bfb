import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from anytime_crc.boundaries import BoundaryConfig, gamma_anytime, gamma_duchi, gamma_standard
from anytime_crc.cli import main
from anytime_crc.risk_core import CalibratorState
from anytime_crc.shift import GaussianRatioWeight, ShiftState


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def write_scores(path, scores, extra=None):
    cols = ["score"] + list(extra or {})
    lines = [",".join(cols)]
    for i, s in enumerate(scores):
        vals = [repr(float(s))] + [repr(float(extra[c][i])) for c in extra or {}]
        lines.append(",".join(vals))
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------- boundary

def test_boundary_table(capsys):
    assert main(["boundary", "--alpha", "0.05", "--delta", "0.1"]) == 0
    rows = read_csv(capsys.readouterr().out)
    assert list(rows[0]) == ["n", "gamma_standard", "gamma_duchi", "gamma_anytime", "m_star"]
    cfg = BoundaryConfig(delta=0.1)
    for r in rows:
        n = int(r["n"])
        assert int(r["m_star"]) == 325
        assert float(r["gamma_standard"]) == gamma_standard(n, 0.05)
        assert float(r["gamma_duchi"]) == gamma_duchi(n, 0.05, 0.1)
        assert float(r["gamma_anytime"]) == gamma_anytime(n, 0.05, cfg, 325)
    ok = [int(r["n"]) for r in rows if float(r["gamma_anytime"]) <= 0.05]
    assert min(ok) == 325
    assert {324, 325} <= {int(r["n"]) for r in rows}


def test_boundary_json_to_file(tmp_path):
    out = tmp_path / "b.json"
    assert main(["boundary", "--alpha", "0.1", "--nmax", "1000", "--points", "5",
                 "--format", "json", "--out", str(out)]) == 0
    rows = json.loads(out.read_text())
    assert rows[-1]["n"] == 1000 and rows[0]["m_star"] == 159


def test_boundary_missing_alpha_is_usage_error(capsys):
    assert main(["boundary", "--delta", "0.1"]) == 2
    assert "--alpha" in capsys.readouterr().err


def test_boundary_invalid_values():
    assert main(["boundary", "--alpha", "0.05", "--delta", "1.5"]) == 2
    assert main(["boundary", "--alpha", "abc"]) == 2


def test_boundary_unwritable_output(tmp_path, capsys):
    target = tmp_path / "missing-dir" / "out.csv"
    assert main(["boundary", "--alpha", "0.05", "--out", str(target)]) == 1
    assert "cannot write" in capsys.readouterr().err


def test_config_file_and_override_notice(tmp_path, capsys, caplog):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"alpha": 0.2, "delta": 0.05, "nmax": 500, "points": 4}))
    with caplog.at_level("WARNING"):
        assert main(["boundary", "--config", str(cfg), "--alpha", "0.1"]) == 0
    rows = read_csv(capsys.readouterr().out)
    assert rows[-1]["n"] == "500"
    assert float(rows[-1]["gamma_duchi"]) == gamma_duchi(500, 0.1, 0.05)
    assert "overrides config value" in caplog.text


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"alpha": 0.2, "bogus": 1}))
    assert main(["boundary", "--config", str(cfg)]) == 2


# ---------------------------------------------------------------- simulate

def test_simulate_deterministic(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert main(["simulate", "iid", "--method", "anytime", "--runs", "10", "--nmax", "1000",
                     "--seed", "7", "--out", str(out)]) == 0
        outs.append(out)
    for name in ("trace.csv", "summary.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    rows = read_csv((outs[0] / "trace.csv").read_text())
    assert len(rows) == 10 * 11


def test_simulate_jobs_do_not_change_output(tmp_path):
    for jobs in ("1", "2"):
        assert main(["simulate", "iid", "--runs", "4", "--nmax", "500", "--jobs", jobs,
                     "--out", str(tmp_path / jobs)]) == 0
    for name in ("trace.csv", "summary.json"):
        assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "2" / name).read_bytes()


def test_simulate_shift_weight_diagnostics(tmp_path):
    out = tmp_path / "s"
    assert main(["simulate", "shift", "--runs", "3", "--nmax", "3000", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert {"mean_w", "W_n_over_n"} <= set(summary["weights"])
    assert summary["config"]["alpha"] == 0.1
    assert summary["config"]["method"] == "shift_anytime"


def test_simulate_setsize_table(tmp_path):
    out = tmp_path / "m"
    assert main(["simulate", "setsize", "--runs", "2", "--nmax", "3000", "--eval-size", "500",
                 "--classes", "20", "--out", str(out)]) == 0
    rows = read_csv((out / "setsize.csv").read_text())
    assert list(rows[0]) == ["n", "size_anytime", "size_fixed", "ratio", "gamma_anytime",
                             "gamma_fixed"]
    assert all(float(r["size_anytime"]) >= float(r["size_fixed"]) for r in rows)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["set_size_comparison"]["m_star"] == 159


def test_simulate_invalid_experiment():
    assert main(["simulate", "imagenet"]) == 2


def test_simulate_invalid_method_for_experiment(tmp_path):
    assert main(["simulate", "iid", "--method", "shift_anytime", "--out", str(tmp_path)]) == 2


def test_simulate_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["simulate", "iid", "--runs", "1", "--nmax", "10", "--out",
                 str(blocker / "sub")]) == 1


# ---------------------------------------------------------------- calibrate

def test_calibrate_empty_input(tmp_path, capsys):
    src = tmp_path / "empty.csv"
    src.write_text("")
    assert main(["calibrate", str(src), "--alpha", "0.1"]) == 0
    assert capsys.readouterr().out == "n,gamma,lambda\n"
    state = CalibratorState.loads((tmp_path / "empty.csv.ckpt.json").read_text())
    assert state.n == 0


def test_calibrate_matches_library(tmp_path, capsys):
    scores = np.abs(np.random.default_rng(0).normal(size=600))
    src = write_scores(tmp_path / "s.csv", scores)
    assert main(["calibrate", str(src), "--alpha", "0.1", "--method", "standard"]) == 0
    rows = read_csv(capsys.readouterr().out)
    state = CalibratorState(0.1, BoundaryConfig(), "standard")
    for r, s in zip(rows, scores):
        lam = state.update(s)
        assert float(r["lambda"]) == lam
        assert float(r["gamma"]) == state.last_gamma
    assert int(rows[-1]["n"]) == 600


def test_calibrate_resume_equals_uninterrupted(tmp_path, capsys):
    scores = np.abs(np.random.default_rng(1).normal(size=1500))
    full = write_scores(tmp_path / "full.csv", scores)
    first = write_scores(tmp_path / "a.csv", scores[:700])
    second = write_scores(tmp_path / "b.csv", scores[700:])
    ck = tmp_path / "state.json"
    assert main(["calibrate", str(full), "--alpha", "0.1", "--checkpoint", str(tmp_path / "x.json")]) == 0
    whole = capsys.readouterr().out.splitlines()
    assert main(["calibrate", str(first), "--alpha", "0.1", "--checkpoint", str(ck)]) == 0
    part1 = capsys.readouterr().out.splitlines()
    assert main(["calibrate", str(second), "--resume", str(ck)]) == 0
    part2 = capsys.readouterr().out.splitlines()
    assert part1 + part2[1:] == whole
    assert json.loads(ck.read_text())["n"] == 1500
    assert (tmp_path / "x.json").read_text() == ck.read_text()


def test_calibrate_resume_incompatible(tmp_path):
    src = write_scores(tmp_path / "s.csv", [0.1, 0.2])
    ck = tmp_path / "c.json"
    assert main(["calibrate", str(src), "--alpha", "0.1", "--checkpoint", str(ck)]) == 0
    before = ck.read_text()
    assert main(["calibrate", str(src), "--resume", str(ck), "--alpha", "0.2"]) == 2
    assert main(["calibrate", str(src), "--resume", str(ck), "--method", "standard"]) == 2
    assert ck.read_text() == before


def test_calibrate_resume_version_mismatch(tmp_path, capsys):
    src = write_scores(tmp_path / "s.csv", [0.1])
    ck = tmp_path / "c.json"
    doc = CalibratorState(0.1).to_dict()
    doc["version"] = 42
    ck.write_text(json.dumps(doc))
    assert main(["calibrate", str(src), "--resume", str(ck)]) == 1
    assert "unsupported checkpoint" in capsys.readouterr().err


def test_calibrate_weight_column_needs_shift(tmp_path):
    src = write_scores(tmp_path / "w.csv", [0.1, 0.2], {"weight": [1.0, 2.0]})
    assert main(["calibrate", str(src), "--alpha", "0.1"]) == 2


def test_calibrate_weighted(tmp_path, capsys):
    rng = np.random.default_rng(2)
    x = rng.normal(0.5, 0.5, 3000)
    w = GaussianRatioWeight(0, 0.3, 0.5, 0.5)(x)
    scores = np.abs(x**3 - x - rng.normal(0, 0.3, x.size))
    src = write_scores(tmp_path / "w.csv", scores, {"weight": w})
    assert main(["calibrate", str(src), "--alpha", "0.1", "--shift", "--format", "json"]) == 0
    recs = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    state = ShiftState(0.1, BoundaryConfig())
    for rec, s, wi in zip(recs, scores, w):
        lam = state.update(s, wi)
        assert rec["lambda"] == (lam if math.isfinite(lam) else "inf")
    ck = json.loads((tmp_path / "w.csv.ckpt.json").read_text())
    assert ck["kind"] == "shift" and ck["n"] == 3000


def test_calibrate_weight_fn(tmp_path, capsys):
    rng = np.random.default_rng(3)
    x = rng.normal(0.5, 0.5, 500)
    scores = np.abs(rng.normal(size=500))
    src = write_scores(tmp_path / "x.csv", scores, {"x": x})
    spec = "0,0.3,0.5,0.5"
    assert main(["calibrate", str(src), "--alpha", "0.1", "--shift", "--weight-fn", spec]) == 0
    rows = read_csv(capsys.readouterr().out)
    state = ShiftState(0.1, BoundaryConfig())
    wf = GaussianRatioWeight.parse(spec)
    for r, s, xi in zip(rows, scores, x):
        assert float(r["lambda"]) == state.update(s, wf(xi))
    assert main(["calibrate", str(src), "--alpha", "0.1", "--weight-fn", spec]) == 2
    no_x = write_scores(tmp_path / "nx.csv", scores)
    assert main(["calibrate", str(no_x), "--alpha", "0.1", "--shift", "--weight-fn", spec]) == 2


def test_calibrate_malformed_row(tmp_path, capsys):
    src = tmp_path / "bad.csv"
    src.write_text("score\n0.1\n0.2\nnot-a-number\n0.4\n")
    assert main(["calibrate", str(src), "--alpha", "0.1"]) == 1
    assert "line 4" in capsys.readouterr().err
    assert not (tmp_path / "bad.csv.ckpt.json").exists()


def test_calibrate_negative_score(tmp_path, capsys):
    src = tmp_path / "neg.csv"
    src.write_text("score\n0.1\n-0.5\n")
    assert main(["calibrate", str(src), "--alpha", "0.1"]) == 1
    assert "line 3" in capsys.readouterr().err


def test_calibrate_missing_input(tmp_path):
    assert main(["calibrate", str(tmp_path / "nope.csv"), "--alpha", "0.1"]) == 1


def test_calibrate_requires_alpha(tmp_path):
    src = write_scores(tmp_path / "s.csv", [0.1])
    assert main(["calibrate", str(src)]) == 2


# ---------------------------------------------------------------- entry points

def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "anytime_crc", "boundary", "--alpha", "0.05",
                           "--nmax", "400", "--points", "3"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("n,gamma_standard")


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "calibrate" in capsys.readouterr().out


def test_counts_accept_scientific_notation(capsys):
    assert main(["boundary", "--alpha", "0.05", "--nmax", "1e4", "--points", "3"]) == 0
    assert capsys.readouterr().out.strip().splitlines()[-1].startswith("10000,")
    assert main(["boundary", "--alpha", "0.05", "--nmax", "1.5"]) == 2
