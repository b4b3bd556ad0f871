import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from leakyguide.cli import load_table1_reference, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _rows(path):
    lines = Path(path).read_text().splitlines()
    assert lines[-1].startswith("# manifest: ")
    return list(csv.DictReader(lines[:-1]))


def _manifest(out, cmd):
    return json.loads((Path(out) / f"manifest-{cmd}.json").read_text())


def test_modes_table_config(tmp_path):
    out = tmp_path / "o"
    assert main(["--config", str(CONFIGS / "table1.json"), "--out", str(out), "modes", "--count", "5"]) == 0
    rows = _rows(out / "modes.csv")
    assert list(rows[0])[:6] == ["n", "Re_lambda", "Im_lambda", "Re_beta", "Im_beta", "J_n"]
    ref = load_table1_reference()["rows"][0]
    # the reference listing starts at the second mode
    lam = complex(float(rows[1]["Re_lambda_scaled"]), float(rows[1]["Im_lambda_scaled"]))
    assert abs(lam - complex(ref[1], ref[2])) < 1e-3 * abs(complex(ref[1], ref[2]))
    m = _manifest(out, "modes")
    assert m["command"] == "modes" and "modes.csv" in m["outputs"] and m["version"].startswith("v")


def test_modes_neumann(tmp_path):
    out = tmp_path / "o"
    assert main(["--config", str(CONFIGS / "neumann.json"), "--out", str(out), "modes", "--N", "64",
                 "--count", "10"]) == 0
    lam = np.array([float(r["Re_lambda"]) for r in _rows(out / "modes.csv")])
    delta = math.log(2.0) / math.pi
    np.testing.assert_allclose(lam, np.arange(10) ** 2 / delta**2, atol=1e-8)


def test_modes_coefficients_sidecar(tmp_path):
    out = tmp_path / "o"
    main(["--config", str(CONFIGS / "small.json"), "--out", str(out), "modes", "--N", "64", "--count", "2", "--coeffs"])
    side = json.loads((out / "modes.json").read_text())
    assert len(side["coefficients"]) == 2 and len(side["coefficients"][0]["chain"][0]) == 65


def test_malformed_json_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"r1": 1.0,\n "r2" 2.0}')
    assert main(["--config", str(bad), "--out", str(tmp_path), "modes"]) == 2
    assert "line 2 column" in capsys.readouterr().err


def test_missing_config_exit_2(tmp_path):
    assert main(["--out", str(tmp_path), "modes"]) == 2


def test_invalid_config_exit_2(tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text('{"r1": 2.0, "r2": 1.0, "omega": 1.0}')
    assert main(["--config", str(bad), "--out", str(tmp_path), "modes"]) == 2


def test_solver_failure_exit_3(tmp_path, capsys):
    code = main(["--config", str(CONFIGS / "small.json"), "--out", str(tmp_path), "solve", "--N", "64",
                 "--modes", "60"])
    assert code == 3
    assert "solver failure" in capsys.readouterr().err


def test_table1_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--out", str(a), "table1"]) == 0
    text = capsys.readouterr().out
    assert main(["--out", str(b), "table1"]) == 0
    assert (a / "table1.csv").read_bytes() == (b / "table1.csv").read_bytes()
    rows = _rows(a / "table1.csv")
    assert len(rows) == 20 and all(r["lambda_status"] == "PASS" for r in rows)
    assert "no counterpart" in text


def test_solve_zero_source(tmp_path):
    out = tmp_path / "o"
    assert main(["--config", str(CONFIGS / "small.json"), "--out", str(out), "solve", "--zero-source",
                 "--N", "64", "--modes", "10", "--grid", "5", "7"]) == 0
    summary = json.loads((out / "solution.json").read_text())
    assert summary["l2_norm"] == 0.0 and summary["h1_norm"] == 0.0
    rows = _rows(out / "solution.csv")
    assert len(rows) == 35 and all(float(r["Re_u"]) == 0.0 for r in rows)


def test_solve_bump(tmp_path):
    out = tmp_path / "o"
    src = tmp_path / "src.json"
    src.write_text('{"kind": "bump", "r_support": [1.2, 1.8], "theta_support": [0.5, 2.0]}')
    assert main(["--config", str(CONFIGS / "small.json"), "--out", str(out), "solve", "--source", str(src),
                 "--N", "200", "--modes", "30"]) == 0
    summary = json.loads((out / "solution.json").read_text())
    assert summary["h1_norm"] > summary["l2_norm"] > 0
    assert summary["manifest"] == "manifest-solve.json"


def test_stability_four_rows(tmp_path):
    out = tmp_path / "o"
    assert main(["--config", str(CONFIGS / "small.json"), "--out", str(out), "stability", "--N", "200",
                 "--modes", "30"]) == 0
    rows = _rows(out / "stability.csv")
    assert [float(r["theta_max_over_pi"]) for r in rows] == [2, 4, 8, 16]
    assert all(r["cap_status"] == "PASS" for r in rows)
    rep = json.loads((out / "stability.json").read_text())
    assert rep["ratio_growth"] < 2


def test_roots_symmetric(tmp_path):
    out = tmp_path / "o"
    assert main(["--out", str(out), "--seed", "3", "roots", "--box", "-20", "20", "-10", "10"]) == 0
    z = np.array([complex(float(r["Re_w"]), float(r["Im_w"])) for r in _rows(out / "roots.csv")])
    assert len(z) == 12
    for w in z:
        assert np.min(np.abs(z + w)) < 1e-9 and np.min(np.abs(z - np.conj(w))) < 1e-9
    summ = json.loads((out / "roots.json").read_text())
    assert all(c["newton"] == c["argument_principle"] for c in summ["subboxes"])
    assert summ["argument_principle_count"] == 12


def test_roots_bad_box(tmp_path):
    assert main(["--out", str(tmp_path), "roots", "--box", "1", "0", "0", "1"]) == 2


def test_diagnostics_and_perturbation(tmp_path):
    out = tmp_path / "o"
    cfg = str(CONFIGS / "table1.json")
    assert main(["--config", cfg, "--out", str(out), "diagnostics", "--N", "200"]) == 0
    d = json.loads((out / "diagnostics.json").read_text())
    assert d["pairing"]["inf_abs"] > 0.1 and d["biorthogonality_defect"] < 1e-8
    assert "100" in d["bari"]["partial_sums_l2"]
    _rows(out / "bari.csv")
    assert main(["--config", cfg, "--out", str(out), "perturbation", "--N", "400", "--n-min", "30",
                 "--n-max", "35"]) == 0
    rows = _rows(out / "perturbation.csv")
    assert [int(r["n"]) for r in rows] == list(range(30, 36))
    assert all(float(r["remainder_over_first_sq"]) <= 10 for r in rows)
    assert main(["--config", cfg, "--out", str(out), "perturbation", "--N", "100", "--n-max", "60"]) == 2


def test_tolerance_file_and_threads(tmp_path):
    tol = tmp_path / "tol.json"
    tol.write_text('{"root_residual": 1e-11}')
    out = tmp_path / "o"
    assert main(["--tol-file", str(tol), "--threads", "1", "--out", str(out), "roots", "--box", "-5", "5",
                 "-5", "5"]) == 0
    m = _manifest(out, "roots")
    assert m["tolerance_overrides"] == {"root_residual": 1e-11}
    assert m["arguments"]["threads"] == 1


def test_global_flags_after_command(tmp_path):
    out = tmp_path / "o"
    assert main(["roots", "--box", "-5", "5", "-5", "5", "--out", str(out)]) == 0
    assert (out / "roots.csv").exists()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "leakyguide", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("modes", "table1", "solve", "stability", "roots", "diagnostics", "perturbation"):
        assert cmd in res.stdout
