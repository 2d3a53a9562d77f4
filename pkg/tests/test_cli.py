import subprocess
import sys

import numpy as np
import pytest

from shrinklab import io
from shrinklab.cli import main
from shrinklab.grid import GridSpec, PotentialField


def test_empty_config_exit_2(tmp_path):
    cfg = tmp_path / "empty.cfg"
    cfg.write_text("")
    with pytest.raises(SystemExit) as exc:
        main(["--config", str(cfg), "--out-dir", str(tmp_path), "suite"])
    assert exc.value.code == 2


def test_usage_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["--out-dir", str(tmp_path), "suite"])
    assert exc.value.code == 2


def test_suite_lewy(tmp_path, capsys):
    cfg = tmp_path / "l.cfg"
    cfg.write_text("scenario = lewy-suite\nseed = 3\ncount = 5\n")
    assert main(["--config", str(cfg), "--out-dir", str(tmp_path), "suite"]) == 0
    summary = (tmp_path / "summary.txt").read_text().splitlines()
    assert summary[0] == "scenario lewy-suite seed 3"
    assert all(line.startswith("PASS") for line in summary[1:])
    assert "PASS" in capsys.readouterr().out
    assert (tmp_path / "lewy.csv").exists()


def test_suite_seed_override_is_deterministic(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("scenario = calabi-suite\ncount = 6\n")
    outs = []
    for k in range(2):
        d = tmp_path / f"r{k}"
        assert main(["--config", str(cfg), "--out-dir", str(d), "--seed", "11", "suite"]) == 0
        outs.append((d / "calabi.csv").read_text())
    assert outs[0] == outs[1]


def test_flow_and_decay(tmp_path):
    assert main(["--out-dir", str(tmp_path), "flow", "--dim", "1", "--points", "64", "--t-end", "1",
                 "--samples", "21", "--metric"]) == 0
    header = (tmp_path / "trace.csv").read_text().splitlines()[0]
    assert header.endswith("ln_det_g_sup,phase_range")
    assert main(["--out-dir", str(tmp_path), "decay", "--trace", str(tmp_path / "trace.csv"),
                 "--quantity", "sigma", "--eps0", "0.5"]) == 0
    assert (tmp_path / "decay_sigma.csv").exists()
    io.read_snapshot(tmp_path / "final.snap")


def test_solve_and_transforms(tmp_path):
    assert main(["--out-dir", str(tmp_path), "solve", "--equation", "sl", "--points", "17",
                 "--A", "1,2"]) == 0
    snap = str(tmp_path / "solution.snap")
    assert main(["--out-dir", str(tmp_path), "transform", "--mode", "legendre", "--input", snap,
                 "--output", "dual.snap"]) == 0
    dual = io.read_snapshot(tmp_path / "dual.snap")
    np.testing.assert_allclose(dual.A, np.diag([1.0, 0.5]), atol=1e-12)
    assert main(["--out-dir", str(tmp_path), "transform", "--mode", "lewy", "--input", snap,
                 "--output", "lewy.csv"]) == 0
    assert (tmp_path / "lewy.csv").read_text().startswith("xbar0,xbar1,dubar0,dubar1,eig0,eig1")
    assert main(["--out-dir", str(tmp_path), "transform", "--mode", "angle-check", "--input", snap,
                 "--output", "angle.csv"]) == 0
    err = float((tmp_path / "angle.csv").read_text().splitlines()[1].split(",")[1])
    assert err <= 1e-12


def test_runtime_error_exit_1(tmp_path, capsys):
    u = PotentialField.from_function(GridSpec.box(1, 16), lambda x: -x ** 2, A=[[0.5]])
    io.write_snapshot(tmp_path / "bad.snap", u)
    rc = main(["--out-dir", str(tmp_path), "transform", "--mode", "lewy", "--input",
               str(tmp_path / "bad.snap"), "--output", "x.csv"])
    assert rc == 1
    assert "shrinklab: transform" in capsys.readouterr().err
    assert main(["--out-dir", str(tmp_path), "transform", "--mode", "lewy", "--input",
                 str(tmp_path / "missing.snap"), "--output", "x.csv"]) == 1


def test_failed_check_exit_3(tmp_path):
    # a 1D flow-decay run: the fourth-derivative decay check fails on periodic data
    cfg = tmp_path / "f.cfg"
    cfg.write_text("scenario = flow-decay\ndim = 1\npoints = 128\n")
    assert main(["--config", str(cfg), "--out-dir", str(tmp_path), "suite"]) == 3
    lines = (tmp_path / "summary.txt").read_text().splitlines()
    assert any(l.startswith("FAIL decay sup|D4u|") for l in lines)


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "shrinklab", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "suite" in out.stdout
