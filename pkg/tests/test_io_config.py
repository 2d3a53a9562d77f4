import numpy as np
import pytest

from shrinklab import io
from shrinklab.calabi import decay_fit
from shrinklab.config import ConfigError, ExperimentConfig, parse_config_text
from shrinklab.flow import run_flow
from shrinklab.grid import GridSpec, PotentialField
from shrinklab.scenarios import flow_initial
from shrinklab.shrinker import newton_solve_ma, quadratic_shrinker_ma, bump


@pytest.mark.parametrize("grid", [GridSpec.torus(2, 12), GridSpec.box(3, 8, -1.5, 0.5), GridSpec.box(1, 9)])
def test_snapshot_round_trip_bit_exact(tmp_path, rng, grid):
    n = grid.dim
    B = rng.normal(size=(n, n))
    u = PotentialField(grid, rng.normal(), B + B.T, rng.normal(size=grid.shape) * np.pi)
    p = tmp_path / "u.snap"
    io.write_snapshot(p, u)
    v = io.read_snapshot(p)
    assert v.grid == u.grid and v.c == u.c
    assert np.array_equal(v.A, u.A) and np.array_equal(v.phi, u.phi)


def test_snapshot_errors(tmp_path):
    p = tmp_path / "bad.snap"
    p.write_text("hello\n")
    with pytest.raises(ValueError):
        io.read_snapshot(p)
    u = PotentialField.quadratic(GridSpec.box(1, 8), [[1.0]])
    io.write_snapshot(p, u)
    p.write_text(p.read_text() + "1.0\n")
    with pytest.raises(ValueError):
        io.read_snapshot(p)


def test_trace_round_trip(tmp_path):
    u = flow_initial(1, 64, np.eye(1))
    times = np.round(np.linspace(0, 1, 12), 12)
    tr = run_flow(u, 1.0, times, metric_columns=True)
    p = tmp_path / "trace.csv"
    io.write_trace(p, tr)
    header = p.read_text().splitlines()[0].split(",")
    assert header == io.trace_header(True)
    back = io.read_trace(p)
    for col in header:
        np.testing.assert_array_equal(back.column(col), tr.column(col))
    fit = decay_fit(back, "d3_sq", 0.0 + times[1])
    io.write_decay(tmp_path / "d.csv", "d3_sq", fit)
    rows = (tmp_path / "d.csv").read_text().splitlines()
    assert rows[0].startswith("quantity,") and rows[3] == "t,value,bound,margin"


def test_newton_log(tmp_path):
    g = GridSpec.box(2, 17)
    q = quadratic_shrinker_ma(np.eye(2), g)
    _, rep = newton_solve_ma(g, q, q.with_phi(bump(0.1)(*g.mesh())))
    io.write_newton_log(tmp_path / "n.csv", rep)
    lines = (tmp_path / "n.csv").read_text().splitlines()
    assert lines[0] == "iteration,residual,damping"
    assert len(lines) == rep.iterations + 2


def test_config_parsing():
    text = "# comment\nscenario = flow-decay\n\ndim = 2  # inline\nA = 1, 2\nmetric = yes\nlevels = 33,65\n"
    cfg = ExperimentConfig.from_text(text)
    assert cfg.scenario == "flow-decay"
    assert cfg.get_int("dim") == 2
    np.testing.assert_array_equal(cfg.get_matrix("A", 2), np.diag([1.0, 2.0]))
    assert cfg.get_bool("metric") is True
    assert cfg.get_list("levels", cast=int) == [33, 65]
    assert cfg.get_float("eps0", 0.5) == 0.5


@pytest.mark.parametrize("text,line", [
    ("scenario = flow-decay\ndim = two\n", 2),
    ("scenario = flow-decay\nnonsense\n", 2),
    ("scenario = flow-decay\nscenario = lewy-suite\n", 2),
    ("scenario = nope\n", 1),
    ("scenario = flow-decay\n\n\npreset = square\n", 4),
])
def test_config_errors_carry_line(text, line):
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_text(text)
    assert exc.value.line == line


def test_config_empty_and_missing():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("# nothing here\n\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("dim = 2\n")
    cfg = ExperimentConfig.from_text("scenario = lewy-suite\nA = 1,2,3\n")
    with pytest.raises(ConfigError):
        cfg.get_matrix("A", 2)
    assert parse_config_text("a = b = c")[0] == {"a": "b = c"}
