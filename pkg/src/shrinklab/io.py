"""Snapshot and trace files.

Snapshot layout (plain text)::

    # shrinklab snapshot
    dim 2
    topology box
    origin -1 -1
    extent 2 2
    points 33 33
    c 0
    A 1 0 0 1
    phi
    <one value per line, C (lexicographic) node order>

Numbers are written with 17 significant digits, so a write/read cycle is
bit-exact.
"""

import csv
import math

import numpy as np

from .calabi import DecayFit
from .flow import METRIC_COLUMNS, TRACE_COLUMNS, DiagnosticsRecord, FlowTrace
from .grid import GridSpec, PotentialField

MAGIC = "# shrinklab snapshot"


def _fmt(v):
    return "%.17g" % v


def write_snapshot(path, u: PotentialField):
    g = u.grid
    lines = [
        MAGIC,
        f"dim {g.dim}",
        f"topology {g.topology}",
        "origin " + " ".join(_fmt(v) for v in g.origin),
        "extent " + " ".join(_fmt(v) for v in g.extent),
        "points " + " ".join(str(v) for v in g.points),
        "c " + _fmt(u.c),
        "A " + " ".join(_fmt(v) for v in u.A.ravel()),
        "phi",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
        np.savetxt(fh, u.phi.ravel(), fmt="%.17g")


def read_snapshot(path) -> PotentialField:
    with open(path) as fh:
        head = {}
        first = fh.readline().rstrip("\n")
        if first != MAGIC:
            raise ValueError(f"{path}: not a snapshot file")
        for line in fh:
            line = line.strip()
            if line == "phi":
                break
            key, _, rest = line.partition(" ")
            head[key] = rest.split()
        else:
            raise ValueError(f"{path}: missing phi section")
        values = np.array([float(v) for v in fh.read().split()])
    try:
        dim = int(head["dim"][0])
        grid = GridSpec(dim, head["topology"][0], [float(v) for v in head["origin"]],
                        [float(v) for v in head["extent"]], [int(v) for v in head["points"]])
        c = float(head["c"][0])
        A = np.array([float(v) for v in head["A"]]).reshape(dim, dim)
    except KeyError as exc:
        raise ValueError(f"{path}: missing header field {exc}") from None
    if values.size != grid.size:
        raise ValueError(f"{path}: expected {grid.size} values, found {values.size}")
    return PotentialField(grid, c, A, values.reshape(grid.shape))


def trace_header(metric_columns=False):
    return list(TRACE_COLUMNS) + (list(METRIC_COLUMNS) if metric_columns else [])


def write_trace(path, trace: FlowTrace, metric_columns=None):
    if metric_columns is None:
        metric_columns = trace.has_metric_columns()
    cols = trace_header(metric_columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for t, r in trace.records:
            w.writerow([_fmt(t)] + [_fmt(getattr(r, c)) for c in cols[1:]])


def read_trace(path) -> FlowTrace:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:len(TRACE_COLUMNS)] != list(TRACE_COLUMNS):
        raise ValueError(f"{path}: unexpected trace header")
    cols = rows[0]
    trace = FlowTrace()
    for row in rows[1:]:
        if not row:
            continue
        vals = dict(zip(cols, (float(v) for v in row)))
        rec = DiagnosticsRecord(**{c: vals[c] for c in cols if c != "t"})
        trace.append(vals["t"], rec)
    return trace


def write_newton_log(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "residual", "damping"])
        for k, r in enumerate(report.residual_history):
            damp = report.damping_used[k - 1] if k > 0 else math.nan
            w.writerow([k, _fmt(r), _fmt(damp)])


def write_decay(path, quantity, fit: DecayFit):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "t_start", "t_end", "fitted_exponent", "fitted_constant",
                    "c_emp", "bound_satisfied"])
        w.writerow([quantity, _fmt(fit.window[0]), _fmt(fit.window[1]), _fmt(fit.fitted_exponent),
                    _fmt(fit.fitted_constant), _fmt(fit.c_emp), int(fit.bound_satisfied)])
        w.writerow([])
        w.writerow(["t", "value", "bound", "margin"])
        for t, q, m in zip(fit.times, fit.values, fit.margins):
            w.writerow([_fmt(t), _fmt(q), _fmt(q + m), _fmt(m)])
