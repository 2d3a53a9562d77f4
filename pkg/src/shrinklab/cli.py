"""Command line entry point: ``shrinklab {flow,solve,transform,decay,suite}``.

Exit codes: 0 success (all checks passed), 2 usage or config error,
1 runtime failure inside a module, 3 a scenario check failed.
"""

import argparse
import os
import sys

import numpy as np

from . import calabi, flow, io, scenarios, shrinker, transforms
from .config import FLOW_PRESETS, ConfigError, ExperimentConfig
from .grid import ConvexityError, GridSpec


def _matrix(text, n):
    if text is None:
        return np.eye(n)
    vals = [float(v) for v in text.split(",")]
    if len(vals) == 1:
        return vals[0] * np.eye(n)
    if len(vals) == n:
        return np.diag(vals)
    if len(vals) == n * n:
        return np.array(vals).reshape(n, n)
    raise argparse.ArgumentTypeError(f"matrix needs 1, {n} or {n * n} entries")


def build_parser():
    p = argparse.ArgumentParser(prog="shrinklab", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="key = value config file (required for 'suite')")
    p.add_argument("--out-dir", default=".", help="directory for output files")
    p.add_argument("--seed", type=int, help="override the config seed")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("flow", help="run the log Monge-Ampere flow on a torus and write a trace")
    f.add_argument("--dim", type=int, default=1)
    f.add_argument("--points", type=int, default=None)
    f.add_argument("--A", default=None, help="background matrix: 1, n or n*n comma-separated entries")
    f.add_argument("--preset", choices=FLOW_PRESETS, default="sin-sum")
    f.add_argument("--amplitude", type=float, default=0.1)
    f.add_argument("--wavenumber", type=float, default=1.0)
    f.add_argument("--t-end", type=float, default=5.0)
    f.add_argument("--samples", type=int, default=21)
    f.add_argument("--metric", action="store_true", help="append ln_det_g_sup and phase_range columns")

    s = sub.add_parser("solve", help="Dirichlet Newton solve of a shrinker equation on [-1,1]^n")
    s.add_argument("--equation", choices=("ma", "sl"), required=True)
    s.add_argument("--dim", type=int, default=2)
    s.add_argument("--points", type=int, default=65)
    s.add_argument("--A", default=None)
    s.add_argument("--wiggle", type=float, default=0.0, help="boundary wiggle amplitude")
    s.add_argument("--guess-bump", type=float, default=0.1)

    t = sub.add_parser("transform", help="Legendre / Lewy transforms of a snapshot")
    t.add_argument("--mode", choices=("legendre", "lewy", "angle-check"), required=True)
    t.add_argument("--input", required=True)
    t.add_argument("--output", required=True)

    d = sub.add_parser("decay", help="fit decay of a trace column")
    d.add_argument("--trace", required=True)
    d.add_argument("--quantity", choices=sorted(calabi.DECAY_ORDER), default="d3_sq")
    d.add_argument("--eps0", type=float, default=0.5)
    d.add_argument("--output", default=None)

    sub.add_parser("suite", help="run the scenario named in --config")
    return p


def _cmd_flow(a, out):
    points = a.points or {1: 512, 2: 128, 3: 32}[a.dim]
    u0 = scenarios.flow_initial(a.dim, points, _matrix(a.A, a.dim), a.preset, a.amplitude, a.wavenumber)
    times = np.round(np.linspace(0.0, a.t_end, a.samples), 12)
    trace = flow.run_flow(u0, a.t_end, times, keep_snapshots=True, metric_columns=a.metric)
    io.write_trace(os.path.join(out, "trace.csv"), trace)
    io.write_snapshot(os.path.join(out, "final.snap"), trace.snapshots[-1].potential)
    return 0


def _cmd_solve(a, out):
    g = GridSpec.box(a.dim, a.points)
    A = _matrix(a.A, a.dim)
    make = shrinker.quadratic_shrinker_ma if a.equation == "ma" else shrinker.quadratic_shrinker_sl
    solve = shrinker.newton_solve_ma if a.equation == "ma" else shrinker.newton_solve_sl
    bd = make(A, g)
    if a.wiggle:
        bd = bd.with_phi(bd.phi + shrinker.wiggle(a.wiggle)(*g.mesh()))
    guess = bd.with_phi(bd.phi + shrinker.bump(a.guess_bump)(*g.mesh()))
    sol, rep = solve(g, bd, guess)
    io.write_snapshot(os.path.join(out, "solution.snap"), sol)
    io.write_newton_log(os.path.join(out, "newton.csv"), rep)
    return 0


def _cmd_transform(a, out):
    u = io.read_snapshot(a.input)
    path = a.output if os.path.isabs(a.output) else os.path.join(out, a.output)
    if a.mode == "legendre":
        io.write_snapshot(path, transforms.legendre(u).dual)
    elif a.mode == "lewy":
        im = transforms.lewy_rotate(u, convex=True)
        n = u.dim
        w = np.linalg.eigvalsh(im.mapped_hessian)
        cols = ([f"xbar{i}" for i in range(n)] + [f"dubar{i}" for i in range(n)]
                + [f"eig{i}" for i in range(n)])
        np.savetxt(path, np.hstack([im.mapped_points, im.mapped_gradient, w]), delimiter=",",
                   fmt="%.17g", header=",".join(cols), comments="")
        if not im.injective:
            print("warning: Lewy map not injective on the samples", file=sys.stderr)
    else:
        from .grid import derivative_tensors
        D2 = derivative_tensors(u, 2)
        eigs = np.linalg.eigvalsh(D2.full()[D2.valid])
        err = transforms.angle_shift_check(eigs)
        with open(path, "w") as fh:
            fh.write("nodes,max_angle_shift_error\n%d,%.17g\n" % (len(eigs), err))
    return 0


def _cmd_decay(a, out):
    trace = io.read_trace(a.trace)
    fit = calabi.decay_fit(trace, a.quantity, a.eps0)
    path = a.output or os.path.join(out, f"decay_{a.quantity}.csv")
    io.write_decay(path, a.quantity, fit)
    return 0


def main(argv=None):
    parser = build_parser()
    a = parser.parse_args(argv)
    out = a.out_dir
    try:
        cfg = ExperimentConfig.from_file(a.config) if a.config else None
    except (ConfigError, OSError) as exc:
        parser.exit(2, f"shrinklab: config error: {exc}\n")
    os.makedirs(out, exist_ok=True)
    try:
        if a.command == "suite":
            if cfg is None:
                parser.exit(2, "shrinklab: 'suite' needs --config\n")
            status, checks = scenarios.run_scenario(cfg, out, seed=a.seed)
            for c in checks:
                print(c.line())
            return status
        return {"flow": _cmd_flow, "solve": _cmd_solve, "transform": _cmd_transform,
                "decay": _cmd_decay}[a.command](a, out)
    except (ConvexityError, flow.FlowError, shrinker.NewtonError, ValueError, OSError) as exc:
        ctx = f" [scenario {cfg.scenario}]" if cfg is not None else ""
        print(f"shrinklab: {a.command}{ctx}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
