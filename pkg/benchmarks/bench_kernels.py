"""Time the numba and numpy kernel paths on identical inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--quick]

Each kernel is warmed up once (numba compiles, or loads its cache) and then
timed ``--repeat`` times; the best time is reported together with the max
deviation between the two paths.  An end-to-end flow run closes the table.
"""

import argparse
import itertools
import time

import numpy as np

from shrinklab import _accel, kernels
from shrinklab.flow import run_flow
from shrinklab.scenarios import flow_initial


def sym_batch(rng, m, n, lo, hi):
    Q = np.linalg.qr(rng.normal(size=(m, n, n)))[0]
    w = rng.uniform(lo, hi, size=(m, n))
    return np.einsum("mij,mj,mkj->mik", Q, w, Q)


def sym_tensor(rng, m, n):
    T = rng.normal(size=(m, n, n, n))
    return sum(T.transpose((0,) + tuple(1 + i for i in p)) for p in itertools.permutations(range(3))) / 6


def cases(m, grid_n, rng):
    H = sym_batch(rng, m, 3, 0.2, 5.0)
    T = sym_tensor(rng, m, 3)
    w, V = np.linalg.eigh(H)
    X = rng.uniform(-1, 1, size=(min(m, 20000), 2))
    U = (X ** 2).sum(1)
    Y = rng.uniform(-2, 2, size=(2000, 2))
    h = (2 * np.pi / grid_n,) * 2
    x = np.arange(grid_n) * h[0]
    phi = 0.1 * (np.sin(x)[:, None] + np.sin(x)[None, :])
    return [
        (f"eigh_sym 3x3 (m={m})", lambda: kernels.eigh_sym(H)[0]),
        (f"sigma_contract (m={m})", lambda: kernels.sigma_contract(H, T)),
        (f"calabi_ab (m={m})", lambda: kernels.calabi_ab(w, V, T)[2]),
        (f"conjugate_argmax ({len(X)}x{len(Y)})", lambda: kernels.conjugate_argmax(X, U, Y)[0]),
        (f"torus_logdet 2D ({grid_n}^2)", lambda: kernels.torus_logdet(phi, np.eye(2), h)[0]),
    ]


def best_of(fn, repeat):
    fn()
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        ts.append(time.perf_counter() - t0)
    return min(ts), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="smaller inputs")
    a = ap.parse_args()
    if not _accel.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    m, gn = (20000, 64) if a.quick else (200000, 256)
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s} {'max diff':>9s}")
    for name, fn in cases(m, gn, rng):
        res = {}
        for b in ("numpy", "numba"):
            with _accel.use_backend(b):
                res[b] = best_of(fn, a.repeat)
        tn, tb = res["numpy"][0], res["numba"][0]
        diff = float(np.nanmax(np.abs(res["numpy"][1] - res["numba"][1])))
        print(f"{name:40s} {1e3 * tn:11.2f} {1e3 * tb:11.2f} {tn / tb:8.1f} {diff:9.1e}")

    dim, N, T = (1, 128, 0.5) if a.quick else (2, 64, 1.0)
    u0 = flow_initial(dim, N, np.eye(dim))
    times = np.linspace(0, T, 5)
    res = {}
    for b in ("numpy", "numba"):
        with _accel.use_backend(b):
            res[b] = best_of(lambda: run_flow(u0, T, times).column("sup_sigma"), 1)
    tn, tb = res["numpy"][0], res["numba"][0]
    diff = float(np.max(np.abs(res["numpy"][1] - res["numba"][1])))
    name = f"run_flow n={dim} ({N}^{dim}, t={T})"
    print(f"{name:40s} {1e3 * tn:11.2f} {1e3 * tb:11.2f} {tn / tb:8.1f} {diff:9.1e}")


if __name__ == "__main__":
    main()
