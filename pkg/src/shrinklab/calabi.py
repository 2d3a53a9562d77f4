"""The Calabi quantity sigma, the auxiliary quantities A and B, and decay fits.

sigma = u^{kl} u^{pq} u^{rs} u_{kpr} u_{lqs} is the squared norm of D^3 u in
the Hessian metric.  In the Hessian eigenbasis write
N_{abc} = u_{abc} / sqrt(l_a l_b l_c); then sigma = |N|^2,
B = |M|^2 with M_{kl} = N_{kpr} N_{lpr}, and A = sum_{r,i} tr(N^r N^i N^r N^i)
where N^r is the matrix N_{..r}.  B >= A and n B >= sigma^2 hold pointwise.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .grid import (ConvexityError, GridSpec, PotentialField, derivative_tensors,
                   sampled_derivative, scatter)

SIGMA_SLACK_FACTOR = 10.0
DECAY_INFLATION = 1.05
MIN_DECAY_SAMPLES = 10
DECAY_ORDER = {"sigma": 3, "d3_sq": 3, "d4_sq": 4}


def _hessian_third(u, D2=None, D3=None):
    D2 = derivative_tensors(u, 2) if D2 is None else D2
    D3 = derivative_tensors(u, 3) if D3 is None else D3
    mask = D3.valid & D2.valid
    return D2.full()[mask], D3.full()[mask], mask


def _check_pd(w, mask, grid):
    bad = w[:, 0] <= 0
    if bad.any():
        flat = np.flatnonzero(mask)[np.argmax(bad)]
        node = tuple(int(i) for i in np.unravel_index(flat, grid.shape))
        raise ConvexityError(f"singular or indefinite Hessian at node {node}", node=node)


def sigma_field(u: PotentialField, D2=None, D3=None) -> np.ndarray:
    """sigma per node (nan outside the order-3 stencil-valid set)."""
    H, T, mask = _hessian_third(u, D2, D3)
    _check_pd(kernels.eigvalsh_sym(H), mask, u.grid)
    return scatter(kernels.sigma_contract(H, T), mask)


@dataclass
class CalabiSample:
    sigma: np.ndarray
    quantity_A: np.ndarray
    quantity_B: np.ndarray
    valid: np.ndarray

    def b_ge_a(self, rtol=1e-9):
        s, a, b = (x[self.valid] for x in (self.sigma, self.quantity_A, self.quantity_B))
        return b >= a - rtol * np.maximum(np.abs(b), np.abs(a))

    def nb_ge_sigma2(self, rtol=1e-9):
        n = self.sigma.ndim  # grid arrays carry one axis per dimension
        s, b = self.sigma[self.valid], self.quantity_B[self.valid]
        return n * b >= s * s - rtol * np.maximum(n * b, s * s)

    def all_ok(self, rtol=1e-9):
        return bool(self.b_ge_a(rtol).all() and self.nb_ge_sigma2(rtol).all())


def ab_quantities(u: PotentialField) -> CalabiSample:
    H, T, mask = _hessian_third(u)
    w, V = kernels.eigh_sym(H)
    _check_pd(w, mask, u.grid)
    s, a, b = kernels.calabi_ab(w, V, T)
    return CalabiSample(scatter(s, mask), scatter(a, mask), scatter(b, mask), mask)


def supersolution_bound(sigma0_sup, t, n):
    """sigma_0 / (1 + sigma_0 t / (2 n^2))."""
    if sigma0_sup < 0 or np.any(np.asarray(t) < 0):
        raise ValueError("need sigma0 >= 0 and t >= 0")
    return sigma0_sup / (1.0 + sigma0_sup * np.asarray(t, dtype=float) / (2.0 * n * n))


def sigma_sandwich(u: PotentialField):
    """Per valid node: (sigma, sum u_ijk^2, smallest and largest Hessian eigenvalue).

    Since sigma contracts each of three slots with the inverse Hessian,
    S / mu_max^3 <= sigma <= S / mu_min^3.
    """
    H, T, mask = _hessian_third(u)
    w = kernels.eigvalsh_sym(H)
    _check_pd(w, mask, u.grid)
    s = kernels.sigma_contract(H, T)
    S = np.einsum("mijk,mijk->m", T, T)
    return s, S, w[:, 0], w[:, -1]


# --------------------------------------------------------------------------
# evolution inequality for sigma


@dataclass
class SigmaEvolutionResidual:
    """Residual of d_t sigma - (1/n) u^{ij} sigma_ij + sigma^2/(2 n^2) for consecutive snapshot pairs."""

    residual: np.ndarray   # (pairs,) + grid shape, nan off the valid set
    slack: np.ndarray      # per pair
    dt: np.ndarray
    valid: np.ndarray

    @property
    def max_residual(self):
        return float(np.nanmax(self.residual))

    def fraction_within(self):
        ok = self.residual[:, self.valid] <= self.slack[:, None]
        return float(ok.mean())


def lemma22_residual(snapshots, slack_factor=SIGMA_SLACK_FACTOR) -> SigmaEvolutionResidual:
    snaps = list(snapshots)
    if len(snaps) < 2:
        raise ValueError("need at least two snapshots")
    grid = snaps[0].potential.grid
    n, h = grid.dim, grid.h
    sig = []
    for s in snaps:
        if s.potential.grid != grid:
            raise ValueError("snapshots must share a grid")
        sig.append(sigma_field(s.potential))
    # sigma_ij reaches one more node than sigma itself
    valid = grid.interior_mask(3) if not grid.is_torus else np.ones(grid.shape, bool)
    res, slack, dts = [], [], []
    for k in range(len(snaps) - 1):
        dt = snaps[k + 1].time - snaps[k].time
        if not 0 < dt <= h:
            raise ValueError(f"snapshot spacing dt={dt:.3e} must lie in (0, h={h:.3e}]")
        s0 = np.nan_to_num(sig[k])
        H = derivative_tensors(snaps[k].potential, 2).full()
        Hi = np.linalg.inv(H[valid])
        lap = np.zeros(int(valid.sum()))
        for i in range(n):
            for j in range(n):
                lap += Hi[:, i, j] * sampled_derivative(s0, grid, (i, j))[valid]
        st = (sig[k + 1][valid] - sig[k][valid]) / dt
        r = st - lap / n + s0[valid] ** 2 / (2 * n * n)
        res.append(scatter(r, valid))
        slack.append(slack_factor * (h * h + dt) * float(np.nanmax(sig[k])))
        dts.append(dt)
    return SigmaEvolutionResidual(np.array(res), np.array(slack), np.array(dts), valid)


# --------------------------------------------------------------------------
# decay fits


@dataclass
class DecayFit:
    window: tuple
    fitted_exponent: float
    fitted_constant: float
    bound_satisfied: bool
    order: int
    c_emp: float
    times: np.ndarray
    values: np.ndarray
    margins: np.ndarray   # bound - value per sample in the window

    def bound(self, t):
        return self.c_emp / np.asarray(t, dtype=float) ** (self.order - 2)


def decay_fit_series(times, values, order, eps0, inflation=DECAY_INFLATION) -> DecayFit:
    """Fit log q = a + p log t on t >= eps0 and test q(t) <= C_emp / t^(order-2)."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if eps0 <= 0:
        raise ValueError("eps0 must be positive")
    tol = 1e-9 * max(1.0, eps0)
    sel = times >= eps0 - tol
    t, q = times[sel], values[sel]
    if len(t) < MIN_DECAY_SAMPLES:
        raise ValueError(f"need >= {MIN_DECAY_SAMPLES} samples in [eps0, t_end], got {len(t)}")
    if abs(t[0] - eps0) > tol:
        raise ValueError(f"no sample at t = eps0 = {eps0}")
    c_emp = q[0] * eps0 ** (order - 2) * inflation
    bound = c_emp / t ** (order - 2)
    margins = bound - q
    if np.any(q <= 0):
        slope, const = math.nan, math.nan
    else:
        slope, icpt = np.polyfit(np.log(t), np.log(q), 1)
        const = math.exp(icpt)
    return DecayFit((float(t[0]), float(t[-1])), float(slope), float(const),
                    bool(np.all(margins >= 0)), order, float(c_emp), t, q, margins)


def decay_fit(trace, quantity: str, eps0: float) -> DecayFit:
    if quantity not in DECAY_ORDER:
        raise ValueError(f"quantity must be one of {sorted(DECAY_ORDER)}")
    col = {"sigma": "sup_sigma", "d3_sq": "sup_d3_sq", "d4_sq": "sup_d4_sq"}[quantity]
    return decay_fit_series(trace.column("t"), trace.column(col), DECAY_ORDER[quantity], eps0)


# --------------------------------------------------------------------------
# random convex cubic potentials


def random_convex_cubic(rng, n, points=9, half_width=1.0, scale=0.3, min_eig=0.1, max_tries=1000):
    """u = 1/2 <x, A x> + sum c_ijk x_i x_j x_k on a box, with D^2 u > min_eig * I on every node.

    Coefficients are drawn from ``rng``; draws violating the eigenvalue floor are rejected.
    """
    grid = GridSpec.box(n, points, -half_width, half_width)
    X = grid.mesh()
    keys = [k for k in _cubic_keys(n)]
    for _ in range(max_tries):
        A = rng.spd(n, 0.5, 3.0)
        coef = rng.uniform(-scale, scale, size=len(keys))
        phi = sum(c * X[i] * X[j] * X[k] for c, (i, j, k) in zip(coef, keys))
        u = PotentialField(grid, 0.0, A, phi)
        D2 = derivative_tensors(u, 2)
        H = D2.full()[D2.valid]
        if kernels.eigvalsh_sym(H)[:, 0].min() > min_eig:
            return u
    raise RuntimeError("could not draw a convex cubic potential")


def _cubic_keys(n):
    from itertools import combinations_with_replacement
    return combinations_with_replacement(range(n), 3)
