"""Elliptic self-shrinker equations, their exact quadratic solutions and Dirichlet Newton solvers.

Monge-Ampere type:       det D^2 u = exp(n G),        G = -u + 1/2 <x, Du>
special Lagrangian type: sum arctan lambda_i = G

For u = c + 1/2 <x, A x> + phi the quadratic part of G cancels exactly, so
G = -c - phi + 1/2 <x, D phi> is evaluated from the perturbation alone.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import kernels
from .grid import (ConvexityError, GridSpec, PotentialField, derivative_tensors,
                   sampled_derivative, scatter)
from .metric import phase_from_eigs

NEWTON_TOL = 1e-9
MAX_NEWTON = 50
MIN_DAMPING = 1.0 / 64
ACCEPT_DECREASE = 0.9


class NewtonError(RuntimeError):
    pass


def _eig_sym_matrix(A):
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if not np.allclose(A, A.T, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise ValueError("matrix must be symmetric")
    return A, kernels.eigvalsh_sym(A[None])[0]


def _default_grid(n):
    return GridSpec.box(n, 17)


def quadratic_shrinker_ma(A, grid: GridSpec = None) -> PotentialField:
    """u = c + 1/2 <x, A x> with det A = exp(-n c)."""
    A, w = _eig_sym_matrix(A)
    if w[0] <= 0:
        raise ValueError("A must be positive definite")
    n = A.shape[0]
    c = -np.log(w).sum() / n
    return PotentialField.quadratic(grid or _default_grid(n), A, c)


def quadratic_shrinker_sl(A, grid: GridSpec = None) -> PotentialField:
    """u = c + 1/2 <x, A x> with c = -sum arctan a_i."""
    A, w = _eig_sym_matrix(A)
    n = A.shape[0]
    return PotentialField.quadratic(grid or _default_grid(n), A, -np.arctan(w).sum())


# --------------------------------------------------------------------------
# residuals


@dataclass
class ShrinkerResidualField:
    residual: np.ndarray   # nan outside interior nodes
    norm_sup: float
    norm_l2: float

    @classmethod
    def from_values(cls, r, mask, grid):
        return cls(scatter(r, mask), float(np.abs(r).max()),
                   float(math.sqrt(grid.cell_volume * float((r * r).sum()))))


def _G(u, mask, D1=None):
    D1 = derivative_tensors(u.with_background(A=np.zeros_like(u.A)), 1) if D1 is None else D1
    x = u.grid.coords()[mask]
    return -u.c - u.phi[mask] + 0.5 * np.einsum("mi,mi->m", x, D1.full()[mask])


def _interior_hessian(u):
    D2 = derivative_tensors(u, 2)
    return D2.full()[D2.valid], D2.valid


def residual_ma(u: PotentialField) -> ShrinkerResidualField:
    """det D^2 u - exp(n G) on interior nodes."""
    H, mask = _interior_hessian(u)
    w = kernels.eigvalsh_sym(H)
    bad = w[:, 0] <= 0
    if bad.any():
        node = np.unravel_index(np.flatnonzero(mask)[np.argmax(bad)], u.grid.shape)
        raise ConvexityError(f"Hessian not positive definite at node {tuple(map(int, node))}",
                             node=tuple(map(int, node)))
    r = np.prod(w, axis=1) - np.exp(u.dim * _G(u, mask))
    return ShrinkerResidualField.from_values(r, mask, u.grid)


def residual_sl(u: PotentialField) -> ShrinkerResidualField:
    """sum arctan lambda_i(D^2 u) - G on interior nodes."""
    H, mask = _interior_hessian(u)
    r = phase_from_eigs(kernels.eigvalsh_sym(H)) - _G(u, mask)
    return ShrinkerResidualField.from_values(r, mask, u.grid)


def _ln_residual_ma(u, mask):
    H = derivative_tensors(u, 2).full()[mask]
    w = kernels.eigvalsh_sym(H)
    if w[:, 0].min() <= 0:
        return None, H
    return np.log(w).sum(axis=1) - u.dim * _G(u, mask), H


def _residual_sl_raw(u, mask):
    H = derivative_tensors(u, 2).full()[mask]
    return phase_from_eigs(kernels.eigvalsh_sym(H)) - _G(u, mask), H


# --------------------------------------------------------------------------
# Newton


@dataclass
class NewtonReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    damping_used: list = field(default_factory=list)
    converged: bool = False

    def quadratic_constant(self, below=0.1):
        """max r_{k+1} / r_k^2 over steps with r_k < ``below`` (nan if none)."""
        r = self.residual_history
        ks = [r[k + 1] / r[k] ** 2 for k in range(len(r) - 1) if 0 < r[k] < below]
        return max(ks) if ks else math.nan


@lru_cache(maxsize=8)
def _operators(grid: GridSpec):
    """Sparse first/second difference matrices on the full box grid (rows = nodes)."""
    n = grid.dim
    eye = [sp.identity(N, format="csr") for N in grid.points]

    def d1(N, h):
        return sp.diags([-np.ones(N - 1), np.ones(N - 1)], [-1, 1], format="csr") / (2 * h)

    def d2(N, h):
        return sp.diags([np.ones(N - 1), -2 * np.ones(N), np.ones(N - 1)], [-1, 0, 1],
                        format="csr") / (h * h)

    def lift(mats):
        out = mats[0]
        for m in mats[1:]:
            out = sp.kron(out, m, format="csr")
        return out

    D1 = []
    D2 = {}
    for a in range(n):
        mats = list(eye)
        mats[a] = d1(grid.points[a], grid.spacing[a])
        D1.append(lift(mats))
    for a in range(n):
        mats = list(eye)
        mats[a] = d2(grid.points[a], grid.spacing[a])
        D2[a, a] = lift(mats)
        for b in range(a + 1, n):
            D2[a, b] = (D1[a] @ D1[b]).tocsr()
    return D1, D2


def _jacobian(grid, mask, coef2, coef0, drift):
    """Sum_ij coef2[:, i, j] D_ij + coef0 I + drift * sum_i x_i D_i on interior unknowns."""
    D1, D2 = _operators(grid)
    n = grid.dim
    idx = np.flatnonzero(mask)
    x = grid.coords()[mask]
    J = sp.diags(np.full(idx.size, coef0))
    for (a, b), Dab in D2.items():
        w = coef2[:, a, b] if a == b else coef2[:, a, b] + coef2[:, b, a]
        J = J + sp.diags(w) @ Dab[idx][:, idx]
    for a in range(n):
        J = J + sp.diags(drift * x[:, a]) @ D1[a][idx][:, idx]
    return J.tocsc()


def _prepare(grid, boundary, initial_guess):
    if grid.is_torus:
        raise ValueError("Dirichlet solves need a box grid")
    if boundary.grid != grid or initial_guess.grid != grid:
        raise ValueError("boundary and guess must live on the solve grid")
    mask = grid.interior_mask(1)
    bg = boundary.background()
    phi = np.where(mask, initial_guess.values() - bg, boundary.phi)
    return PotentialField(grid, boundary.c, boundary.A, phi), mask


def _newton(u, mask, residual, coefficients, convex, tol, max_iter):
    report = NewtonReport()
    F, H = residual(u, mask)
    if F is None:
        raise ConvexityError("initial guess is not strictly convex")
    r = float(np.abs(F).max())
    report.residual_history.append(r)
    n = u.dim
    while r > tol:
        if report.iterations >= max_iter:
            raise NewtonError(f"no convergence after {max_iter} iterations (residual {r:.3e})")
        c2, c0, drift = coefficients(H, n)
        try:
            delta = splu(_jacobian(u.grid, mask, c2, c0, drift)).solve(-F)
        except RuntimeError as exc:
            raise NewtonError(f"linear solve failed: {exc}") from exc
        if not np.all(np.isfinite(delta)):
            raise NewtonError("linear solve produced non-finite update")
        alpha = 1.0
        while True:
            phi = u.phi.copy()
            phi[mask] += alpha * delta
            trial = u.with_phi(phi)
            Ft, Ht = residual(trial, mask)
            if Ft is not None:
                rt = float(np.abs(Ft).max())
                if rt <= ACCEPT_DECREASE * r or rt <= tol:
                    break
            alpha *= 0.5
            if alpha < MIN_DAMPING:
                if Ft is None and convex:
                    raise ConvexityError("convexity lost in every damped trial step")
                raise NewtonError(f"damping below {MIN_DAMPING} without sufficient decrease")
        u, F, H, r = trial, Ft, Ht, rt
        report.iterations += 1
        report.damping_used.append(alpha)
        report.residual_history.append(r)
    report.converged = True
    return u, report


def _ma_coefficients(H, n):
    return np.linalg.inv(H), float(n), -0.5 * n


def _sl_coefficients(H, n):
    return np.linalg.inv(np.eye(n) + H @ H), 1.0, -0.5


def newton_solve_ma(grid: GridSpec, boundary: PotentialField, initial_guess: PotentialField,
                    tol=NEWTON_TOL, max_iter=MAX_NEWTON):
    """Damped Newton on ln det D^2 u - n G = 0 with Dirichlet data from ``boundary``."""
    u, mask = _prepare(grid, boundary, initial_guess)
    return _newton(u, mask, _ln_residual_ma, _ma_coefficients, True, tol, max_iter)


def newton_solve_sl(grid: GridSpec, boundary: PotentialField, initial_guess: PotentialField,
                    tol=NEWTON_TOL, max_iter=MAX_NEWTON):
    """Damped Newton on sum arctan lambda_i - G = 0 with Dirichlet data from ``boundary``."""
    u, mask = _prepare(grid, boundary, initial_guess)
    return _newton(u, mask, _residual_sl_raw, _sl_coefficients, False, tol, max_iter)


# --------------------------------------------------------------------------
# growth condition on the smallest eigenvalue


@dataclass
class RadialProfile:
    edges: np.ndarray
    inf_values: np.ndarray   # per bin inf of |x|^2 mu(x); nan for empty bins
    threshold: float

    @property
    def radii(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def holds(self):
        return self.inf_values > self.threshold


def condition_110_profile(u: PotentialField, bins=16) -> RadialProfile:
    H, mask = _interior_hessian(u)
    mu = kernels.eigvalsh_sym(H)[:, 0]
    x = u.grid.coords()[mask]
    r2 = np.einsum("mi,mi->m", x, x)
    r = np.sqrt(r2)
    edges = np.linspace(0.0, r.max() * (1 + 1e-12), bins + 1) if np.ndim(bins) == 0 else np.asarray(bins)
    which = np.clip(np.searchsorted(edges, r, side="right") - 1, 0, len(edges) - 2)
    out = np.full(len(edges) - 1, np.nan)
    vals = r2 * mu
    for b in range(len(out)):
        sel = which == b
        if sel.any():
            out[b] = vals[sel].min()
    return RadialProfile(edges, out, 2.0 * (u.dim - 1) / u.dim)


# --------------------------------------------------------------------------
# presets on [-1, 1]^n


def bump(amplitude=0.1):
    """amplitude * prod cos^2(pi x_i / 2); vanishes on the faces of [-1, 1]^n."""
    def f(*x):
        return amplitude * np.prod([np.cos(0.5 * np.pi * xi) ** 2 for xi in x], axis=0)
    return f


def wiggle(amplitude):
    """amplitude * sin(pi/2 * sum (i+1) x_i)."""
    def f(*x):
        return amplitude * np.sin(0.5 * np.pi * sum((i + 1) * xi for i, xi in enumerate(x)))
    return f


def radial_sqrt(*x):
    """sqrt(1 + |x|^2): smallest Hessian eigenvalue (1 + r^2)^(-3/2) decays like r^-3."""
    return np.sqrt(1.0 + sum(xi * xi for xi in x))
