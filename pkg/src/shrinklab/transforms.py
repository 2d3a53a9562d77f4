"""Legendre transform and Lewy rotation of sampled potentials."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree

from . import kernels
from .grid import GridSpec, PotentialField, cubic_spline, derivative_tensors, scatter
from .shrinker import quadratic_shrinker_sl, residual_ma, residual_sl

SQRT2 = math.sqrt(2.0)


# --------------------------------------------------------------------------
# Legendre transform


@dataclass
class LegendrePair:
    primal: PotentialField
    dual: PotentialField
    closed_form: bool
    convex: bool


def _node_derivatives(u):
    """Gradient and Hessian at every node; box faces borrow from the nearest interior node."""
    g = derivative_tensors(u, 1).full()
    H = derivative_tensors(u, 2).full()
    if u.grid.is_torus:
        return g.reshape(-1, u.dim), H.reshape(-1, u.dim, u.dim)
    idx = np.indices(u.grid.shape)
    near = tuple(np.clip(i, 1, N - 2) for i, N in zip(idx, u.grid.points))
    Hn = H[near]
    x = u.grid.coords()
    dx = x - x[near]
    gn = g[near] + np.einsum("...ij,...j->...i", Hn, dx)
    return gn.reshape(-1, u.dim), Hn.reshape(-1, u.dim, u.dim)


def conjugate_at(u: PotentialField, Y, return_points=False):
    """sup over the sampled box of <x, y> - u(x), for each row of ``Y``.

    The node maximum is refined by one Newton step of the local quadratic
    model at the best node (clipped to one cell and to the box); u is then
    evaluated at the refined point through a cubic spline of the samples.
    Position errors enter the value only quadratically, so the result is far
    smoother in y than the piecewise-linear plain node maximum.
    """
    grid = u.grid
    X = grid.coords().reshape(-1, grid.dim)
    U = u.values().ravel()
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    vals, idx = kernels.conjugate_argmax(X, U, Y)
    g, H = _node_derivatives(u)
    gi, Hi, xi = g[idx], H[idx], X[idx]
    h = np.asarray(grid.spacing)
    lo = np.asarray(grid.origin)
    hi = lo + np.asarray(grid.extent) - (0 if not grid.is_torus else h)
    with np.errstate(all="ignore"):
        step = np.linalg.solve(Hi, (Y - gi)[..., None])[..., 0]
    step = np.where(np.isfinite(step), step, 0.0)
    step = np.clip(step, -h, h)
    xh = np.clip(xi + step, lo, hi)
    spline = cubic_spline(grid, u.values())
    refined = np.einsum("mi,mi->m", xh, Y) - spline(xh)
    better = refined > vals
    out = np.where(better, refined, vals)
    if return_points:
        return out, xh
    return out


def _is_convex(u):
    D2 = derivative_tensors(u, 2)
    return bool(kernels.eigvalsh_sym(D2.full()[D2.valid])[:, 0].min() > 0)


def legendre(u: PotentialField, points=None) -> LegendrePair:
    """Discrete convex conjugate on the bounding box of the sampled gradient image."""
    grid = u.grid
    if grid.is_torus:
        raise ValueError("the Legendre transform is taken on box grids")
    n = grid.dim
    points = grid.points if points is None else points
    wA = kernels.eigvalsh_sym(u.A[None])[0]
    if u.phi_is_constant() and wA[0] > 0:
        Ainv = np.linalg.inv(u.A)
        corners = np.array(np.meshgrid(*[[o, o + L] for o, L in zip(grid.origin, grid.extent)],
                                       indexing="ij")).reshape(n, -1).T
        img = corners @ u.A
        dgrid = GridSpec(n, "box", tuple(img.min(0)), tuple(img.max(0) - img.min(0)), points)
        dual = PotentialField.quadratic(dgrid, Ainv, -(u.c + u.phi.flat[0]))
        return LegendrePair(u, dual, True, True)
    D1 = derivative_tensors(u, 1)
    G = D1.full()[D1.valid]
    lo, hi = G.min(0), G.max(0)
    dgrid = GridSpec(n, "box", tuple(lo), tuple(hi - lo), points)
    vals = conjugate_at(u, dgrid.coords().reshape(-1, n)).reshape(dgrid.shape)
    if wA[0] > 0:
        dual = PotentialField(dgrid, -u.c, np.linalg.inv(u.A), 0.0)
        dual = dual.with_phi(vals - dual.background())
    else:
        dual = PotentialField(dgrid, 0.0, np.zeros((n, n)), vals)
    return LegendrePair(u, dual, False, _is_convex(u))


def _interior_nodes(grid, frac):
    m = max(2, int(round(frac * min(grid.points))))
    return grid.interior_mask(m)


@dataclass
class DualityCheck:
    error: float
    points: int


def hessian_duality_check(pair: LegendrePair, margin=0.125) -> DualityCheck:
    """sup |D^2 u*(y) - (D^2 u(x))^{-1}| over matched pairs y = Du(x).

    Pairs are taken at interior dual nodes y_j, matched with the maximiser x_j
    of <x, y_j> - u(x); only pairs whose x_j lies a ``margin`` fraction inside
    the primal box are used.  The (smooth) primal Hessian is interpolated
    linearly at x_j, the dual Hessian is read off its own stencil.
    """
    u, d = pair.primal, pair.dual
    n = u.dim
    D2d = derivative_tensors(d, 2)
    Y = d.grid.coords()[D2d.valid]
    Hd = D2d.full()[D2d.valid]
    if pair.closed_form:
        X = Y @ np.linalg.inv(u.A)
    else:
        _, X = conjugate_at(u, Y, return_points=True)
    inner = _interior_nodes(u.grid, margin)
    ax = u.grid.axes()
    lo = np.array([a[np.argmax(inner.any(axis=tuple(j for j in range(n) if j != i)))]
                   for i, a in enumerate(ax)])
    hi = np.array([a[len(a) - 1 - np.argmax(inner.any(axis=tuple(j for j in range(n) if j != i))[::-1])]
                   for i, a in enumerate(ax)])
    sel = np.all((X >= lo - 1e-12) & (X <= hi + 1e-12), axis=1)
    if not sel.any():
        raise ValueError("no matched pair inside the primal interior")
    X, Hd = X[sel], Hd[sel]
    D2u = derivative_tensors(u, 2)
    inner_sl = tuple(slice(1, -1) for _ in range(n))
    axes_in = [a[1:-1] for a in ax]
    Hu = np.empty_like(Hd)
    for i in range(n):
        for j in range(n):
            f = RegularGridInterpolator(axes_in, D2u.full()[inner_sl + (i, j)], method="linear")
            Hu[:, i, j] = f(X)
    return DualityCheck(float(np.abs(Hd - np.linalg.inv(Hu)).max()), int(sel.sum()))


def involution_error(pair: LegendrePair, margin=0.125) -> float:
    """sup |u**(x) - u(x)| over primal nodes a ``margin`` fraction inside the box."""
    u = pair.primal
    mask = _interior_nodes(u.grid, margin)
    X = u.grid.coords()[mask]
    back = conjugate_at(pair.dual, X)
    return float(np.abs(back - u.values()[mask]).max())


def young_gap(pair: LegendrePair):
    """min over all sampled pairs of u(x) + u*(y) - <x, y> (should be >= 0)."""
    X = pair.primal.grid.coords().reshape(-1, pair.primal.dim)
    U = pair.primal.values().ravel()
    Yd = pair.dual.grid.coords().reshape(-1, pair.primal.dim)
    Ud = pair.dual.values().ravel()
    vals, _ = kernels.conjugate_argmax(X, U, Yd)
    return float((Ud - vals).min())


def ma_duality_residual(pair: LegendrePair):
    """Monge-Ampere shrinker residual of the dual potential on its own grid."""
    return residual_ma(pair.dual)


# --------------------------------------------------------------------------
# Lewy rotation


def lewy_hessian_map(H):
    """(I + H)^{-1} (H - I), symmetrised; eigenvalues map as l -> (l - 1)/(l + 1)."""
    H = np.asarray(H, dtype=float)
    single = H.ndim == 2
    Hb = H[None] if single else H.reshape(-1, *H.shape[-2:])
    n = Hb.shape[-1]
    w = kernels.eigvalsh_sym(0.5 * (Hb + np.swapaxes(Hb, -1, -2)))
    if np.any(w[:, 0] <= -1.0):
        raise ValueError("Hessian eigenvalue <= -1: I + H is singular or the map leaves its branch")
    I = np.eye(n)
    M = np.linalg.solve(I + Hb, Hb - I)
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    return M[0] if single else M.reshape(H.shape)


@dataclass
class LewyImage:
    mapped_points: np.ndarray     # (m, n) x-bar per valid node
    mapped_gradient: np.ndarray   # (m, n) D u-bar
    mapped_hessian: np.ndarray    # (m, n, n)
    valid: np.ndarray
    injective: bool

    def inverse_points(self):
        """x = (x-bar - D u-bar)/sqrt 2."""
        return (self.mapped_points - self.mapped_gradient) / SQRT2

    def eigen_range(self):
        w = kernels.eigvalsh_sym(self.mapped_hessian)
        return float(w[:, 0].min()), float(w[:, -1].max())


def lewy_rotate(u: PotentialField, convex=True) -> LewyImage:
    D2 = derivative_tensors(u, 2)
    mask = D2.valid
    x = u.grid.coords()[mask]
    g = derivative_tensors(u, 1).full()[mask]
    H = D2.full()[mask]
    if convex and kernels.eigvalsh_sym(H)[:, 0].min() < 0:
        raise ValueError("source Hessian is not positive semidefinite")
    xb = (x + g) / SQRT2
    gb = (g - x) / SQRT2
    injective = not cKDTree(xb).query_pairs(0.5 * u.grid.h)
    return LewyImage(xb, gb, lewy_hessian_map(H), mask, injective)


def angle_shift_check(eigs) -> float:
    """max |sum arctan l - sum arctan l-bar - n pi/4| with l-bar = (l - 1)/(l + 1)."""
    lam = np.atleast_2d(np.asarray(eigs, dtype=float))
    if np.any(lam <= -1.0):
        raise ValueError("angle-shift identity needs all eigenvalues > -1")
    n = lam.shape[-1]
    lb = (lam - 1.0) / (lam + 1.0)
    err = np.arctan(lam).sum(-1) - np.arctan(lb).sum(-1) - n * math.pi / 4
    return float(np.abs(err).max())


@dataclass
class PreservationResult:
    rotated: PotentialField
    residual_sup: float
    angle_branch: bool   # False when some source eigenvalue is 0 (maps to -1)


def rotate_quadratic(A):
    """Background of the rotated quadratic: (A - I)(I + A)^{-1}."""
    return lewy_hessian_map(np.asarray(A, dtype=float))


def shrinker_preservation_check(u: PotentialField) -> PreservationResult:
    if not u.phi_is_constant():
        raise ValueError("preservation check is defined for quadratic potentials")
    w = kernels.eigvalsh_sym(u.A[None])[0]
    if w[0] < 0:
        raise ValueError("source matrix must be positive semidefinite")
    Abar = rotate_quadratic(u.A)
    ubar = quadratic_shrinker_sl(Abar, u.grid)
    return PreservationResult(ubar, residual_sl(ubar).norm_sup, bool(w[0] > 0))
