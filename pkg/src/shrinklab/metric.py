"""Induced metric g = I + (D^2 u)^2 of the gradient graph, ln det g and the Lagrangian phase."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .grid import PotentialField, StencilError, derivative_tensors, sampled_derivative, scatter


def phase_from_eigs(w):
    """Lagrangian phase sum_i arctan(lambda_i); shared with the special Lagrangian residual."""
    return np.arctan(w).sum(axis=-1)


@dataclass
class InducedMetricField:
    g: np.ndarray         # grid shape + (n, n), nan off the valid set
    ln_det_g: np.ndarray
    phase: np.ndarray
    valid: np.ndarray


def induced_metric(u: PotentialField) -> InducedMetricField:
    D2 = derivative_tensors(u, 2)
    H = D2.full()[D2.valid]
    w = kernels.eigvalsh_sym(H)
    g = np.eye(u.dim) + H @ H
    return InducedMetricField(scatter(g, D2.valid), scatter(np.log1p(w * w).sum(axis=1), D2.valid),
                              scatter(phase_from_eigs(w), D2.valid), D2.valid)


def _metric_derivatives(u, mask):
    """g, g^{-1}, d_i g and d_ij g on ``mask`` from the derivative tensors of u."""
    H = derivative_tensors(u, 2).full()[mask]
    T = derivative_tensors(u, 3).full()[mask]
    Q = derivative_tensors(u, 4).full()[mask]
    n = u.dim
    g = np.eye(n) + H @ H
    gi = np.linalg.inv(g)
    Ti = np.moveaxis(T, -1, 1)                      # (m, i, a, b) = u_abi
    dg = Ti @ H[:, None] + H[:, None] @ Ti          # d_i g
    Qij = np.moveaxis(Q, (-2, -1), (1, 2))          # (m, i, j, a, b) = u_abij
    d2g = (Qij @ H[:, None, None] + H[:, None, None] @ Qij
           + Ti[:, :, None] @ Ti[:, None, :] + Ti[:, None, :] @ Ti[:, :, None])
    return g, gi, dg, d2g


@dataclass
class IdentityCheck:
    lhs: np.ndarray
    rhs: np.ndarray
    valid: np.ndarray

    @property
    def error(self):
        return float(np.nanmax(np.abs(self.lhs - self.rhs)))


def ln_det_g_gradient_identity(u: PotentialField) -> IdentityCheck:
    """Compare g^{ij}(ln det g)_ij (stencils on the ln det g field) with
    g^{ij}(g^{ab})_i (g_ab)_j + g^{ij} g^{ab} (g_ab)_ij (from D^2..D^4 u).

    The equality is algebraic, so it holds for any u; the mismatch is pure
    discretisation error, O(h^2).
    """
    grid = u.grid
    if not grid.is_torus and min(grid.points) < 7:
        raise StencilError("box grid too coarse for the ln det g stencil chain")
    mask = grid.interior_mask(2)
    ldg = np.nan_to_num(induced_metric(u).ln_det_g)
    g, gi, dg, d2g = _metric_derivatives(u, mask)
    n = u.dim
    lhs = np.zeros(int(mask.sum()))
    for i in range(n):
        for j in range(n):
            lhs += gi[:, i, j] * sampled_derivative(ldg, grid, (i, j))[mask]
    # (g^{ab})_i = -(g^{-1} d_i g g^{-1})_ab
    dgi = -gi[:, None] @ dg @ gi[:, None]
    t1 = np.einsum("mij,miab,mjab->m", gi, dgi, dg)
    t2 = np.einsum("mij,mab,mijab->m", gi, gi, d2g)
    return IdentityCheck(scatter(lhs, mask), scatter(t1 + t2, mask), mask)


def jacobi_formula_check(u: PotentialField, axis: int = 0) -> IdentityCheck:
    """d_axis ln det g (central difference) against tr(g^{-1} d_axis g)."""
    grid = u.grid
    mask = grid.interior_mask(2)
    ldg = np.nan_to_num(induced_metric(u).ln_det_g)
    _, gi, dg, _ = _metric_derivatives(u, mask)
    lhs = sampled_derivative(ldg, grid, (axis,))[mask]
    rhs = np.einsum("mab,mba->m", gi, dg[:, axis])
    return IdentityCheck(scatter(lhs, mask), scatter(rhs, mask), mask)
