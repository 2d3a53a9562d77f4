"""Grids, quadratic-plus-perturbation potentials and finite-difference tensors.

A potential is stored as ``u(x) = c + 1/2 <x, A x> + phi(x)``: the quadratic
background is handled in closed form and only the sampled perturbation
``phi`` is differenced.  All stencils are second-order central differences.
"""

from dataclasses import dataclass, field
from itertools import combinations_with_replacement, permutations
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.interpolate import NdBSpline, make_interp_spline

from . import kernels

TOPOLOGIES = ("torus", "box")


class ConvexityError(ValueError):
    """Hessian is not positive definite at some node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class StencilError(ValueError):
    """Grid is too coarse for the requested stencil."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor-product grid on a torus or a closed box.

    Torus nodes are ``origin + i*L/N`` for ``i < N`` (periodic); box nodes
    include both end points, so ``h = L/(N-1)``.
    """

    dim: int
    topology: str
    origin: tuple
    extent: tuple
    points: tuple

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"topology must be one of {TOPOLOGIES}, got {self.topology!r}")
        for name in ("origin", "extent", "points"):
            val = getattr(self, name)
            if np.ndim(val) == 0:
                val = (val,) * self.dim
            val = tuple(int(v) if name == "points" else float(v) for v in val)
            if len(val) != self.dim:
                raise ValueError(f"{name} needs {self.dim} entries, got {len(val)}")
            object.__setattr__(self, name, val)
        if min(self.points) < 8:
            raise ValueError(f"need at least 8 points per axis, got {self.points}")
        if min(self.extent) <= 0:
            raise ValueError("extent must be positive")

    @classmethod
    def torus(cls, dim, points, length=2 * np.pi, origin=0.0):
        return cls(dim, "torus", origin, length, points)

    @classmethod
    def box(cls, dim, points, lo=-1.0, hi=1.0):
        lo_ = np.broadcast_to(np.asarray(lo, dtype=float), (dim,))
        hi_ = np.broadcast_to(np.asarray(hi, dtype=float), (dim,))
        return cls(dim, "box", tuple(lo_), tuple(hi_ - lo_), points)

    @property
    def is_torus(self):
        return self.topology == "torus"

    @property
    def spacing(self):
        if self.is_torus:
            return tuple(L / N for L, N in zip(self.extent, self.points))
        return tuple(L / (N - 1) for L, N in zip(self.extent, self.points))

    @property
    def h(self):
        """Smallest spacing."""
        return min(self.spacing)

    @property
    def shape(self):
        return self.points

    @property
    def size(self):
        return int(np.prod(self.points))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def axes(self):
        return [o + h * np.arange(N) for o, h, N in zip(self.origin, self.spacing, self.points)]

    def mesh(self):
        """Coordinate arrays, ``indexing='ij'``."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def coords(self):
        """Node coordinates with shape ``shape + (dim,)``."""
        return np.stack(self.mesh(), axis=-1)

    def interior_mask(self, margin):
        """Nodes at least ``margin`` index steps from a box face (all nodes on a torus)."""
        mask = np.ones(self.shape, dtype=bool)
        if self.is_torus or margin == 0:
            return mask
        for ax, N in enumerate(self.points):
            sl = [slice(None)] * self.dim
            sl[ax] = np.r_[0:margin, N - margin:N]
            mask[tuple(sl)] = False
        return mask

    def boundary_mask(self):
        return ~self.interior_mask(1)


@dataclass(frozen=True)
class ConditionABounds:
    lambda_lo: float
    lambda_hi: float

    def __post_init__(self):
        if not 0 < self.lambda_lo <= self.lambda_hi:
            raise ValueError(f"need 0 < lambda <= Lambda, got ({self.lambda_lo}, {self.lambda_hi})")

    def inflated(self, frac):
        return ConditionABounds(self.lambda_lo * (1 - frac), self.lambda_hi * (1 + frac))


@dataclass(frozen=True, eq=False)
class PotentialField:
    """``u = c + 1/2 <x, A x> + phi`` sampled on ``grid``."""

    grid: GridSpec
    c: float
    A: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        n = self.grid.dim
        A = np.array(self.A, dtype=float).reshape(n, n)
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValueError("background matrix must be symmetric")
        A = 0.5 * (A + A.T)
        phi = np.array(self.phi, dtype=float)
        if phi.shape != self.grid.shape:
            phi = np.broadcast_to(phi, self.grid.shape).copy()
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "c", float(self.c))

    @classmethod
    def quadratic(cls, grid, A, c=0.0):
        return cls(grid, c, A, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid, fn: Callable, A=None, c=0.0):
        """Sample ``phi = fn(x_1, ..., x_n)`` on the grid."""
        if A is None:
            A = np.zeros((grid.dim, grid.dim))
        return cls(grid, c, A, fn(*grid.mesh()))

    @property
    def dim(self):
        return self.grid.dim

    def with_phi(self, phi):
        return PotentialField(self.grid, self.c, self.A, phi)

    def with_background(self, c=None, A=None):
        return PotentialField(self.grid, self.c if c is None else c,
                              self.A if A is None else A, self.phi)

    def background(self):
        x = self.grid.coords()
        return self.c + 0.5 * np.einsum("...i,ij,...j->...", x, self.A, x)

    def values(self):
        return self.background() + self.phi

    def phi_is_constant(self):
        return bool(np.all(self.phi == self.phi.flat[0]))


def canonical_indices(n, order):
    return list(combinations_with_replacement(range(n), order))


def _d1(f, ax, h):
    return (np.roll(f, -1, axis=ax) - np.roll(f, 1, axis=ax)) / (2 * h)


def _d2(f, ax, h):
    return (np.roll(f, -1, axis=ax) - 2 * f + np.roll(f, 1, axis=ax)) / (h * h)


def _axis_derivative(f, ax, count, h):
    if count == 0:
        return f
    if count == 1:
        return _d1(f, ax, h)
    if count == 2:
        return _d2(f, ax, h)
    if count == 3:
        return _d1(_d2(f, ax, h), ax, h)
    if count == 4:
        return _d2(_d2(f, ax, h), ax, h)
    raise ValueError(count)


def stencil_reach(order):
    return 1 if order <= 2 else 2


def sampled_derivative(f, grid, index):
    """Central-difference derivative of samples ``f`` for a multi-index like ``(0, 0, 1)``."""
    counts = np.bincount(np.asarray(index, dtype=int), minlength=grid.dim)
    out = f
    for ax, cnt in enumerate(counts):
        out = _axis_derivative(out, ax, int(cnt), grid.spacing[ax])
    return out


@dataclass(eq=False)
class DerivativeTensorField:
    """Symmetric k-th derivative tensor; only canonical index multisets are stored."""

    grid: GridSpec
    order: int
    canon: dict
    valid: np.ndarray
    _full: Optional[np.ndarray] = field(default=None, repr=False)

    def component(self, *index):
        if len(index) == 1 and isinstance(index[0], tuple):
            index = index[0]
        return self.canon[tuple(sorted(index))]

    def full(self):
        """Dense array ``grid.shape + (n,)*order``; symmetric by construction."""
        if self._full is None:
            n = self.grid.dim
            out = np.empty(self.grid.shape + (n,) * self.order)
            for key, comp in self.canon.items():
                for perm in set(permutations(key)):
                    out[(Ellipsis,) + perm] = comp
            self._full = out
        return self._full

    def at_valid(self):
        return self.full()[self.valid]

    def sq_norm(self):
        """Sum over all ordered index tuples of the squared components."""
        total = np.zeros(self.grid.shape)
        for key, comp in self.canon.items():
            total += len(set(permutations(key))) * comp * comp
        return total


def derivative_tensors(u: PotentialField, order: int) -> DerivativeTensorField:
    """Finite-difference derivative tensor of ``u`` of the given order (1..4)."""
    if order not in (1, 2, 3, 4):
        raise ValueError(f"order must be in 1..4, got {order}")
    grid = u.grid
    reach = stencil_reach(order)
    if not grid.is_torus and min(grid.points) < 2 * reach + 3:
        raise StencilError(f"box grid {grid.points} too coarse for order-{order} stencils")
    n = grid.dim
    canon = {}
    x = grid.mesh() if order == 1 else None
    for key in canonical_indices(n, order):
        comp = sampled_derivative(u.phi, grid, key)
        if order == 1:
            i = key[0]
            comp = comp + sum(u.A[i, j] * x[j] for j in range(n))
        elif order == 2:
            comp = comp + u.A[key[0], key[1]]
        canon[key] = comp
    return DerivativeTensorField(grid, order, canon, grid.interior_mask(reach))


def gradient(u):
    """Gradient samples ``shape + (n,)``."""
    return derivative_tensors(u, 1).full()


def hessian(u):
    return derivative_tensors(u, 2).full()


def _valid_hessian(u):
    D2 = derivative_tensors(u, 2)
    H = D2.full()
    if not np.array_equal(H, np.swapaxes(H, -1, -2)):
        raise RuntimeError("non-symmetric Hessian sample")
    return H[D2.valid], D2.valid


def scatter(values, mask, fill=np.nan):
    """Place per-valid-node values back onto the full grid."""
    out = np.full(mask.shape + np.shape(values)[1:], fill, dtype=float)
    out[mask] = values
    return out


class EigenRange(NamedTuple):
    lo: float
    hi: float
    mu: np.ndarray      # smallest Hessian eigenvalue per node (nan off the valid set)
    mu_max: np.ndarray  # largest Hessian eigenvalue per node


def hessian_eigen_range(u: PotentialField) -> EigenRange:
    H, mask = _valid_hessian(u)
    w = kernels.eigvalsh_sym(H)
    return EigenRange(float(w[:, 0].min()), float(w[:, -1].max()),
                      scatter(w[:, 0], mask), scatter(w[:, -1], mask))


@dataclass
class ConditionAReport:
    ok: bool
    mu_min: float
    mu_max: float
    lower_slack: float  # mu_min - lambda
    upper_slack: float  # Lambda - mu_max
    worst_node: tuple

    def __bool__(self):
        return self.ok

    @property
    def margin(self):
        return min(self.lower_slack, self.upper_slack)


def condition_A_check(u: PotentialField, bounds: ConditionABounds) -> ConditionAReport:
    er = hessian_eigen_range(u)
    lower = er.lo - bounds.lambda_lo
    upper = bounds.lambda_hi - er.hi
    if lower <= upper:
        worst = np.unravel_index(np.nanargmin(er.mu), u.grid.shape)
    else:
        worst = np.unravel_index(np.nanargmax(er.mu_max), u.grid.shape)
    return ConditionAReport(lower >= 0 and upper >= 0, er.lo, er.hi, lower, upper,
                            tuple(int(i) for i in worst))


def cubic_spline(grid: GridSpec, values):
    """Tensor-product not-a-knot cubic interpolant of node values (exact at the nodes)."""
    c = np.asarray(values, dtype=float)
    knots = []
    for ax, x in enumerate(grid.axes()):
        b = make_interp_spline(x, c, k=3, axis=ax)
        c = np.moveaxis(b.c, 0, ax)
        knots.append(b.t)
    return NdBSpline(tuple(knots), c, 3)
