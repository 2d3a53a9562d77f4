"""Explicit time stepping of the logarithmic Monge-Ampere flow u_t = (1/n) ln det D^2 u.

Runs live on the torus: the quadratic background (c, A) never changes, only
the periodic perturbation evolves.  Also home to the parabolic rescaling and
the self-similar extension of an elliptic shrinker into a flow.
"""

import math
from dataclasses import dataclass, field, fields
from typing import List, Optional

import numpy as np

from . import kernels
from .grid import (ConditionABounds, ConvexityError, GridSpec, PotentialField,
                   cubic_spline, derivative_tensors, hessian_eigen_range, scatter)

DT_FLOOR = 1e-12


class FlowError(RuntimeError):
    pass


class DomainExceededError(ValueError):
    pass


@dataclass(frozen=True)
class FlowState:
    time: float
    potential: PotentialField


@dataclass
class DiagnosticsRecord:
    mu_min: float
    mu_max: float
    sup_sigma: float
    sup_d3_sq: float
    sup_d4_sq: float
    flow_residual: float
    ln_det_g_sup: Optional[float] = None
    phase_range: Optional[float] = None


TRACE_COLUMNS = ("t", "mu_min", "mu_max", "sup_sigma", "sup_d3_sq", "sup_d4_sq", "flow_residual")
METRIC_COLUMNS = ("ln_det_g_sup", "phase_range")


@dataclass
class FlowTrace:
    records: list = field(default_factory=list)
    bounds: Optional[ConditionABounds] = None
    snapshots: List[FlowState] = field(default_factory=list)

    def append(self, t, record):
        if self.records and not t > self.records[-1][0]:
            raise ValueError(f"trace times must increase strictly: {t} after {self.records[-1][0]}")
        self.records.append((float(t), record))

    def times(self):
        return np.array([t for t, _ in self.records])

    def column(self, name):
        if name == "t":
            return self.times()
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name)
                         for _, r in self.records], dtype=float)

    def has_metric_columns(self):
        return bool(self.records) and self.records[0][1].ln_det_g_sup is not None


def _raise_bad(grid, flat, what="Hessian not positive definite"):
    node = tuple(int(i) for i in np.unravel_index(flat, grid.shape))
    raise ConvexityError(f"{what} at node {node}", node=node)


def _torus_rhs(grid, A, phi):
    rhs, mu, bad = kernels.torus_logdet(phi, A, grid.spacing)
    if bad >= 0:
        _raise_bad(grid, bad)
    return rhs, mu


def _rhs_and_mu(u: PotentialField):
    if u.grid.is_torus:
        return _torus_rhs(u.grid, u.A, u.phi)
    D2 = derivative_tensors(u, 2)
    H = D2.full()[D2.valid]
    w = kernels.eigvalsh_sym(H)
    bad = w[:, 0] <= 0
    if bad.any():
        _raise_bad(u.grid, np.flatnonzero(D2.valid)[np.argmax(bad)])
    rhs = np.log(w).sum(axis=1) / u.dim
    return scatter(rhs, D2.valid), float(w[:, 0].min())


def flow_rhs(u: PotentialField) -> np.ndarray:
    """(1/n) ln det D^2 u per node (nan off the stencil-valid set on boxes)."""
    return _rhs_and_mu(u)[0]


def stability_cap(grid: GridSpec, mu_min: float) -> float:
    """Largest explicit-Euler step: 0.2 n h^2 mu_min, capped at 0.4 h^2 mu_min for n = 3."""
    return min(0.2 * grid.dim, 0.4) * grid.h ** 2 * mu_min


def _require_torus(u):
    if not u.grid.is_torus:
        raise ValueError("the flow is integrated on torus grids only")


def step(state: FlowState, dt: float) -> FlowState:
    """One explicit Euler step; raises ConvexityError if the result is not convex."""
    u = state.potential
    _require_torus(u)
    rhs, mu = _rhs_and_mu(u)
    cap = stability_cap(u.grid, mu)
    if not 0 < dt <= cap * (1 + 1e-12):
        raise ValueError(f"dt={dt:.3e} outside (0, {cap:.3e}]")
    new = u.with_phi(u.phi + dt * rhs)
    try:
        _rhs_and_mu(new)
    except ConvexityError as exc:
        raise ConvexityError(f"step rejected: {exc}", node=exc.node) from exc
    return FlowState(state.time + dt, new)


def flow_residual(u_now: PotentialField, u_next: PotentialField, dt: float) -> float:
    """sup |(u_next - u_now)/dt - (1/n) ln det D^2 u_now| over valid nodes."""
    du = (u_next.values() - u_now.values()) / dt
    r = np.abs(du - flow_rhs(u_now))
    return float(np.nanmax(r))


def diagnostics(u: PotentialField, prev: Optional[FlowState] = None, t: Optional[float] = None,
                metric_columns=False) -> DiagnosticsRecord:
    from .calabi import sigma_field

    D2 = derivative_tensors(u, 2)
    D3 = derivative_tensors(u, 3)
    D4 = derivative_tensors(u, 4)
    w = kernels.eigvalsh_sym(D2.full()[D2.valid])
    sig = sigma_field(u, D2=D2, D3=D3)
    res = np.nan
    if prev is not None:
        res = flow_residual(prev.potential, u, t - prev.time)
    rec = DiagnosticsRecord(
        mu_min=float(w[:, 0].min()),
        mu_max=float(w[:, -1].max()),
        sup_sigma=float(np.nanmax(sig)),
        sup_d3_sq=float(D3.sq_norm()[D3.valid].max()),
        sup_d4_sq=float(D4.sq_norm()[D4.valid].max()),
        flow_residual=res,
    )
    if metric_columns:
        from .metric import induced_metric
        im = induced_metric(u)
        rec.ln_det_g_sup = float(np.nanmax(im.ln_det_g))
        rec.phase_range = float(np.nanmax(im.phase) - np.nanmin(im.phase))
    return rec


def run_flow(initial: PotentialField, t_end: float, sample_times, *, keep_snapshots=False,
             metric_columns=False) -> FlowTrace:
    """Integrate to ``t_end`` with adaptive dt, recording diagnostics at ``sample_times``."""
    _require_torus(initial)
    samples = sorted(float(s) for s in sample_times)
    if samples and (samples[0] < 0 or samples[-1] > t_end + 1e-12):
        raise ValueError("sample times must lie in [0, t_end]")
    if len(set(samples)) != len(samples):
        raise ValueError("duplicate sample times")

    grid, A = initial.grid, initial.A
    rhs, mu = _torus_rhs(grid, A, initial.phi)
    trace = FlowTrace(bounds=ConditionABounds(*hessian_eigen_range(initial)[:2]))

    phi, t = initial.phi.copy(), 0.0
    prev: Optional[FlowState] = None
    stops = samples + ([t_end] if not samples or samples[-1] < t_end else [])
    floor = DT_FLOOR * grid.h ** 2
    for target in stops:
        close = 1e-14 * max(1.0, target)
        while t < target - close:
            dt = min(stability_cap(grid, mu), target - t)
            while True:
                cand = phi + dt * rhs
                try:
                    rhs_new, mu_new = _torus_rhs(grid, A, cand)
                    break
                except ConvexityError:
                    dt *= 0.5
                    if dt < floor:
                        raise FlowError(f"dt underflow at t={t:.6g}")
            phi, rhs, mu = cand, rhs_new, mu_new
            t = target if target - (t + dt) <= close else t + dt
        if target in samples:
            u = initial.with_phi(phi)
            trace.append(target, diagnostics(u, prev, target, metric_columns))
            prev = FlowState(target, u)
            if keep_snapshots:
                trace.snapshots.append(prev)
    return trace


# --------------------------------------------------------------------------
# scaling maps


def _node_index(grid, x0):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    idx = []
    for ax in range(grid.dim):
        k = (x0[ax] - grid.origin[ax]) / grid.spacing[ax]
        kr = int(round(k))
        if abs(k - kr) > 1e-9:
            raise ValueError(f"x0[{ax}]={x0[ax]} is not a grid node")
        if grid.is_torus:
            kr %= grid.points[ax]
        elif not 1 <= kr <= grid.points[ax] - 2:
            raise DomainExceededError("x0 must be an interior node")
        idx.append(kr)
    return tuple(idx)


def parabolic_scale(snapshots, x0, t0: float, mu: float, window: Optional[float] = None):
    """u_mu(y, s) = mu^2 [u(x, t) - u(x0, t0) - Du(x0, t0).(x - x0)], y = mu (x - x0), s = mu^2 (t - t0).

    ``x0`` must be a grid node.  ``window`` is the half-width of the y-box to keep; on a box
    source it must fit inside the source grid.  Returns a list of FlowState on box grids.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    snaps = sorted(snapshots, key=lambda s: s.time)
    times = np.array([s.time for s in snaps])
    if not times[0] - 1e-12 <= t0 <= times[-1] + 1e-12:
        raise ValueError("snapshots do not bracket t0")
    grid = snaps[0].potential.grid
    A = snaps[0].potential.A
    for s in snaps:
        if s.potential.grid != grid or not np.array_equal(s.potential.A, A):
            raise ValueError("snapshots must share grid and background matrix")
    i0 = _node_index(grid, x0)
    xn = np.array([grid.origin[a] + i0[a] * grid.spacing[a] for a in range(grid.dim)])

    def base(s):
        p = s.potential
        g = derivative_tensors(p.with_background(A=np.zeros_like(A)), 1).full()[i0]
        return p.c + p.phi[i0], g

    k = int(np.searchsorted(times, t0))
    if k < len(times) and abs(times[k] - t0) <= 1e-12:
        b0, g0 = base(snaps[k])
    else:
        k = max(1, min(k, len(times) - 1))
        th = (t0 - times[k - 1]) / (times[k] - times[k - 1])
        (ba, ga), (bb, gb) = base(snaps[k - 1]), base(snaps[k])
        b0, g0 = (1 - th) * ba + th * bb, (1 - th) * ga + th * gb

    lo, hi = [], []
    for a in range(grid.dim):
        N, h = grid.points[a], grid.spacing[a]
        if window is None:
            l, r = (-(N // 2), N // 2 - 1) if grid.is_torus else (-i0[a], N - 1 - i0[a])
        else:
            K = int(math.floor(window / (mu * h) + 1e-9))
            l, r = -K, K
            if not grid.is_torus and (i0[a] - K < 0 or i0[a] + K > N - 1):
                raise DomainExceededError("mapped window leaves the source box")
        if r - l + 1 < 8:
            raise ValueError("window too small for a grid")
        lo.append(l)
        hi.append(r)
    offs = [np.arange(l, r + 1) for l, r in zip(lo, hi)]
    take = np.ix_(*[(i0[a] + offs[a]) % grid.points[a] for a in range(grid.dim)])
    dx = np.stack(np.meshgrid(*[o * grid.spacing[a] for a, o in enumerate(offs)],
                              indexing="ij"), axis=-1)
    ygrid = GridSpec.box(grid.dim, [len(o) for o in offs],
                         lo=[mu * l * grid.spacing[a] for a, l in enumerate(lo)],
                         hi=[mu * r * grid.spacing[a] for a, r in enumerate(hi)])
    out = []
    for s in snaps:
        p = s.potential
        lin = dx @ (g0 + 0 * xn)
        phi_mu = mu * mu * (p.c + p.phi[take] - b0 - lin)
        out.append(FlowState(mu * mu * (s.time - t0), PotentialField(ygrid, 0.0, A, phi_mu)))
    return out


def self_similar_extend(u: PotentialField, t: float, grid: Optional[GridSpec] = None,
                        phi_fn=None) -> PotentialField:
    """v(x, t) = (1 - t) u(x / sqrt(1 - t)) sampled on ``grid`` (default: u's grid).

    The background maps in closed form (A fixed, c -> (1-t) c).  A non-constant
    perturbation is evaluated through ``phi_fn`` when given, else by cubic
    interpolation of the samples (source must be a box covering x/sqrt(1-t)).
    """
    if not 0 <= t < 1:
        raise ValueError("t must lie in [0, 1)")
    target = u.grid if grid is None else grid
    if t == 0 and target == u.grid:
        return PotentialField(u.grid, u.c, u.A, u.phi.copy())
    scale = 1.0 / math.sqrt(1.0 - t)
    if u.phi_is_constant():
        phi = np.full(target.shape, (1 - t) * u.phi.flat[0])
    else:
        pts = [m * scale for m in target.mesh()]
        if phi_fn is not None:
            phi = (1 - t) * phi_fn(*pts)
        else:
            if u.grid.is_torus:
                raise DomainExceededError("interpolated extension needs a box source")
            axes = u.grid.axes()
            for a, p in enumerate(pts):
                if p.min() < axes[a][0] - 1e-12 or p.max() > axes[a][-1] + 1e-12:
                    raise DomainExceededError("rescaled point outside the source box")
            spline = cubic_spline(u.grid, u.phi)
            flat = np.stack([p.ravel() for p in pts], axis=-1)
            phi = (1 - t) * spline(flat).reshape(target.shape)
    return PotentialField(target, (1 - t) * u.c, u.A, phi)


def self_similar_residual(u: PotentialField, t: float, dt: float = 1e-3, **kw) -> float:
    """Flow residual of the self-similar family at time t (forward difference in t)."""
    v0 = self_similar_extend(u, t, **kw)
    v1 = self_similar_extend(u, t + dt, **kw)
    return flow_residual(v0, v1, dt)


def record_fields():
    return [f.name for f in fields(DiagnosticsRecord)]
