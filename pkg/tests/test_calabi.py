import itertools

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from shrinklab import calabi, kernels
from shrinklab.calabi import (ab_quantities, decay_fit_series, lemma22_residual, random_convex_cubic,
                              sigma_field, sigma_sandwich, supersolution_bound)
from shrinklab.flow import FlowState, run_flow
from shrinklab.grid import ConvexityError, GridSpec, PotentialField
from shrinklab.rng import Xorshift64Star
from shrinklab.scenarios import flow_initial


def test_sigma_1d_closed_form():
    x = sp.symbols("x")
    u = x ** 2 / 2 + sp.Rational(1, 10) * sp.sin(x)
    sig = sp.lambdify(x, sp.diff(u, x, 3) ** 2 / sp.diff(u, x, 2) ** 3, "numpy")
    errs = []
    for N in (128, 256):
        g = GridSpec.torus(1, N)
        f = PotentialField.from_function(g, lambda t: 0.1 * np.sin(t), A=[[1.0]])
        errs.append(np.abs(sigma_field(f) - sig(g.axes()[0])).max())
    assert errs[1] < 1e-4 and errs[0] / errs[1] > 3.5


def test_sigma_vanishes_on_quadratics():
    u = PotentialField.quadratic(GridSpec.box(3, 9), np.diag([1.0, 2.0, 3.0]))
    s = sigma_field(u)
    assert np.nanmax(np.abs(s)) == 0.0
    assert np.isnan(s[0, 0, 0])


def test_sigma_rejects_nonconvex():
    g = GridSpec.torus(1, 64)
    with pytest.raises(ConvexityError):
        sigma_field(PotentialField.from_function(g, lambda x: 2 * np.sin(x), A=[[1.0]]))


def test_sandwich():
    u = random_convex_cubic(Xorshift64Star(3), 3)
    s, S, lo, hi = sigma_sandwich(u)
    assert np.all(S / hi ** 3 <= s * (1 + 1e-12))
    assert np.all(s <= S / lo ** 3 * (1 + 1e-12))


@pytest.mark.parametrize("seed", range(6))
def test_calabi_inequalities(seed):
    rng = Xorshift64Star(seed)
    for n in (1, 2, 3):
        cs = ab_quantities(random_convex_cubic(rng, n))
        assert cs.all_ok(1e-9)


def test_random_cubic_is_reproducible():
    a = random_convex_cubic(Xorshift64Star(9), 2)
    b = random_convex_cubic(Xorshift64Star(9), 2)
    assert np.array_equal(a.phi, b.phi) and np.array_equal(a.A, b.A)


def test_supersolution_bound():
    assert supersolution_bound(2.0, 0.0, 1) == 2.0
    np.testing.assert_allclose(supersolution_bound(2.0, [1.0, 4.0], 2), [2 / 1.25, 2 / 2.0])
    with pytest.raises(ValueError):
        supersolution_bound(-1.0, 1.0, 1)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(0.2, 1.0), st.integers(3, 4))
def test_decay_fit_exact_power(C, eps0, order):
    t = np.linspace(eps0, eps0 + 5, 21)
    q = C / t ** (order - 2)
    fit = decay_fit_series(t, q, order, eps0)
    assert fit.bound_satisfied
    assert fit.fitted_exponent == pytest.approx(-(order - 2), abs=1e-9)
    assert fit.c_emp == pytest.approx(1.05 * C)


def test_decay_fit_detects_slow_decay():
    t = np.linspace(0.5, 5, 21)
    fit = decay_fit_series(t, 1 / np.sqrt(t), 3, 0.5)
    assert not fit.bound_satisfied and fit.margins.min() < 0


def test_decay_fit_zero_values():
    t = np.linspace(0.5, 5, 12)
    fit = decay_fit_series(t, np.zeros_like(t), 3, 0.5)
    assert fit.bound_satisfied and np.isnan(fit.fitted_exponent)


def test_decay_fit_needs_samples():
    with pytest.raises(ValueError):
        decay_fit_series(np.linspace(0.5, 5, 5), np.ones(5), 3, 0.5)
    with pytest.raises(ValueError):
        decay_fit_series(np.linspace(0.6, 5, 12), np.ones(12), 3, 0.5)
    with pytest.raises(ValueError):
        calabi.decay_fit(None, "d5_sq", 0.5)


def test_sigma_inequality_on_a_flow_and_power_check():
    u = flow_initial(1, 256, np.eye(1))
    times = np.round(np.arange(0, 11) * 0.01, 12)
    tr = run_flow(u, times[-1], times, keep_snapshots=True)
    res = lemma22_residual(tr.snapshots)
    assert res.fraction_within() >= 0.95
    frozen = [FlowState(s.time, tr.snapshots[0].potential) for s in tr.snapshots]
    assert lemma22_residual(frozen).fraction_within() < 0.95


def test_sigma_inequality_requires_resolved_spacing():
    u = flow_initial(1, 64, np.eye(1))
    snaps = [FlowState(0.0, u), FlowState(1.0, u)]
    with pytest.raises(ValueError):
        lemma22_residual(snaps)
    with pytest.raises(ValueError):
        lemma22_residual(snaps[:1])


@pytest.mark.parametrize("dim,N", [(1, 256), (2, 64)])
def test_decay_bounds_hold_once_modes_decay_before_eps0(dim, N):
    # C_emp fixed at t = eps0 bounds the tail when the slowest mode, rate n/(2k^2) in t,
    # has already passed its peak of t^(l-2) exp(-2 k^2 t / n); with k = 2 and eps0 = 1/2 it has
    u = flow_initial(dim, N, np.eye(dim), "sin-sum", 0.1, wavenumber=2.0)
    tr = run_flow(u, 5.0, np.round(np.linspace(0, 5, 21), 12))
    for q in ("d3_sq", "d4_sq"):
        assert calabi.decay_fit(tr, q, 0.5).bound_satisfied


@pytest.mark.parametrize("n", [2, 3])
def test_sigma_rotation_invariant(n):
    # pulling u back by x -> Mx with M orthogonal transforms D^2u, D^3u as tensors
    rng = Xorshift64Star(20 + n)
    for _ in range(10):
        H = rng.spd(n, 0.3, 4.0)
        T = rng.normal((n, n, n))
        T = sum(np.transpose(T, p) for p in itertools.permutations(range(3))) / 6
        M = rng.orthogonal(n)
        Hr = M.T @ H @ M
        Tr = np.einsum("abc,ai,bj,ck->ijk", T, M, M, M)
        s0 = kernels.sigma_contract(H[None], T[None])[0]
        s1 = kernels.sigma_contract(Hr[None], Tr[None])[0]
        assert s1 == pytest.approx(s0, rel=1e-9)
