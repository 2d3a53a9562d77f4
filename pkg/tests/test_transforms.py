import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shrinklab import transforms
from shrinklab.grid import GridSpec, PotentialField
from shrinklab.scenarios import observed_order
from shrinklab.shrinker import quadratic_shrinker_ma, quadratic_shrinker_sl, residual_ma, residual_sl
from shrinklab.transforms import (angle_shift_check, hessian_duality_check, involution_error, legendre,
                                  lewy_hessian_map, lewy_rotate, rotate_quadratic,
                                  shrinker_preservation_check, young_gap)


def test_closed_form_branch():
    A = np.array([[2.0, 0.3], [0.3, 0.5]])
    q = quadratic_shrinker_ma(A, GridSpec.box(2, 16))
    pair = legendre(q)
    assert pair.closed_form
    np.testing.assert_allclose(pair.dual.A, np.linalg.inv(A), atol=1e-14)
    assert pair.dual.c == -q.c
    assert hessian_duality_check(pair).error < 1e-9
    assert transforms.ma_duality_residual(pair).norm_sup < 1e-9


def test_legendre_refuses_torus():
    with pytest.raises(ValueError):
        legendre(PotentialField.quadratic(GridSpec.torus(1, 16), [[1.0]]))


def test_conjugate_of_quadratic_by_sampling():
    g = GridSpec.box(1, 81)
    u = PotentialField.quadratic(g, [[2.0]])
    Y = np.linspace(-1.5, 1.5, 13)[:, None]
    vals = transforms.conjugate_at(u, Y)
    np.testing.assert_allclose(vals, Y[:, 0] ** 2 / 4, atol=1e-12)


def _quartic(N):
    return PotentialField.from_function(GridSpec.box(1, N), lambda x: 0.1 * x ** 4, A=[[1.0]])


def test_young_gap_nonnegative():
    pair = legendre(_quartic(41))
    assert young_gap(pair) >= -1e-12


def test_duality_errors_converge():
    hs, he, ie = [], [], []
    for N in (41, 81, 161):
        pair = legendre(_quartic(N))
        hs.append(pair.primal.grid.h)
        he.append(hessian_duality_check(pair).error)
        ie.append(involution_error(pair))
    assert observed_order(hs, he) >= 0.9
    assert observed_order(hs, ie) >= 0.9


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-0.85, 20.0), min_size=1, max_size=3), st.integers(0, 2 ** 31))
def test_lewy_map_eigenvalues(lam, seed):
    n = len(lam)
    Q = np.linalg.qr(np.random.default_rng(seed).normal(size=(n, n)))[0]
    H = (Q * lam) @ Q.T
    M = lewy_hessian_map(H)
    lam = np.array(lam)
    np.testing.assert_allclose(np.linalg.eigvalsh(M), np.sort((lam - 1) / (lam + 1)), atol=1e-9)
    assert angle_shift_check(lam) <= 1e-12


def test_lewy_map_branch_errors():
    with pytest.raises(ValueError):
        lewy_hessian_map(np.diag([-1.0, 2.0]))
    with pytest.raises(ValueError):
        angle_shift_check([-1.5])


def test_lewy_rotate_round_trip():
    g = GridSpec.box(2, 21)
    u = PotentialField.from_function(g, lambda x, y: 0.05 * (x ** 4 + y ** 4), A=np.diag([1.0, 3.0]))
    im = lewy_rotate(u)
    x = g.coords()[im.valid]
    np.testing.assert_allclose(im.inverse_points(), x, atol=1e-14)
    assert im.injective
    lo, hi = im.eigen_range()
    assert -1 < lo and hi < 1
    with pytest.raises(ValueError):
        lewy_rotate(PotentialField.quadratic(g, np.diag([-1.0, 1.0])))


def test_shrinker_preservation(rng):
    for n in (1, 2, 3):
        Q = np.linalg.qr(rng.normal(size=(n, n)))[0]
        A = (Q * rng.uniform(0.05, 8, n)) @ Q.T
        res = shrinker_preservation_check(quadratic_shrinker_sl(A, GridSpec.box(n, 9)))
        assert res.residual_sup <= 1e-9 and res.angle_branch
        w = np.linalg.eigvalsh(A)
        np.testing.assert_allclose(np.linalg.eigvalsh(res.rotated.A), (w - 1) / (w + 1), atol=1e-12)
        assert residual_sl(res.rotated).norm_sup <= 1e-9
    np.testing.assert_allclose(rotate_quadratic(np.eye(2)), 0.0, atol=1e-15)


@pytest.mark.parametrize("dim,N", [(1, 161), (2, 61)])
def test_dual_residual_tracks_primal(dim, N):
    # for a near-identity background the dual residual equals -r / (det D^2u e^{nG}) ~ -r
    g = GridSpec.box(dim, N)
    q = quadratic_shrinker_ma(np.eye(dim), g)
    u = q.with_phi(q.phi + 0.02 * np.prod([np.cos(x) for x in g.mesh()], axis=0))
    ratio = transforms.ma_duality_residual(legendre(u)).norm_sup / residual_ma(u).norm_sup
    assert 1 / 3 <= ratio <= 3


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 50.0))
def test_lewy_map_twice_is_minus_inverse(lam):
    # lam > 0 keeps the first image inside (-1, 1), where the map applies again
    once = lewy_hessian_map(np.array([[lam]]))
    twice = lewy_hessian_map(once)
    assert twice[0, 0] == pytest.approx(-1 / lam, rel=1e-9)
