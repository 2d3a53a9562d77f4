import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shrinklab import _accel, kernels


def random_sym(rng, m, n, lo=-3.0, hi=3.0):
    Q = np.linalg.qr(rng.normal(size=(m, n, n)))[0]
    w = rng.uniform(lo, hi, size=(m, n))
    return np.einsum("mij,mj,mkj->mik", Q, w, Q)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_eigh_matches_lapack(backend, rng, n):
    H = random_sym(rng, 200, n)
    w, V = kernels.eigh_sym(H)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(H), atol=1e-12)
    # columns are orthonormal eigenvectors
    np.testing.assert_allclose(np.einsum("mij,mjk->mik", H, V), V * w[:, None, :], atol=1e-11)
    np.testing.assert_allclose(np.einsum("mji,mjk->mik", V, V), np.broadcast_to(np.eye(n), H.shape), atol=1e-12)


def test_eigh_degenerate(backend):
    H = np.array([np.eye(3) * 2.0, np.diag([1.0, 1.0, 5.0]), np.zeros((3, 3))])
    w, _ = kernels.eigh_sym(H)
    np.testing.assert_allclose(w, [[2, 2, 2], [1, 1, 5], [0, 0, 0]], atol=1e-14)


def test_eigh_rejects_bad_shapes():
    with pytest.raises(ValueError):
        kernels.eigh_sym(np.zeros((2, 4, 4)))
    with pytest.raises(ValueError):
        kernels.eigh_sym(np.zeros((3, 3)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3), st.integers(0, 2 ** 31))
def test_eigh_property_3x3(vals, seed):
    rng = np.random.default_rng(seed)
    Q = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    H = (Q * vals) @ Q.T
    w = kernels.eigvalsh_sym(H[None])[0]
    np.testing.assert_allclose(w, np.sort(vals), atol=1e-11 * (1 + max(map(abs, vals))))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_det_small(rng, n):
    H = random_sym(rng, 50, n)
    np.testing.assert_allclose(kernels.det_small(H), np.linalg.det(H), rtol=1e-12, atol=1e-12)


def _sym_tensor(rng, m, n):
    T = rng.normal(size=(m, n, n, n))
    out = np.zeros_like(T)
    import itertools
    for p in itertools.permutations(range(3)):
        out += T.transpose((0,) + tuple(1 + i for i in p))
    return out / 6


@pytest.mark.parametrize("n", [1, 2, 3])
def test_sigma_and_ab_backends_agree(rng, n):
    H = random_sym(rng, 300, n, 0.2, 4.0)
    T = _sym_tensor(rng, 300, n)
    Hi = np.linalg.inv(H)
    ref = np.einsum("mkl,mpq,mrs,mkpr,mlqs->m", Hi, Hi, Hi, T, T)
    out = {}
    for b in ["numpy"] + (["numba"] if _accel.HAS_NUMBA else []):
        with _accel.use_backend(b):
            s = kernels.sigma_contract(H, T)
            w, V = kernels.eigh_sym(H)
            out[b] = kernels.calabi_ab(w, V, T)
        np.testing.assert_allclose(s, ref, rtol=1e-10)
        np.testing.assert_allclose(out[b][0], ref, rtol=1e-10)
    if len(out) == 2:
        for a, b in zip(out["numpy"], out["numba"]):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)


def test_calabi_ab_reference_formula(rng):
    # A and B from the index definitions in an orthonormal frame of the Hessian metric
    n = 3
    H = random_sym(rng, 20, n, 0.3, 3.0)
    T = _sym_tensor(rng, 20, n)
    w, V = np.linalg.eigh(H)
    R = np.einsum("mia,mjb,mkc,mijk->mabc", V, V, V, T) / np.sqrt(
        w[:, :, None, None] * w[:, None, :, None] * w[:, None, None, :])
    M = np.einsum("mkpr,mlpr->mkl", R, R)
    B = np.einsum("mkl,mkl->m", M, M)
    A = np.einsum("mkpr,mlqr,mkli,mpqi->m", R, R, R, R)
    wk, Vk = kernels.eigh_sym(H)
    s, a, b = kernels.calabi_ab(wk, Vk, T)
    np.testing.assert_allclose(a, A, rtol=1e-10)
    np.testing.assert_allclose(b, B, rtol=1e-10)
    assert np.all(b >= a * (1 - 1e-9))


def test_conjugate_argmax(backend, rng):
    X = rng.uniform(-1, 1, size=(500, 2))
    U = (X ** 2).sum(1)
    Y = rng.uniform(-2, 2, size=(60, 2))
    vals, idx = kernels.conjugate_argmax(X, U, Y)
    full = Y @ X.T - U[None]
    np.testing.assert_allclose(vals, full.max(1), rtol=0, atol=1e-15)
    np.testing.assert_array_equal(idx, full.argmax(1))


@pytest.mark.parametrize("shape", [(64,), (16, 20), (8, 9, 10)])
def test_torus_logdet_backends(rng, shape):
    n = len(shape)
    h = tuple(2 * np.pi / N for N in shape)
    axes = [np.arange(N) * hh for N, hh in zip(shape, h)]
    X = np.meshgrid(*axes, indexing="ij")
    phi = 0.05 * sum(np.sin(x + k) for k, x in enumerate(X))
    A = np.diag(np.arange(1.0, n + 1))
    res = {}
    for b in ["numpy"] + (["numba"] if _accel.HAS_NUMBA else []):
        with _accel.use_backend(b):
            res[b] = kernels.torus_logdet(phi, A, h)
    rhs, mu, bad = res["numpy"]
    assert bad == -1 and mu > 0
    if "numba" in res:
        np.testing.assert_allclose(res["numba"][0], rhs, rtol=1e-12, atol=1e-14)
        assert abs(res["numba"][1] - mu) < 1e-12
        assert res["numba"][2] == bad


def test_torus_logdet_flags_nonconvex(backend):
    N = 32
    x = np.arange(N) * 2 * np.pi / N
    rhs, mu, bad = kernels.torus_logdet(2.0 * np.sin(x), np.eye(1), (2 * np.pi / N,))
    assert mu <= 0 and bad >= 0
    assert np.isnan(rhs.ravel()[bad])


def test_backend_switching():
    before = _accel.get_backend()
    with _accel.use_backend("numpy"):
        assert _accel.get_backend() == "numpy"
    assert _accel.get_backend() == before
    with pytest.raises(ValueError):
        _accel.set_backend("cuda")
