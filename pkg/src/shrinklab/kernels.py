"""Per-node numeric kernels.

Each public kernel dispatches to a numba loop (``*_nb``) or a vectorised
numpy routine (``*_np``) according to :mod:`shrinklab._accel`.  Inputs are
batches: ``H`` has shape ``(m, n, n)``, third-order tensors ``(m, n, n, n)``.
Both paths implement the same algorithms (closed form for n <= 2, cyclic
Jacobi for n = 3), so they agree to rounding.
"""

import math

import numpy as np

from . import _accel
from ._accel import njit

JACOBI_TOL = 1e-13
_MAX_SWEEPS = 60
_CHUNK = 2048


# --------------------------------------------------------------------------
# symmetric eigen-decomposition


@njit
def _eig2_nb(a, b, d, w, V):
    mean = 0.5 * (a + d)
    half = 0.5 * (a - d)
    r = math.hypot(half, b)
    w[0] = mean - r
    w[1] = mean + r
    theta = 0.5 * math.atan2(2.0 * b, a - d)
    c = math.cos(theta)
    s = math.sin(theta)
    V[0, 0] = -s
    V[1, 0] = c
    V[0, 1] = c
    V[1, 1] = s


@njit
def _jacobi_nb(a, V, tol, vectors):
    n = a.shape[0]
    for i in range(n):
        for j in range(n):
            V[i, j] = 1.0 if i == j else 0.0
    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale += a[i, j] * a[i, j]
    scale = math.sqrt(scale)
    if scale == 0.0:
        return
    polish = False
    for sweep in range(_MAX_SWEEPS):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        if polish:
            return
        # one extra sweep once converged, matching the batched version
        if math.sqrt(2.0 * off) <= tol * scale:
            polish = True
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                if not vectors:
                    continue
                for k in range(n):
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = c * vkp - s * vkq
                    V[k, q] = s * vkp + c * vkq


@njit
def eigh_sym_nb(H, tol, vectors=True):
    m, n = H.shape[0], H.shape[1]
    w = np.empty((m, n))
    V = np.empty((m, n, n))
    a = np.empty((n, n))
    wk = np.empty(n)
    Vk = np.empty((n, n))
    order = np.empty(n, dtype=np.int64)
    for e in range(m):
        if n == 1:
            w[e, 0] = H[e, 0, 0]
            V[e, 0, 0] = 1.0
            continue
        if n == 2:
            _eig2_nb(H[e, 0, 0], 0.5 * (H[e, 0, 1] + H[e, 1, 0]), H[e, 1, 1], wk, Vk)
        else:
            for i in range(n):
                for j in range(n):
                    a[i, j] = H[e, i, j]
            _jacobi_nb(a, Vk, tol, vectors)
            for i in range(n):
                wk[i] = a[i, i]
        # insertion sort of at most three values, no per-node allocation
        for j in range(n):
            order[j] = j
        for j in range(1, n):
            k = j
            while k > 0 and wk[order[k - 1]] > wk[order[k]]:
                tmp = order[k - 1]
                order[k - 1] = order[k]
                order[k] = tmp
                k -= 1
        for j in range(n):
            w[e, j] = wk[order[j]]
            for i in range(n):
                V[e, i, j] = Vk[i, order[j]]
    return w, V


def _eig2_np(H):
    a = H[:, 0, 0]
    b = 0.5 * (H[:, 0, 1] + H[:, 1, 0])
    d = H[:, 1, 1]
    mean = 0.5 * (a + d)
    r = np.hypot(0.5 * (a - d), b)
    w = np.stack([mean - r, mean + r], axis=1)
    theta = 0.5 * np.arctan2(2.0 * b, a - d)
    c, s = np.cos(theta), np.sin(theta)
    V = np.empty(H.shape)
    V[:, 0, 0] = -s
    V[:, 1, 0] = c
    V[:, 0, 1] = c
    V[:, 1, 1] = s
    return w, V


def _jacobi_np(H, tol):
    a = np.array(H, dtype=float, copy=True)
    m, n = a.shape[0], a.shape[1]
    V = np.broadcast_to(np.eye(n), a.shape).copy()
    scale = np.sqrt(np.einsum("mij,mij->m", a, a))
    iu = np.triu_indices(n, 1)
    polish = False
    for sweep in range(_MAX_SWEEPS):
        if polish:
            break
        off = np.sqrt(2.0 * np.sum(a[:, iu[0], iu[1]] ** 2, axis=1))
        # one extra sweep once every matrix is converged
        if np.all(off <= tol * scale):
            polish = True
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                nz = apq != 0.0
                safe = np.where(nz, apq, 1.0)
                with np.errstate(over="ignore"):
                    theta = (a[:, q, q] - a[:, p, p]) / (2.0 * safe)
                big = np.abs(theta) > 1e150
                tb = np.where(big, 1.0, theta)
                t = np.sign(tb) / (np.abs(tb) + np.sqrt(tb * tb + 1.0))
                t = np.where(tb == 0.0, 1.0, t)
                t = np.where(big, 0.5 / np.where(big, theta, 1.0), t)
                t = np.where(nz, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cc, ss = c[:, None], s[:, None]
                akp, akq = a[:, :, p].copy(), a[:, :, q].copy()
                a[:, :, p] = cc * akp - ss * akq
                a[:, :, q] = ss * akp + cc * akq
                apk, aqk = a[:, p, :].copy(), a[:, q, :].copy()
                a[:, p, :] = cc * apk - ss * aqk
                a[:, q, :] = ss * apk + cc * aqk
                a[nz, p, q] = 0.0
                a[nz, q, p] = 0.0
                vkp, vkq = V[:, :, p].copy(), V[:, :, q].copy()
                V[:, :, p] = cc * vkp - ss * vkq
                V[:, :, q] = ss * vkp + cc * vkq
    w = np.diagonal(a, axis1=1, axis2=2).copy()
    order = np.argsort(w, axis=1)
    w = np.take_along_axis(w, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    return w, V


def eigh_sym_np(H, tol=JACOBI_TOL):
    H = np.asarray(H, dtype=float)
    n = H.shape[1]
    if n == 1:
        return H[:, :, 0].copy(), np.ones_like(H)
    if n == 2:
        return _eig2_np(H)
    return _jacobi_np(H, tol)


def eigh_sym(H, tol=JACOBI_TOL):
    """Ascending eigenvalues ``(m, n)`` and eigenvectors ``(m, n, n)`` (columns)."""
    H = np.ascontiguousarray(H, dtype=float)
    if H.ndim != 3 or H.shape[1] != H.shape[2] or not 1 <= H.shape[1] <= 3:
        raise ValueError(f"expected a batch of n x n matrices with n <= 3, got {H.shape}")
    if _accel.get_backend() == "numba":
        return eigh_sym_nb(H, tol)
    return eigh_sym_np(H, tol)


def eigvalsh_sym(H, tol=JACOBI_TOL):
    """Ascending eigenvalues only (the numba path skips the eigenvector updates)."""
    H = np.ascontiguousarray(H, dtype=float)
    if _accel.get_backend() == "numba" and H.ndim == 3 and H.shape[1:] == (3, 3):
        return eigh_sym_nb(H, tol, False)[0]
    return eigh_sym(H, tol)[0]


# --------------------------------------------------------------------------
# small-matrix helpers


@njit
def _inv_small_nb(h, out):
    n = h.shape[0]
    if n == 1:
        out[0, 0] = 1.0 / h[0, 0]
    elif n == 2:
        det = h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]
        out[0, 0] = h[1, 1] / det
        out[1, 1] = h[0, 0] / det
        out[0, 1] = -h[0, 1] / det
        out[1, 0] = -h[1, 0] / det
    else:
        c00 = h[1, 1] * h[2, 2] - h[1, 2] * h[2, 1]
        c01 = h[1, 2] * h[2, 0] - h[1, 0] * h[2, 2]
        c02 = h[1, 0] * h[2, 1] - h[1, 1] * h[2, 0]
        det = h[0, 0] * c00 + h[0, 1] * c01 + h[0, 2] * c02
        out[0, 0] = c00 / det
        out[1, 0] = c01 / det
        out[2, 0] = c02 / det
        out[0, 1] = (h[0, 2] * h[2, 1] - h[0, 1] * h[2, 2]) / det
        out[1, 1] = (h[0, 0] * h[2, 2] - h[0, 2] * h[2, 0]) / det
        out[2, 1] = (h[0, 1] * h[2, 0] - h[0, 0] * h[2, 1]) / det
        out[0, 2] = (h[0, 1] * h[1, 2] - h[0, 2] * h[1, 1]) / det
        out[1, 2] = (h[0, 2] * h[1, 0] - h[0, 0] * h[1, 2]) / det
        out[2, 2] = (h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]) / det


def det_small(H):
    """Closed-form determinant of a batch of n x n matrices, n <= 3."""
    H = np.asarray(H, dtype=float)
    n = H.shape[-1]
    if n == 1:
        return H[..., 0, 0].copy()
    if n == 2:
        return H[..., 0, 0] * H[..., 1, 1] - H[..., 0, 1] * H[..., 1, 0]
    return (
        H[..., 0, 0] * (H[..., 1, 1] * H[..., 2, 2] - H[..., 1, 2] * H[..., 2, 1])
        - H[..., 0, 1] * (H[..., 1, 0] * H[..., 2, 2] - H[..., 1, 2] * H[..., 2, 0])
        + H[..., 0, 2] * (H[..., 1, 0] * H[..., 2, 1] - H[..., 1, 1] * H[..., 2, 0])
    )


# --------------------------------------------------------------------------
# Calabi contractions


@njit
def sigma_contract_nb(H, T):
    m, n = H.shape[0], H.shape[1]
    out = np.empty(m)
    hi = np.empty((n, n))
    W1 = np.empty((n, n, n))
    W2 = np.empty((n, n, n))
    for e in range(m):
        _inv_small_nb(H[e], hi)
        # contract the three slots of T with the inverse Hessian one at a time
        for l in range(n):
            for p in range(n):
                for r in range(n):
                    acc = 0.0
                    for k in range(n):
                        acc += hi[l, k] * T[e, k, p, r]
                    W1[l, p, r] = acc
        for l in range(n):
            for q in range(n):
                for r in range(n):
                    acc = 0.0
                    for p in range(n):
                        acc += hi[q, p] * W1[l, p, r]
                    W2[l, q, r] = acc
        total = 0.0
        for l in range(n):
            for q in range(n):
                for s in range(n):
                    acc = 0.0
                    for r in range(n):
                        acc += hi[s, r] * W2[l, q, r]
                    total += acc * T[e, l, q, s]
        out[e] = total
    return out


def sigma_contract_np(H, T):
    Hi = np.linalg.inv(H)
    return np.einsum("mkl,mpq,mrs,mkpr,mlqs->m", Hi, Hi, Hi, T, T, optimize=True)


def sigma_contract(H, T):
    """sigma = u^{kl} u^{pq} u^{rs} u_{kpr} u_{lqs} per node."""
    H = np.ascontiguousarray(H, dtype=float)
    T = np.ascontiguousarray(T, dtype=float)
    if _accel.get_backend() == "numba":
        return sigma_contract_nb(H, T)
    return sigma_contract_np(H, T)


@njit
def calabi_ab_nb(w, V, T):
    m, n = w.shape[0], w.shape[1]
    sig = np.empty(m)
    A = np.empty(m)
    B = np.empty(m)
    N = np.empty((n, n, n))
    tmp = np.empty((n, n, n))
    tmp2 = np.empty((n, n, n))
    P = np.empty((n, n))
    for e in range(m):
        # rotate into the eigenbasis, then normalise each slot by 1/sqrt(lambda)
        for a in range(n):
            for j in range(n):
                for k in range(n):
                    acc = 0.0
                    for i in range(n):
                        acc += V[e, i, a] * T[e, i, j, k]
                    tmp[a, j, k] = acc
        for a in range(n):
            for b in range(n):
                for k in range(n):
                    acc = 0.0
                    for j in range(n):
                        acc += V[e, j, b] * tmp[a, j, k]
                    tmp2[a, b, k] = acc
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    acc = 0.0
                    for k in range(n):
                        acc += V[e, k, c] * tmp2[a, b, k]
                    N[a, b, c] = acc / math.sqrt(w[e, a] * w[e, b] * w[e, c])
        s = 0.0
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    s += N[a, b, c] * N[a, b, c]
        bb = 0.0
        for k in range(n):
            for l in range(n):
                acc = 0.0
                for p in range(n):
                    for r in range(n):
                        acc += N[k, p, r] * N[l, p, r]
                bb += acc * acc
        aa = 0.0
        for r in range(n):
            for i in range(n):
                for a in range(n):
                    for b in range(n):
                        acc = 0.0
                        for c in range(n):
                            acc += N[a, c, r] * N[c, b, i]
                        P[a, b] = acc
                for a in range(n):
                    for b in range(n):
                        aa += P[a, b] * P[b, a]
        sig[e] = s
        A[e] = aa
        B[e] = bb
    return sig, A, B


def calabi_ab_np(w, V, T):
    Tr = np.einsum("mia,mjb,mkc,mijk->mabc", V, V, V, T, optimize=True)
    root = np.sqrt(w)
    N = Tr / (root[:, :, None, None] * root[:, None, :, None] * root[:, None, None, :])
    sig = np.einsum("mabc,mabc->m", N, N)
    M = np.einsum("mkpr,mlpr->mkl", N, N)
    B = np.einsum("mkl,mkl->m", M, M)
    A = np.einsum("mkpr,mlqr,mkli,mpqi->m", N, N, N, N, optimize=True)
    return sig, A, B


def calabi_ab(w, V, T):
    """(sigma, A, B) evaluated in the Hessian eigenbasis."""
    w = np.ascontiguousarray(w, dtype=float)
    V = np.ascontiguousarray(V, dtype=float)
    T = np.ascontiguousarray(T, dtype=float)
    if _accel.get_backend() == "numba":
        return calabi_ab_nb(w, V, T)
    return calabi_ab_np(w, V, T)


# --------------------------------------------------------------------------
# discrete convex conjugate


@njit
def conjugate_argmax_nb(X, U, Y):
    M, d = Y.shape[0], Y.shape[1]
    N = X.shape[0]
    vals = np.empty(M)
    idx = np.empty(M, dtype=np.int64)
    for j in range(M):
        best = -np.inf
        bi = 0
        for i in range(N):
            v = -U[i]
            for k in range(d):
                v += X[i, k] * Y[j, k]
            if v > best:
                best = v
                bi = i
        vals[j] = best
        idx[j] = bi
    return vals, idx


def conjugate_argmax_np(X, U, Y):
    M = Y.shape[0]
    vals = np.empty(M)
    idx = np.empty(M, dtype=np.int64)
    for start in range(0, M, _CHUNK):
        blk = Y[start:start + _CHUNK] @ X.T - U[None, :]
        k = np.argmax(blk, axis=1)
        idx[start:start + _CHUNK] = k
        vals[start:start + _CHUNK] = blk[np.arange(blk.shape[0]), k]
    return vals, idx


def conjugate_argmax(X, U, Y):
    """max_i <x_i, y_j> - U_i for each y_j, with the maximising index."""
    X = np.ascontiguousarray(X, dtype=float)
    U = np.ascontiguousarray(U, dtype=float)
    Y = np.ascontiguousarray(Y, dtype=float)
    if _accel.get_backend() == "numba":
        return conjugate_argmax_nb(X, U, Y)
    return conjugate_argmax_np(X, U, Y)


# --------------------------------------------------------------------------
# flow right-hand side on a periodic grid


@njit
def _wrap(i, N):
    if i < 0:
        return i + N
    if i >= N:
        return i - N
    return i


@njit
def torus_logdet_nb(phi3, A, h, n, tol):
    N0, N1, N2 = phi3.shape
    rhs = np.empty((N0, N1, N2))
    H = np.empty((n, n))
    a = np.empty((n, n))
    wk = np.empty(n)
    Vk = np.empty((n, n))
    Ns = np.array([N0, N1, N2])
    e = np.zeros((3, 3), dtype=np.int64)
    for p in range(3):
        e[p, p] = 1
    mu = np.inf
    bad = -1
    for i in range(N0):
        for j in range(N1):
            for k in range(N2):
                f0 = phi3[i, j, k]
                for p in range(n):
                    ip = _wrap(i + e[p, 0], N0)
                    jp = _wrap(j + e[p, 1], N1)
                    kp = _wrap(k + e[p, 2], N2)
                    im = _wrap(i - e[p, 0], N0)
                    jm = _wrap(j - e[p, 1], N1)
                    km = _wrap(k - e[p, 2], N2)
                    H[p, p] = A[p, p] + (phi3[ip, jp, kp] - 2.0 * f0 + phi3[im, jm, km]) / (h[p] * h[p])
                    for q in range(p + 1, n):
                        s = 0.0
                        for sp in (-1, 1):
                            for sq in (-1, 1):
                                ii = _wrap(i + sp * e[p, 0] + sq * e[q, 0], N0)
                                jj = _wrap(j + sp * e[p, 1] + sq * e[q, 1], N1)
                                kk = _wrap(k + sp * e[p, 2] + sq * e[q, 2], N2)
                                s += sp * sq * phi3[ii, jj, kk]
                        H[p, q] = A[p, q] + s / (4.0 * h[p] * h[q])
                        H[q, p] = H[p, q]
                if n == 1:
                    wk[0] = H[0, 0]
                elif n == 2:
                    _eig2_nb(H[0, 0], H[0, 1], H[1, 1], wk, Vk)
                else:
                    for r in range(n):
                        for c in range(n):
                            a[r, c] = H[r, c]
                    _jacobi_nb(a, Vk, tol, False)
                    for r in range(n):
                        wk[r] = a[r, r]
                lo = wk[0]
                ld = 0.0
                for r in range(n):
                    if wk[r] < lo:
                        lo = wk[r]
                if lo <= 0.0:
                    if bad < 0:
                        bad = (i * N1 + j) * N2 + k
                    rhs[i, j, k] = np.nan
                else:
                    for r in range(n):
                        ld += math.log(wk[r])
                    rhs[i, j, k] = ld / n
                if lo < mu:
                    mu = lo
    return rhs, mu, bad


def torus_logdet_np(phi, A, h, tol=JACOBI_TOL):
    n = phi.ndim
    H = np.empty(phi.shape + (n, n))
    for p in range(n):
        fp = np.roll(phi, -1, axis=p)
        fm = np.roll(phi, 1, axis=p)
        H[..., p, p] = A[p, p] + (fp - 2.0 * phi + fm) / (h[p] * h[p])
        for q in range(p + 1, n):
            d = (np.roll(fp, -1, axis=q) - np.roll(fp, 1, axis=q)
                 - np.roll(fm, -1, axis=q) + np.roll(fm, 1, axis=q))
            H[..., p, q] = H[..., q, p] = A[p, q] + d / (4.0 * h[p] * h[q])
    w = eigh_sym_np(H.reshape(-1, n, n), tol)[0]
    lo = w[:, 0]
    bad = np.flatnonzero(lo <= 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        rhs = np.where(lo > 0, np.log(np.where(lo[:, None] > 0, w, 1.0)).sum(axis=1) / n, np.nan)
    return rhs.reshape(phi.shape), float(lo.min()), int(bad[0]) if bad.size else -1


def torus_logdet(phi, A, h, tol=JACOBI_TOL):
    """(1/n) ln det(A + D^2 phi) on a periodic grid.

    Returns ``(rhs, mu_min, bad)`` where ``bad`` is the flat index of the first
    node whose Hessian is not positive definite (-1 if none).
    """
    phi = np.ascontiguousarray(phi, dtype=float)
    A = np.ascontiguousarray(A, dtype=float)
    h = np.asarray(h, dtype=float)
    if _accel.get_backend() == "numba":
        n = phi.ndim
        phi3 = phi.reshape(phi.shape + (1,) * (3 - n))
        rhs, mu, bad = torus_logdet_nb(phi3, A, np.ascontiguousarray(h), n, tol)
        return rhs.reshape(phi.shape), float(mu), int(bad)
    return torus_logdet_np(phi, A, h, tol)
