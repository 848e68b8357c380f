# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every function here has a numpy twin in ``_kernels_py`` with the same
signature and semantics; ``_backend`` picks one at import time. Random
inputs (standard normals, uniforms) are always passed in by the caller so
both backends produce the same draws from the same stream.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, exp, log, INFINITY

cnp.import_array()


def jacobi_eigh(a_in, double tol=1e-14, int max_sweeps=100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ``(w, v, sweeps)`` with unsorted eigenvalues ``w`` and
    eigenvectors in the columns of ``v``.
    """
    cdef double[:, ::1] a = np.array(a_in, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t n = a.shape[0]
    v_arr = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] v = v_arr
    cdef Py_ssize_t p, q, k
    cdef int sweep
    cdef double g, off, total, apq, app, aqq, theta, t, c, s, akp, akq
    cdef double tiny = 1e-300

    total = 0.0
    for p in range(n):
        for q in range(n):
            total += a[p, q] * a[p, q]
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        if off <= tol * tol * total or off < tiny:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if fabs(apq) < tiny:
                    continue
                g = 100.0 * fabs(apq)
                if sweep > 3 and fabs(a[p, p]) + g == fabs(a[p, p]) and fabs(a[q, q]) + g == fabs(a[q, q]):
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    if k == p or k == q:
                        continue
                    akp = a[p, k]
                    akq = a[q, k]
                    a[p, k] = c * akp - s * akq
                    a[q, k] = s * akp + c * akq
                    a[k, p] = a[p, k]
                    a[k, q] = a[q, k]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    akp = v[k, p]
                    akq = v[k, q]
                    v[k, p] = c * akp - s * akq
                    v[k, q] = s * akp + c * akq
    w = np.array([a[k, k] for k in range(n)], dtype=np.float64)
    return w, v_arr, sweep + 1


def ks_sup(x_sorted, cdf_sorted):
    """Two-sided KS distance for a sorted sample, ties merged."""
    cdef double[::1] x = np.ascontiguousarray(x_sorted, dtype=np.float64)
    cdef double[::1] f = np.ascontiguousarray(cdf_sorted, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i = 0, j
    cdef double d = 0.0, lo, hi
    while i < n:
        j = i
        while j + 1 < n and x[j + 1] == x[i]:
            j += 1
        lo = <double>i / n
        hi = <double>(j + 1) / n
        if fabs(hi - f[i]) > d:
            d = fabs(hi - f[i])
        if fabs(f[i] - lo) > d:
            d = fabs(f[i] - lo)
        i = j + 1
    return d


# --- small dense helpers on row-major buffers ------------------------------

cdef int _chol(double* a, double* l, Py_ssize_t n, bint psd) nogil:
    """Lower Cholesky of a (n x n). With psd=True, nonpositive pivots
    zero their column instead of failing. Returns -1 or the failing index."""
    cdef Py_ssize_t i, j, k
    cdef double s, scale = 0.0
    for i in range(n):
        if a[i * n + i] > scale:
            scale = a[i * n + i]
    for i in range(n * n):
        l[i] = 0.0
    for j in range(n):
        s = a[j * n + j]
        for k in range(j):
            s -= l[j * n + k] * l[j * n + k]
        if s <= 1e-14 * scale or s <= 0.0:
            if not psd:
                return j
            l[j * n + j] = 0.0
            continue
        l[j * n + j] = sqrt(s)
        for i in range(j + 1, n):
            s = a[i * n + j]
            for k in range(j):
                s -= l[i * n + k] * l[j * n + k]
            l[i * n + j] = s / l[j * n + j]
    return -1


cdef int _chol_jitter(double* a, double* l, Py_ssize_t n) nogil:
    cdef Py_ssize_t i
    cdef double tr = 0.0
    cdef int info = _chol(a, l, n, False)
    if info < 0:
        return -1
    for i in range(n):
        tr += a[i * n + i]
    for i in range(n):
        a[i * n + i] += 1e-10 * tr / n + 1e-300
    return _chol(a, l, n, False)


cdef void _chol_solve_rows(double* l, double* b, Py_ssize_t n, Py_ssize_t m) nogil:
    """Solve (L L^T) X = B in place, B stored as m right-hand sides of
    length n laid out row-wise (B is m x n)."""
    cdef Py_ssize_t r, i, k
    cdef double s
    for r in range(m):
        for i in range(n):
            s = b[r * n + i]
            for k in range(i):
                s -= l[i * n + k] * b[r * n + k]
            b[r * n + i] = s / l[i * n + i]
        for i in range(n - 1, -1, -1):
            s = b[r * n + i]
            for k in range(i + 1, n):
                s -= l[k * n + i] * b[r * n + k]
            b[r * n + i] = s / l[i * n + i]


def kalman_ffbs(a_seq, q_var, b_mat, r_var, x, eps):
    """Forward filtering, backward sampling for a time-varying LDS.

    z_0 ~ N(0, I); z_t = A_t z_{t-1} + N(0, diag(q_var[t]));
    x_t = B z_t + N(0, diag(r_var)). ``eps`` holds (n, p) standard normals.
    Returns the sampled path as an (n, p) array.
    """
    cdef double[:, :, ::1] A = np.ascontiguousarray(a_seq, dtype=np.float64)
    cdef double[:, ::1] QV = np.ascontiguousarray(q_var, dtype=np.float64)
    cdef double[:, ::1] B = np.ascontiguousarray(b_mat, dtype=np.float64)
    cdef double[::1] RV = np.ascontiguousarray(r_var, dtype=np.float64)
    cdef double[:, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] E = np.ascontiguousarray(eps, dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], p = B.shape[1]
    cdef Py_ssize_t t, i, j, k

    ms_arr = np.zeros((n, p))
    vs_arr = np.zeros((n, p, p))
    ps_arr = np.zeros((n, p, p))
    z_arr = np.zeros((n, p))
    cdef double[:, ::1] ms = ms_arr
    cdef double[:, :, ::1] vs = vs_arr
    cdef double[:, :, ::1] ps = ps_arr
    cdef double[:, ::1] z = z_arr

    cdef double[::1] mp = np.zeros(p)
    cdef double[:, ::1] bp = np.zeros((d, p))      # B P
    cdef double[:, ::1] kg = np.zeros((p, d))      # P B' -> gain after solve
    cdef double[:, ::1] S = np.zeros((d, d))
    cdef double[:, ::1] LS = np.zeros((d, d))
    cdef double[::1] innov = np.zeros(d)
    cdef double[:, ::1] tmp = np.zeros((p, p))
    cdef double[:, ::1] LP = np.zeros((p, p))
    cdef double[:, ::1] AV = np.zeros((p, p))      # A_{t+1} V_t
    cdef double[:, ::1] J = np.zeros((p, p))
    cdef double[::1] mean = np.zeros(p)
    cdef double[::1] dz = np.zeros(p)
    cdef double acc
    cdef int info

    for t in range(n):
        if t == 0:
            for i in range(p):
                mp[i] = 0.0
                for j in range(p):
                    ps[0, i, j] = 1.0 if i == j else 0.0
        else:
            for i in range(p):
                acc = 0.0
                for j in range(p):
                    acc += A[t, i, j] * ms[t - 1, j]
                mp[i] = acc
            for i in range(p):
                for j in range(p):
                    acc = 0.0
                    for k in range(p):
                        acc += A[t, i, k] * vs[t - 1, k, j]
                    tmp[i, j] = acc
            for i in range(p):
                for j in range(p):
                    acc = 0.0
                    for k in range(p):
                        acc += tmp[i, k] * A[t, j, k]
                    ps[t, i, j] = acc
            for i in range(p):
                ps[t, i, i] += QV[t, i]
            _symmetrize(&ps[t, 0, 0], p)
        for i in range(d):
            for j in range(p):
                acc = 0.0
                for k in range(p):
                    acc += B[i, k] * ps[t, k, j]
                bp[i, j] = acc
                kg[j, i] = acc
        for i in range(d):
            for j in range(d):
                acc = 0.0
                for k in range(p):
                    acc += bp[i, k] * B[j, k]
                S[i, j] = acc
            S[i, i] += RV[i]
        for i in range(d):
            acc = X[t, i]
            for k in range(p):
                acc -= B[i, k] * mp[k]
            innov[i] = acc
        info = _chol_jitter(&S[0, 0], &LS[0, 0], d)
        if info >= 0:
            raise ArithmeticError("innovation covariance not positive definite at t=%d" % t)
        _chol_solve_rows(&LS[0, 0], &kg[0, 0], d, p)
        for j in range(p):
            acc = mp[j]
            for i in range(d):
                acc += kg[j, i] * innov[i]
            ms[t, j] = acc
        for j in range(p):
            for k in range(p):
                acc = ps[t, j, k]
                for i in range(d):
                    acc -= kg[j, i] * bp[i, k]
                vs[t, j, k] = acc
        _symmetrize(&vs[t, 0, 0], p)

    _chol(&vs[n - 1, 0, 0], &LP[0, 0], p, True)
    for i in range(p):
        acc = ms[n - 1, i]
        for k in range(p):
            acc += LP[i, k] * E[n - 1, k]
        z[n - 1, i] = acc
    for t in range(n - 2, -1, -1):
        for i in range(p):
            for j in range(p):
                acc = 0.0
                for k in range(p):
                    acc += A[t + 1, i, k] * vs[t, k, j]
                AV[i, j] = acc
                J[j, i] = acc
                tmp[i, j] = ps[t + 1, i, j]
        info = _chol_jitter(&tmp[0, 0], &LP[0, 0], p)
        if info >= 0:
            raise ArithmeticError("predictive covariance not positive definite at t=%d" % (t + 1))
        _chol_solve_rows(&LP[0, 0], &J[0, 0], p, p)
        for i in range(p):
            acc = z[t + 1, i]
            for k in range(p):
                acc -= A[t + 1, i, k] * ms[t, k]
            dz[i] = acc
        for j in range(p):
            acc = ms[t, j]
            for i in range(p):
                acc += J[j, i] * dz[i]
            mean[j] = acc
        for j in range(p):
            for k in range(p):
                acc = vs[t, j, k]
                for i in range(p):
                    acc -= J[j, i] * AV[i, k]
                tmp[j, k] = acc
        _symmetrize(&tmp[0, 0], p)
        _chol(&tmp[0, 0], &LP[0, 0], p, True)
        for i in range(p):
            acc = mean[i]
            for k in range(p):
                acc += LP[i, k] * E[t, k]
            z[t, i] = acc
    return z_arr


cdef void _symmetrize(double* a, Py_ssize_t n) nogil:
    cdef Py_ssize_t i, j
    cdef double v
    for i in range(n):
        for j in range(i + 1, n):
            v = 0.5 * (a[i * n + j] + a[j * n + i])
            a[i * n + j] = v
            a[j * n + i] = v


def hmm_ffbs(loglik, trans, int s0, uniforms):
    """Forward filtering, backward sampling for a discrete Markov chain.

    ``loglik[t, j]`` is the log evidence of step t under regime j (row 0 is
    ignored because the first regime is pinned to ``s0``). ``trans[i, j]``
    is Pr(s_t = j | s_{t-1} = i). Returns the sampled path.
    """
    cdef double[:, ::1] L = np.ascontiguousarray(loglik, dtype=np.float64)
    cdef double[:, ::1] T = np.ascontiguousarray(trans, dtype=np.float64)
    cdef double[::1] U = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef Py_ssize_t n = L.shape[0], S = L.shape[1]
    cdef Py_ssize_t t, i, j
    alpha_arr = np.zeros((n, S))
    cdef double[:, ::1] alpha = alpha_arr
    path_arr = np.zeros(n, dtype=np.intp)
    cdef Py_ssize_t[::1] path = path_arr
    cdef double[::1] w = np.zeros(S)
    cdef double mx, tot, acc, u

    alpha[0, s0] = 1.0
    for t in range(1, n):
        mx = -INFINITY
        for j in range(S):
            if L[t, j] > mx:
                mx = L[t, j]
        tot = 0.0
        for j in range(S):
            acc = 0.0
            for i in range(S):
                acc += alpha[t - 1, i] * T[i, j]
            acc *= exp(L[t, j] - mx)
            alpha[t, j] = acc
            tot += acc
        if not tot > 0.0:
            raise ArithmeticError("regime filter underflow at t=%d" % t)
        for j in range(S):
            alpha[t, j] /= tot

    path[n - 1] = _categorical(&alpha[n - 1, 0], S, U[n - 1])
    for t in range(n - 2, 0, -1):
        j = path[t + 1]
        for i in range(S):
            w[i] = alpha[t, i] * T[i, j]
        path[t] = _categorical(&w[0], S, U[t])
    path[0] = s0
    return path_arr


cdef Py_ssize_t _categorical(double* w, Py_ssize_t S, double u) nogil:
    cdef Py_ssize_t i
    cdef double tot = 0.0, acc = 0.0
    for i in range(S):
        tot += w[i]
    u *= tot
    for i in range(S):
        acc += w[i]
        if u < acc:
            return i
    for i in range(S - 1, -1, -1):
        if w[i] > 0.0:
            return i
    return S - 1
