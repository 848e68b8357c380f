"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures, same semantics, same consumption of the caller-supplied
random inputs. Used when the extension is not built or when
``LATENT_CRITIC_PURE_PYTHON`` is set.
"""

import numpy as np


def _round_robin(n):
    """Pairings for one cyclic-by-rounds Jacobi sweep (disjoint pairs per round)."""
    m = n if n % 2 == 0 else n + 1
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        rounds.append(pairs)
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(a_in, tol=1e-14, max_sweeps=100):
    a = np.array(a_in, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    total = float(np.sum(a * a))
    rounds = [
        (np.array([p for p, _ in r], dtype=np.intp), np.array([q for _, q in r], dtype=np.intp))
        for r in _round_robin(n)
        if r
    ]
    sweep = 0
    for sweep in range(max_sweeps):
        off = float(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * tol * total or off < 1e-300:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = np.abs(apq) >= 1e-300
            if sweep > 3:
                g = 100.0 * np.abs(apq)
                negligible = (np.abs(a[p, p]) + g == np.abs(a[p, p])) & (np.abs(a[q, q]) + g == np.abs(a[q, q]))
                a[p[negligible], q[negligible]] = 0.0
                a[q[negligible], p[negligible]] = 0.0
                active &= ~negligible
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            app, aqq = a[p, p], a[q, q]
            theta = (aqq - app) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            # rows, then columns; the disjoint pairs commute within a round
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * cp - s * cq
            a[:, q] = s * cp + c * cq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v, sweep + 1


def ks_sup(x_sorted, cdf_sorted):
    x = np.asarray(x_sorted, dtype=np.float64)
    f = np.asarray(cdf_sorted, dtype=np.float64)
    n = x.size
    if n == 0:
        return 0.0
    first = np.r_[True, x[1:] != x[:-1]]
    starts = np.flatnonzero(first)
    ends = np.r_[starts[1:], n]
    lo = starts / n
    hi = ends / n
    fu = f[starts]
    return float(max(np.max(np.abs(hi - fu)), np.max(np.abs(fu - lo))))


def _psd_chol(m):
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        w, u = np.linalg.eigh(0.5 * (m + m.T))
        w = np.clip(w, 0.0, None)
        # any square root works for sampling
        return u * np.sqrt(w)


def _chol_jitter(m):
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        n = m.shape[0]
        return np.linalg.cholesky(m + (1e-10 * np.trace(m) / n + 1e-300) * np.eye(n))


def kalman_ffbs(a_seq, q_var, b_mat, r_var, x, eps):
    a_seq = np.asarray(a_seq, dtype=np.float64)
    q_var = np.asarray(q_var, dtype=np.float64)
    b = np.asarray(b_mat, dtype=np.float64)
    r_var = np.asarray(r_var, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    n, _ = x.shape
    p = b.shape[1]
    ms = np.zeros((n, p))
    vs = np.zeros((n, p, p))
    ps = np.zeros((n, p, p))
    for t in range(n):
        if t == 0:
            mp = np.zeros(p)
            ps[0] = np.eye(p)
        else:
            mp = a_seq[t] @ ms[t - 1]
            pp = a_seq[t] @ vs[t - 1] @ a_seq[t].T + np.diag(q_var[t])
            ps[t] = 0.5 * (pp + pp.T)
        bp = b @ ps[t]
        s = bp @ b.T + np.diag(r_var)
        ls = _chol_jitter(s)
        gain_t = np.linalg.solve(ls.T, np.linalg.solve(ls, bp))  # S^-1 B P
        ms[t] = mp + gain_t.T @ (x[t] - b @ mp)
        v = ps[t] - gain_t.T @ bp
        vs[t] = 0.5 * (v + v.T)
    z = np.zeros((n, p))
    z[n - 1] = ms[n - 1] + _psd_chol(vs[n - 1]) @ eps[n - 1]
    for t in range(n - 2, -1, -1):
        a = a_seq[t + 1]
        av = a @ vs[t]
        lp = _chol_jitter(ps[t + 1])
        jt = np.linalg.solve(lp.T, np.linalg.solve(lp, av))  # J^T
        mean = ms[t] + jt.T @ (z[t + 1] - a @ ms[t])
        cov = vs[t] - jt.T @ av
        z[t] = mean + _psd_chol(0.5 * (cov + cov.T)) @ eps[t]
    return z


def _categorical(w, u):
    c = np.cumsum(w)
    i = int(np.searchsorted(c, u * c[-1], side="right"))
    if i >= w.size:
        i = int(np.flatnonzero(w > 0)[-1])
    return i


def hmm_ffbs(loglik, trans, s0, uniforms):
    loglik = np.asarray(loglik, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    n, n_states = loglik.shape
    alpha = np.zeros((n, n_states))
    alpha[0, s0] = 1.0
    for t in range(1, n):
        a = (alpha[t - 1] @ trans) * np.exp(loglik[t] - loglik[t].max())
        tot = a.sum()
        if not tot > 0:
            raise ArithmeticError(f"regime filter underflow at t={t}")
        alpha[t] = a / tot
    path = np.zeros(n, dtype=np.intp)
    path[n - 1] = _categorical(alpha[n - 1], uniforms[n - 1])
    for t in range(n - 2, 0, -1):
        path[t] = _categorical(alpha[t] * trans[:, path[t + 1]], uniforms[t])
    path[0] = s0
    return path
