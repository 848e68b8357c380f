"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--n 600]

Prints one row per kernel with the best-of-repeat time for each backend,
the speedup, and the max abs difference between outputs.
"""

import argparse
import timeit

import numpy as np
from scipy.special import ndtr

from latent_critic import _kernels_py

try:
    from latent_critic import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


def _cases(n, rng):
    p, d, S = 4, 4, 3
    a = rng.standard_normal((60, 60))
    spd = a @ a.T + 60 * np.eye(60)
    x = np.sort(rng.standard_normal(20 * n))
    cdf = ndtr(x)
    a_seq = np.tile(0.9 * np.eye(p), (n, 1, 1))
    q_var = np.full((n, p), 0.1)
    b = rng.standard_normal((d, p))
    r_var = np.full(d, 0.5)
    obs = rng.standard_normal((n, d))
    eps = rng.standard_normal((n, p))
    trans = np.full((S, S), 0.01) + 0.97 * np.eye(S)
    trans /= trans.sum(1, keepdims=True)
    loglik = rng.standard_normal((n, S))
    uni = rng.random(n)
    return {
        "jacobi_eigh (60x60)": ("jacobi_eigh", (spd,)),
        f"ks_sup (n={20 * n})": ("ks_sup", (x, cdf)),
        f"kalman_ffbs (n={n}, p={p})": ("kalman_ffbs", (a_seq, q_var, b, r_var, obs, eps)),
        f"hmm_ffbs (n={n}, S={S})": ("hmm_ffbs", (loglik, trans, 0, uni)),
    }


def _max_diff(a, b, name=""):
    if name == "jacobi_eigh":
        # eigenpairs come back unsorted and the sweep counts may differ
        return _max_diff(np.sort(a[0]), np.sort(b[0]))
    if isinstance(a, tuple):
        return max(_max_diff(u, v) for u, v in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, default=600)
    args = ap.parse_args(argv)
    cases = _cases(args.n, np.random.default_rng(0))
    print(f"{'kernel':32s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s} {'max diff':>10s}")
    for label, (name, call_args) in cases.items():
        f_py = getattr(_kernels_py, name)
        t_py = min(timeit.repeat(lambda: f_py(*call_args), number=1, repeat=args.repeat))
        if _kernels_c is None:
            print(f"{label:32s} {1e3 * t_py:12.2f} {'n/a':>12s}")
            continue
        f_c = getattr(_kernels_c, name)
        t_c = min(timeit.repeat(lambda: f_c(*call_args), number=1, repeat=args.repeat))
        diff = _max_diff(f_py(*call_args), f_c(*call_args), name)
        print(f"{label:32s} {1e3 * t_py:12.2f} {1e3 * t_c:12.2f} {t_py / t_c:7.1f}x {diff:10.1e}")


if __name__ == "__main__":
    main()
