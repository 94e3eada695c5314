"""Compiled inner loops for the causal recursions.

Each kernel returns the index of the first step at which the state left
the nonnegative finite cone (or -1); callers turn that into an
InvariantBreach.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def markov_sample(x0, m, u):
    """x[:, k+1] = u[:, k] < P(x=1 at k+1 | x at k), with m of shape (K, 2, 2)."""
    n, k_steps = u.shape
    x = np.empty((n, k_steps + 1), dtype=np.int8)
    for i in range(n):
        xi = x0[i]
        x[i, 0] = xi
        for k in range(k_steps):
            thr = m[k, 1, 1] if xi == 1 else m[k, 1, 0]
            xi = 1 if u[i, k] < thr else 0
            x[i, k + 1] = xi
    return x


@numba.njit(cache=True)
def split_filter(p0_init, p1_init, m, l0, l1):
    """Markov step exp(dt L) followed by multiplication by exp(l0), exp(l1).

    l0, l1 have shape (N, K); returns normalized path (N, K+1, 2), log mass
    path (N, K+1) and the failing step (or -1).
    """
    n, k_steps = l0.shape
    p = np.empty((n, k_steps + 1, 2))
    logs = np.empty((n, k_steps + 1))
    bad = -1
    for i in range(n):
        a = p0_init
        b = p1_init
        acc = 0.0
        p[i, 0, 0] = a
        p[i, 0, 1] = b
        logs[i, 0] = 0.0
        for k in range(k_steps):
            q0 = (m[k, 0, 0] * a + m[k, 0, 1] * b) * np.exp(l0[i, k])
            q1 = (m[k, 1, 0] * a + m[k, 1, 1] * b) * np.exp(l1[i, k])
            tot = q0 + q1
            if not (tot > 0.0 and tot < np.inf) or q0 < 0.0 or q1 < 0.0:
                if bad < 0 or k < bad:
                    bad = k
                break
            a = q0 / tot
            b = q1 / tot
            acc += np.log(tot)
            p[i, k + 1, 0] = a
            p[i, k + 1, 1] = b
            logs[i, k + 1] = acc
    return p, logs, bad


@numba.njit(cache=True)
def euler_filter(p0_init, p1_init, exc, dec, sigma, dy, dt):
    """Euler-Maruyama of dp = dt L p + dy sigma x p, renormalized each step."""
    n, k_steps = dy.shape
    p = np.empty((n, k_steps + 1, 2))
    logs = np.empty((n, k_steps + 1))
    bad = -1
    for i in range(n):
        a = p0_init
        b = p1_init
        acc = 0.0
        p[i, 0, 0] = a
        p[i, 0, 1] = b
        logs[i, 0] = 0.0
        for k in range(k_steps):
            q0 = a + dt * (-exc[k] * a + dec[k] * b)
            q1 = b + dt * (exc[k] * a - dec[k] * b) + dy[i, k] * sigma[k] * b
            tot = q0 + q1
            if not (tot > 0.0 and tot < np.inf) or q0 < 0.0 or q1 < 0.0:
                if bad < 0 or k < bad:
                    bad = k
                break
            a = q0 / tot
            b = q1 / tot
            acc += np.log(tot)
            p[i, k + 1, 0] = a
            p[i, k + 1, 1] = b
            logs[i, k + 1] = acc
    return p, logs, bad
