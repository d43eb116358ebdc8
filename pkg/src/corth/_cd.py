"""Compiled coordinate-descent kernels for the Lasso on a Gram matrix.

Both kernels work on standardized data summarized by ``G = Xs'Xs / n`` and
``c = Xs'(y - ybar) / n`` and minimise

    0.5 * beta' G beta - c' beta + lam * |beta|_1

which equals the (1/2n) least-squares Lasso objective up to a constant.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def cd_solve(G, c, lam, beta, tol, max_iter):
    """Cyclic coordinate descent, updating ``beta`` in place.

    Columns with ``G[j, j] == 0`` (constant columns) are never touched.
    Returns the number of full sweeps performed.
    """
    p = c.shape[0]
    grad = np.zeros(p)
    for k in range(p):
        acc = 0.0
        for j in range(p):
            acc += G[k, j] * beta[j]
        grad[k] = acc
    for sweep in range(max_iter):
        max_delta = 0.0
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            rho = c[j] - grad[j] + gjj * beta[j]
            if rho > lam:
                new = (rho - lam) / gjj
            elif rho < -lam:
                new = (rho + lam) / gjj
            else:
                new = 0.0
            delta = new - beta[j]
            if delta != 0.0:
                beta[j] = new
                for k in range(p):
                    grad[k] += G[k, j] * delta
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
        if max_delta < tol:
            return sweep + 1
    return max_iter


@njit(cache=True, nogil=True)
def cd_path(G, c, lambdas, tol, max_iter):
    """Solve along a decreasing grid of penalties with warm starts."""
    L = lambdas.shape[0]
    p = c.shape[0]
    out = np.zeros((L, p))
    beta = np.zeros(p)
    for i in range(L):
        cd_solve(G, c, lambdas[i], beta, tol, max_iter)
        for j in range(p):
            out[i, j] = beta[j]
    return out
