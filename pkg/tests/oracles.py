"""Independent reference implementations used by the tests."""

import itertools

import numpy as np


def check_loss(y, Z, w, tau, beta):
    r = y - Z @ beta
    return float(np.sum(w * r * (tau - (r < 0))))


def vertex_oracle(y, Z, w, tau):
    """Minimum weighted check loss over every exactly-interpolating q-subset.

    Returns ``(best_loss, best_beta)``.  Rows with zero weight still count
    as candidate vertices; they do not change the minimum.
    """
    n, q = Z.shape
    best = (np.inf, None)
    for subset in itertools.combinations(range(n), q):
        Zs = Z[list(subset)]
        if abs(np.linalg.det(Zs)) < 1e-10:
            continue
        beta = np.linalg.solve(Zs, y[list(subset)])
        loss = check_loss(y, Z, w, tau, beta)
        if loss < best[0]:
            best = (loss, beta)
    return best


def linprog_qr(y, Z, w, tau):
    """Weighted quantile regression as an LP solved by HiGHS."""
    from scipy.optimize import linprog

    n, q = Z.shape
    c = np.concatenate([np.zeros(2 * q), tau * w, (1 - tau) * w])
    A = np.hstack([Z, -Z, np.eye(n), -np.eye(n)])
    res = linprog(c, A_eq=A, b_eq=y, bounds=(0, None), method="highs")
    return float(res.fun), res.x[:q] - res.x[q:2 * q]


def dense_rank_score(x_k, Z, a):
    """``S' Q^{-1} S`` with an explicit projector and an explicit inverse."""
    n = Z.shape[0]
    P = Z @ np.linalg.inv(Z.T @ Z) @ Z.T
    lam = np.diag(x_k) @ Z
    M = (np.eye(n) - P) @ lam
    S = M.T @ a
    Q = M.T @ M
    return float(S @ np.linalg.inv(Q) @ S)
