"""Weighted censored quantile regression.

Contains the check loss, the pseudo-observation augmentation used to turn
a censored fit into an ordinary weighted quantile regression, an exact
vertex-descent linear-programming solver, and the censored regression
rank-score statistic used to pick splitting variables.

Solver
------
The objective ``sum_i w_i * rho_tau(y_i - z_i' b)`` is convex and piecewise
linear, so a minimiser is attained at a vertex: a point interpolating ``q``
observations with linearly independent design rows (the *basis*).  The
solver walks from vertex to vertex.  At each vertex it evaluates the
directional derivative along the ``2q`` edges leaving it, picks the
steepest descent edge, and performs an exact line search over the kinks of
the objective along that edge (a weighted-median step, as in
Barrodale-Roberts).  The first kink at which the slope turns nonnegative
supplies the observation entering the basis.

Degenerate vertices (extra observations with zero residual, common with
duplicated pseudo-observations) are resolved by a symbolic lexicographic
perturbation ``y_i + eps**(i + 1)``.  Under that perturbation every vertex
is nondegenerate, each step strictly decreases the perturbed objective, so
the walk can never cycle, and the terminal vertex is optimal for the
unperturbed problem.  Ties are thereby broken towards the lowest row index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DegenerateDesignError, InsufficientSampleError, NumericalError

ZERO_WEIGHT = 1e-12
Y_INF_FACTOR = 10.0

STATUS_OK = 0
STATUS_INSUFFICIENT = 1
STATUS_DEGENERATE = 2
STATUS_ITERATION_LIMIT = 3


def pinball_loss(residual, tau):
    """Check loss ``u * (tau - 1{u < 0})``; vectorised over ``residual``."""
    u = np.asarray(residual, dtype=float)
    out = u * (tau - (u < 0))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class WeightedQrProblem:
    """Rows ``(responses[i], design[i], weights[i])`` of a weighted fit.

    ``origin`` maps every row back to the training observation it came from
    and ``pseudo`` flags the rows placed at ``y_inf``.
    """

    responses: np.ndarray
    design: np.ndarray
    weights: np.ndarray
    tau: float
    origin: np.ndarray | None = None
    pseudo: np.ndarray | None = None
    y_inf: float | None = None

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        w = np.asarray(self.weights)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")

    @property
    def m(self) -> int:
        return len(self.responses)

    def loss(self, beta) -> float:
        res = self.responses - self.design @ np.asarray(beta, dtype=float)
        return float(np.sum(self.weights * pinball_loss(res, self.tau)))


@dataclass(frozen=True)
class QuantileFit:
    beta: np.ndarray
    objective: float
    effective_n: float
    active_rows: np.ndarray
    iterations: int = 0


@dataclass(frozen=True)
class RankScoreResult:
    statistic: float
    s_vector: np.ndarray
    q_matrix_rank: int
    extra: dict = field(default_factory=dict)


def global_y_inf(y) -> float:
    """Pseudo-response placed far beyond every fitted quantile."""
    return Y_INF_FACTOR * float(np.max(y))


def augment_pseudo_observations(data, u, tau, y_inf=None, rows=None, row_weights=None):
    """Split every partially-censored row into an observed and a pseudo row.

    Parameters
    ----------
    data : SurvivalDataset
    u : array_like or RedistributionWeights
        Redistribution weight per training row.
    tau : float
    y_inf : float, optional
        Pseudo-response.  Defaults to ``10 * max(data.y)``; callers fitting
        node subsets must pass the global value.
    rows : array_like of int, optional
        Restrict to these training rows (in the given order).
    row_weights : array_like, optional
        External weight multiplying both halves of each row (forest
        weights), aligned with ``rows``.
    """
    u = np.asarray(getattr(u, "u", u), dtype=float)
    if u.shape[0] != data.n:
        raise ValueError(f"u has {u.shape[0]} entries, data has {data.n} rows")
    if y_inf is None:
        y_inf = global_y_inf(data.y)
    rows = np.arange(data.n) if rows is None else np.asarray(rows, dtype=np.int64)
    ext = np.ones(len(rows)) if row_weights is None else np.asarray(row_weights, dtype=float)
    y, Z, w, origin, pseudo = _augment(data.y, data.z, u, float(y_inf), rows, ext)
    return WeightedQrProblem(y, Z, w, float(tau), origin, pseudo, float(y_inf))


@njit(cache=True, nogil=True)
def _augment(y, Z, u, y_inf, rows, ext):
    n_split = 0
    for r in rows:
        if u[r] < 1.0:
            n_split += 1
    m = rows.shape[0] + n_split
    q = Z.shape[1]
    ya = np.empty(m)
    za = np.empty((m, q))
    wa = np.empty(m)
    origin = np.empty(m, dtype=np.int64)
    pseudo = np.zeros(m, dtype=np.bool_)
    k = 0
    for t in range(rows.shape[0]):
        r = rows[t]
        ya[k] = y[r]
        za[k] = Z[r]
        wa[k] = ext[t] * u[r]
        origin[k] = r
        k += 1
        if u[r] < 1.0:
            ya[k] = y_inf
            za[k] = Z[r]
            wa[k] = ext[t] * (1.0 - u[r])
            origin[k] = r
            pseudo[k] = True
            k += 1
    return ya, za, wa, origin, pseudo


def weighted_qr_fit(problem: WeightedQrProblem, start=None, max_iter=None) -> QuantileFit:
    """Exact minimiser of the weighted check loss.

    Rows with weight below ``1e-12`` are dropped first.  ``start`` is an
    optional coefficient vector used to pick the initial vertex; it changes
    the path, never the optimal objective.

    Raises
    ------
    InsufficientSampleError
        Fewer than ``q`` positive-weight rows.
    DegenerateDesignError
        The positive-weight design does not have full column rank.
    """
    Z = np.ascontiguousarray(problem.design, dtype=float)
    if Z.ndim != 2:
        raise ValueError("design must be a 2-d array")
    keep = np.flatnonzero(np.asarray(problem.weights) >= ZERO_WEIGHT)
    q = Z.shape[1]
    if len(keep) < q:
        raise InsufficientSampleError(
            f"insufficient effective sample: {len(keep)} positive-weight rows for q={q}"
        )
    y = np.ascontiguousarray(np.asarray(problem.responses, dtype=float)[keep])
    w = np.ascontiguousarray(np.asarray(problem.weights, dtype=float)[keep])
    Zk = np.ascontiguousarray(Z[keep])
    warm = start is not None
    beta0 = np.zeros(q) if start is None else np.asarray(start, dtype=float)
    if max_iter is None:
        max_iter = 50 * (len(keep) + q) + 100
    beta, obj, basis, status, iters = solve_wqr(y, Zk, w, problem.tau, beta0, warm, max_iter)
    _raise_for_status(status, len(keep), q)
    return QuantileFit(beta, float(obj), float(w.sum()), keep[basis], int(iters))


def _raise_for_status(status, m, q):
    if status == STATUS_OK:
        return
    if status == STATUS_INSUFFICIENT:
        raise InsufficientSampleError(f"insufficient effective sample: {m} rows for q={q}")
    if status == STATUS_DEGENERATE:
        raise DegenerateDesignError("degenerate design: positive-weight rows are rank deficient")
    raise NumericalError("quantile regression solver hit its iteration limit")


# --------------------------------------------------------------------------
# numba kernels

@njit(cache=True, nogil=True)
def _invert_small(A):
    q = A.shape[0]
    M = A.copy()
    inv = np.eye(q)
    scale = 0.0
    for i in range(q):
        for j in range(q):
            a = abs(M[i, j])
            if a > scale:
                scale = a
    if scale == 0.0:
        return inv, False
    for col in range(q):
        piv = col
        best = abs(M[col, col])
        for r in range(col + 1, q):
            a = abs(M[r, col])
            if a > best:
                best = a
                piv = r
        if best <= 1e-13 * scale:
            return inv, False
        if piv != col:
            for j in range(q):
                tmp = M[col, j]
                M[col, j] = M[piv, j]
                M[piv, j] = tmp
                tmp = inv[col, j]
                inv[col, j] = inv[piv, j]
                inv[piv, j] = tmp
        d = M[col, col]
        for j in range(q):
            M[col, j] /= d
            inv[col, j] /= d
        for r in range(q):
            if r != col:
                f = M[r, col]
                if f != 0.0:
                    for j in range(q):
                        M[r, j] -= f * M[col, j]
                        inv[r, j] -= f * inv[col, j]
    return inv, True


@njit(cache=True, nogil=True)
def _cold_start(y, Z, w, tau):
    m, q = Z.shape
    A = np.zeros((q, q))
    b = np.zeros(q)
    for i in range(m):
        wi = w[i]
        for j in range(q):
            zij = wi * Z[i, j]
            b[j] += zij * y[i]
            for k in range(q):
                A[j, k] += zij * Z[i, k]
    inv, ok = _invert_small(A)
    beta = np.zeros(q)
    if ok:
        for j in range(q):
            acc = 0.0
            for k in range(q):
                acc += inv[j, k] * b[k]
            beta[j] = acc
    intercept = True
    for i in range(m):
        if Z[i, 0] != 1.0:
            intercept = False
            break
    if intercept:
        e = np.empty(m)
        total = 0.0
        for i in range(m):
            acc = y[i]
            for j in range(q):
                acc -= Z[i, j] * beta[j]
            e[i] = acc
            total += w[i]
        order = np.argsort(e, kind="mergesort")
        cum = 0.0
        target = tau * total
        for t in range(m):
            cum += w[order[t]]
            if cum >= target:
                beta[0] += e[order[t]]
                break
    return beta


@njit(cache=True, nogil=True)
def _lex_sign(i, G, basis, q):
    # sign of the perturbed residual of a zero-residual non-basis row
    best = i
    sign = 1.0
    for k in range(q):
        g = G[i, k]
        if abs(g) > 1e-11 and basis[k] < best:
            best = basis[k]
            sign = -1.0 if g > 0 else 1.0
    return sign


@njit(cache=True, nogil=True)
def _lex_before(a, b, ca, cb, G, basis, q):
    # True when breakpoint a precedes b under the perturbation (equal real t)
    best = a if a < b else b
    coef = 1.0 / ca if a < b else -1.0 / cb
    for k in range(q):
        h = basis[k]
        v = -G[a, k] / ca + G[b, k] / cb
        if abs(v) > 1e-11 and h < best:
            best = h
            coef = v
    return coef < 0.0


@njit(cache=True, nogil=True)
def _lex_sort_group(gidx, gcs, ng, G, basis, q):
    # insertion sort of tied kinks by the perturbation order
    for a in range(1, ng):
        ci = gidx[a]
        cc = gcs[a]
        b = a - 1
        while b >= 0 and _lex_before(ci, gidx[b], cc, gcs[b], G, basis, q):
            gidx[b + 1] = gidx[b]
            gcs[b + 1] = gcs[b]
            b -= 1
        gidx[b + 1] = ci
        gcs[b + 1] = cc


@njit(cache=True, nogil=True)
def _objective(y, Z, w, tau, beta):
    m, q = Z.shape
    total = 0.0
    for i in range(m):
        r = y[i]
        for j in range(q):
            r -= Z[i, j] * beta[j]
        if r < 0:
            total += w[i] * r * (tau - 1.0)
        else:
            total += w[i] * r * tau
    return total


@njit(cache=True, nogil=True)
def _try_add(idx, Z, E, k, v):
    # Gram-Schmidt step: accept row idx if it is independent of E[:k]
    q = Z.shape[1]
    nz2 = 0.0
    for j in range(q):
        v[j] = Z[idx, j]
        nz2 += v[j] * v[j]
    if nz2 == 0.0:
        return False
    for l in range(k):
        d = 0.0
        for j in range(q):
            d += v[j] * E[l, j]
        for j in range(q):
            v[j] -= d * E[l, j]
    nv2 = 0.0
    for j in range(q):
        nv2 += v[j] * v[j]
    if nv2 <= 1e-14 * nz2:
        return False
    nv = np.sqrt(nv2)
    for j in range(q):
        E[k, j] = v[j] / nv
    return True


@njit(cache=True, nogil=True)
def solve_wqr(y, Z, w, tau, beta0, warm, max_iter):
    """Vertex-descent solver; all weights must already be positive.

    Returns ``(beta, objective, basis, status, iterations)``.
    """
    m, q = Z.shape
    basis = np.full(q, -1, dtype=np.int64)
    if m < q:
        return np.zeros(q), 0.0, basis, STATUS_INSUFFICIENT, 0
    if warm:
        beta = beta0.copy()
    else:
        beta = _cold_start(y, Z, w, tau)

    r = np.empty(m)
    for i in range(m):
        acc = y[i]
        for j in range(q):
            acc -= Z[i, j] * beta[j]
        r[i] = abs(acc)
    # rows closest to the starting fit, lowest index first on ties; a few
    # linear scans usually suffice, a full sort covers the rest
    E = np.zeros((q, q))
    v = np.empty(q)
    taken = np.zeros(m, dtype=np.bool_)
    k = 0
    tries = 0
    while k < q and tries < 4 * q and tries < m:
        idx = -1
        best = np.inf
        for i in range(m):
            if not taken[i] and r[i] < best:
                best = r[i]
                idx = i
        taken[idx] = True
        tries += 1
        if _try_add(idx, Z, E, k, v):
            basis[k] = idx
            k += 1
    if k < q and tries < m:
        order = np.argsort(r, kind="mergesort")
        for t in range(m):
            idx = order[t]
            if taken[idx]:
                continue
            if _try_add(idx, Z, E, k, v):
                basis[k] = idx
                k += 1
                if k == q:
                    break
    if k < q:
        return np.zeros(q), 0.0, basis, STATUS_DEGENERATE, 0

    ymax = 0.0
    zmax = 0.0
    wsum = 0.0
    for i in range(m):
        if abs(y[i]) > ymax:
            ymax = abs(y[i])
        wsum += w[i]
        for j in range(q):
            if abs(Z[i, j]) > zmax:
                zmax = abs(Z[i, j])
    tol_r = 1e-12 * (1.0 + ymax)
    tol_d = 1e-12 * wsum * (1.0 + zmax)

    B = np.empty((q, q))
    for a in range(q):
        for j in range(q):
            B[a, j] = Z[basis[a], j]
    Binv, ok = _invert_small(B)
    if not ok:
        return np.zeros(q), 0.0, basis, STATUS_DEGENERATE, 0
    inbasis = np.zeros(m, dtype=np.bool_)
    for a in range(q):
        inbasis[basis[a]] = True

    G = np.empty((m, q))
    s = np.zeros(m)
    grad = np.empty(q)
    cand = np.empty(m, dtype=np.int64)
    ts = np.empty(m)
    cs = np.empty(m)
    gidx = np.empty(m, dtype=np.int64)
    gcs = np.empty(m)
    status = STATUS_ITERATION_LIMIT
    it = 0
    while it < max_iter:
        for j in range(q):
            acc = 0.0
            for a in range(q):
                acc += Binv[j, a] * y[basis[a]]
            beta[j] = acc
        for i in range(m):
            acc = y[i]
            for j in range(q):
                acc -= Z[i, j] * beta[j]
            r[i] = acc
            for j in range(q):
                g = 0.0
                for l in range(q):
                    g += Z[i, l] * Binv[l, j]
                G[i, j] = g
        for j in range(q):
            grad[j] = 0.0
        for i in range(m):
            if inbasis[i]:
                r[i] = 0.0
                continue
            if r[i] > tol_r:
                si = 1.0
            elif r[i] < -tol_r:
                si = -1.0
            else:
                r[i] = 0.0
                si = _lex_sign(i, G, basis, q)
            s[i] = si
            psi = tau if si > 0 else tau - 1.0
            for j in range(q):
                grad[j] += w[i] * psi * G[i, j]

        best_d = -tol_d
        bj = -1
        bsig = 0.0
        for j in range(q):
            wh = w[basis[j]]
            dplus = -grad[j] + wh * (1.0 - tau)
            dminus = grad[j] + wh * tau
            if dplus < best_d:
                best_d = dplus
                bj = j
                bsig = 1.0
            if dminus < best_d:
                best_d = dminus
                bj = j
                bsig = -1.0
        if bj < 0:
            status = STATUS_OK
            break

        cmax = 0.0
        for i in range(m):
            if abs(G[i, bj]) > cmax:
                cmax = abs(G[i, bj])
        ctol = 1e-12 * cmax
        nc = 0
        for i in range(m):
            if inbasis[i]:
                continue
            c = bsig * G[i, bj]
            if abs(c) <= ctol:
                continue
            if s[i] * c > 0:
                t = r[i] / c
                if t < 0.0:
                    t = 0.0
                cand[nc] = i
                ts[nc] = t
                cs[nc] = c
                nc += 1
        if nc == 0:
            status = STATUS_DEGENERATE
            break
        # walk the kinks in increasing step length; near-equal kinks are
        # ordered by the perturbation.  The first few groups are found by
        # linear scans, the remainder by one sort.
        slope = best_d
        enter = -1
        remaining = nc
        steps = 0
        while remaining > 0 and steps < 8:
            tmin = np.inf
            for a in range(remaining):
                if ts[a] < tmin:
                    tmin = ts[a]
            lim = tmin + 1e-12 * (1.0 + abs(tmin))
            ng = 0
            keep = 0
            for a in range(remaining):
                if ts[a] <= lim:
                    gidx[ng] = cand[a]
                    gcs[ng] = cs[a]
                    ng += 1
                else:
                    cand[keep] = cand[a]
                    ts[keep] = ts[a]
                    cs[keep] = cs[a]
                    keep += 1
            remaining = keep
            _lex_sort_group(gidx, gcs, ng, G, basis, q)
            for a in range(ng):
                slope += w[gidx[a]] * abs(gcs[a])
                if slope >= -tol_d:
                    enter = gidx[a]
                    break
            if enter >= 0:
                break
            steps += 1
        if enter < 0 and remaining > 0:
            order = np.argsort(ts[:remaining], kind="mergesort")
            p0 = 0
            while p0 < remaining and enter < 0:
                p1 = p0 + 1
                t0 = ts[order[p0]]
                while p1 < remaining and ts[order[p1]] - t0 <= 1e-12 * (1.0 + abs(t0)):
                    p1 += 1
                ng = 0
                for a in range(p0, p1):
                    gidx[ng] = cand[order[a]]
                    gcs[ng] = cs[order[a]]
                    ng += 1
                _lex_sort_group(gidx, gcs, ng, G, basis, q)
                for a in range(ng):
                    slope += w[gidx[a]] * abs(gcs[a])
                    if slope >= -tol_d:
                        enter = gidx[a]
                        break
                p0 = p1
        if enter < 0:
            status = STATUS_DEGENERATE
            break
        inbasis[basis[bj]] = False
        basis[bj] = enter
        inbasis[enter] = True
        for a in range(q):
            for j in range(q):
                B[a, j] = Z[basis[a], j]
        Binv, ok = _invert_small(B)
        if not ok:
            status = STATUS_DEGENERATE
            break
        it += 1

    if status != STATUS_OK:
        return beta, 0.0, basis, status, it
    obj = _objective(y, Z, w, tau, beta)
    return beta, obj, basis, STATUS_OK, it


# --------------------------------------------------------------------------
# rank scores

def censored_rank_scores(y, Z, u, beta, tau):
    """Censored regression rank scores ``tau - u_i * 1{y_i - z_i' beta < 0}``.

    With ``u`` identically one these are the ordinary regression rank
    scores of the fit.
    """
    res = np.asarray(y, dtype=float) - np.asarray(Z, dtype=float) @ np.asarray(beta, dtype=float)
    u = np.asarray(getattr(u, "u", u), dtype=float)
    return tau - u * (res < 0)


def rank_score_statistic(x_k, Z, a, cutoff=1e-10) -> RankScoreResult:
    """Heterogeneity statistic ``S' Q^+ S`` for one candidate modifier.

    ``S = M' a`` and ``Q = M' M`` where ``M`` is the interaction matrix
    ``diag(x_k) Z`` with its projection on the column space of ``Z``
    removed.  ``Q`` is pseudo-inverted through its eigendecomposition,
    discarding eigenvalues below ``cutoff`` times the largest one.  A
    modifier that is constant within the node scores exactly 0.
    """
    x_k = np.asarray(x_k, dtype=float)
    Z = np.asarray(Z, dtype=float)
    a = np.asarray(a, dtype=float)
    q = Z.shape[1]
    if x_k.size == 0 or np.all(x_k == x_k[0]):
        return RankScoreResult(0.0, np.zeros(q), 0)
    Qz, _ = np.linalg.qr(Z)
    return _rank_score_from_basis(x_k, Z, Qz, a, cutoff)


def _rank_score_from_basis(x_k, Z, Qz, a, cutoff=1e-10):
    lam = x_k[:, None] * Z
    M = lam - Qz @ (Qz.T @ lam)
    S = M.T @ a
    Qm = M.T @ M
    evals, evecs = np.linalg.eigh(Qm)
    keep = evals > cutoff * max(evals[-1], 0.0)
    if not np.any(keep):
        return RankScoreResult(0.0, S, 0)
    proj = evecs[:, keep].T @ S
    stat = float(np.sum(proj * proj / evals[keep]))
    return RankScoreResult(max(stat, 0.0), S, int(keep.sum()))
