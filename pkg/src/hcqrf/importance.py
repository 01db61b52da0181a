"""Permutation variable importance and its split by treatment arm.

For every training row the out-of-bag coefficient estimate is compared
with the estimate obtained after replacing the row's value of one modifier
by that of another row (a column permutation).  The increase of the
censored check loss, summed over rows and averaged over permutations, is
the modifier's importance.  With a binary treatment the row-wise increases
are also averaged within each arm; a modifier that only moves the
treatment coefficient shows up in the difference between the two arms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .cqr import solve_wqr
from .errors import DataError
from .forest import Forest, oob_beta, oob_tree_mask  # noqa: F401


@dataclass(frozen=True)
class ImportanceReport:
    """Importance of every modifier.

    ``total_vi[k]`` is the mean over permutations of the summed loss
    increase; ``vi_z0`` and ``vi_z1`` are per-row means within each arm,
    so ``n0 * vi_z0 + n1 * vi_z1 == total_vi``.  The ``*_by_perm`` arrays
    keep the per-permutation values (shape ``(p, M)``).
    """

    modifier_names: tuple
    total_vi: np.ndarray
    vi_z0: np.ndarray | None
    vi_z1: np.ndarray | None
    interaction_vi: np.ndarray | None
    m_permutations: int
    tau: float
    n_rows_used: int
    n_rows_skipped: int
    arm_sizes: tuple | None = None
    total_by_perm: np.ndarray | None = field(default=None, repr=False)
    z0_by_perm: np.ndarray | None = field(default=None, repr=False)
    z1_by_perm: np.ndarray | None = field(default=None, repr=False)

    @property
    def decomposed(self) -> bool:
        return self.vi_z0 is not None

    def ranking(self, key="total_vi") -> list:
        values = getattr(self, key)
        order = np.argsort(-values, kind="mergesort")
        return [(self.modifier_names[k], float(values[k])) for k in order]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["modifier", "total_vi", "vi_z0", "vi_z1", "interaction_vi"])
            for k, name in enumerate(self.modifier_names):
                row = [name, repr(float(self.total_vi[k]))]
                if self.decomposed:
                    row += [repr(float(v[k])) for v in (self.vi_z0, self.vi_z1, self.interaction_vi)]
                else:
                    row += ["", "", ""]
                w.writerow(row)

    def format(self) -> str:
        key = "interaction_vi" if self.decomposed else "total_vi"
        lines = [f"variable importance at tau={self.tau:g} (M={self.m_permutations}, "
                 f"rows used {self.n_rows_used}, skipped {self.n_rows_skipped})"]
        header = f"{'modifier':<16}{'total_vi':>14}"
        if self.decomposed:
            header += f"{'vi_z0':>14}{'vi_z1':>14}{'interaction':>14}"
        lines.append(header)
        idx = {n: i for i, n in enumerate(self.modifier_names)}
        for name, _ in self.ranking(key):
            k = idx[name]
            line = f"{name:<16}{self.total_vi[k]:>14.5g}"
            if self.decomposed:
                line += f"{self.vi_z0[k]:>14.5g}{self.vi_z1[k]:>14.5g}{self.interaction_vi[k]:>14.5g}"
            lines.append(line)
        return "\n".join(lines)


@njit(cache=True, nogil=True)
def _censored_loss(y, zb, u, y_inf, tau):
    r = y - zb
    obs = r * (tau - 1.0) if r < 0 else r * tau
    if u >= 1.0:
        return u * obs
    ri = y_inf - zb
    pse = ri * (tau - 1.0) if ri < 0 else ri * tau
    return u * obs + (1.0 - u) * pse


@njit(cache=True, nogil=True)
def _leaf_of(feature, threshold, left, right, root, x):
    node = root
    while left[node] >= 0:
        if x[feature[node]] <= threshold[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@njit(cache=True, nogil=True)
def _fit_from_leaves(leaves, n_used, leaf_start, leaf_count, leaf_rows, y, Z, u, y_inf,
                     tau, w, mark, beta0, warm):
    # w and mark are zeroed scratch arrays of length n, restored on exit
    q = Z.shape[1]
    n = Z.shape[0]
    ns = 0
    for b in range(leaves.shape[0]):
        node = leaves[b]
        if node < 0:
            continue
        c = leaf_count[node]
        s = leaf_start[node]
        inv = 1.0 / c
        for a in range(c):
            r = leaf_rows[s + a]
            if not mark[r]:
                mark[r] = True
                ns += 1
            w[r] += inv
    sup = np.empty(ns, dtype=np.int64)
    k = 0
    for r in range(n):
        if mark[r]:
            sup[k] = r
            k += 1
    m = 0
    for a in range(ns):
        m += 2 if u[sup[a]] < 1.0 else 1
    ya = np.empty(m)
    za = np.empty((m, q))
    wa = np.empty(m)
    k = 0
    for a in range(ns):
        r = sup[a]
        wr = w[r] / n_used
        ya[k] = y[r]
        za[k] = Z[r]
        wa[k] = wr * u[r]
        k += 1
        if u[r] < 1.0:
            ya[k] = y_inf
            za[k] = Z[r]
            wa[k] = wr * (1.0 - u[r])
            k += 1
        w[r] = 0.0
        mark[r] = False
    if ns < 5 * q:
        return np.full(q, np.nan), 1
    beta, _, _, status, _ = solve_wqr(ya, za, wa, tau, beta0, warm, 50 * m + 100)
    return beta, status


@njit(cache=True, nogil=True)
def _importance_kernel(X, y, Z, u, y_inf, tau, feature, threshold, left, right, roots,
                       leaf_start, leaf_count, leaf_rows, oob, rows, perms, ks):
    n, q = Z.shape
    B = roots.shape[0]
    nr = rows.shape[0]
    M = perms.shape[0]
    w = np.zeros(n)
    mark = np.zeros(n, dtype=np.bool_)
    base_leaves = np.full((nr, B), -1, dtype=np.int64)
    base_beta = np.empty((nr, q))
    base_loss = np.empty(nr)
    n_used = np.zeros(nr, dtype=np.int64)
    ok = np.ones(nr, dtype=np.bool_)
    dummy = np.zeros(q)
    for t in range(nr):
        i = rows[t]
        for b in range(B):
            if oob[i, b]:
                base_leaves[t, b] = _leaf_of(feature, threshold, left, right, roots[b], X[i])
                n_used[t] += 1
        beta, st = _fit_from_leaves(base_leaves[t], n_used[t], leaf_start, leaf_count,
                                    leaf_rows, y, Z, u, y_inf, tau, w, mark, dummy, False)
        if st != 0:
            ok[t] = False
            continue
        base_beta[t] = beta
        zb = 0.0
        for j in range(q):
            zb += Z[i, j] * beta[j]
        base_loss[t] = _censored_loss(y[i], zb, u[i], y_inf, tau)
    diffs = np.zeros((ks.shape[0], M, nr))
    failed = 0
    leaves = np.empty(B, dtype=np.int64)
    x = np.empty(X.shape[1])
    for a in range(ks.shape[0]):
        k = ks[a]
        for mm in range(M):
            for t in range(nr):
                if not ok[t]:
                    continue
                i = rows[t]
                for c in range(X.shape[1]):
                    x[c] = X[i, c]
                x[k] = X[perms[mm, i], k]
                same = True
                for b in range(B):
                    if base_leaves[t, b] >= 0:
                        leaves[b] = _leaf_of(feature, threshold, left, right, roots[b], x)
                        if leaves[b] != base_leaves[t, b]:
                            same = False
                    else:
                        leaves[b] = -1
                if same:
                    continue
                beta, st = _fit_from_leaves(leaves, n_used[t], leaf_start, leaf_count,
                                            leaf_rows, y, Z, u, y_inf, tau, w, mark,
                                            base_beta[t], True)
                if st != 0:
                    failed += 1
                    continue
                zb = 0.0
                for j in range(q):
                    zb += Z[i, j] * beta[j]
                diffs[a, mm, t] = _censored_loss(y[i], zb, u[i], y_inf, tau) - base_loss[t]
    return diffs, ok, base_beta, failed


def _is_binary_treatment(z):
    return z.shape[1] == 2 and np.all(np.isin(z[:, 1], (0.0, 1.0)))


def permutation_matrix(n, M, seed):
    """``M`` independent full shuffles of ``range(n)``, one per row."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 3]))
    return np.stack([rng.permutation(n) for _ in range(M)]).astype(np.int64)


def oob_baseline(forest: Forest, tau=None):
    """Out-of-bag coefficient estimates for every training row.

    Returns ``(betas, usable)``; rows without OOB trees or with too small
    a support are flagged unusable and carry NaN.
    """
    _, ok, betas, _ = _run(forest, tau, np.zeros((0, forest.data.n), dtype=np.int64),
                           np.zeros(0, dtype=np.int64))
    betas = np.where(ok[:, None], betas, np.nan)
    return betas, ok


def _run(forest, tau, perms, ks):
    data = forest.data
    tau = forest.tau if tau is None else float(tau)
    pk = forest.packed
    oob = oob_tree_mask(forest)
    rows = np.arange(data.n, dtype=np.int64)
    u = np.ascontiguousarray(forest.u_at(tau))
    return _importance_kernel(
        data.x, data.y, data.z, u, forest.y_inf, tau, pk.feature, pk.threshold, pk.left,
        pk.right, pk.roots, pk.leaf_start, pk.leaf_count, pk.leaf_rows, oob, rows,
        np.ascontiguousarray(perms), np.ascontiguousarray(ks, dtype=np.int64),
    )


def permutation_importance(forest: Forest, tau=None, M=100, seed=0, perms=None,
                           decompose=None) -> ImportanceReport:
    """Permutation importance of every modifier.

    Parameters
    ----------
    forest : Forest
    tau : float, optional
        Defaults to the forest's level.
    M : int
        Number of permutations; the same ``M`` shuffles serve every modifier.
    seed : int
    perms : ndarray of shape (M, n), optional
        Explicit permutations (overrides ``M`` and ``seed``).
    decompose : bool, optional
        Split the importance by treatment arm.  Defaults to True when ``z``
        is an intercept plus one 0/1 column.
    """
    data = forest.data
    if perms is None:
        if M < 1:
            raise ValueError("need at least one permutation")
        perms = permutation_matrix(data.n, M, seed)
    perms = np.asarray(perms, dtype=np.int64)
    if perms.ndim != 2 or perms.shape[1] != data.n or perms.shape[0] < 1:
        raise ValueError("perms must have shape (M, n) with M >= 1")
    binary = _is_binary_treatment(data.z)
    if decompose is None:
        decompose = binary
    elif decompose and not binary:
        raise DataError("decomposition requires binary treatment")
    ks = np.arange(data.p, dtype=np.int64)
    diffs, ok, _, _ = _run(forest, tau, perms, ks)
    used = ok
    if not used.any():
        raise DataError("no row has out-of-bag trees; cannot compute importance")
    d = diffs[:, :, used]
    total_by_perm = d.sum(axis=2)
    total = total_by_perm.mean(axis=1)
    z0 = z1 = inter = z0p = z1p = None
    arms = None
    if decompose:
        arm = data.z[used, 1]
        n1 = int(np.sum(arm == 1.0))
        n0 = int(np.sum(arm == 0.0))
        if n0 == 0 or n1 == 0:
            raise DataError("both treatment arms must contain rows with OOB trees")
        z0p = d[:, :, arm == 0.0].sum(axis=2) / n0
        z1p = d[:, :, arm == 1.0].sum(axis=2) / n1
        z0 = z0p.mean(axis=1)
        z1 = z1p.mean(axis=1)
        inter = np.abs(z1 - z0)
        arms = (n0, n1)
    return ImportanceReport(
        data.modifier_names, total, z0, z1, inter, perms.shape[0],
        forest.tau if tau is None else float(tau), int(used.sum()), int((~used).sum()),
        arms, total_by_perm, z0p, z1p,
    )


def decomposed_importance(forest: Forest, tau=None, M=100, seed=0, perms=None) -> ImportanceReport:
    """Importance split by arm; requires ``z = (1, treatment)`` with 0/1 treatment."""
    if not _is_binary_treatment(forest.data.z):
        raise DataError("decomposition requires binary treatment")
    return permutation_importance(forest, tau, M, seed, perms, decompose=True)
