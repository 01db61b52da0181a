"""Conditional CDF of the event time and redistribution-of-mass weights.

``F(t | x, z)`` is estimated with a random survival forest: log-rank
splits over the joint covariates ``(x, z)``, Nelson-Aalen cumulative
hazards in the leaves, and ensemble averaging of the cumulative hazards,
``F = 1 - exp(-mean_b H_b)``.

A censored row ``i`` whose estimated ``F(Y_i)`` is still below ``tau`` has
its mass split: weight ``u = (tau - F) / (1 - F)`` stays at ``Y_i`` and
``1 - u`` moves to a pseudo-response far to the right.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from ._tree import FlatTree, pack_trees, rng_below, rng_choose, seed_states
from .errors import DataError, NoOOBTreesError

CDF_CEILING = 1.0 - 1e-6
CDF_FLOOR = 1e-6


@dataclass(frozen=True)
class CdfConfig:
    n_trees: int = 250
    node_size: int = 15
    mtry: int | None = None
    sample_fraction: float = 0.632
    nsplit: int = 10

    def __post_init__(self):
        if self.n_trees < 1 or self.node_size < 1 or self.nsplit < 1:
            raise ValueError("n_trees, node_size and nsplit must be positive")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ValueError("sample_fraction must lie in (0, 1]")


def nelson_aalen(times, status):
    """Nelson-Aalen cumulative hazard at the distinct event times.

    Tied times are handled in the discrete way: the increment at ``t`` is
    ``d(t) / n(t)`` with ``n(t)`` the number still at risk just before ``t``.

    Returns
    -------
    event_times : ndarray
    cumhaz : ndarray
        Cumulative hazard right after each event time.
    """
    t = np.asarray(times, dtype=float)
    d = np.asarray(status, dtype=np.int64)
    et, h = _nelson_aalen(t, d, np.arange(t.shape[0]))
    return et, h


@njit(cache=True, nogil=True)
def _nelson_aalen(y, delta, rows):
    m = rows.shape[0]
    yy = np.empty(m)
    for a in range(m):
        yy[a] = y[rows[a]]
    order = np.argsort(yy, kind="mergesort")
    times = np.empty(m)
    haz = np.empty(m)
    k = 0
    at_risk = m
    cum = 0.0
    a = 0
    while a < m:
        t = yy[order[a]]
        d = 0
        b = a
        while b < m and yy[order[b]] == t:
            d += delta[rows[order[b]]]
            b += 1
        if d > 0:
            cum += d / at_risk
            times[k] = t
            haz[k] = cum
            k += 1
        at_risk -= b - a
        a = b
    return times[:k].copy(), haz[:k].copy()


@njit(cache=True, nogil=True)
def _logrank(ys, ds, is_left, n_left):
    # ys ascending; is_left flags membership of the left child
    m = ys.shape[0]
    y_tot = m
    y_l = n_left
    num = 0.0
    var = 0.0
    a = 0
    while a < m:
        t = ys[a]
        d = 0
        d_l = 0
        g = 0
        g_l = 0
        b = a
        while b < m and ys[b] == t:
            d += ds[b]
            g += 1
            if is_left[b]:
                d_l += ds[b]
                g_l += 1
            b += 1
        if d > 0 and y_tot > 0:
            frac = y_l / y_tot
            num += d_l - d * frac
            if y_tot > 1:
                var += frac * (1.0 - frac) * (y_tot - d) / (y_tot - 1.0) * d
        y_tot -= g
        y_l -= g_l
        a = b
    if var <= 0.0:
        return -1.0
    return num * num / var


@njit(cache=True, nogil=True)
def _grow_survival_tree(F, y, delta, rows, node_size, mtry, nsplit, state):
    m = rows.shape[0]
    d = F.shape[1]
    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.full(cap, np.nan)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    leaf_start = np.full(cap, -1, dtype=np.int64)
    leaf_count = np.zeros(cap, dtype=np.int64)
    idx = rows.copy()
    seg_start = np.zeros(cap, dtype=np.int64)
    seg_end = np.zeros(cap, dtype=np.int64)
    seg_end[0] = m
    n_nodes = 1
    stack = np.empty(cap, dtype=np.int64)
    stack[0] = 0
    sp = 1
    pool = np.arange(d)
    tmp = np.empty(m, dtype=np.int64)
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s = seg_start[node]
        e = seg_end[node]
        cnt = e - s
        n_events = 0
        for a in range(s, e):
            n_events += delta[idx[a]]
        best_stat = 0.0
        best_f = -1
        best_thr = 0.0
        if cnt >= 2 * node_size and n_events > 0:
            seg = idx[s:e]
            yseg = np.empty(cnt)
            for a in range(cnt):
                yseg[a] = y[seg[a]]
            torder = np.argsort(yseg, kind="mergesort")
            ys = np.empty(cnt)
            ds = np.empty(cnt, dtype=np.int64)
            for a in range(cnt):
                ys[a] = yseg[torder[a]]
                ds[a] = delta[seg[torder[a]]]
            is_left = np.zeros(cnt, dtype=np.bool_)
            feats = rng_choose(state, pool, min(mtry, d))
            for f in feats:
                vals = np.empty(cnt)
                for a in range(cnt):
                    vals[a] = F[seg[a], f]
                sv = np.sort(vals)
                lo = node_size - 1
                hi = cnt - node_size - 1
                if hi < lo or sv[lo] == sv[cnt - 1]:
                    continue
                for _ in range(nsplit):
                    j = lo + rng_below(state, hi - lo + 1)
                    v = sv[j]
                    # next distinct value above v
                    k = j + 1
                    while k < cnt and sv[k] == v:
                        k += 1
                    if k >= cnt:
                        continue
                    n_left = k
                    if n_left < node_size or cnt - n_left < node_size:
                        continue
                    thr = 0.5 * (v + sv[k])
                    if thr >= sv[k]:
                        thr = v
                    for a in range(cnt):
                        is_left[a] = F[seg[torder[a]], f] <= thr
                    stat = _logrank(ys, ds, is_left, n_left)
                    if stat > best_stat:
                        best_stat = stat
                        best_f = f
                        best_thr = thr
        if best_f < 0:
            leaf_start[node] = s
            leaf_count[node] = cnt
            continue
        nl = 0
        nr = 0
        for a in range(s, e):
            if F[idx[a], best_f] <= best_thr:
                idx[s + nl] = idx[a]
                nl += 1
            else:
                tmp[nr] = idx[a]
                nr += 1
        for a in range(nr):
            idx[s + nl + a] = tmp[a]
        feature[node] = best_f
        threshold[node] = best_thr
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        seg_start[lc] = s
        seg_end[lc] = s + nl
        seg_start[rc] = s + nl
        seg_end[rc] = e
        stack[sp] = rc
        stack[sp + 1] = lc
        sp += 2
    return (
        feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
        right[:n_nodes].copy(), leaf_start[:n_nodes].copy(), leaf_count[:n_nodes].copy(), idx,
    )


@njit(cache=True, nogil=True)
def _leaf_hazards(y, delta, left, leaf_start, leaf_count, leaf_rows):
    n_nodes = left.shape[0]
    na_start = np.full(n_nodes, 0, dtype=np.int64)
    na_count = np.zeros(n_nodes, dtype=np.int64)
    times = np.empty(leaf_rows.shape[0])
    haz = np.empty(leaf_rows.shape[0])
    k = 0
    for node in range(n_nodes):
        if left[node] >= 0:
            continue
        s = leaf_start[node]
        et, h = _nelson_aalen(y, delta, leaf_rows[s : s + leaf_count[node]])
        na_start[node] = k
        na_count[node] = et.shape[0]
        for a in range(et.shape[0]):
            times[k + a] = et[a]
            haz[k + a] = h[a]
        k += et.shape[0]
    return na_start, na_count, times[:k].copy(), haz[:k].copy()


@njit(cache=True, nogil=True)
def _mean_chf(Fq, tq, feature, threshold, left, right, roots, na_start, na_count,
              na_time, na_haz, tree_mask):
    # tree_mask[i, b]: use tree b for query i
    nq = Fq.shape[0]
    out = np.empty(nq)
    used = np.zeros(nq, dtype=np.int64)
    for i in range(nq):
        total = 0.0
        k = 0
        for b in range(roots.shape[0]):
            if not tree_mask[i, b]:
                continue
            node = roots[b]
            while left[node] >= 0:
                if Fq[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            s = na_start[node]
            c = na_count[node]
            pos = np.searchsorted(na_time[s : s + c], tq[i], side="right")
            if pos > 0:
                total += na_haz[s + pos - 1]
            k += 1
        used[i] = k
        out[i] = total / k if k > 0 else np.nan
    return out, used


def _features(x, z):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    return np.ascontiguousarray(np.hstack([x, z[:, 1:]]))


@dataclass
class CdfModel:
    """Random survival forest for ``F(t | x, z)``.

    The training responses are kept so that leaf hazards can be rebuilt
    from the stored leaf memberships after deserialisation.
    """

    config: CdfConfig
    seed: int
    y: np.ndarray
    delta: np.ndarray
    features: np.ndarray
    trees: list
    mtry: int
    _packed: object = field(default=None, repr=False, compare=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def inbag(self) -> np.ndarray:
        return self.packed[0].inbag

    @property
    def packed(self):
        if self._packed is None:
            pk = pack_trees(self.trees, self.y.shape[0])
            na_start, na_count, na_time, na_haz = _leaf_hazards(
                self.y, self.delta, pk.left, pk.leaf_start, pk.leaf_count, pk.leaf_rows
            )
            self._packed = (pk, na_start, na_count, na_time, na_haz)
        return self._packed

    def chf(self, F, t, tree_mask):
        pk, na_start, na_count, na_time, na_haz = self.packed
        return _mean_chf(
            np.ascontiguousarray(F, dtype=float), np.ascontiguousarray(t, dtype=float),
            pk.feature, pk.threshold, pk.left, pk.right, pk.roots,
            na_start, na_count, na_time, na_haz, np.ascontiguousarray(tree_mask),
        )

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "seed": int(self.seed),
            "mtry": int(self.mtry),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d, data) -> "CdfModel":
        return cls(
            CdfConfig(**d["config"]), int(d["seed"]), data.y, data.delta,
            _features(data.x, data.z), [FlatTree.from_dict(t) for t in d["trees"]],
            int(d["mtry"]),
        )


def fit_conditional_cdf(data, config: CdfConfig | None = None, seed=0, n_jobs=1) -> CdfModel:
    """Grow a random survival forest on ``(x, z[:, 1:])``.

    Each tree sees a subsample drawn without replacement; splits maximise
    the log-rank statistic over ``nsplit`` random cut points of each of
    ``mtry`` random covariates.  Nodes with fewer than ``2 * node_size``
    rows or without events become leaves.  The result depends only on
    ``(data, config, seed)``, never on ``n_jobs``.
    """
    config = config or CdfConfig()
    if int(np.sum(data.delta)) == 0:
        raise DataError("no events: CDF unidentifiable")
    if data.n < 2 * config.node_size:
        raise DataError(f"need at least {2 * config.node_size} rows, got {data.n}")
    F = _features(data.x, data.z)
    d = F.shape[1]
    mtry = config.mtry or math.ceil((data.p + data.q) / 3)
    mtry = max(1, min(d, mtry))
    m = max(1, min(data.n, int(round(config.sample_fraction * data.n))))
    y = np.ascontiguousarray(data.y)
    delta = np.ascontiguousarray(data.delta, dtype=np.int64)
    states = seed_states(seed, config.n_trees, stream=1)

    def grow(b):
        state = states[b].copy()
        rows = np.sort(rng_choose(state, np.arange(data.n, dtype=np.int64), m))
        feat, thr, lft, rgt, ls, lc, leaf_rows = _grow_survival_tree(
            F, y, delta, rows, config.node_size, mtry, config.nsplit, state
        )
        return FlatTree(feat, thr, lft, rgt, ls, lc, leaf_rows, rows)

    if n_jobs == 1:
        trees = [grow(b) for b in range(config.n_trees)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(grow, range(config.n_trees)))
    return CdfModel(config, int(seed), y, delta, F, trees, mtry)


def _to_cdf(h):
    return np.minimum(1.0 - np.exp(-h), CDF_CEILING)


def evaluate_cdf(model: CdfModel, x, z, t, mode="ensemble", row=None):
    """``F(t | x, z)`` from the ensemble or from the trees leaving ``row`` out.

    ``x``, ``z`` and ``t`` broadcast over rows; a scalar is returned for a
    single query.  The result is right-continuous and nondecreasing in
    ``t`` and never exceeds ``1 - 1e-6``.
    """
    F = _features(x, z)
    t = np.broadcast_to(np.asarray(t, dtype=float), (F.shape[0],)).copy()
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    if mode == "ensemble":
        mask = np.ones((F.shape[0], model.n_trees), dtype=np.bool_)
    elif mode == "oob":
        if row is None:
            raise ValueError("oob mode needs the training row index")
        rows = np.broadcast_to(np.asarray(row), (F.shape[0],))
        mask = ~model.inbag[:, rows].T
        if not np.all(mask.any(axis=1)):
            raise NoOOBTreesError(f"no OOB trees for row {int(rows[~mask.any(axis=1)][0])}")
    else:
        raise ValueError(f"unknown mode {mode!r}")
    h, _ = model.chf(F, t, mask)
    out = _to_cdf(h)
    return float(out[0]) if out.shape[0] == 1 and np.ndim(x) <= 1 else out


def oob_cdf_at_observed(model: CdfModel) -> np.ndarray:
    """``F(Y_i | x_i, z_i)`` for every training row, OOB where possible."""
    mask = np.ascontiguousarray(~model.inbag.T)
    h, used = model.chf(model.features, model.y, mask)
    lonely = used == 0
    if np.any(lonely):
        full = np.ones((int(lonely.sum()), model.n_trees), dtype=np.bool_)
        h[lonely], _ = model.chf(model.features[lonely], model.y[lonely], full)
    return _to_cdf(h)


@dataclass(frozen=True)
class RedistributionWeights:
    """Per-row weights ``u`` at level ``tau`` and the CDF values behind them.

    ``f_at_y`` holds the estimated ``F(Y_i)`` floored at ``1e-6``, so that
    every partial weight satisfies ``u = (tau - f) / (1 - f)`` exactly and
    lies strictly inside ``(0, tau)``.
    """

    u: np.ndarray
    tau: float
    f_at_y: np.ndarray
    delta: np.ndarray

    @classmethod
    def from_cdf(cls, f_at_y, delta, tau) -> "RedistributionWeights":
        if not 0.0 < tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {tau}")
        f = np.clip(np.asarray(f_at_y, dtype=float), CDF_FLOOR, CDF_CEILING)
        delta = np.asarray(delta, dtype=np.int64)
        full = (delta == 1) | (f >= tau)
        with np.errstate(divide="ignore", invalid="ignore"):
            partial = (tau - f) / (1.0 - f)
        u = np.where(full, 1.0, partial)
        return cls(u, float(tau), f, delta)

    @classmethod
    def uncensored(cls, n, tau) -> "RedistributionWeights":
        return cls.from_cdf(np.full(n, CDF_FLOOR), np.ones(n, dtype=np.int64), tau)

    def at(self, tau) -> "RedistributionWeights":
        """The same CDF values re-thresholded at another level."""
        return RedistributionWeights.from_cdf(self.f_at_y, self.delta, tau)

    @property
    def n_partial(self) -> int:
        return int(np.sum(self.u < 1.0))


def redistribution_weights(data, model: CdfModel, tau) -> RedistributionWeights:
    """Redistribution weights for the training rows of ``model``.

    ``F(Y_i)`` is read from the trees that did not see row ``i``; rows that
    every tree saw fall back to the full ensemble.  A CDF value equal to
    ``tau`` counts as reaching it (``u = 1``).
    """
    if data.n != model.y.shape[0] or not np.array_equal(data.y, model.y):
        raise DataError("CDF model was fitted on different data")
    return RedistributionWeights.from_cdf(oob_cdf_at_observed(model), data.delta, tau)
