"""Hybrid censored quantile regression forest.

Trees are grown breadth first on subsamples drawn without replacement.
A node with more than ``min_split`` rows is split in two steps:

1. fit the censored quantile regression of ``y`` on ``z`` in the node,
   turn it into censored rank scores and pick, among ``mtry`` random
   modifiers, the one whose rank-score statistic is largest;
2. scan cut points of that modifier and keep the one minimising the sum
   of the two child fits' censored check losses.

Estimation at a new ``x0`` solves a weighted censored quantile regression
over all training rows, weighting row ``i`` by the share of trees in which
it falls into the same leaf as ``x0`` (normalised by leaf size).
"""

from __future__ import annotations

import json
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from ._tree import FlatTree, pack_trees
from .censoring import CdfConfig, CdfModel, RedistributionWeights, fit_conditional_cdf
from .censoring import redistribution_weights
from .cqr import (
    QuantileFit, STATUS_OK, _augment, _raise_for_status, _rank_score_from_basis,
    global_y_inf, solve_wqr,
)
from .data import SurvivalDataset
from .errors import DataError, InsufficientSampleError, NoOOBTreesError

FORMAT_VERSION = 1
SPLIT_RULES = ("hybrid", "marginal")


@dataclass(frozen=True)
class ForestConfig:
    """Growth parameters.

    ``mtry`` defaults to ``ceil(p / 3)`` and ``min_leaf`` to
    ``max(5, q + 2)`` once the data are known.  ``max_candidate_cuts`` caps
    the first grid of cuts scanned per modifier; the cut search then refines
    around the best grid point.  ``complete_data`` skips the censoring model
    and sets every redistribution weight to 1.
    """

    n_trees: int = 500
    min_split: int = 20
    sample_fraction: float = 0.8
    mtry: int | None = None
    min_leaf: int | None = None
    max_candidate_cuts: int = 50
    split_rule: str = "hybrid"
    complete_data: bool = False
    cdf: CdfConfig = field(default_factory=CdfConfig)

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ValueError("sample_fraction must lie in (0, 1]")
        if self.split_rule not in SPLIT_RULES:
            raise ValueError(f"split_rule must be one of {SPLIT_RULES}")
        if self.max_candidate_cuts < 1:
            raise ValueError("max_candidate_cuts must be positive")
        if isinstance(self.cdf, dict):
            object.__setattr__(self, "cdf", CdfConfig(**self.cdf))

    def resolved(self, p, q) -> "ForestConfig":
        mtry = self.mtry or max(1, math.ceil(p / 3))
        min_leaf = self.min_leaf or max(5, q + 2)
        return ForestConfig(
            self.n_trees, self.min_split, self.sample_fraction, min(mtry, p), min_leaf,
            self.max_candidate_cuts, self.split_rule, self.complete_data, self.cdf,
        )


@dataclass(frozen=True)
class ForestWeightVector:
    weights: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)


@dataclass
class Forest:
    data: SurvivalDataset
    weights: RedistributionWeights
    tau: float
    config: ForestConfig
    seed: int
    trees: list
    split_losses: list
    y_inf: float
    cdf_model: CdfModel | None = None
    _packed: object = field(default=None, repr=False, compare=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def packed(self):
        if self._packed is None:
            self._packed = pack_trees(self.trees, self.data.n)
        return self._packed

    @property
    def inbag(self) -> np.ndarray:
        return self.packed.inbag

    def u_at(self, tau) -> np.ndarray:
        if tau is None or tau == self.tau:
            return self.weights.u
        return self.weights.at(tau).u

    def to_dict(self) -> dict:
        d = self.data
        cfg = asdict(self.config)
        return {
            "format_version": FORMAT_VERSION,
            "tau": self.tau,
            "seed": int(self.seed),
            "config": cfg,
            "y_inf": self.y_inf,
            "data": {
                "y": d.y.tolist(),
                "delta": d.delta.tolist(),
                "x": d.x.tolist(),
                "z": d.z.tolist(),
                "modifier_names": list(d.modifier_names),
                "predictor_names": list(d.predictor_names),
            },
            "redistribution": {
                "u": self.weights.u.tolist(),
                "f_at_y": self.weights.f_at_y.tolist(),
            },
            "cdf_model": None if self.cdf_model is None else self.cdf_model.to_dict(),
            "trees": [
                dict(t.to_dict(), split_losses=[[_num(a), _num(b)] for a, b in s])
                for t, s in zip(self.trees, self.split_losses)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d) -> "Forest":
        if d.get("format_version") != FORMAT_VERSION:
            raise DataError(f"unsupported model format {d.get('format_version')!r}")
        dd = d["data"]
        data = SurvivalDataset(
            np.array(dd["y"], dtype=float), np.array(dd["delta"]), np.array(dd["x"], dtype=float),
            np.array(dd["z"], dtype=float), tuple(dd["modifier_names"]),
            tuple(dd["predictor_names"]),
        )
        tau = float(d["tau"])
        red = d["redistribution"]
        weights = RedistributionWeights.from_cdf(red["f_at_y"], data.delta, tau)
        if not np.array_equal(weights.u, np.array(red["u"], dtype=float)):
            raise DataError("stored redistribution weights are inconsistent")
        cfg = dict(d["config"])
        cfg["cdf"] = CdfConfig(**cfg["cdf"])
        trees = [FlatTree.from_dict(t) for t in d["trees"]]
        losses = [
            np.array([[_unnum(a), _unnum(b)] for a, b in t["split_losses"]], dtype=float).reshape(-1, 2)
            for t in d["trees"]
        ]
        cdf = None if d["cdf_model"] is None else CdfModel.from_dict(d["cdf_model"], data)
        return cls(data, weights, tau, ForestConfig(**cfg), int(d["seed"]), trees, losses,
                   float(d["y_inf"]), cdf)


def _num(v):
    return None if not np.isfinite(v) else float(v)


def _unnum(v):
    return np.nan if v is None else float(v)


def save_forest(forest: Forest, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(forest.to_json())
        fh.write("\n")


def load_forest(path) -> Forest:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not a model file ({exc})") from None
    return Forest.from_dict(d)


# --------------------------------------------------------------------------
# split search kernels

@njit(cache=True, nogil=True)
def _scan_cuts(ya, Za, wa, tau, aug_cuts):
    # fits left = rows[:c] and right = rows[c:] for every augmented cut c
    nc = aug_cuts.shape[0]
    m, q = Za.shape
    left_obj = np.full(nc, np.inf)
    right_obj = np.full(nc, np.inf)
    warm_l = np.zeros(q)
    warm_r = np.zeros(q)
    have_l = False
    have_r = False
    for c in range(nc):
        cut = aug_cuts[c]
        bl, ol, _, sl, _ = solve_wqr(
            ya[:cut], Za[:cut], wa[:cut], tau, warm_l, have_l, 50 * cut + 100
        )
        if sl == 0:
            left_obj[c] = ol
            warm_l = bl
            have_l = True
        br, orr, _, sr, _ = solve_wqr(
            ya[cut:], Za[cut:], wa[cut:], tau, warm_r, have_r, 50 * (m - cut) + 100
        )
        if sr == 0:
            right_obj[c] = orr
            warm_r = br
            have_r = True
    return left_obj, right_obj


@njit(cache=True, nogil=True)
def _lower_quantile(v, tau):
    s = np.sort(v)
    k = int(math.ceil(tau * s.shape[0])) - 1
    if k < 0:
        k = 0
    return s[k]


@njit(cache=True, nogil=True)
def _marginal_scan(ys, cuts, tau):
    n = ys.shape[0]
    out = np.empty(cuts.shape[0])
    for c in range(cuts.shape[0]):
        L = cuts[c]
        ql = _lower_quantile(ys[:L], tau)
        qr = _lower_quantile(ys[L:], tau)
        out[c] = L * (n - L) * (ql - qr) ** 2
    return out


def _admissible_cuts(xs_sorted, min_leaf):
    n = xs_sorted.shape[0]
    pos = np.flatnonzero(xs_sorted[1:] > xs_sorted[:-1]) + 1
    return pos[(pos >= min_leaf) & (pos <= n - min_leaf)]


def _coarse_index(n_cuts, max_cuts):
    if n_cuts <= max_cuts:
        return np.arange(n_cuts)
    return np.unique(np.round(np.linspace(0, n_cuts - 1, max_cuts)).astype(np.int64))


def _thresholds(xs_sorted, pos):
    thr = 0.5 * (xs_sorted[pos - 1] + xs_sorted[pos])
    # guard against midpoints rounding onto the upper value
    return np.where(thr >= xs_sorted[pos], xs_sorted[pos - 1], thr)


def candidate_cuts(xs_sorted, min_leaf, max_cuts):
    """Left-child sizes and thresholds of the admissible cut points.

    A cut sits halfway between consecutive distinct values and must leave
    at least ``min_leaf`` rows on each side; beyond ``max_cuts`` an equally
    spaced subset of the admissible cuts is kept.
    """
    pos = _admissible_cuts(xs_sorted, min_leaf)
    pos = pos[_coarse_index(pos.shape[0], max_cuts)]
    return pos, _thresholds(xs_sorted, pos)


class _Grower:
    """Shared, read-only state for growing the trees of one forest."""

    def __init__(self, data, u, y_inf, tau, config):
        self.X = data.x
        self.y = data.y
        self.Z = data.z
        self.u = np.ascontiguousarray(u, dtype=float)
        self.y_inf = float(y_inf)
        self.tau = float(tau)
        self.cfg = config
        self.p = data.p

    def augment(self, rows):
        rows = np.ascontiguousarray(rows, dtype=np.int64)
        return _augment(self.y, self.Z, self.u, self.y_inf, rows, np.ones(rows.shape[0]))

    def node_fit(self, rows):
        ya, za, wa, _, _ = self.augment(rows)
        q = za.shape[1]
        beta, obj, _, status, _ = solve_wqr(ya, za, wa, self.tau, np.zeros(q), False, 50 * ya.shape[0] + 100)
        return beta, obj, status

    def rank_statistics(self, rows, beta, cands):
        Z = self.Z[rows]
        res = self.y[rows] - Z @ beta
        a = self.tau - self.u[rows] * (res < 0)
        Qz, _ = np.linalg.qr(Z)
        stats = np.zeros(len(cands))
        for j, k in enumerate(cands):
            xk = self.X[rows, k]
            if np.all(xk == xk[0]):
                continue
            stats[j] = _rank_score_from_basis(xk, Z, Qz, a).statistic
        return stats

    def best_cut(self, rows, k):
        """Loss-minimising cut on ``x_k``.

        The capped grid of candidate cuts is scanned first; when the cap was
        binding, every admissible cut between the grid neighbours of the
        winner is scanned as well, so the threshold is not limited to the
        grid spacing.
        """
        order = np.argsort(self.X[rows, k], kind="mergesort")
        srows = rows[order]
        xs = self.X[srows, k]
        full = _admissible_cuts(xs, self.cfg.min_leaf)
        if full.shape[0] == 0:
            return None
        ya, za, wa, _, _ = self.augment(srows)
        extra = np.concatenate([[0], np.cumsum(self.u[srows] < 1.0)])

        def scan(idx):
            pos = full[idx]
            return _scan_cuts(ya, za, wa, self.tau, (pos + extra[pos]).astype(np.int64))

        keep = _coarse_index(full.shape[0], self.cfg.max_candidate_cuts)
        lo, ro = scan(keep)
        total = lo + ro
        if not np.any(np.isfinite(total)):
            return None
        c = int(np.argmin(total))
        best = (total[c], int(keep[c]), lo[c], ro[c])
        if keep.shape[0] < full.shape[0]:
            a = keep[c - 1] + 1 if c > 0 else 0
            b = keep[c + 1] if c + 1 < keep.shape[0] else full.shape[0]
            fine = np.setdiff1d(np.arange(a, b), keep[c])
            if fine.shape[0]:
                flo, fro = scan(fine)
                ft = flo + fro
                j = int(np.argmin(ft))
                if ft[j] < best[0]:
                    best = (ft[j], int(fine[j]), flo[j], fro[j])
        pos = full[best[1]]
        return float(_thresholds(xs, np.array([pos]))[0]), int(pos), float(best[2]), float(best[3])

    def marginal_split(self, rows, cands):
        best = (-1.0, None)
        for k in cands:
            order = np.argsort(self.X[rows, k], kind="mergesort")
            xs = self.X[rows[order], k]
            pos, thr = candidate_cuts(xs, self.cfg.min_leaf, self.cfg.max_candidate_cuts)
            if pos.shape[0] == 0:
                continue
            scores = _marginal_scan(np.ascontiguousarray(self.y[rows[order]]), pos.astype(np.int64), self.tau)
            c = int(np.argmax(scores))
            if scores[c] > best[0]:
                best = (scores[c], (int(k), float(thr[c])))
        return best[1]

    def choose_variable(self, rows, cands):
        """Hybrid first step; returns ``(k, node_loss)`` or ``None``."""
        beta, obj, status = self.node_fit(rows)
        if status != STATUS_OK:
            return None
        stats = self.rank_statistics(rows, beta, cands)
        return int(cands[int(np.argmax(stats))]), obj

    def grow(self, inbag, rng):
        cfg = self.cfg
        feature, threshold, left, right, leaf_start, leaf_count = [], [], [], [], [], []
        losses = []
        leaf_rows = []
        n_leaf_rows = 0

        def new_node():
            feature.append(-1)
            threshold.append(np.nan)
            left.append(-1)
            right.append(-1)
            leaf_start.append(-1)
            leaf_count.append(0)
            losses.append((np.nan, np.nan))
            return len(feature) - 1

        queue = deque([(new_node(), inbag)])
        while queue:
            node, rows = queue.popleft()
            split = None
            if rows.shape[0] > cfg.min_split:
                cands = np.sort(rng.choice(self.p, cfg.mtry, replace=False))
                if cfg.split_rule == "hybrid":
                    chosen = self.choose_variable(rows, cands)
                    if chosen is not None:
                        k, parent_loss = chosen
                        cut = self.best_cut(rows, k)
                        if cut is not None:
                            thr, _, lo, ro = cut
                            split = (k, thr)
                            losses[node] = (parent_loss, lo + ro)
                else:
                    split = self.marginal_split(rows, cands)
            if split is None:
                leaf_start[node] = n_leaf_rows
                leaf_count[node] = rows.shape[0]
                leaf_rows.append(rows)
                n_leaf_rows += rows.shape[0]
                continue
            k, thr = split
            go_left = self.X[rows, k] <= thr
            feature[node] = k
            threshold[node] = thr
            lc = new_node()
            rc = new_node()
            left[node] = lc
            right[node] = rc
            queue.append((lc, rows[go_left]))
            queue.append((rc, rows[~go_left]))

        i64 = lambda v: np.asarray(v, dtype=np.int64)
        tree = FlatTree(
            i64(feature), np.asarray(threshold, dtype=float), i64(left), i64(right),
            i64(leaf_start), i64(leaf_count), i64(np.concatenate(leaf_rows)), i64(inbag),
        )
        return tree, np.asarray(losses, dtype=float).reshape(-1, 2)


def _tree_streams(seed, n_trees):
    return np.random.SeedSequence([int(seed), 2]).spawn(n_trees)


def grow_tree(data, u, tau, config, rng, y_inf=None, inbag=None):
    """Grow one tree on ``inbag`` rows (all rows by default).

    Returns
    -------
    tree : FlatTree
    split_losses : ndarray of shape (n_nodes, 2)
        Parent loss and summed child losses of every hybrid split; NaN for
        leaves and marginal splits.
    """
    config = config.resolved(data.p, data.q)
    u = np.asarray(getattr(u, "u", u), dtype=float)
    y_inf = global_y_inf(data.y) if y_inf is None else y_inf
    inbag = np.arange(data.n, dtype=np.int64) if inbag is None else np.sort(np.asarray(inbag, dtype=np.int64))
    return _Grower(data, u, y_inf, tau, config).grow(inbag, rng)


def grow_forest(data: SurvivalDataset, tau, config: ForestConfig | None = None, seed=0,
                n_jobs=1, weights: RedistributionWeights | None = None) -> Forest:
    """Fit the censoring model (unless complete data) and grow all trees.

    Every tree gets its own random stream derived from ``seed``, so the
    forest does not depend on ``n_jobs`` or on scheduling.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    config = (config or ForestConfig()).resolved(data.p, data.q)
    cdf_model = None
    if weights is None:
        if config.complete_data or np.all(data.delta == 1):
            weights = RedistributionWeights.uncensored(data.n, tau)
        else:
            cdf_model = fit_conditional_cdf(data, config.cdf, seed=seed, n_jobs=n_jobs)
            weights = redistribution_weights(data, cdf_model, tau)
    if config.complete_data and np.any(weights.u < 1.0):
        raise DataError("complete_data forests need u == 1 for every row")
    y_inf = global_y_inf(data.y)
    grower = _Grower(data, weights.u, y_inf, tau, config)
    m = max(1, min(data.n, int(round(config.sample_fraction * data.n))))
    streams = _tree_streams(seed, config.n_trees)

    def grow(b):
        rng = np.random.default_rng(streams[b])
        inbag = np.sort(rng.choice(data.n, m, replace=False)).astype(np.int64)
        return grower.grow(inbag, rng)

    if n_jobs == 1:
        grown = [grow(b) for b in range(config.n_trees)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            grown = list(pool.map(grow, range(config.n_trees)))
    return Forest(data, weights, float(tau), config, int(seed), [g[0] for g in grown],
                  [g[1] for g in grown], y_inf, cdf_model)


# --------------------------------------------------------------------------
# forest weights and estimation

@njit(cache=True, nogil=True)
def _weights_at(x0, feature, threshold, left, right, roots, leaf_start, leaf_count,
                leaf_rows, tree_use, n):
    w = np.zeros(n)
    used = 0
    for b in range(roots.shape[0]):
        if not tree_use[b]:
            continue
        node = roots[b]
        while left[node] >= 0:
            if x0[feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        c = leaf_count[node]
        s = leaf_start[node]
        inv = 1.0 / c
        for a in range(c):
            w[leaf_rows[s + a]] += inv
        used += 1
    if used > 0:
        for i in range(n):
            w[i] /= used
    return w, used


@njit(cache=True, nogil=True)
def _estimate_points(Xq, feature, threshold, left, right, roots, leaf_start, leaf_count,
                     leaf_rows, tree_use, y, Z, u, y_inf, tau, min_rows):
    nq = Xq.shape[0]
    n, q = Z.shape
    betas = np.full((nq, q), np.nan)
    objs = np.full(nq, np.nan)
    effn = np.zeros(nq)
    status = np.zeros(nq, dtype=np.int64)
    for i in range(nq):
        w, used = _weights_at(Xq[i], feature, threshold, left, right, roots, leaf_start,
                              leaf_count, leaf_rows, tree_use[i], n)
        if used == 0:
            status[i] = -1
            continue
        support = 0
        m = 0
        for r in range(n):
            if w[r] > 0:
                support += 1
                m += 2 if u[r] < 1.0 else 1
        if support < min_rows:
            status[i] = 1
            continue
        ya = np.empty(m)
        za = np.empty((m, q))
        wa = np.empty(m)
        k = 0
        for r in range(n):
            if w[r] > 0:
                ya[k] = y[r]
                za[k] = Z[r]
                wa[k] = w[r] * u[r]
                k += 1
                if u[r] < 1.0:
                    ya[k] = y_inf
                    za[k] = Z[r]
                    wa[k] = w[r] * (1.0 - u[r])
                    k += 1
        beta, obj, _, st, _ = solve_wqr(ya, za, wa, tau, np.zeros(q), False, 50 * m + 100)
        status[i] = st
        if st == 0:
            betas[i] = beta
            objs[i] = obj
            s = 0.0
            for a in range(m):
                s += wa[a]
            effn[i] = s
    return betas, objs, effn, status


def forest_weights(forest: Forest, x0, trees=None) -> ForestWeightVector:
    """Kernel weights of the training rows at ``x0``.

    ``trees`` optionally restricts the average to a boolean mask of trees.
    """
    pk = forest.packed
    x0 = np.ascontiguousarray(x0, dtype=float)
    if x0.shape != (forest.data.p,):
        raise DataError(f"x0 must have {forest.data.p} entries")
    use = np.ones(pk.n_trees, dtype=np.bool_) if trees is None else np.asarray(trees, dtype=np.bool_)
    w, _ = _weights_at(x0, pk.feature, pk.threshold, pk.left, pk.right, pk.roots,
                       pk.leaf_start, pk.leaf_count, pk.leaf_rows, use, forest.data.n)
    return ForestWeightVector(w)


def estimate_many(forest: Forest, X, tau=None, tree_use=None, n_jobs=1):
    """Coefficient estimates at every row of ``X``.

    Returns ``(betas, objectives, effective_n, status)``; ``status`` is 0
    on success, 1 for too small a support, 2 for a degenerate design and
    -1 when the tree mask is empty.
    """
    tau = forest.tau if tau is None else float(tau)
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    if X.shape[1] != forest.data.p:
        raise DataError(f"expected {forest.data.p} modifiers, got {X.shape[1]}")
    pk = forest.packed
    if tree_use is None:
        tree_use = np.ones((X.shape[0], pk.n_trees), dtype=np.bool_)
    tree_use = np.ascontiguousarray(tree_use, dtype=np.bool_)
    u = np.ascontiguousarray(forest.u_at(tau))
    data = forest.data
    min_rows = 5 * data.q

    def run(sl):
        return _estimate_points(
            X[sl], pk.feature, pk.threshold, pk.left, pk.right, pk.roots, pk.leaf_start,
            pk.leaf_count, pk.leaf_rows, tree_use[sl], data.y, data.z, u, forest.y_inf,
            tau, min_rows,
        )

    if n_jobs == 1 or X.shape[0] < 2 * n_jobs:
        return run(slice(None))
    bounds = np.linspace(0, X.shape[0], n_jobs + 1).astype(int)
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        parts = list(pool.map(run, [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]))
    return tuple(np.concatenate([p_[j] for p_ in parts]) for j in range(4))


def _single_fit(forest, x0, tau, tree_use, what):
    betas, objs, effn, status = estimate_many(forest, x0, tau, tree_use[None, :])
    st = int(status[0])
    if st == -1:
        raise NoOOBTreesError(f"no OOB trees for {what}")
    if st == 1:
        raise InsufficientSampleError(
            f"insufficient effective sample at {what}: fewer than {5 * forest.data.q} rows carry weight"
        )
    _raise_for_status(st, 0, forest.data.q)
    return QuantileFit(betas[0], float(objs[0]), float(effn[0]), np.array([], dtype=np.int64))


def estimate_beta(forest: Forest, x0, tau=None) -> QuantileFit:
    """Forest-weighted censored quantile regression coefficients at ``x0``."""
    use = np.ones(forest.n_trees, dtype=np.bool_)
    return _single_fit(forest, np.asarray(x0, dtype=float), tau, use, "x0")


def oob_tree_mask(forest: Forest, rows=None) -> np.ndarray:
    """``mask[i, b]`` is True when row ``rows[i]`` is out of bag in tree ``b``."""
    inbag = forest.inbag
    rows = np.arange(forest.data.n) if rows is None else np.asarray(rows)
    return np.ascontiguousarray(~inbag[:, rows].T)


def oob_beta(forest: Forest, i, x=None, tau=None) -> QuantileFit:
    """Like ``estimate_beta`` but averaging only trees that left row ``i`` out."""
    x = forest.data.x[i] if x is None else np.asarray(x, dtype=float)
    use = oob_tree_mask(forest, [i])[0]
    if not use.any():
        raise NoOOBTreesError(f"no OOB trees for row {i}")
    return _single_fit(forest, x, tau, use, f"row {i}")


def predict_quantile(forest: Forest, x0, z0, tau=None) -> float:
    """``z0' beta(x0)``; ``z0`` includes the leading 1."""
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (forest.data.q,):
        raise DataError(f"z0 must have {forest.data.q} entries")
    return float(z0 @ estimate_beta(forest, x0, tau).beta)
