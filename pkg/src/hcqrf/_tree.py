"""Flat array representation of binary trees shared by both forests.

A tree is stored as parallel per-node arrays.  Internal nodes send a row
left when ``x[feature] <= threshold``; leaves have ``left == -1`` and own
the slice ``leaf_rows[leaf_start : leaf_start + leaf_count]`` of training
row indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


@dataclass(frozen=True)
class FlatTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_start: np.ndarray
    leaf_count: np.ndarray
    leaf_rows: np.ndarray
    inbag: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.left < 0)

    def leaf_members(self, node) -> np.ndarray:
        s = self.leaf_start[node]
        return self.leaf_rows[s : s + self.leaf_count[node]]

    def apply(self, x) -> np.ndarray:
        """Leaf node index for every row of ``x``."""
        x = np.ascontiguousarray(np.atleast_2d(x), dtype=float)
        return route_rows(self.feature, self.threshold, self.left, self.right, x)

    def to_dict(self) -> dict:
        internal = self.left >= 0
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(v) if i else None for v, i in zip(self.threshold, internal)],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "leaf_start": self.leaf_start.tolist(),
            "leaf_count": self.leaf_count.tolist(),
            "leaf_rows": self.leaf_rows.tolist(),
            "inbag": self.inbag.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "FlatTree":
        thr = np.array([np.nan if v is None else v for v in d["threshold"]], dtype=float)
        ints = lambda key: np.asarray(d[key], dtype=np.int64)
        return cls(
            ints("feature"), thr, ints("left"), ints("right"),
            ints("leaf_start"), ints("leaf_count"), ints("leaf_rows"), ints("inbag"),
        )


@dataclass(frozen=True)
class PackedTrees:
    """All trees of an ensemble concatenated for numba kernels.

    Child indices and leaf starts are global; ``roots[b]`` is the root of
    tree ``b``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_start: np.ndarray
    leaf_count: np.ndarray
    leaf_rows: np.ndarray
    roots: np.ndarray
    inbag: np.ndarray  # (B, n) bool

    @property
    def n_trees(self) -> int:
        return self.roots.shape[0]


def pack_trees(trees, n) -> PackedTrees:
    feats, thrs, lefts, rights, starts, counts, rows = [], [], [], [], [], [], []
    roots = np.empty(len(trees), dtype=np.int64)
    inbag = np.zeros((len(trees), n), dtype=np.bool_)
    node_off = 0
    row_off = 0
    for b, t in enumerate(trees):
        roots[b] = node_off
        feats.append(t.feature)
        thrs.append(t.threshold)
        lefts.append(np.where(t.left >= 0, t.left + node_off, -1))
        rights.append(np.where(t.right >= 0, t.right + node_off, -1))
        starts.append(t.leaf_start + row_off)
        counts.append(t.leaf_count)
        rows.append(t.leaf_rows)
        inbag[b, t.inbag] = True
        node_off += t.n_nodes
        row_off += t.leaf_rows.shape[0]
    cat = lambda parts, dt: np.ascontiguousarray(np.concatenate(parts).astype(dt))
    return PackedTrees(
        cat(feats, np.int64), cat(thrs, float), cat(lefts, np.int64), cat(rights, np.int64),
        cat(starts, np.int64), cat(counts, np.int64), cat(rows, np.int64), roots, inbag,
    )


@njit(cache=True, nogil=True)
def route(feature, threshold, left, right, root, x):
    node = root
    while left[node] >= 0:
        if x[feature[node]] <= threshold[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@njit(cache=True, nogil=True)
def route_rows(feature, threshold, left, right, X):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        out[i] = route(feature, threshold, left, right, 0, X[i])
    return out


# counter-based generator (splitmix64) so numba kernels draw reproducibly
# from a seed handed down by numpy's SeedSequence

@njit(cache=True, nogil=True)
def rng_next(state):
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def rng_below(state, k):
    """Uniform integer in ``[0, k)``."""
    return np.int64(rng_next(state) % np.uint64(k))


@njit(cache=True, nogil=True)
def rng_choose(state, pool, k):
    """First ``k`` entries of a partial Fisher-Yates shuffle of ``pool``."""
    a = pool.copy()
    n = a.shape[0]
    for i in range(k):
        j = i + rng_below(state, n - i)
        tmp = a[i]
        a[i] = a[j]
        a[j] = tmp
    return a[:k].copy()


def seed_states(seed, count, stream=0):
    """Independent 64-bit generator states for ``count`` workers."""
    children = np.random.SeedSequence([int(seed), int(stream)]).spawn(count)
    return [c.generate_state(1, dtype=np.uint64) for c in children]
