"""CART growing and traversal (numba kernels) plus the DecisionTree record."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@numba.njit(cache=True)
def _splitmix(state):
    state = state + _GOLDEN
    z = state
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return state, z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _grow(Xt, y, w, presorted, max_depth, min_leaf, mtry, seed):
    """Grow one tree over rows with positive weight (weights act as multiplicities).

    ``presorted[f]`` lists all row ids ordered by ``X[:, f]``; every node owns
    the same [lo, hi) slice of each feature's order, kept by stable partition.
    """
    p, n = Xt.shape
    rows = np.flatnonzero(w > 0)
    k = rows.size
    order = np.empty((p, k), np.int64)
    for f in range(p):
        c = 0
        for i in range(n):
            r = presorted[f, i]
            if w[r] > 0:
                order[f, c] = r
                c += 1

    cap = 2 * k + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    cover = np.zeros(cap)

    goes_left = np.zeros(n, np.bool_)
    buf = np.empty(k, np.int64)
    rbuf = np.empty(k, np.int64)
    st_node = np.empty(cap, np.int64)
    st_lo = np.empty(cap, np.int64)
    st_hi = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = k
    st_depth[0] = 0
    top = 1
    n_nodes = 1

    perm = np.arange(p)
    state = np.uint64(seed)

    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        d = st_depth[top]
        wsum = 0.0
        total = 0.0
        ymin = np.inf
        ymax = -np.inf
        for i in range(lo, hi):
            r = order[0, i]
            wsum += w[r]
            total += w[r] * y[r]
            if y[r] < ymin:
                ymin = y[r]
            if y[r] > ymax:
                ymax = y[r]
        value[node] = total / wsum
        cover[node] = wsum
        if d >= max_depth or wsum < 2 * min_leaf or ymin == ymax:
            continue

        best_gain = -np.inf
        best_f = -1
        best_t = 0.0
        evaluated = 0
        for q in range(p):
            if evaluated >= mtry:
                break
            # partial Fisher-Yates: draw the q-th candidate feature lazily
            state, z = _splitmix(state)
            j = q + np.int64(z % np.uint64(p - q))
            f = perm[j]
            perm[j] = perm[q]
            perm[q] = f
            if Xt[f, order[f, lo]] == Xt[f, order[f, hi - 1]]:
                continue
            evaluated += 1
            cum = 0.0
            nl = 0.0
            for i in range(lo, hi - 1):
                r = order[f, i]
                cum += w[r] * y[r]
                nl += w[r]
                a = Xt[f, r]
                b = Xt[f, order[f, i + 1]]
                if a == b:
                    continue
                nr = wsum - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                rest = total - cum
                # max of sum^2/n over children == min Gini (0/1 targets) or min SSE
                gain = cum * cum / nl + rest * rest / nr
                thr = 0.5 * (a + b)
                if thr >= b:
                    thr = a
                if gain > best_gain or (gain == best_gain and (f < best_f or (f == best_f and thr < best_t))):
                    best_gain = gain
                    best_f = f
                    best_t = thr
        if best_f < 0:
            continue

        nleft = 0
        for i in range(lo, hi):
            r = order[best_f, i]
            goes_left[r] = Xt[best_f, r] <= best_t
            if goes_left[r]:
                nleft += 1
        for f in range(p):
            # branchless stable partition
            a = 0
            b = 0
            for i in range(lo, hi):
                r = order[f, i]
                g = np.int64(goes_left[r])
                buf[a] = r
                rbuf[b] = r
                a += g
                b += 1 - g
            for i in range(nleft):
                order[f, lo + i] = buf[i]
            for i in range(hi - lo - nleft):
                order[f, lo + nleft + i] = rbuf[i]

        feature[node] = best_f
        threshold[node] = best_t
        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        left[node] = li
        right[node] = ri
        # right pushed first so the left subtree is expanded first
        st_node[top] = ri
        st_lo[top] = lo + nleft
        st_hi[top] = hi
        st_depth[top] = d + 1
        top += 1
        st_node[top] = li
        st_lo[top] = lo
        st_hi[top] = lo + nleft
        st_depth[top] = d + 1
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), cover[:n_nodes].copy())


@numba.njit(cache=True)
def _apply(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@dataclass(frozen=True, eq=False)
class DecisionTree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf.

    ``value`` holds the leaf output (class-1 fraction for classification
    trees, the fitted step for boosting trees) and ``cover`` the number of
    training rows that reached each node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def apply(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        return _apply(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def with_values(self, value) -> "DecisionTree":
        return DecisionTree(self.feature, self.threshold, self.left, self.right,
                            np.asarray(value, dtype=float), self.cover)

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DecisionTree":
        return cls(np.array(doc["feature"], dtype=np.int64), np.array(doc["threshold"], dtype=float),
                   np.array(doc["left"], dtype=np.int64), np.array(doc["right"], dtype=np.int64),
                   np.array(doc["value"], dtype=float), np.array(doc["cover"], dtype=float))


def presort(X) -> np.ndarray:
    """Per-feature row order, shared by every tree grown on the same matrix."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T, dtype=np.int64)


def grow_tree(X, y, max_depth=None, min_leaf: int = 1, mtry=None, seed: int = 0,
              sample_weight=None, presorted=None) -> DecisionTree:
    """Greedy CART on ``X`` with targets ``y``.

    Each split scans ``mtry`` randomly drawn non-constant features and picks
    the best impurity reduction (Gini for 0/1 targets, squared error
    otherwise; the two coincide up to a constant). Ties go to the lowest
    feature index, then the lowest threshold. Thresholds are midpoints
    between adjacent distinct values; rows with ``x <= threshold`` go left.
    Integer ``sample_weight`` behaves exactly like repeating rows, which is
    how bootstrap samples are passed in.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[0] != y.size:
        raise ValueError("grow_tree needs a nonempty matrix and matching targets")
    n, p = X.shape
    w = np.ones(n) if sample_weight is None else np.ascontiguousarray(sample_weight, dtype=float)
    if not (w > 0).any():
        raise ValueError("all sample weights are zero")
    if presorted is None:
        presorted = presort(X)
    depth = np.iinfo(np.int64).max if max_depth is None or math.isinf(max_depth) else int(max_depth)
    m = p if mtry is None else max(1, min(int(mtry), p))
    return DecisionTree(*_grow(np.ascontiguousarray(X.T), y, w, presorted, depth, max(1, int(min_leaf)), m, np.uint64(seed)))
