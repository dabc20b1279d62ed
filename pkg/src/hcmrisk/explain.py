"""Shapley attributions: exact enumeration, path-dependent TreeSHAP, permutation sampling, pooling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numba
import numpy as np
from scipy.special import expit

from .models import GradientBoostingModel, LinearSVMModel, LogisticModel, RandomForestModel
from .models.tree import DecisionTree

MAX_EXACT_FEATURES = 15
DEFAULT_PERMUTATIONS = 2000
DEFAULT_BACKGROUND = 100


class ExplainError(ValueError):
    pass


@dataclass(frozen=True)
class ShapMatrix:
    """Attributions ``values[i, j]`` with ``base_value + values[i].sum() == output[i]``.

    ``data`` holds the explained feature values (same shape) for
    directionality summaries; ``method`` names the value function used.
    """

    values: np.ndarray
    base_value: float
    feature_names: tuple[str, ...]
    method: str
    output: str
    data: np.ndarray | None = None
    std_errors: np.ndarray | None = None

    def to_json(self) -> dict:
        doc = {"method": self.method, "output": self.output, "base_value": self.base_value,
               "feature_names": list(self.feature_names), "values": self.values.tolist()}
        if self.std_errors is not None:
            doc["std_errors"] = self.std_errors.tolist()
        return doc

    def to_csv(self) -> str:
        rows = [",".join(["row", *self.feature_names])]
        rows += [",".join([str(i), *(repr(float(v)) for v in r)]) for i, r in enumerate(self.values)]
        return "\n".join(rows) + "\n"


# ---------------------------------------------------------------- outputs

def model_output(model, output: str | None = None) -> tuple[Callable[[np.ndarray], np.ndarray], str]:
    """Function explained for ``model``: the margin for boosting, else the class-1 probability."""
    if output is None:
        output = "margin" if isinstance(model, GradientBoostingModel) else "probability"
    if output == "probability":
        return model.predict_proba, output
    if output == "margin":
        if isinstance(model, GradientBoostingModel):
            return model.margin, output
        if isinstance(model, (LogisticModel, LinearSVMModel)):
            return model.decision_function, output
        raise ExplainError(f"{model.kind} has no margin output")
    raise ExplainError(f"unknown output {output!r}")


def _as_function(model_or_fn, output):
    if callable(model_or_fn) and not hasattr(model_or_fn, "predict_proba"):
        return model_or_fn, output or "custom"
    return model_output(model_or_fn, output)


# ------------------------------------------------------- coalition algebra

def _popcount(masks: np.ndarray, m: int) -> np.ndarray:
    return ((masks[:, None] >> np.arange(m)) & 1).sum(axis=1)


def shapley_from_coalitions(values: np.ndarray, m: int) -> np.ndarray:
    """phi from v(S) tabulated for every bitmask S in [0, 2^m)."""
    masks = np.arange(1 << m)
    size = _popcount(masks, m)
    # weight for adding feature i to a coalition of size s (not containing i)
    w = np.array([math.factorial(s) * math.factorial(m - s - 1) / math.factorial(m) for s in range(m)])
    phi = np.zeros(m)
    for i in range(m):
        without = masks[(masks >> i) & 1 == 0]
        phi[i] = np.sum(w[size[without]] * (values[without | (1 << i)] - values[without]))
    return phi


def interventional_values(f, x, background, chunk_rows: int = 400_000) -> np.ndarray:
    """v(S) = mean over background rows of f(x_S, b_rest) for every coalition S."""
    x = np.asarray(x, dtype=float)
    B = np.asarray(background, dtype=float)
    m = x.size
    nb = B.shape[0]
    masks = np.arange(1 << m)
    take = ((masks[:, None] >> np.arange(m)) & 1).astype(bool)
    out = np.empty(masks.size)
    per = max(1, chunk_rows // nb)
    for lo in range(0, masks.size, per):
        t = take[lo:lo + per]
        Z = np.where(t[:, None, :], x, B[None, :, :]).reshape(-1, m)
        out[lo:lo + per] = np.asarray(f(Z), dtype=float).reshape(t.shape[0], nb).mean(axis=1)
    return out


def exact_shapley(model, x, background, output: str | None = None) -> tuple[np.ndarray, float]:
    """Interventional Shapley values by enumerating all 2^M coalitions (M <= 15).

    Returns (phi, base) where base = v(empty set) = mean output over the background.
    """
    x = np.asarray(x, dtype=float).ravel()
    B = np.atleast_2d(np.asarray(background, dtype=float))
    if x.size > MAX_EXACT_FEATURES:
        raise ExplainError(f"exact enumeration limited to {MAX_EXACT_FEATURES} features, got {x.size}")
    if B.shape[0] == 0 or B.shape[1] != x.size:
        raise ExplainError("background must be a nonempty matrix with one column per feature")
    f, _ = _as_function(model, output)
    v = interventional_values(f, x, B)
    return shapley_from_coalitions(v, x.size), float(v[0])


# ---------------------------------------------------------- tree value fn

def _tree_path_values(tree: DecisionTree, x: np.ndarray, masks: np.ndarray) -> np.ndarray:
    # E[f | x_S] with unknown features averaged over children by cover
    vals = [None] * tree.n_nodes
    for node in range(tree.n_nodes - 1, -1, -1):
        f = tree.feature[node]
        if f < 0:
            vals[node] = np.full(masks.size, tree.value[node])
            continue
        l, r = tree.left[node], tree.right[node]
        hot = vals[l] if x[f] <= tree.threshold[node] else vals[r]
        avg = (tree.cover[l] * vals[l] + tree.cover[r] * vals[r]) / tree.cover[node]
        vals[node] = np.where((masks >> f) & 1 == 1, hot, avg)
        vals[l] = vals[r] = None
    return vals[0]


def _ensemble_trees(model):
    if isinstance(model, RandomForestModel):
        return list(model.trees), 1.0 / len(model.trees), 0.0
    if isinstance(model, GradientBoostingModel):
        return list(model.trees), 1.0, model.init
    if isinstance(model, DecisionTree):
        return [model], 1.0, 0.0
    raise ExplainError("tree explanations need a random forest, boosting model or tree")


def path_dependent_shapley(model, x) -> tuple[np.ndarray, float]:
    """Brute-force Shapley values of the path-dependent (cover-weighted) value function."""
    trees, scale, offset = _ensemble_trees(model)
    x = np.asarray(x, dtype=float).ravel()
    m = x.size
    if m > MAX_EXACT_FEATURES:
        raise ExplainError(f"exact enumeration limited to {MAX_EXACT_FEATURES} features, got {m}")
    masks = np.arange(1 << m)
    v = sum(_tree_path_values(t, x, masks) for t in trees) * scale + offset
    return shapley_from_coalitions(v, m), float(v[0])


# --------------------------------------------------------------- TreeSHAP

@numba.njit(cache=True)
def _extend(pf, pz, po, pw, ud, zero_fraction, one_fraction, feature):
    pf[ud] = feature
    pz[ud] = zero_fraction
    po[ud] = one_fraction
    pw[ud] = 1.0 if ud == 0 else 0.0
    for i in range(ud - 1, -1, -1):
        pw[i + 1] += one_fraction * pw[i] * (i + 1) / (ud + 1)
        pw[i] = zero_fraction * pw[i] * (ud - i) / (ud + 1)


@numba.njit(cache=True)
def _unwind(pf, pz, po, pw, ud, index):
    one_fraction = po[index]
    zero_fraction = pz[index]
    nxt = pw[ud]
    for i in range(ud - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = pw[i]
            pw[i] = nxt * (ud + 1) / ((i + 1) * one_fraction)
            nxt = tmp - pw[i] * zero_fraction * (ud - i) / (ud + 1)
        else:
            pw[i] = pw[i] * (ud + 1) / (zero_fraction * (ud - i))
    for i in range(index, ud):
        pf[i] = pf[i + 1]
        pz[i] = pz[i + 1]
        po[i] = po[i + 1]


@numba.njit(cache=True)
def _unwound_sum(pz, po, pw, ud, index):
    one_fraction = po[index]
    zero_fraction = pz[index]
    nxt = pw[ud]
    total = 0.0
    for i in range(ud - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = nxt * (ud + 1) / ((i + 1) * one_fraction)
            total += tmp
            nxt = pw[i] - tmp * zero_fraction * (ud - i) / (ud + 1)
        else:
            total += pw[i] / zero_fraction / ((ud - i) / (ud + 1))
    return total


@numba.njit(cache=True)
def _tree_shap_one(x, feature, threshold, left, right, value, cover, max_level, phi, scale):
    # Path state per tree level; a child copies its parent's level before extending.
    L = max_level + 2
    pf = np.empty((L, L), np.int64)
    pz = np.empty((L, L))
    po = np.empty((L, L))
    pw = np.empty((L, L))
    st_node = np.empty(2 * L + 2, np.int64)
    st_level = np.empty(2 * L + 2, np.int64)
    st_ud = np.empty(2 * L + 2, np.int64)
    st_z = np.empty(2 * L + 2)
    st_o = np.empty(2 * L + 2)
    st_f = np.empty(2 * L + 2, np.int64)
    top = 0
    st_node[0] = 0
    st_level[0] = 0
    st_ud[0] = 0
    st_z[0] = 1.0
    st_o[0] = 1.0
    st_f[0] = -1
    top = 1
    while top > 0:
        top -= 1
        node = st_node[top]
        lev = st_level[top]
        ud = st_ud[top]
        if lev > 0:
            for i in range(ud):
                pf[lev, i] = pf[lev - 1, i]
                pz[lev, i] = pz[lev - 1, i]
                po[lev, i] = po[lev - 1, i]
                pw[lev, i] = pw[lev - 1, i]
        _extend(pf[lev], pz[lev], po[lev], pw[lev], ud, st_z[top], st_o[top], st_f[top])
        f = feature[node]
        if f < 0:
            for i in range(1, ud + 1):
                w = _unwound_sum(pz[lev], po[lev], pw[lev], ud, i)
                phi[pf[lev, i]] += scale * w * (po[lev, i] - pz[lev, i]) * value[node]
            continue
        if x[f] <= threshold[node]:
            hot = left[node]
            cold = right[node]
        else:
            hot = right[node]
            cold = left[node]
        inc_z = 1.0
        inc_o = 1.0
        k = 0
        while k <= ud:
            if pf[lev, k] == f:
                break
            k += 1
        if k <= ud:
            inc_z = pz[lev, k]
            inc_o = po[lev, k]
            _unwind(pf[lev], pz[lev], po[lev], pw[lev], ud, k)
            ud -= 1
        # cold pushed first so the hot subtree runs first; both read level lev intact
        st_node[top] = cold
        st_level[top] = lev + 1
        st_ud[top] = ud + 1
        st_z[top] = cover[cold] / cover[node] * inc_z
        st_o[top] = 0.0
        st_f[top] = f
        top += 1
        st_node[top] = hot
        st_level[top] = lev + 1
        st_ud[top] = ud + 1
        st_z[top] = cover[hot] / cover[node] * inc_z
        st_o[top] = inc_o
        st_f[top] = f
        top += 1


@numba.njit(cache=True)
def _tree_shap_batch(X, feature, threshold, left, right, value, cover, max_level, scale, out):
    for r in range(X.shape[0]):
        _tree_shap_one(X[r], feature, threshold, left, right, value, cover, max_level, out[r], scale)


def tree_shap(model, X, feature_names: Sequence[str] | None = None, data=None) -> ShapMatrix:
    """Path-dependent TreeSHAP for a forest (probability), boosting model (margin) or one tree.

    Runs in O(leaves * depth^2) per tree and sample.
    """
    trees, scale, offset = _ensemble_trees(model)
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    out = np.zeros(X.shape)
    base = offset
    for t in trees:
        _tree_shap_batch(X, t.feature, t.threshold, t.left, t.right, t.value, t.cover, t.depth(), scale, out)
        base += scale * float(t.value[0])
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    kind = "margin" if isinstance(model, GradientBoostingModel) else "probability"
    return ShapMatrix(out, float(base), names, "tree-path-dependent", kind, X if data is None else data)


# ------------------------------------------------------------- linear

@dataclass(frozen=True)
class LinearAttribution:
    coefficients: np.ndarray
    intercept: float
    feature_names: tuple[str, ...]

    def to_json(self) -> dict:
        return {"intercept": self.intercept,
                "coefficients": dict(zip(self.feature_names, self.coefficients.tolist()))}


def linear_attribution(model, feature_names: Sequence[str] | None = None) -> LinearAttribution:
    """Standardized-scale logistic-regression coefficients and intercept."""
    if not isinstance(model, LogisticModel):
        raise ExplainError("linear attribution applies to logistic regression models only")
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(model.feature_count))
    return LinearAttribution(model.weights.copy(), float(model.intercept), names)


def linear_margin_shap(model, X, background, feature_names=None, data=None) -> ShapMatrix:
    """Exact interventional Shapley values of a linear margin: w_j (x_j - mean background_j)."""
    if not isinstance(model, (LogisticModel, LinearSVMModel)):
        raise ExplainError("linear margin attribution needs a linear model")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mu = np.asarray(background, dtype=float).mean(axis=0)
    values = (X - mu) * model.weights
    base = float(mu @ model.weights + model.intercept)
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    return ShapMatrix(values, base, names, "linear-interventional", "margin", X if data is None else data)


# ------------------------------------------------------------- sampling

def _linear_link(model, output):
    # (weights, intercept, link) when the explained output is link(linear margin)
    if isinstance(model, LogisticModel):
        if output == "margin":
            return model.weights, model.intercept, None
        return model.weights, model.intercept, expit
    if isinstance(model, LinearSVMModel):
        if output == "margin":
            return model.weights, model.intercept, None
        a, b = model.platt_a, model.platt_b
        return model.weights, model.intercept, lambda f: expit(-(a * f + b))
    return None


def sampling_shapley(model, x, background, permutations: int = DEFAULT_PERMUTATIONS, seed: int = 0,
                     output: str | None = None, chunk: int = 64) -> tuple[np.ndarray, np.ndarray, float]:
    """Permutation-sampling Shapley estimate of the interventional value function.

    Each permutation walks the features in random order, switching the
    whole background set from its own values to ``x`` one feature at a time;
    a feature's credit is the change in mean output. Returns (phi, standard
    error, base).
    """
    if permutations < 1:
        raise ExplainError("permutations must be >= 1")
    x = np.asarray(x, dtype=float).ravel()
    B = np.atleast_2d(np.asarray(background, dtype=float))
    m = x.size
    nb = B.shape[0]
    if nb == 0 or B.shape[1] != m:
        raise ExplainError("background must be a nonempty matrix with one column per feature")
    if callable(model) and not hasattr(model, "predict_proba"):
        f, lin = model, None
    else:
        f, output = model_output(model, output)
        lin = _linear_link(model, output)
    rng = np.random.default_rng(seed)
    orders = np.array([rng.permutation(m) for _ in range(permutations)])
    contrib = np.empty((permutations, m))
    if lin is not None:
        w, b, link = lin
        link = link or (lambda z: z)
        base_margin = B @ w + b
        delta = (x - B) * w                                    # nb x m
        base = float(np.mean(link(base_margin)))
        for lo in range(0, permutations, chunk):
            od = orders[lo:lo + chunk]
            steps = base_margin[None, :, None] + np.cumsum(delta[:, od].transpose(1, 0, 2), axis=2)
            means = np.concatenate([np.full((od.shape[0], 1), base), link(steps).mean(axis=1)], axis=1)
            rows = np.arange(od.shape[0])[:, None]
            contrib[lo + rows, od] = np.diff(means, axis=1)
    else:
        base = float(np.mean(f(B)))
        for lo in range(0, permutations, max(1, chunk // 4)):
            od = orders[lo:lo + max(1, chunk // 4)]
            k = od.shape[0]
            # coalition masks along each permutation: step s has the first s features switched on
            take = np.zeros((k, m + 1, m), dtype=bool)
            for s in range(1, m + 1):
                take[np.arange(k), s:, od[:, s - 1]] = True
            Z = np.where(take[:, 1:, None, :], x, B[None, None, :, :]).reshape(-1, m)
            vals = np.asarray(f(Z), dtype=float).reshape(k, m, nb).mean(axis=2)
            means = np.concatenate([np.full((k, 1), base), vals], axis=1)
            contrib[lo + np.arange(k)[:, None], od] = np.diff(means, axis=1)
    phi = contrib.mean(axis=0)
    se = contrib.std(axis=0, ddof=1) / math.sqrt(permutations) if permutations > 1 else np.full(m, np.inf)
    return phi, se, base


def sampling_shap_matrix(model, X, background, permutations: int = DEFAULT_PERMUTATIONS, seed: int = 0,
                         feature_names=None, data=None, output: str | None = None) -> ShapMatrix:
    """Row-wise ``sampling_shapley``; row i uses the stream ``seed``-derived for that row."""
    from ._common import derive_seed

    X = np.atleast_2d(np.asarray(X, dtype=float))
    vals = np.empty(X.shape)
    ses = np.empty(X.shape)
    base = 0.0
    for i, row in enumerate(X):
        vals[i], ses[i], base = sampling_shapley(model, row, background, permutations,
                                                 derive_seed(seed, "shap-row", i), output)
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    out = output or model_output(model)[1]
    return ShapMatrix(vals, base, names, "sampling-interventional", out, X if data is None else data, ses)


def background_sample(X, cap: int = DEFAULT_BACKGROUND, seed: int = 0) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[0] <= cap:
        return X
    rng = np.random.default_rng(seed)
    return X[np.sort(rng.choice(X.shape[0], cap, replace=False))]


# ------------------------------------------------------------- pooling

@dataclass(frozen=True)
class ImportanceRanking:
    feature_names: tuple[str, ...]
    importance: np.ndarray      # mean |phi| per feature
    direction: np.ndarray       # sign of corr(feature value, phi); 0 when undefined
    order: tuple[int, ...]      # most important first

    def ranked(self) -> list[tuple[str, float, int]]:
        return [(self.feature_names[j], float(self.importance[j]), int(self.direction[j])) for j in self.order]

    def to_json(self) -> dict:
        return {"ranking": [{"feature": n, "mean_abs_shap": v, "direction": d} for n, v, d in self.ranked()]}


def pool_importance(fold_shaps: Sequence[ShapMatrix], feature_names: Sequence[str] | None = None) -> ImportanceRanking:
    """Stack the folds' rows on a shared feature list (phi = 0 where a fold lacked the feature)."""
    if not fold_shaps:
        raise ExplainError("no SHAP matrices to pool")
    if feature_names is None:
        feature_names = list(dict.fromkeys(n for s in fold_shaps for n in s.feature_names))
    names = tuple(feature_names)
    col = {n: j for j, n in enumerate(names)}
    blocks_phi, blocks_val = [], []
    for s in fold_shaps:
        phi = np.zeros((s.values.shape[0], len(names)))
        val = np.full(phi.shape, np.nan)
        for k, n in enumerate(s.feature_names):
            if n not in col:
                raise ExplainError(f"feature {n!r} missing from the pooled feature list")
            phi[:, col[n]] = s.values[:, k]
            if s.data is not None:
                val[:, col[n]] = s.data[:, k]
        blocks_phi.append(phi)
        blocks_val.append(val)
    P = np.vstack(blocks_phi)
    V = np.vstack(blocks_val)
    imp = np.abs(P).mean(axis=0)
    direction = np.zeros(len(names), dtype=int)
    for j in range(len(names)):
        ok = ~np.isnan(V[:, j])
        if ok.sum() < 2:
            continue
        v, p = V[ok, j], P[ok, j]
        if v.std() == 0 or p.std() == 0:
            continue
        direction[j] = int(np.sign(np.corrcoef(v, p)[0, 1]))
    order = tuple(sorted(range(len(names)), key=lambda j: (-imp[j], j)))
    return ImportanceRanking(names, imp, direction, order)
