"""Floating feature selection, nested stratified CV with grid search, and the fold ensemble."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._common import derive_seed, stratified_folds
from .cohort import Cohort, PatientExam
from .explain import (
    DEFAULT_BACKGROUND,
    DEFAULT_PERMUTATIONS,
    ShapMatrix,
    background_sample,
    linear_attribution,
    linear_margin_shap,
    sampling_shap_matrix,
    tree_shap,
)
from .metrics import MetricBlock, RocCurve, confusion_metrics, roc_auc
from .models import (
    DEFAULT_GRIDS,
    SELECTION_DEFAULTS,
    ClassifierSpec,
    FittedClassifier,
    fit_classifier,
    grid_points,
    model_from_json,
)
from .preprocess import (
    CorrelationFilterResult,
    FittedPreprocessor,
    correlation_filter,
    fit_preprocessor,
    transform,
    undersample,
)

log = logging.getLogger(__name__)

SFFS_CAP = 25
ENSEMBLE_SIZE = 5


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class CvPlan:
    outer_folds: int = 5
    inner_folds: int = 3
    seed: int = 0
    stratified: bool = True
    sffs_cap: int = SFFS_CAP
    correlation_threshold: float = 0.75
    threshold: float = 0.5
    shap_permutations: int = DEFAULT_PERMUTATIONS
    shap_background: int = DEFAULT_BACKGROUND

    def __post_init__(self):
        if self.outer_folds < 2 or self.inner_folds < 2:
            raise PipelineError("CV needs at least 2 outer and 2 inner folds")
        if self.sffs_cap < 1:
            raise PipelineError("sffs_cap must be >= 1")

    def folds(self, y, *keys) -> np.ndarray:
        k = self.outer_folds if not keys or keys[0] == "outer" else self.inner_folds
        seed = derive_seed(self.seed, "folds", *keys)
        if self.stratified:
            return stratified_folds(y, k, seed)
        rng = np.random.default_rng(seed)
        out = np.empty(len(y), dtype=int)
        out[rng.permutation(len(y))] = np.arange(len(y)) % k
        return out


# -------------------------------------------------------------------- SFFS

@dataclass(frozen=True)
class SffsResult:
    selected: tuple[int, ...]
    score: float
    history: tuple[tuple[str, tuple[int, ...], float], ...]   # (step, subset, score) of accepted moves
    evaluations: int

    def to_json(self, names: Sequence[str] | None = None) -> dict:
        def nm(s):
            return [names[i] for i in s] if names is not None else list(s)
        return {"selected": nm(self.selected), "score": self.score, "evaluations": self.evaluations,
                "history": [{"step": a, "subset": nm(s), "score": v} for a, s, v in self.history]}


def sffs(candidates, scorer: Callable[[tuple[int, ...]], float], cap: int = SFFS_CAP) -> SffsResult:
    """Sequential floating forward selection over ``candidates`` (an int count or index list).

    A forward step adds the feature whose subset scores highest, and only if
    that beats the current score. After each addition (once the subset has
    more than two features) the floating step removes the feature whose
    removal gives the best score, repeatedly, while that beats both the
    current score and the best score recorded at the smaller size. Ties go
    to the lowest feature index, so accepted scores strictly increase and
    the final subset is the best one visited.
    """
    if cap < 1:
        raise PipelineError("SFFS cap must be >= 1")
    pool = list(range(candidates)) if isinstance(candidates, (int, np.integer)) else sorted(int(c) for c in candidates)
    cap = min(cap, len(pool))
    cache: dict[frozenset, float] = {}

    def J(subset) -> float:
        key = frozenset(subset)
        if key not in cache:
            cache[key] = float(scorer(tuple(sorted(key))))
        return cache[key]

    S: list[int] = []
    current = -math.inf
    best_at: dict[int, float] = {}
    history = []
    while len(S) < cap:
        best_f, best_s = None, -math.inf
        for f in pool:
            if f in S:
                continue
            s = J(S + [f])
            if s > best_s:
                best_f, best_s = f, s
        if best_f is None or best_s <= current:
            break
        S = sorted(S + [best_f])
        current = best_s
        best_at[len(S)] = max(best_at.get(len(S), -math.inf), current)
        history.append(("add", tuple(S), current))
        while len(S) > 2:
            rm_f, rm_s = None, -math.inf
            for f in S:
                s = J([g for g in S if g != f])
                if s > rm_s:
                    rm_f, rm_s = f, s
            if rm_s > current and rm_s > best_at.get(len(S) - 1, -math.inf):
                S = [g for g in S if g != rm_f]
                current = rm_s
                best_at[len(S)] = current
                history.append(("remove", tuple(S), current))
            else:
                break
    best = max(history, key=lambda h: h[2]) if history else ("add", tuple(), -math.inf)
    return SffsResult(best[1], best[2], tuple(history), len(cache))


# ------------------------------------------------------------ inner CV

@dataclass(frozen=True)
class _InnerFold:
    Z_train: np.ndarray     # preprocessed, undersampled inner-train rows (all columns)
    y_train: np.ndarray
    Z_test: np.ndarray
    y_test: np.ndarray


def _inner_folds(X: np.ndarray, y: np.ndarray, plan: CvPlan, outer: int) -> list[_InnerFold]:
    folds = plan.folds(y, "inner", outer)
    out = []
    for k in range(plan.inner_folds):
        tr, te = folds != k, folds == k
        if np.unique(y[tr]).size < 2 or np.unique(y[te]).size < 2:
            raise PipelineError(f"outer fold {outer}, inner fold {k} has a single class")
        pre = fit_preprocessor(X[tr])
        keep = undersample(y[tr], derive_seed(plan.seed, "undersample", outer, k))
        out.append(_InnerFold(transform(pre, X[tr])[keep], y[tr][keep], transform(pre, X[te]), y[te]))
    return out


def inner_cv_auc(folds: Sequence[_InnerFold], kind: str, hyperparams: dict, subset, seed: int) -> float:
    """Mean AUC over inner folds of ``kind`` trained on the columns in ``subset``."""
    cols = list(subset)
    aucs = []
    for k, fold in enumerate(folds):
        spec = ClassifierSpec(kind, hyperparams, derive_seed(seed, "inner-model", k))
        model = fit_classifier(spec, fold.Z_train[:, cols], fold.y_train)
        aucs.append(roc_auc(model.predict_proba(fold.Z_test[:, cols]), fold.y_test).auc)
    return float(np.mean(aucs))


# ------------------------------------------------------------ ensemble

@dataclass(frozen=True)
class EnsembleMember:
    model: FittedClassifier
    preprocessor: FittedPreprocessor
    features: tuple[int, ...]          # schema indices fed to the model, in order

    def predict(self, X_raw) -> np.ndarray:
        Z = transform(self.preprocessor, np.atleast_2d(np.asarray(X_raw, dtype=float)))
        return self.model.predict_proba(Z[:, list(self.features)])

    def to_json(self) -> dict:
        return {"features": list(self.features), "preprocessor": self.preprocessor.to_json(),
                "model": self.model.to_json()}

    @classmethod
    def from_json(cls, doc: dict) -> "EnsembleMember":
        return cls(model_from_json(doc["model"]), FittedPreprocessor.from_json(doc["preprocessor"]),
                   tuple(int(i) for i in doc["features"]))


@dataclass(frozen=True)
class EnsembleModel:
    members: tuple[EnsembleMember, ...]
    feature_names: tuple[str, ...]
    kind: str

    def member_predictions(self, X_raw) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X_raw, dtype=float))
        if X.shape[1] != len(self.feature_names):
            raise PipelineError(f"ensemble expects {len(self.feature_names)} schema features, got {X.shape[1]}")
        return np.array([m.predict(X) for m in self.members])

    def predict(self, X_raw) -> np.ndarray:
        return self.member_predictions(X_raw).mean(axis=0)

    def to_json(self) -> dict:
        return {"format_version": 1, "kind": self.kind, "feature_names": list(self.feature_names),
                "members": [m.to_json() for m in self.members]}

    @classmethod
    def from_json(cls, doc: dict) -> "EnsembleModel":
        return cls(tuple(EnsembleMember.from_json(m) for m in doc["members"]),
                   tuple(doc["feature_names"]), doc["kind"])


def build_ensemble(members: Sequence[EnsembleMember], feature_names: Sequence[str], kind: str = "",
                   size: int = ENSEMBLE_SIZE) -> EnsembleModel:
    """Wrap the outer-fold members; no refitting."""
    members = tuple(members)
    if len(members) != size:
        raise PipelineError(f"an ensemble needs exactly {size} members, got {len(members)}")
    return EnsembleModel(members, tuple(feature_names), kind or members[0].model.kind)


def ensemble_predict(ens: EnsembleModel, exam: PatientExam | Sequence[float]) -> float:
    """Mean member probability for one exam; each member imputes and scales with its own statistics."""
    values = exam.values if isinstance(exam, PatientExam) else exam
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.size != len(ens.feature_names):
        raise PipelineError(f"exam has {x.size} values, schema has {len(ens.feature_names)}")
    return float(ens.predict(x[None, :])[0])


# ------------------------------------------------------------ nested CV

@dataclass(frozen=True)
class FoldReport:
    fold_index: int
    kind: str
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    correlation: CorrelationFilterResult
    sffs: SffsResult
    selected_features: tuple[int, ...]
    best_hyperparams: dict
    grid_scores: tuple[tuple[dict, float], ...]
    metrics: MetricBlock
    roc: RocCurve
    test_probabilities: np.ndarray
    test_labels: np.ndarray
    shap: ShapMatrix | None = None
    coefficients: dict | None = None

    def to_json(self, names: Sequence[str]) -> dict:
        doc = {
            "fold_index": self.fold_index,
            "kind": self.kind,
            "n_train": len(self.train_ids),
            "n_test": len(self.test_ids),
            "test_positives": int(self.test_labels.sum()),
            "correlation_filter": self.correlation.to_json(names),
            "sffs": self.sffs.to_json(names),
            "selected_features": [names[i] for i in self.selected_features],
            "best_hyperparams": _jsonable(self.best_hyperparams),
            "grid_scores": [{"hyperparams": _jsonable(h), "inner_auc": s} for h, s in self.grid_scores],
            "metrics": self.metrics.to_json(),
            "roc": self.roc.to_json(),
            "test_probabilities": dict(zip(self.test_ids, self.test_probabilities.tolist())),
        }
        if self.shap is not None:
            doc["shap"] = self.shap.to_json()
        if self.coefficients is not None:
            doc["coefficients"] = self.coefficients
        return doc


def _jsonable(hp: dict) -> dict:
    return {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in hp.items()}


@dataclass(frozen=True)
class NestedCvResult:
    kind: str
    folds: tuple[FoldReport, ...]
    members: tuple[EnsembleMember, ...]
    feature_names: tuple[str, ...]

    def ensemble(self) -> EnsembleModel:
        return build_ensemble(self.members, self.feature_names, self.kind, size=len(self.members))

    def oof_probabilities(self) -> dict[str, float]:
        out = {}
        for f in self.folds:
            out.update(zip(f.test_ids, f.test_probabilities.tolist()))
        return out


@dataclass(frozen=True)
class _FoldTask:
    k: int
    X: np.ndarray
    y: np.ndarray
    pids: tuple[str, ...]
    names: tuple[str, ...]
    folds: np.ndarray
    kind: str
    grid: dict
    plan: CvPlan
    explain: bool


def _explain_fold(kind, model, Z_train, Z_test, sel_names, plan: CvPlan, k: int):
    if kind in ("rf", "gb"):
        return tree_shap(model, Z_test, sel_names), None
    bg = background_sample(Z_train, plan.shap_background, derive_seed(plan.seed, "background", k))
    if kind == "lr":
        return linear_margin_shap(model, Z_test, bg, sel_names), linear_attribution(model, sel_names).to_json()
    return sampling_shap_matrix(model, Z_test, bg, plan.shap_permutations, derive_seed(plan.seed, "shap", k),
                                sel_names), None


def _run_fold(task: _FoldTask) -> tuple[FoldReport, EnsembleMember]:
    k, plan, kind = task.k, task.plan, task.kind
    tr, te = task.folds != k, task.folds == k
    X_tr, y_tr = task.X[tr], task.y[tr]
    if np.unique(y_tr).size < 2 or np.unique(task.y[te]).size < 2:
        raise PipelineError(f"outer fold {k} has a single class")

    # correlation pruning sees outer-train rows only
    corr = correlation_filter(X_tr, plan.correlation_threshold, np.isnan(X_tr).sum(axis=0), task.names)
    pre = fit_preprocessor(X_tr, task.names)
    inner = _inner_folds(X_tr, y_tr, plan, k)
    sel_seed = derive_seed(plan.seed, "selection", kind, k)
    result = sffs(corr.retained, lambda s: inner_cv_auc(inner, kind, SELECTION_DEFAULTS[kind], s, sel_seed),
                  plan.sffs_cap)
    selected = result.selected
    grid_scores = []
    best_hp, best_score = None, -math.inf
    for hp in grid_points(task.grid):
        s = inner_cv_auc(inner, kind, hp, selected, derive_seed(plan.seed, "grid", kind, k))
        grid_scores.append((hp, s))
        if s > best_score:
            best_hp, best_score = hp, s
    keep = undersample(y_tr, derive_seed(plan.seed, "undersample", k, "outer"))
    Z_tr = transform(pre, X_tr)[:, list(selected)]
    model = fit_classifier(ClassifierSpec(kind, best_hp, derive_seed(plan.seed, "final", kind, k)),
                           Z_tr[keep], y_tr[keep])
    Z_te = transform(pre, task.X[te])[:, list(selected)]
    prob = model.predict_proba(Z_te)
    y_te = task.y[te]
    sel_names = tuple(task.names[i] for i in selected)
    shap, coefs = _explain_fold(kind, model, Z_tr, Z_te, sel_names, plan, k) if task.explain else (None, None)
    pids = np.array(task.pids, dtype=object)
    report = FoldReport(
        k, kind, tuple(pids[tr]), tuple(pids[te]), corr, result, tuple(selected), dict(best_hp),
        tuple(grid_scores), confusion_metrics(prob, y_te, plan.threshold), roc_auc(prob, y_te),
        prob, y_te, shap, coefs)
    return report, EnsembleMember(model, pre, tuple(selected))


def nested_cv(cohort: Cohort, kind: str, grid: dict | None = None, plan: CvPlan = CvPlan(),
              explain: bool = True, threads: int = 1) -> NestedCvResult:
    """Outer stratified CV around per-fold correlation pruning, SFFS, grid search and refit.

    Everything fitted in a fold (filter, preprocessor, selection, model)
    sees that fold's outer-train rows only; the outer-test rows are scored
    once, untouched, at ``plan.threshold``.
    """
    pids, X = cohort.baseline_matrix()
    y = cohort.label_vector(pids)
    return nested_cv_arrays(X, y, pids, cohort.schema.names, kind, grid, plan, explain, threads)


def nested_cv_arrays(X, y, pids, names, kind, grid=None, plan: CvPlan = CvPlan(), explain: bool = True,
                     threads: int = 1) -> NestedCvResult:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    grid = DEFAULT_GRIDS[kind] if grid is None else grid
    folds = plan.folds(y, "outer")
    tasks = [_FoldTask(k, X, y, tuple(pids), tuple(names), folds, kind, grid, plan, explain)
             for k in range(plan.outer_folds)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = []
        for t in tasks:
            results.append(_run_fold(t))
            log.info("%s fold %d: AUC %.3f", kind, t.k, results[-1][0].roc.auc)
    return NestedCvResult(kind, tuple(r[0] for r in results), tuple(r[1] for r in results), tuple(names))


# ------------------------------------------------------- external cohort

@dataclass(frozen=True)
class ExternalReport:
    patient_ids: tuple[str, ...]
    probabilities: np.ndarray
    labels: np.ndarray
    metrics: MetricBlock
    roc: RocCurve | None

    def to_json(self) -> dict:
        return {"n": len(self.patient_ids), "positives": int(self.labels.sum()),
                "metrics": self.metrics.to_json(),
                "roc": None if self.roc is None else self.roc.to_json(),
                "probabilities": dict(zip(self.patient_ids, self.probabilities.tolist()))}


def external_validate(ens: EnsembleModel, cohort: Cohort, threshold: float = 0.5) -> ExternalReport:
    """Score each patient's baseline exam with the ensemble and compute the metric block."""
    if tuple(cohort.schema.names) != ens.feature_names:
        raise PipelineError("external cohort schema differs from the ensemble's")
    pids, X = cohort.baseline_matrix()
    if not pids:
        raise PipelineError("external cohort is empty")
    y = cohort.label_vector(pids)
    prob = ens.predict(X)
    roc = roc_auc(prob, y) if 0 < y.sum() < y.size else None
    return ExternalReport(tuple(pids), prob, y, confusion_metrics(prob, y, threshold), roc)
