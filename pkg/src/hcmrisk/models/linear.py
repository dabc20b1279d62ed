"""L2 logistic regression and linear SVM with Platt calibration."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import expit

from .._common import derive_seed, stratified_folds
from .base import FittedClassifier
from .tree import _splitmix

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ logistic

def lr_objective(w, b, X, y, lam):
    """Mean logistic loss + lam/2 ||w||^2 (intercept unpenalized), and its gradient."""
    z = X @ w + b
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * lam * (w @ w)
    r = (expit(z) - y) / y.size
    return loss, X.T @ r + lam * w, r.sum()


@dataclass(frozen=True, eq=False)
class LogisticModel(FittedClassifier):
    weights: np.ndarray
    intercept: float
    hyperparams: dict
    seed: int
    feature_count: int
    grad_norm: float = 0.0
    n_iter: int = 0
    kind = "lr"

    def decision_function(self, X):
        return self._check(X) @ self.weights + self.intercept

    def _proba(self, X):
        return expit(X @ self.weights + self.intercept)

    def _params_json(self):
        return {"weights": self.weights.tolist(), "intercept": self.intercept,
                "grad_norm": self.grad_norm, "n_iter": self.n_iter}


def fit_logistic(X, y, hp: dict, seed: int) -> LogisticModel:
    """Full-batch gradient descent with Armijo backtracking until ||grad|| <= tol."""
    lam, tol, max_iter = float(hp["lam"]), float(hp["tol"]), int(hp["max_iter"])
    n, p = X.shape
    w = np.zeros(p)
    b = 0.0
    loss, gw, gb = lr_objective(w, b, X, y, lam)
    step = 1.0
    it = 0
    gnorm = math.sqrt(gw @ gw + gb * gb)
    while gnorm > tol and it < max_iter:
        g2 = gnorm * gnorm
        while True:
            w_new = w - step * gw
            b_new = b - step * gb
            new_loss, ngw, ngb = lr_objective(w_new, b_new, X, y, lam)
            if new_loss <= loss - 0.5 * step * g2:
                break
            # Near the optimum the sufficient decrease is below the loss's rounding error.
            # By convexity, a step that stops short of the line minimum (old and new
            # gradients still agree in sign) also lowers the loss; this test is rounding-free.
            if gw @ ngw + gb * ngb >= 0.0:
                break
            if step < 1e-20:
                break
            step *= 0.5
        if step < 1e-20:
            break
        w, b, loss, gw, gb = w_new, b_new, new_loss, ngw, ngb
        gnorm = math.sqrt(gw @ gw + gb * gb)
        step *= 2.0
        it += 1
    if gnorm > tol:
        log.warning("logistic regression stopped at gradient norm %.3g after %d iterations", gnorm, it)
    return LogisticModel(w, float(b), dict(hp), seed, p, gnorm, it)


# ----------------------------------------------------------------------- SVM

@numba.njit(cache=True)
def _svm_dual_cd(X, y, C, tol, max_epochs, seed):
    # Dual coordinate descent for 0.5||w||^2 + C sum hinge; X carries a bias column.
    n, p = X.shape
    alpha = np.zeros(n)
    w = np.zeros(p)
    qii = np.zeros(n)
    for i in range(n):
        for j in range(p):
            qii[i] += X[i, j] * X[i, j]
    order = np.arange(n)
    state = np.uint64(seed)
    for epoch in range(max_epochs):
        for i in range(n - 1, 0, -1):
            state, z = _splitmix(state)
            j = np.int64(z % np.uint64(i + 1))
            t = order[i]
            order[i] = order[j]
            order[j] = t
        pg_max = -np.inf
        pg_min = np.inf
        for s in range(n):
            i = order[s]
            g = 0.0
            for j in range(p):
                g += w[j] * X[i, j]
            g = y[i] * g - 1.0
            pg = g
            if alpha[i] == 0.0:
                pg = min(g, 0.0)
            elif alpha[i] == C:
                pg = max(g, 0.0)
            if pg > pg_max:
                pg_max = pg
            if pg < pg_min:
                pg_min = pg
            if pg != 0.0:
                old = alpha[i]
                alpha[i] = min(max(old - g / qii[i], 0.0), C)
                d = (alpha[i] - old) * y[i]
                for j in range(p):
                    w[j] += d * X[i, j]
        if pg_max - pg_min < tol:
            return w, epoch + 1
    return w, max_epochs


def _hinge_fit(X, y01, C, tol, max_epochs, seed):
    Xb = np.ascontiguousarray(np.hstack([X, np.ones((X.shape[0], 1))]))
    ys = np.where(y01 > 0.5, 1.0, -1.0)
    wb, epochs = _svm_dual_cd(Xb, ys, float(C), float(tol), int(max_epochs), np.uint64(seed))
    if epochs >= max_epochs:
        log.debug("linear SVM did not reach tolerance %.1g in %d epochs", tol, max_epochs)
    return wb[:-1].copy(), float(wb[-1])


def fit_platt(f, y) -> tuple[float, float]:
    """Platt sigmoid P(y=1|f) = 1/(1+exp(A f + B)) by Newton's method with Platt's smoothed targets.

    A is constrained to be <= 0 so the calibrated probability never
    decreases with the decision value; if the unconstrained fit has A > 0
    the calibrator degenerates to the (smoothed) prevalence.
    """
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    n1 = y.sum()
    n0 = y.size - n1
    hi, lo = (n1 + 1.0) / (n1 + 2.0), 1.0 / (n0 + 2.0)
    t = np.where(y > 0.5, hi, lo)

    def objective(A, B):
        fa = f * A + B
        return float(np.sum(np.logaddexp(0.0, fa) - (1.0 - t) * fa))

    A, B = 0.0, math.log((n0 + 1.0) / (n1 + 1.0))
    fval = objective(A, B)
    for _ in range(100):
        fa = f * A + B
        p = expit(-fa)          # P(y=1)
        q = 1.0 - p
        d2 = p * q
        h11 = 1e-12 + np.sum(f * f * d2)
        h22 = 1e-12 + np.sum(d2)
        h21 = np.sum(f * d2)
        d1 = t - p
        g1 = np.sum(f * d1)
        g2 = np.sum(d1)
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= 1e-10:
            nA, nB = A + step * dA, B + step * dB
            nf = objective(nA, nB)
            if nf < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nf
                break
            step *= 0.5
        else:
            break
    if A > 0:
        mt = float(t.mean())
        A, B = 0.0, math.log((1.0 - mt) / mt)
    return float(A), float(B)


@dataclass(frozen=True, eq=False)
class LinearSVMModel(FittedClassifier):
    weights: np.ndarray
    intercept: float
    platt_a: float
    platt_b: float
    hyperparams: dict
    seed: int
    feature_count: int
    kind = "svm"

    def decision_function(self, X):
        return self._check(X) @ self.weights + self.intercept

    def _proba(self, X):
        f = X @ self.weights + self.intercept
        return expit(-(self.platt_a * f + self.platt_b))

    def _params_json(self):
        return {"weights": self.weights.tolist(), "intercept": self.intercept,
                "platt_a": self.platt_a, "platt_b": self.platt_b}


def fit_linear_svm(X, y, hp: dict, seed: int) -> LinearSVMModel:
    """Hinge-loss linear SVM; Platt calibrator fit on out-of-fold decision values."""
    C, tol, epochs = hp["C"], hp["tol"], hp["max_epochs"]
    k = int(hp["calib_folds"])
    folds = stratified_folds(y, k, derive_seed(seed, "svm-calib"))
    oof = np.empty(y.size)
    for f in range(k):
        tr, te = folds != f, folds == f
        if np.unique(y[tr]).size < 2:
            oof[te] = 0.0
            continue
        w, b = _hinge_fit(X[tr], y[tr], C, tol, epochs, derive_seed(seed, "svm-cd", f))
        oof[te] = X[te] @ w + b
    A, B = fit_platt(oof, y)
    w, b = _hinge_fit(X, y, C, tol, epochs, derive_seed(seed, "svm-cd"))
    return LinearSVMModel(w, b, A, B, dict(hp), seed, X.shape[1])
