"""L1-regularized logistic regression fit by proximal gradient descent.

The objective is ``C * sum_i log(1 + exp(-t_i (w.x_i + b))) + ||w||_1`` with
``t_i = 2 y_i - 1`` and an unpenalized intercept ``b``; ``y = 1`` means
symptomatic.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numba
import numpy as np


class ClassifierError(ValueError):
    pass


@dataclass(frozen=True)
class FitResult:
    weights: np.ndarray
    intercept: float
    C: float
    objective: float
    n_iter: int
    converged: bool

    def to_json(self) -> str:
        d = asdict(self)
        d["weights"] = [float(v) for v in self.weights]
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        d = json.loads(text)
        d["weights"] = np.asarray(d["weights"], dtype=np.float64)
        return cls(**d)


@numba.njit(cache=True)
def _softplus(z):
    if z > 0:
        return z + np.log1p(np.exp(-z))
    return np.log1p(np.exp(z))


@numba.njit(cache=True)
def _sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


@numba.njit(cache=True)
def _smooth(X, t, w, b, C):
    loss = 0.0
    for i in range(X.shape[0]):
        m = b
        for j in range(X.shape[1]):
            m += X[i, j] * w[j]
        loss += _softplus(-t[i] * m)
    return C * loss


@numba.njit(cache=True)
def _smooth_grad(X, t, w, b, C):
    n, d = X.shape
    gw = np.zeros(d)
    gb = 0.0
    loss = 0.0
    for i in range(n):
        m = b
        for j in range(d):
            m += X[i, j] * w[j]
        loss += _softplus(-t[i] * m)
        r = -t[i] * _sigmoid(-t[i] * m)
        gb += r
        for j in range(d):
            gw[j] += r * X[i, j]
    return C * loss, C * gw, C * gb


@numba.njit(cache=True)
def _prox_step(X, t, C, yw, yb, f, gw, gb, step, w_new):
    """Backtracking prox-gradient step from (yw, yb); returns (b_new, f_new, step)."""
    d = X.shape[1]
    while True:
        for j in range(d):
            z = yw[j] - step * gw[j]
            if z > step:
                w_new[j] = z - step
            elif z < -step:
                w_new[j] = z + step
            else:
                w_new[j] = 0.0
        b_new = yb - step * gb
        f_new = _smooth(X, t, w_new, b_new, C)
        lin = gb * (b_new - yb)
        sq = (b_new - yb) * (b_new - yb)
        for j in range(d):
            dj = w_new[j] - yw[j]
            lin += gw[j] * dj
            sq += dj * dj
        if f_new <= f + lin + sq / (2.0 * step) or step < 1e-300:
            return b_new, f_new, step
        step *= 0.5


@numba.njit(cache=True)
def _prox_grad(X, t, C, w, b, tol, max_iter, trace):
    d = X.shape[1]
    f, gw, gb = _smooth_grad(X, t, w, b, C)
    obj = f + np.sum(np.abs(w))
    trace[0] = obj
    # first step 1 / (C ||[X 1]||_F^2 / 4) never exceeds 1 / Lipschitz
    fro = X.shape[0] * 1.0
    for i in range(X.shape[0]):
        for j in range(d):
            fro += X[i, j] * X[i, j]
    step = 4.0 / (C * fro)
    yw = w.copy()
    yb = b
    fy, gyw, gyb = f, gw, gb
    momentum = 1.0
    w_new = np.empty(d)
    converged = False
    it = 0
    while it < max_iter:
        b_new, f_new, step = _prox_step(X, t, C, yw, yb, fy, gyw, gyb, 2.0 * step, w_new)
        obj_new = f_new + np.sum(np.abs(w_new))
        if obj_new > obj:
            if momentum == 1.0:
                # plain step failed to decrease: only rounding noise is left
                converged = True
                break
            # adaptive restart: drop momentum, retry from the current iterate
            momentum = 1.0
            yw[:] = w
            yb = b
            fy, gyw, gyb = _smooth_grad(X, t, w, b, C)
            continue
        it += 1
        change = obj - obj_new
        prev = obj
        m_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum * momentum))
        beta = (momentum - 1.0) / m_next
        momentum = m_next
        for j in range(d):
            yw[j] = w_new[j] + beta * (w_new[j] - w[j])
            w[j] = w_new[j]
        yb = b_new + beta * (b_new - b)
        b = b_new
        obj = obj_new
        if it < trace.shape[0]:
            trace[it] = obj
        if change <= tol * max(abs(prev), 1e-300):
            converged = True
            break
        if beta == 0.0:
            fy, gyw, gyb = _smooth_grad(X, t, w, b, C)
        else:
            fy, gyw, gyb = _smooth_grad(X, t, yw, yb, C)
    return w, b, obj, it, converged


def _check_xy(X, y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ClassifierError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if not np.all(np.isfinite(X)):
        raise ClassifierError("X contains non-finite values")
    if not np.all((y == 0) | (y == 1)):
        raise ClassifierError("labels must be 0 or 1")
    if y.min() == y.max():
        raise ClassifierError("y has a single class")
    return X, y.astype(np.float64)


def fit(X, y, C: float, tol: float = 1e-8, max_iter: int = 10_000,
        w0=None, b0: float = 0.0, return_trace: bool = False):
    """Fit the L1 logistic model at inverse regularization strength ``C``.

    Accelerated proximal gradient (soft-thresholding, backtracking line
    search) starting from ``w0`` (zeros by default). Momentum is reset
    whenever it would raise the objective, so every accepted iterate has an
    objective no larger than the one before. Stops when the relative
    objective change falls below ``tol`` or after ``max_iter`` steps.
    """
    X, y = _check_xy(X, y)
    if not C > 0:
        raise ClassifierError("C must be positive")
    t = 2.0 * y - 1.0
    w = np.zeros(X.shape[1]) if w0 is None else np.array(w0, dtype=np.float64)
    trace = np.full(max_iter + 1 if return_trace else 1, np.nan)
    w, b, obj, it, conv = _prox_grad(X, t, float(C), w, float(b0), tol, max_iter, trace)
    result = FitResult(w, float(b), float(C), float(obj), int(it), bool(conv))
    if return_trace:
        return result, trace[: it + 1]
    return result


def objective(X, y, w, b, C) -> float:
    X, y = _check_xy(X, y)
    return float(_smooth(X, 2.0 * y - 1.0, np.asarray(w, float), float(b), float(C))
                 + np.abs(w).sum())


def smooth_part(X, y, w, b, C):
    """Value and gradient ``(f, grad_w, grad_b)`` of the data term ``C * logistic loss``."""
    X, y = _check_xy(X, y)
    return _smooth_grad(X, 2.0 * y - 1.0, np.asarray(w, float), float(b), float(C))


def decision_function(result: FitResult, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != result.weights.shape[0]:
        raise ClassifierError(
            f"feature dimension {X.shape[-1]} != model dimension {result.weights.shape[0]}")
    return X @ result.weights + result.intercept


def predict_proba(result: FitResult, x) -> float | np.ndarray:
    """Probability of symptomatic: sigmoid(w.x + b); vectorized over rows."""
    z = decision_function(result, x)
    out = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                   np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    return float(out) if np.ndim(out) == 0 else out
