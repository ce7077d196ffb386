"""Distribution regression: one logit per threshold and treatment arm.

For every grid point ``y_k`` and arm ``d`` the binary outcome
``1{Y <= y_k, D = d}`` is regressed on ``(1, x dummies, c, P)`` with a
logistic link, fitted by Newton-Raphson with step-halving. The derivative of
the fitted probability in ``P`` is available in closed form.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from . import kernels
from ._design import independent_columns
from .dataset import ObservationTable
from .errors import AllSameOutcome, Nonconvergence, UnusableCell
from .propensity import PropensityFit

__all__ = [
    "ThresholdGrid", "default_grid", "LogitResult", "fit_logit", "DistRegFit",
    "fit_distreg", "eval_gamma", "eval_Gamma", "GammaEvaluator", "PBasis",
    "CONVERGED", "ALL_SAME", "NONCONVERGED",
]

CONVERGED = "converged"
ALL_SAME = "all_same_outcome"
NONCONVERGED = "nonconverged"


@dataclass(frozen=True, eq=False)
class ThresholdGrid:
    """Strictly increasing, nonnegative outcome thresholds."""

    yk: np.ndarray

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.yk, dtype=float))
        if y.ndim != 1 or y.size == 0:
            raise ValueError("threshold grid must be a nonempty 1-d sequence")
        if not np.all(np.isfinite(y)) or np.any(y < 0):
            raise ValueError("thresholds must be finite and nonnegative")
        if np.any(np.diff(y) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        y.setflags(write=False)
        object.__setattr__(self, "yk", y)

    def __len__(self) -> int:
        return self.yk.size

    def __eq__(self, other) -> bool:
        return isinstance(other, ThresholdGrid) and np.array_equal(self.yk, other.yk)


def default_grid(table: ObservationTable, size: int = 64, lo: float = 0.01,
                 hi: float = 0.99) -> ThresholdGrid:
    """``size`` empirical quantiles of observed ``y`` between levels ``lo`` and ``hi``,
    with duplicates removed (so the grid can be shorter than ``size``)."""
    if size < 1:
        raise ValueError("grid size must be positive")
    q = np.quantile(table.y, np.linspace(lo, hi, size))
    return ThresholdGrid(np.unique(q))


@dataclass(frozen=True)
class PBasis:
    """Functions of the propensity entering the logit index.

    ``kind="poly"`` uses ``P, P**2, ..., P**degree`` (``degree=1`` is the
    standard linear index). ``kind="logit"`` uses ``logit(P)`` followed by
    ``P, ..., P**(degree-1)``; ``kind="loglog"`` uses ``P, log P, log(1 - P)``.
    """

    kind: str = "poly"
    degree: int = 1

    def __post_init__(self):
        if self.kind not in ("poly", "logit", "loglog"):
            raise ValueError(f"unknown propensity basis kind {self.kind!r}")
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError("propensity basis needs a positive integer degree")

    @classmethod
    def parse(cls, text: str) -> "PBasis":
        """``"linear"``, ``"polyK"``, ``"logit"``, ``"logitK"`` (K >= 1) or ``"loglog"``."""
        t = str(text).strip().lower()
        if t == "linear":
            return cls("poly", 1)
        if t == "loglog":
            return cls("loglog", 3)
        for kind in ("poly", "logit"):
            if t == kind and kind == "logit":
                return cls("logit", 1)
            if t.startswith(kind) and t[len(kind):].isdigit():
                return cls(kind, int(t[len(kind):]))
        raise ValueError(f"cannot parse propensity basis {text!r}")

    @property
    def label(self) -> str:
        if self.kind == "loglog":
            return "loglog"
        if self.kind == "logit":
            return "logit" if self.degree == 1 else f"logit{self.degree}"
        return "linear" if self.degree == 1 else f"poly{self.degree}"

    @property
    def size(self) -> int:
        return 3 if self.kind == "loglog" else self.degree

    @property
    def names(self) -> list:
        if self.kind == "loglog":
            return ["P", "log(P)", "log(1-P)"]
        if self.kind == "logit":
            return ["logit(P)"] + ["P"] + [f"P^{j}" for j in range(2, self.degree)]
        return ["P"] + [f"P^{j}" for j in range(2, self.degree + 1)]

    def terms(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.kind == "loglog":
            return np.stack([v, np.log(v), np.log1p(-v)], axis=-1)
        if self.kind == "logit":
            return np.stack([np.log(v) - np.log1p(-v)] + [v ** j for j in range(1, self.degree)], axis=-1)
        return np.stack([v ** j for j in range(1, self.degree + 1)], axis=-1)

    def derivs(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.kind == "loglog":
            return np.stack([np.ones_like(v), 1.0 / v, -1.0 / (1.0 - v)], axis=-1)
        if self.kind == "logit":
            return np.stack([1.0 / (v * (1.0 - v))] + [j * v ** (j - 1) for j in range(1, self.degree)], axis=-1)
        return np.stack([j * v ** (j - 1) for j in range(1, self.degree + 1)], axis=-1)


@dataclass
class LogitResult:
    theta: np.ndarray
    status: str
    iterations: int
    loglik: float
    trace: list = field(default_factory=list)
    max_score: float = np.nan


def fit_logit(dense: np.ndarray, xcode: np.ndarray, b: np.ndarray, w: np.ndarray, *,
              tol: float = 1e-8, max_iter: int = 100, max_halving: int = 30) -> LogitResult:
    """Weighted logistic MLE by Newton-Raphson with step-halving.

    Parameters
    ----------
    dense : (n, q) C-contiguous float array
        Regressors other than the level dummies; column 0 must be the intercept.
    xcode : (n,) int64 array
        Level codes; codes ``1..nx-1`` get their own dummy coefficient.
    b : (n,) float array of 0/1 outcomes
    w : (n,) nonnegative weights

    Returns
    -------
    LogitResult
        ``status`` is ``"converged"`` once the largest absolute mean score is at
        most ``tol``, ``"all_same_outcome"`` when the weighted outcome has no
        variation, else ``"nonconverged"``. ``trace`` records the
        log-likelihood after every accepted step.
    """
    q = dense.shape[1]
    nx = int(xcode.max()) + 1 if xcode.size else 1
    p = q + nx - 1
    theta = np.zeros(p)
    wsum = w.sum()
    ybar = float(w @ b / wsum) if wsum > 0 else 0.0
    if ybar <= 0.0 or ybar >= 1.0:
        return LogitResult(theta * np.nan, ALL_SAME, 0, np.nan)
    theta[0] = np.log(ybar / (1.0 - ybar))
    ll, grad, hess = kernels.logit_derivs(theta, dense, xcode, b, w)
    trace = [ll]
    for it in range(max_iter + 1):
        score = float(np.max(np.abs(grad)))
        if score <= tol:
            return LogitResult(theta, CONVERGED, it, ll, trace, score)
        if it == max_iter:
            break
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-hess, grad, rcond=None)[0]
        t = 1.0
        for _ in range(max_halving + 1):
            cand = theta + t * step
            ll_new = kernels.logit_loglik(cand, dense, xcode, b, w)
            if np.isfinite(ll_new) and ll_new >= ll:
                break
            t *= 0.5
        else:
            return LogitResult(theta, NONCONVERGED, it, ll, trace, score)
        theta = cand
        ll, grad, hess = kernels.logit_derivs(theta, dense, xcode, b, w)
        trace.append(ll)
    return LogitResult(theta, NONCONVERGED, max_iter, ll, trace, float(np.max(np.abs(grad))))


@dataclass(frozen=True, eq=False)
class DistRegFit:
    """Coefficients of every (threshold, arm) logit on their natural scales.

    Arrays are indexed ``[k, d]``. ``beta_x[k, d, 0]`` is zero (reference
    level); ``beta_p[k, d, j]`` multiplies term ``j`` of ``p_basis``. Cells whose own fit
    failed carry the coefficients of the nearest converged threshold in the
    same arm, recorded in ``imputed_from`` (``-1`` when the cell is its own
    source or no source exists).
    """

    grid: ThresholdGrid
    x_levels: tuple
    beta0: np.ndarray
    beta_x: np.ndarray
    beta_c: np.ndarray
    beta_p: np.ndarray
    status: np.ndarray
    iterations: np.ndarray
    imputed_from: np.ndarray
    naive: bool = False
    p_basis: PBasis = PBasis()
    dropped: tuple = ()
    loglik: Optional[np.ndarray] = None

    @property
    def usable(self) -> np.ndarray:
        return self.status == CONVERGED

    @property
    def available(self) -> np.ndarray:
        """Cells with finite (own or imputed) coefficients."""
        return np.isfinite(self.beta0)

    def index(self, k, d, v, c, x_code) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        eta = self.beta0[k, d] + self.beta_x[k, d][np.asarray(x_code)] + self.beta_c[k, d] * np.asarray(c, float)
        return eta + self.p_index(k, d, v)

    def p_index(self, k, d, v) -> np.ndarray:
        """Contribution of the propensity terms to the logit index at ``v``."""
        return self.p_basis.terms(v) @ self.beta_p[k, d]

    def slope(self, k, d, v) -> np.ndarray:
        """Derivative of the logit index in ``P`` at ``v``."""
        return self.p_basis.derivs(v) @ self.beta_p[k, d]

    def unusable_cells(self) -> list:
        return [{"k": int(k), "y": float(self.grid.yk[k]), "d": int(d),
                 "status": str(self.status[k, d]), "imputed_from": int(self.imputed_from[k, d])}
                for k, d in zip(*np.nonzero(~self.usable))]

    def to_records(self) -> list:
        out = []
        for k, y in enumerate(self.grid.yk):
            for d in (0, 1):
                out.append({
                    "y": float(y), "d": d,
                    "beta0": _f(self.beta0[k, d]),
                    "beta_x": {str(lev): _f(b) for lev, b in zip(self.x_levels, self.beta_x[k, d])},
                    "beta_c": _f(self.beta_c[k, d]),
                    "beta_p": [_f(b) for b in self.beta_p[k, d]],
                    "converged": bool(self.status[k, d] == CONVERGED),
                    "status": str(self.status[k, d]),
                    "iterations": int(self.iterations[k, d]),
                    "imputed_from": int(self.imputed_from[k, d]),
                })
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_records(), indent=1)


def _f(x) -> Optional[float]:
    x = float(x)
    return x if np.isfinite(x) else None


def _impute(status: np.ndarray, *arrays):
    """Copy coefficients into failed cells from the nearest converged threshold (lower k on ties)."""
    K = status.shape[0]
    src = np.full(status.shape, -1, dtype=np.int64)
    for d in range(status.shape[1]):
        ok = np.flatnonzero(status[:, d] == CONVERGED)
        for k in range(K):
            if status[k, d] == CONVERGED or ok.size == 0:
                continue
            j = ok[np.argmin(np.abs(ok - k))]
            src[k, d] = j
            for a in arrays:
                a[k, d] = a[j, d]
    return src


def fit_distreg(table: ObservationTable, pfit: PropensityFit, grid: ThresholdGrid, *,
                weights=None, naive: bool = False, p_basis: PBasis = PBasis(), threads: int = 1,
                tol: float = 1e-8, max_iter: int = 100, strict: bool = False,
                fit_sample: str = "all") -> DistRegFit:
    """Fit every (threshold, arm) logit.

    Parameters
    ----------
    table, pfit
        Data and the propensity fit supplying ``P`` for each row.
    grid : ThresholdGrid
    weights : array, optional
        Nonnegative row weights (bootstrap multipliers); default all ones.
    naive : bool
        Drop ``c`` from the regressors.
    p_basis : PBasis
        Propensity terms in the index; the default is linear in ``P``.
    threads : int
        Cells are independent; with ``threads > 1`` they are fitted concurrently.
        Results do not depend on the thread count.
    strict : bool
        Raise :class:`AllSameOutcome` or :class:`Nonconvergence` for the first
        failed cell instead of imputing it.
    fit_sample : {"all", "above"}
        ``"above"`` fits the threshold-``y_k`` logits only on rows with
        ``c > y_k``, the rows over which the response is later averaged.
    """
    if fit_sample not in ("all", "above"):
        raise ValueError("fit_sample must be 'all' or 'above'")
    n = table.n
    m = p_basis.size
    w = np.ones(n) if weights is None else np.ascontiguousarray(weights, dtype=float)
    P = np.asarray(pfit.fitted, dtype=float)
    c_scale = float(table.c.max()) or 1.0
    cols = [np.ones(n)] + list(p_basis.terms(P).T)
    names = ["const"] + p_basis.names
    if not naive:
        cols.append(table.c / c_scale)
        names.append("c")
    dense_all = np.column_stack(cols)
    dummies = np.column_stack([(table.x == j).astype(float) for j in range(1, table.n_x)]) \
        if table.n_x > 1 else np.zeros((n, 0))
    full = np.hstack([dense_all, dummies])
    # priority: intercept, P terms, level dummies, then c
    q_all = dense_all.shape[1]
    order = list(range(1 + m)) + list(range(q_all, full.shape[1])) + list(range(1 + m, q_all))
    kept = independent_columns(full * np.sqrt(w)[:, None], order=order)
    kept_dense = [j for j in range(q_all) if j in set(kept.tolist())]
    dropped = tuple(names[j] for j in range(q_all) if j not in kept_dense)
    dense = np.ascontiguousarray(dense_all[:, kept_dense])
    xcode = np.ascontiguousarray(table.x, dtype=np.int64)
    yk = grid.yk
    K = yk.size
    nx = table.n_x

    def cell(args):
        k, d = args
        b = ((table.y <= yk[k]) & (table.d == d)).astype(float)
        wk = w if fit_sample == "all" or naive else w * (table.c > yk[k])
        return fit_logit(dense, xcode, b, wk, tol=tol, max_iter=max_iter)

    tasks = [(k, d) for k in range(K) for d in (0, 1)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(cell, tasks))
    else:
        results = [cell(t) for t in tasks]

    beta0 = np.full((K, 2), np.nan)
    beta_x = np.full((K, 2, nx), np.nan)
    beta_c = np.full((K, 2), np.nan)
    beta_p = np.full((K, 2, m), np.nan)
    status = np.empty((K, 2), dtype=object)
    iters = np.zeros((K, 2), dtype=np.int64)
    loglik = np.full((K, 2), np.nan)
    for (k, d), res in zip(tasks, results):
        status[k, d] = res.status
        iters[k, d] = res.iterations
        loglik[k, d] = res.loglik
        if strict and res.status == ALL_SAME:
            raise AllSameOutcome(f"outcome constant at threshold {yk[k]} for arm {d}", k=k, d=d)
        if strict and res.status == NONCONVERGED:
            raise Nonconvergence(f"logit did not converge at threshold {yk[k]} for arm {d}", k=k, d=d)
        if res.status != CONVERGED:
            continue
        full_dense = np.zeros(q_all)
        full_dense[kept_dense] = res.theta[:len(kept_dense)]
        beta0[k, d] = full_dense[0]
        beta_p[k, d] = full_dense[1:1 + m]
        beta_c[k, d] = 0.0 if naive else full_dense[q_all - 1] / c_scale
        beta_x[k, d, 0] = 0.0
        beta_x[k, d, 1:] = res.theta[len(kept_dense):]
    src = _impute(status, beta0, beta_x, beta_c, beta_p)
    return DistRegFit(grid=grid, x_levels=table.x_levels, beta0=beta0, beta_x=beta_x,
                      beta_c=beta_c, beta_p=beta_p, status=status, iterations=iters,
                      imputed_from=src, naive=naive, p_basis=p_basis, dropped=dropped,
                      loglik=loglik)


def _check_cell(fit: DistRegFit, k: int, d: int, allow_imputed: bool):
    ok = fit.available[k, d] if allow_imputed else fit.usable[k, d]
    if not ok:
        raise UnusableCell(f"cell (k={k}, d={d}) has status {fit.status[k, d]}", k=k, d=d)


def eval_Gamma(fit: DistRegFit, k: int, d: int, v, c, x_code=0, *, allow_imputed=False):
    """Fitted probability of ``{Y <= y_k, D = d}`` at ``P = v``."""
    _check_cell(fit, k, d, allow_imputed)
    return expit(fit.index(k, d, v, c, x_code))


def eval_gamma(fit: DistRegFit, k: int, d: int, v, c, x_code=0, *, allow_imputed=False):
    """Closed-form derivative of the fitted probability in ``P``.

    Equals ``beta_P * G * (1 - G)`` for the linear-in-``P`` index, where ``G``
    is the fitted logistic probability; bounded by ``|beta_P| / 4``. Other
    bases replace ``beta_P`` by the derivative of their index.
    """
    G = eval_Gamma(fit, k, d, v, c, x_code, allow_imputed=allow_imputed)
    return fit.slope(k, d, v) * G * (1.0 - G)


class GammaEvaluator:
    """Memoising wrapper around :func:`eval_gamma` for scalar queries."""

    def __init__(self, fit: DistRegFit, allow_imputed: bool = True):
        self.fit = fit
        self.allow_imputed = allow_imputed
        self._cache: dict = {}

    def __call__(self, k: int, d: int, v: float, c: float, x_code: int = 0) -> float:
        key = (k, d, float(v), float(c), int(x_code))
        if key not in self._cache:
            self._cache[key] = float(eval_gamma(self.fit, k, d, v, c, x_code,
                                                allow_imputed=self.allow_imputed))
        return self._cache[key]

    def cache_size(self) -> int:
        return len(self._cache)

    def many(self, ks: Sequence[int], d: int, v, c, x_code=0) -> np.ndarray:
        return np.array([eval_gamma(self.fit, k, d, v, c, x_code, allow_imputed=self.allow_imputed)
                         for k in ks])
