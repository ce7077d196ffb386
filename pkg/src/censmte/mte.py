"""Marginal treatment response and effect surfaces.

Turns a distribution-regression fit into DMTR/DMTE/QMTR/QMTE/RMTE values on a
``(y or tau, v, x)`` evaluation design, enforces monotonicity in ``y`` by
rearrangement, and aggregates over covariate levels with sample-share
weights. Arrays are indexed ``[d, k, v, x]`` for arm-specific quantities and
``[k, v, x]`` for effects; ``NaN`` marks missing or unidentified entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from . import kernels
from .dataset import ObservationTable
from .distreg import DistRegFit, ThresholdGrid
from .errors import InvalidHorizon
from .propensity import PropensityFit

__all__ = [
    "EvalDesign", "default_design", "estimate_dmtr", "monotonize_and_clamp", "rearrange",
    "invert_to_qmtr", "invert_curve", "MteSurfaces", "assemble_surfaces",
    "estimate_conditional_dmtr", "restricted_mean_decomposition", "integrate_survival",
    "to_long_rows",
]

DEFAULT_TAUS = tuple(np.round(np.arange(0.05, 0.951, 0.05), 2))


@dataclass(frozen=True, eq=False)
class EvalDesign:
    """Evaluation points: propensity values ``v``, quantile levels ``tau`` and the threshold grid."""

    v_grid: np.ndarray
    tau_grid: np.ndarray
    y_grid: ThresholdGrid

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.v_grid, dtype=float))
        tau = np.atleast_1d(np.asarray(self.tau_grid, dtype=float))
        if v.size == 0 or np.any((v <= 0) | (v >= 1)):
            raise ValueError("v grid must be nonempty and inside (0, 1)")
        if np.any((tau <= 0) | (tau >= 1)) or np.any(np.diff(tau) <= 0):
            raise ValueError("tau grid must be strictly increasing inside (0, 1)")
        object.__setattr__(self, "v_grid", v)
        object.__setattr__(self, "tau_grid", tau)


def default_design(pfit: PropensityFit, grid: ThresholdGrid, n_v: int = 41,
                   tau_grid: Sequence[float] = DEFAULT_TAUS) -> EvalDesign:
    """``n_v`` equispaced points between the 5th and 95th percentiles of the fitted propensity."""
    lo, hi = np.quantile(pfit.fitted, [0.05, 0.95])
    return EvalDesign(np.linspace(lo, hi, n_v), np.asarray(tau_grid, float), grid)


def _offsets(fit: DistRegFit, k: int, d: int, c: np.ndarray, x_code: int) -> np.ndarray:
    return np.ascontiguousarray(fit.beta0[k, d] + fit.beta_x[k, d, x_code] + fit.beta_c[k, d] * c)


def _slopes(fit: DistRegFit, k: int, d: int, v: np.ndarray):
    """Index contribution of ``P`` at each ``v`` and ``(2d-1)`` times its derivative."""
    sv = fit.p_index(k, d, v)
    dv = (2 * d - 1) * fit.slope(k, d, v)
    return np.ascontiguousarray(sv), np.ascontiguousarray(dv)


def estimate_dmtr(fit: DistRegFit, table: ObservationTable, design: EvalDesign, *,
                  naive: Optional[bool] = None,
                  weights: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """Raw DMTR: ``(2d-1)`` times the mean derivative over rows with ``D=d, X=x, C>y_k``.

    ``weights`` (one per row) turn the mean into a weighted mean, as in a
    bootstrap replicate.

    Returns
    -------
    raw : (2, K, V, X) array
        ``NaN`` where the conditioning set is empty or the cell has no coefficients.
    counts : (2, K, X) int array
        Size of each conditioning set.
    """
    naive = fit.naive if naive is None else naive
    yk = design.y_grid.yk
    v = design.v_grid
    K, V, X = yk.size, v.size, table.n_x
    raw = np.full((2, K, V, X), np.nan)
    counts = np.zeros((2, K, X), dtype=np.int64)
    for d in (0, 1):
        for x in range(X):
            cell = (table.d == d) & (table.x == x)
            order = np.argsort(table.c[cell], kind="stable")
            c_sorted = table.c[cell][order]
            w_sorted = None if weights is None else np.asarray(weights, float)[cell][order]
            for k in range(K):
                start = 0 if naive else np.searchsorted(c_sorted, yk[k], side="right")
                cs = c_sorted[start:]
                ws = None if w_sorted is None else w_sorted[start:]
                counts[d, k, x] = cs.size
                if cs.size == 0 or not np.isfinite(fit.beta0[k, d]):
                    continue
                sv, dv = _slopes(fit, k, d, v)
                if cs[0] == cs[-1]:
                    # a mean over one repeated horizon is that horizon's value
                    cs, ws = cs[:1], None
                raw[d, k, :, x] = kernels.dmtr_mean(_offsets(fit, k, d, cs, x), sv, dv, ws)
    return raw, counts


def rearrange(a: np.ndarray, axis: int = 0) -> np.ndarray:
    """Sort finite entries ascending along ``axis``; ``NaN`` entries keep their positions."""
    a = np.moveaxis(np.array(a, dtype=float, copy=True), axis, -1)
    flat = a.reshape(-1, a.shape[-1])
    for row in flat:
        m = np.isfinite(row)
        row[m] = np.sort(row[m])
    return np.moveaxis(flat.reshape(a.shape), -1, axis)


def monotonize_and_clamp(raw: np.ndarray, axis: int = 0) -> np.ndarray:
    """Rearrange along the threshold axis, then clamp to ``[0, 1]``. Idempotent."""
    return np.clip(rearrange(raw, axis), 0.0, 1.0)


def _top_index(yk: np.ndarray, gamma_c: float) -> int:
    idx = np.flatnonzero(yk <= gamma_c)
    return int(idx[-1]) if idx.size else -1


def _tau_bar_arm(dmtr: np.ndarray, yk: np.ndarray, gamma_c: float) -> np.ndarray:
    """Arm-specific identified ceiling: value at the largest finite grid point not above ``gamma_c``.

    ``dmtr`` has the threshold axis first.
    """
    top = _top_index(yk, gamma_c)
    out = np.full(dmtr.shape[1:], np.nan)
    if top < 0:
        return out
    sub = dmtr[:top + 1]
    finite = np.isfinite(sub)
    last = np.where(finite.any(axis=0), top - np.argmax(finite[::-1], axis=0), -1)
    got = last >= 0
    out[got] = np.take_along_axis(sub, np.maximum(last, 0)[None], axis=0)[0][got]
    return out


def invert_curve(dmtr: np.ndarray, yk: np.ndarray, tau, tau_bar_d: float) -> np.ndarray:
    """Generalized inverse of one monotone curve: the smallest ``y_k`` with ``dmtr >= tau``.

    ``NaN`` (unidentified) whenever ``tau >= tau_bar_d``.
    """
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    out = np.full(tau.shape, np.nan)
    if not np.isfinite(tau_bar_d):
        return out
    m = np.isfinite(dmtr)
    vals, ys = dmtr[m], yk[m]
    for i, t in enumerate(tau):
        if t >= tau_bar_d:
            continue
        hit = np.flatnonzero(vals >= t)
        if hit.size:
            out[i] = ys[hit[0]]
    return out


def integrate_survival(y: np.ndarray, values: np.ndarray, upper: float, rule: str = "trapezoid",
                       at_zero: float = 0.0, support_end: Optional[float] = None,
                       tail_value: float = 1.0) -> float:
    """Integral over ``[0, upper]`` of a curve known on grid ``y``.

    The curve is augmented with ``at_zero`` at ``y=0`` and its last value at
    ``upper``. ``rule="step"`` treats it as right-continuous and piecewise
    constant, which is exact for step functions whose jumps lie on the grid.

    When ``support_end`` is given and lies below ``upper``, the curve is
    instead pinned to ``tail_value`` on ``[support_end, upper]``. This is how
    an outcome support that ends before the censoring support is encoded: a
    CDF equals one there (``tail_value=1``) and a CDF difference is zero.
    """
    end = upper if support_end is None else min(upper, support_end)
    keep = (y <= end) & np.isfinite(values)
    if end < upper:
        ys = np.concatenate(([0.0], y[keep], [end, upper]))
        vs = np.concatenate(([at_zero], values[keep], [tail_value, tail_value]))
    else:
        ys = np.concatenate(([0.0], y[keep], [upper]))
        last = values[keep][-1] if keep.any() else at_zero
        vs = np.concatenate(([at_zero], values[keep], [last]))
    if rule == "trapezoid":
        return float(trapezoid(vs, ys))
    if rule == "step":
        return float(np.sum(vs[:-1] * np.diff(ys)))
    raise ValueError(f"unknown integration rule {rule!r}")


@dataclass(frozen=True, eq=False)
class MteSurfaces:
    y: np.ndarray
    v: np.ndarray
    tau: np.ndarray
    x_levels: tuple
    gamma_c: float
    dmtr_raw: np.ndarray
    dmtr: np.ndarray
    dmte: np.ndarray
    qmtr: np.ndarray
    qmte: np.ndarray
    tau_bar_arm: np.ndarray
    tau_bar: np.ndarray
    ramtr: np.ndarray
    rmte: np.ndarray
    w: np.ndarray
    dmtr_avg: np.ndarray
    dmte_avg: np.ndarray
    qmtr_avg: np.ndarray
    qmte_avg: np.ndarray
    tau_bar_avg: np.ndarray
    rmte_avg: np.ndarray
    counts: Optional[np.ndarray] = None
    rule: str = "trapezoid"
    diagnostics: dict = field(default_factory=dict)
    support_end: Optional[float] = None

    # functional name -> array (used by the bootstrap and the CSV writer)
    def functionals(self) -> dict:
        return {
            "dmtr0": self.dmtr[0], "dmtr1": self.dmtr[1], "dmte": self.dmte,
            "qmtr0": self.qmtr[0], "qmtr1": self.qmtr[1], "qmte": self.qmte,
            "rmte": self.rmte, "tau_bar": self.tau_bar,
            "dmtr0_avg": self.dmtr_avg[0], "dmtr1_avg": self.dmtr_avg[1],
            "dmte_avg": self.dmte_avg, "qmtr0_avg": self.qmtr_avg[0],
            "qmtr1_avg": self.qmtr_avg[1], "qmte_avg": self.qmte_avg,
            "rmte_avg": self.rmte_avg, "tau_bar_avg": self.tau_bar_avg,
        }

    def summary(self) -> dict:
        return {
            "gamma_c_hat": self.gamma_c,
            "x_weights": dict(zip(map(str, self.x_levels), self.w.tolist())),
            "tau_bar": {str(lev): [_opt(t) for t in self.tau_bar[:, j]]
                        for j, lev in enumerate(self.x_levels)},
            "tau_bar_avg": [_opt(t) for t in self.tau_bar_avg],
            "v_grid": self.v.tolist(),
            **self.diagnostics,
        }


def _opt(x):
    x = float(x)
    return x if np.isfinite(x) else None


def _qmtr_block(dmtr: np.ndarray, yk: np.ndarray, tau: np.ndarray, tau_bar_arm: np.ndarray):
    """Invert ``dmtr[d, k, ...]`` for every trailing index; returns ``[d, tau, ...]``."""
    trailing = dmtr.shape[2:]
    out = np.full((2, tau.size) + trailing, np.nan)
    for d in (0, 1):
        for idx in np.ndindex(*trailing):
            sl = (slice(None),) + idx
            out[(d, slice(None)) + idx] = invert_curve(dmtr[d][sl], yk, tau, tau_bar_arm[d][idx])
    return out


def assemble_surfaces(fit: DistRegFit, table: ObservationTable, design: EvalDesign, *,
                      x_weights: Optional[np.ndarray] = None, raw: Optional[np.ndarray] = None,
                      counts: Optional[np.ndarray] = None, rule: str = "trapezoid",
                      tail: str = "support", weights: Optional[np.ndarray] = None) -> MteSurfaces:
    """Monotonize, difference, invert, integrate and aggregate.

    ``x_weights`` defaults to the sample share of each covariate level.
    ``tail`` controls restricted means beyond the last threshold: ``"carry"``
    extends the last estimated DMTR value up to the censoring bound, while
    ``"support"`` (default) carries it only up to the largest observed
    outcome and sets both DMTRs to one above it, where the sample has no mass.
    ``raw`` may be supplied directly (shape ``(2, K, V, X)``) to bypass
    :func:`estimate_dmtr`, for example to encode exact distributions.
    ``weights`` are row multipliers for the averaging step.
    """
    if raw is None:
        raw, counts = estimate_dmtr(fit, table, design, weights=weights)
    yk, tau, gc = design.y_grid.yk, design.tau_grid, table.gamma_c_hat
    if tail not in ("support", "carry"):
        raise ValueError(f"unknown tail rule {tail!r}")
    end = float(np.max(table.y)) if tail == "support" and table.n else None
    return _assemble(raw, yk, design.v_grid, tau, table.x_levels, gc,
                     table.x_shares() if x_weights is None else np.asarray(x_weights, float),
                     counts, rule, fit, support_end=end)


def _assemble(raw, yk, v, tau, x_levels, gc, w, counts=None, rule="trapezoid", fit=None,
              support_end=None):
    dmtr = monotonize_and_clamp(raw, axis=1)
    dmte = dmtr[1] - dmtr[0]
    tba = np.stack([_tau_bar_arm(dmtr[d], yk, gc) for d in (0, 1)])
    tau_bar = np.minimum(tba[0], tba[1])
    qmtr = _qmtr_block(dmtr, yk, tau, tba)
    qmte = qmtr[1] - qmtr[0]
    V, X = dmtr.shape[2], dmtr.shape[3]
    ramtr = np.full((2, V, X), np.nan)
    rmte = np.full((V, X), np.nan)
    for j in range(V):
        for x in range(X):
            pair = dmtr[:, :, j, x]
            r1, r0 = _ramtr_pair(pair, yk, gc, rule, support_end)
            ramtr[:, j, x] = (r0, r1)
            rmte[j, x] = -integrate_survival(yk, _common(pair, 1) - _common(pair, 0), gc, rule,
                                             support_end=support_end, tail_value=0.0)

    dmtr_avg = np.tensordot(dmtr, w, axes=([3], [0]))
    dmte_avg = dmtr_avg[1] - dmtr_avg[0]
    tba_avg = np.stack([_tau_bar_arm(dmtr_avg[d], yk, gc) for d in (0, 1)])
    tau_bar_avg = np.minimum(tba_avg[0], tba_avg[1])
    qmtr_avg = _qmtr_block(dmtr_avg, yk, tau, tba_avg)
    qmte_avg = qmtr_avg[1] - qmtr_avg[0]
    rmte_avg = np.array([-integrate_survival(yk, _common(dmtr_avg[:, :, j], 1)
                                             - _common(dmtr_avg[:, :, j], 0), gc, rule,
                                             support_end=support_end, tail_value=0.0)
                         for j in range(V)])
    diag = {}
    if fit is not None:
        diag["unusable_cells"] = fit.unusable_cells()
        diag["dropped_columns"] = list(fit.dropped)
    if counts is not None:
        diag["empty_cells"] = [{"d": int(d), "k": int(k), "x": str(x_levels[x])}
                               for d, k, x in zip(*np.nonzero(counts == 0))]
    return MteSurfaces(y=yk, v=v, tau=tau, x_levels=tuple(x_levels), gamma_c=float(gc),
                       dmtr_raw=raw, dmtr=dmtr, dmte=dmte, qmtr=qmtr, qmte=qmte,
                       tau_bar_arm=tba, tau_bar=tau_bar, ramtr=ramtr, rmte=rmte, w=w,
                       dmtr_avg=dmtr_avg, dmte_avg=dmte_avg, qmtr_avg=qmtr_avg,
                       qmte_avg=qmte_avg, tau_bar_avg=tau_bar_avg, rmte_avg=rmte_avg,
                       counts=counts, rule=rule, diagnostics=diag, support_end=support_end)


def _common(pair: np.ndarray, d: int) -> np.ndarray:
    """Arm ``d`` of a ``(2, K)`` curve pair, blanked where the other arm is missing."""
    both = np.isfinite(pair[0]) & np.isfinite(pair[1])
    return np.where(both, pair[d], np.nan)


def _ramtr_pair(pair: np.ndarray, yk, gc, rule, support_end=None):
    r = [gc - integrate_survival(yk, _common(pair, d), gc, rule, support_end=support_end)
         for d in (1, 0)]
    return r[0], r[1]


def restricted_mean_decomposition(surfaces: MteSurfaces, v_index: int, x_index: int
                                  ) -> tuple[float, float]:
    """``(ramtr1, ramtr0)``: integrals of ``1 - dmtr_d`` over ``[0, gamma_c]``.

    Both arms are integrated over the grid points where both are available, so
    the difference equals the stored ``rmte`` up to rounding.
    """
    return _ramtr_pair(surfaces.dmtr[:, :, v_index, x_index], surfaces.y, surfaces.gamma_c,
                       surfaces.rule, surfaces.support_end)


def invert_to_qmtr(surfaces: MteSurfaces, tau: float, v_index: int, x_index: int, d: int) -> float:
    """Quantile of arm ``d`` at level ``tau``; ``NaN`` means unidentified."""
    return float(invert_curve(surfaces.dmtr[d, :, v_index, x_index], surfaces.y, tau,
                              surfaces.tau_bar_arm[d, v_index, x_index])[0])


def estimate_conditional_dmtr(fit: DistRegFit, table: ObservationTable, design: EvalDesign,
                              c: float, ks: Optional[Sequence[int]] = None) -> np.ndarray:
    """DMTR at a single censoring horizon ``c``: ``(2d-1)`` times the derivative, no averaging.

    Returns a ``(2, K, V, X)`` array, ``NaN`` outside the requested thresholds.
    By default every threshold below ``c`` is requested; asking explicitly for a
    threshold at or above ``c`` raises :class:`InvalidHorizon`.
    """
    yk = design.y_grid.yk
    if ks is None:
        ks = np.flatnonzero(yk < c)
    else:
        ks = np.asarray(ks, dtype=int)
        bad = ks[yk[ks] >= c]
        if bad.size:
            raise InvalidHorizon(f"horizon c={c} does not exceed threshold y={yk[bad[0]]}",
                                 k=int(bad[0]), c=float(c))
    v = design.v_grid
    out = np.full((2, yk.size, v.size, table.n_x), np.nan)
    cc = np.array([float(c)])
    for d in (0, 1):
        for k in ks:
            if not np.isfinite(fit.beta0[k, d]):
                continue
            sv, dv = _slopes(fit, k, d, v)
            for x in range(table.n_x):
                out[d, k, :, x] = kernels.dmtr_mean(_offsets(fit, k, d, cc, x), sv, dv)
    return out


def to_long_rows(surfaces: MteSurfaces, bands: Optional[dict] = None, *,
                 duration_scale: float = 1.0) -> list[tuple]:
    """Long-format rows ``(functional, y_or_tau, v, x, value, lo, hi)``.

    Durations (thresholds and quantile/restricted-mean values) are divided by
    ``duration_scale``; missing values and bands are ``None``. Aggregated
    functionals carry the suffix ``_avg`` and an empty ``x``.
    """
    bands = bands or {}
    s = float(duration_scale)
    rows = []
    duration_valued = {"qmtr0", "qmtr1", "qmte", "rmte"}
    for name, arr in surfaces.functionals().items():
        base = name.replace("_avg", "")
        agg = name.endswith("_avg")
        scale = s if base in duration_valued else 1.0
        band = bands.get(name)
        if base.startswith("dmt"):
            first = surfaces.y / s
        elif base.startswith("qmt"):
            first = surfaces.tau
        else:
            first = None
        arr2 = arr if first is not None else arr[None]
        lo2 = hi2 = None
        if band is not None:
            lo2 = band.lo if first is not None else band.lo[None]
            hi2 = band.hi if first is not None else band.hi[None]
        xs = [""] if agg else [str(x) for x in surfaces.x_levels]
        for i in range(arr2.shape[0]):
            for j, v in enumerate(surfaces.v):
                for xi, xl in enumerate(xs):
                    idx = (i, j) if agg else (i, j, xi)
                    val = arr2[idx]
                    lo = hi = None
                    if lo2 is not None and np.isfinite(lo2[idx]):
                        lo, hi = float(lo2[idx]) / scale, float(hi2[idx]) / scale
                    rows.append((name, None if first is None else float(first[i]), float(v), xl,
                                 float(val) / scale if np.isfinite(val) else None, lo, hi))
    return rows
