"""Partial identification of DMTR/DMTE under dependent censoring.

Two relaxations of independent censoring are covered. Under negative
regression dependence of the outcomes on the censoring horizon the DMTR lies
between probability-weighted versions of the conditional derivative evaluated
at horizons ``y + delta``. Under a continuous relaxation of size ``bbar`` the
conditional DMTR may differ from the unconditional one by at most ``bbar``.
The breakdown point is the smallest ``bbar`` at which the DMTE bounds contain
zero at every ``v``.

The conditional derivative at ``C = y + delta`` is read off the fitted
distribution regression, which is smooth in ``C``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .dataset import ObservationTable
from .distreg import DistRegFit
from .errors import EmptyDeltaGrid
from .mte import EvalDesign, estimate_conditional_dmtr, monotonize_and_clamp

__all__ = [
    "DeltaGrid", "default_delta_grid", "BoundsSurface", "censoring_probabilities",
    "regression_dependence_envelope", "bounds_regression_dependence",
    "relaxation_envelope", "bounds_continuous_relaxation", "breakdown_from_surface",
    "breakdown_point", "breakdown_curve", "breakdown_bisection", "ROBUST_BBAR",
    "relaxation_from_values", "is_robust",
]

# Breakdown points at or above this value are labelled robust.
ROBUST_BBAR = 0.1


@dataclass(frozen=True, eq=False)
class DeltaGrid:
    """Offsets ``delta > 0`` per threshold, so that ``y_k + delta`` is a horizon in the data.

    ``deltas[k]`` is a 1-d array, empty for thresholds with no admissible
    offset (always the case when ``y_k`` reaches the largest horizon).
    """

    yk: np.ndarray
    deltas: tuple

    def __post_init__(self):
        yk = np.asarray(self.yk, dtype=float)
        if len(self.deltas) != yk.size:
            raise ValueError("one delta array per threshold is required")
        ds = tuple(np.asarray(d, dtype=float).ravel() for d in self.deltas)
        for d in ds:
            if np.any(d <= 0):
                raise ValueError("offsets must be strictly positive")
        object.__setattr__(self, "yk", yk)
        object.__setattr__(self, "deltas", ds)

    @classmethod
    def uniform(cls, yk, deltas) -> "DeltaGrid":
        """The same offsets at every threshold."""
        yk = np.asarray(yk, dtype=float)
        return cls(yk, tuple(np.asarray(deltas, float) for _ in yk))

    def check(self, ks: Sequence[int]) -> None:
        for k in ks:
            if self.deltas[k].size == 0:
                raise EmptyDeltaGrid(f"no admissible offset at threshold y={self.yk[k]:g}",
                                     k=int(k), y=float(self.yk[k]))


def default_delta_grid(table: ObservationTable, yk, n_delta: int = 8,
                       min_cell: int = 50) -> DeltaGrid:
    """Equispaced offsets inside ``(0, gamma_c_hat - y_k)`` with enough nearby horizons.

    Offset ``j`` is ``j * span / (n_delta + 1)``; it is kept when at least
    ``min_cell`` rows have ``C`` within half a spacing of ``y_k + delta``.
    """
    yk = np.asarray(getattr(yk, "yk", yk), dtype=float)
    gc = table.gamma_c_hat
    c = np.sort(table.c)
    out = []
    for y in yk:
        span = gc - y
        if span <= 0:
            out.append(np.empty(0))
            continue
        step = span / (n_delta + 1)
        cand = step * np.arange(1, n_delta + 1)
        h = step / 2.0
        centers = y + cand
        n_in = np.searchsorted(c, centers + h, side="right") - np.searchsorted(c, centers - h)
        out.append(cand[n_in >= min_cell])
    return DeltaGrid(yk, tuple(out))


def censoring_probabilities(c: np.ndarray, y: float, deltas: np.ndarray) -> dict:
    """Empirical ``P(C <= y)``, ``P(y <= C <= y + delta)`` and ``P(y + delta <= C)``."""
    c = np.sort(np.asarray(c, dtype=float))
    n = c.size
    deltas = np.asarray(deltas, dtype=float)
    upper = y + deltas
    le_y = np.searchsorted(c, y, side="right") / n
    ge_up = 1.0 - np.searchsorted(c, upper, side="left") / n
    window = (np.searchsorted(c, upper, side="right") - np.searchsorted(c, y, side="left")) / n
    return {"le_y": float(le_y), "window": window, "ge_upper": ge_up}


def regression_dependence_envelope(s: np.ndarray, le_y: float, window: np.ndarray,
                                   ge_upper: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bounds from conditional DMTR values ``s`` (first axis: offsets).

    ``LB = max_delta P(y+delta <= C) s`` and
    ``UB = min_delta [P(C <= y) + P(y+delta <= C) + P(y <= C <= y+delta) s]``.
    """
    s = np.asarray(s, dtype=float)
    shape = (-1,) + (1,) * (s.ndim - 1)
    ge = np.asarray(ge_upper, float).reshape(shape)
    win = np.asarray(window, float).reshape(shape)
    lb = np.max(ge * s, axis=0)
    ub = np.min(le_y + ge + win * s, axis=0)
    return lb, ub


def _order(lb: np.ndarray, ub: np.ndarray):
    flip = lb > ub
    return np.where(flip, ub, lb), np.where(flip, lb, ub), flip


@dataclass(frozen=True, eq=False)
class BoundsSurface:
    """DMTR bounds ``lb, ub`` ``(2, K, V, X)`` and DMTE bounds ``(K, V, X)``.

    ``lb``/``ub`` are reported in increasing order; ``flipped`` marks the
    cells where the formula produced ``lb > ub`` and the two were swapped.
    ``dmte_lo``/``dmte_hi`` are built from the formula values before any
    swap, as ``LB1 - UB0`` and ``UB1 - LB0``. ``*_avg`` arrays aggregate over
    covariate levels with weights ``w``. Rows ``k`` without offsets are
    ``NaN``.
    """

    mode: str
    yk: np.ndarray
    v: np.ndarray
    x_levels: tuple
    w: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    flipped: np.ndarray
    dmte_lo: np.ndarray
    dmte_hi: np.ndarray
    lb_avg: np.ndarray
    ub_avg: np.ndarray
    dmte_lo_avg: np.ndarray
    dmte_hi_avg: np.ndarray
    delta_grid: DeltaGrid
    censor_probs: dict
    bbar: Optional[float] = None
    s_min: Optional[np.ndarray] = None
    s_max: Optional[np.ndarray] = None
    ks: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    def at(self, bbar: float) -> "BoundsSurface":
        """Continuous-relaxation bounds at another ``bbar`` (no refitting)."""
        if self.mode != "relax":
            raise ValueError("only continuous-relaxation bounds depend on bbar")
        return _relax_surface(self, float(bbar))

    def to_rows(self, *, duration_scale: float = 1.0) -> list[tuple]:
        """Rows ``(y, v, x, lb, ub, mode, bbar)`` for the DMTE bounds, aggregated rows use ``x=""``."""
        rows = []
        bb = "" if self.bbar is None else self.bbar
        for k in self.ks:
            y = self.yk[k] / duration_scale
            for j, v in enumerate(self.v):
                for x, lab in enumerate(self.x_levels):
                    rows.append((y, v, lab, self.dmte_lo[k, j, x], self.dmte_hi[k, j, x],
                                 self.mode, bb))
                rows.append((y, v, "", self.dmte_lo_avg[k, j], self.dmte_hi_avg[k, j],
                             self.mode, bb))
        return rows


def _conditional_values(fit: DistRegFit, table: ObservationTable, design: EvalDesign,
                        grid: DeltaGrid, ks):
    """Per threshold: conditional DMTR ``(n_delta, 2, V, X)`` and censoring probabilities."""
    s_all, probs = {}, {}
    for k in ks:
        y = design.y_grid.yk[k]
        deltas = grid.deltas[k]
        vals = np.stack([estimate_conditional_dmtr(fit, table, design, y + dl, ks=[k])[:, k]
                         for dl in deltas])
        s_all[k] = vals
        probs[k] = censoring_probabilities(table.c, y, deltas)
    return s_all, probs


def _resolve(table, design, delta_grid, ks):
    yk = design.y_grid.yk
    if delta_grid is None:
        delta_grid = default_delta_grid(table, yk)
    if delta_grid.yk.size != yk.size or not np.allclose(delta_grid.yk, yk):
        raise ValueError("delta grid thresholds differ from the design's")
    if ks is None:
        ks = np.flatnonzero(yk < table.gamma_c_hat)
    ks = tuple(int(k) for k in ks)
    delta_grid.check(ks)
    return delta_grid, ks


def _shares(table, x_weights):
    return table.x_shares() if x_weights is None else np.asarray(x_weights, float)


def bounds_regression_dependence(fit: DistRegFit, table: ObservationTable, design: EvalDesign,
                                 delta_grid: Optional[DeltaGrid] = None, *,
                                 ks: Optional[Sequence[int]] = None,
                                 x_weights: Optional[np.ndarray] = None,
                                 monotone: bool = True) -> BoundsSurface:
    """Bounds when outcomes are negatively regression dependent on the horizon.

    Parameters
    ----------
    fit, table, design
        Distribution-regression fit, its sample and the evaluation design.
    delta_grid : DeltaGrid, optional
        Offsets; :func:`default_delta_grid` by default.
    ks : sequence of int, optional
        Thresholds to bound; all thresholds below the largest horizon by
        default.
    monotone : bool
        Rearrange each bound curve in ``y`` and clamp it to ``[0, 1]``.

    Raises
    ------
    EmptyDeltaGrid
        When a requested threshold has no admissible offset.
    """
    delta_grid, ks = _resolve(table, design, delta_grid, ks)
    K, V, X = design.y_grid.yk.size, design.v_grid.size, table.n_x
    lb = np.full((2, K, V, X), np.nan)
    ub = np.full((2, K, V, X), np.nan)
    s_all, probs = _conditional_values(fit, table, design, delta_grid, ks)
    for k in ks:
        p = probs[k]
        lb[:, k], ub[:, k] = regression_dependence_envelope(
            s_all[k], p["le_y"], p["window"], p["ge_upper"])
    if monotone:
        lb = monotonize_and_clamp(lb, axis=1)
        ub = monotonize_and_clamp(ub, axis=1)
    w = _shares(table, x_weights)
    return _finish("regdep", design, table, w, lb, ub, delta_grid, probs, ks)


def _finish(mode, design, table, w, lb, ub, delta_grid, probs, ks, **extra):
    dlo = lb[1] - ub[0]
    dhi = ub[1] - lb[0]
    lb_avg = np.tensordot(lb, w, axes=([3], [0]))
    ub_avg = np.tensordot(ub, w, axes=([3], [0]))
    dlo_avg = lb_avg[1] - ub_avg[0]
    dhi_avg = ub_avg[1] - lb_avg[0]
    lo, hi, flip = _order(lb, ub)
    lo_avg, hi_avg, _ = _order(lb_avg, ub_avg)
    return BoundsSurface(
        mode=mode, yk=design.y_grid.yk, v=design.v_grid, x_levels=tuple(table.x_levels), w=w,
        lb=lo, ub=hi, flipped=flip, dmte_lo=dlo, dmte_hi=dhi, lb_avg=lo_avg, ub_avg=hi_avg,
        dmte_lo_avg=dlo_avg, dmte_hi_avg=dhi_avg, delta_grid=delta_grid,
        censor_probs={int(k): v for k, v in probs.items()}, ks=tuple(ks),
        diagnostics={"flipped_cells": int(np.count_nonzero(flip))}, **extra)


def relaxation_envelope(fit: DistRegFit, table: ObservationTable, design: EvalDesign,
                        delta_grid: Optional[DeltaGrid] = None, *,
                        ks: Optional[Sequence[int]] = None,
                        x_weights: Optional[np.ndarray] = None) -> BoundsSurface:
    """Continuous-relaxation bounds at ``bbar = 0``; use :meth:`BoundsSurface.at` for others."""
    delta_grid, ks = _resolve(table, design, delta_grid, ks)
    K, V, X = design.y_grid.yk.size, design.v_grid.size, table.n_x
    s_min = np.full((2, K, V, X), np.nan)
    s_max = np.full((2, K, V, X), np.nan)
    s_all, probs = _conditional_values(fit, table, design, delta_grid, ks)
    for k in ks:
        s_min[:, k] = s_all[k].min(axis=0)
        s_max[:, k] = s_all[k].max(axis=0)
    w = _shares(table, x_weights)
    proto = BoundsSurface(mode="relax", yk=design.y_grid.yk, v=design.v_grid,
                          x_levels=tuple(table.x_levels), w=w, lb=s_min, ub=s_max,
                          flipped=np.zeros(s_min.shape, bool), dmte_lo=None, dmte_hi=None,
                          lb_avg=None, ub_avg=None, dmte_lo_avg=None, dmte_hi_avg=None,
                          delta_grid=delta_grid, censor_probs={int(k): v for k, v in probs.items()},
                          s_min=s_min, s_max=s_max, ks=tuple(ks))
    return _relax_surface(proto, 0.0)


def relaxation_from_values(s, yk, v, *, x_levels: Sequence[str] = ("all",), w=None,
                           delta_grid: Optional[DeltaGrid] = None) -> BoundsSurface:
    """Relaxation bounds at ``bbar = 0`` from given conditional DMTR values.

    ``s`` has shape ``(n_delta, 2, K, V, X)`` and holds ``(2d-1) gamma_d`` at
    each offset; ``NaN`` thresholds are left out. Useful when the
    conditional values come from another model or are known exactly.
    """
    s = np.asarray(s, dtype=float)
    if s.ndim != 5 or s.shape[1] != 2:
        raise ValueError("s must have shape (n_delta, 2, K, V, X)")
    yk = np.asarray(yk, dtype=float)
    v = np.asarray(v, dtype=float)
    X = s.shape[4]
    w = np.full(X, 1.0 / X) if w is None else np.asarray(w, dtype=float)
    ks = tuple(int(k) for k in range(yk.size) if np.all(np.isfinite(s[:, :, k])))
    s_min, s_max = s.min(axis=0), s.max(axis=0)
    if delta_grid is None:
        delta_grid = DeltaGrid.uniform(yk, np.arange(1, s.shape[0] + 1, dtype=float))
    proto = BoundsSurface(mode="relax", yk=yk, v=v, x_levels=tuple(x_levels), w=w, lb=s_min,
                          ub=s_max, flipped=np.zeros(s_min.shape, bool), dmte_lo=None,
                          dmte_hi=None, lb_avg=None, ub_avg=None, dmte_lo_avg=None,
                          dmte_hi_avg=None, delta_grid=delta_grid, censor_probs={},
                          s_min=s_min, s_max=s_max, ks=ks)
    return _relax_surface(proto, 0.0)


def _relax_arms(s_min: np.ndarray, s_max: np.ndarray, bbar: float):
    """Formula values ``(LB, UB)`` per arm from the signed conditional DMTR extremes.

    With ``gamma_d = (2d-1) s_d``, ``(2d-1) max gamma_d`` is ``max s_1`` for the
    treated arm and ``min s_0`` for the untreated arm, and symmetrically for
    the minimum.
    """
    lb = np.stack([-bbar + s_min[0], -bbar + s_max[1]])
    ub = np.stack([bbar + s_max[0], bbar + s_min[1]])
    return lb, ub


def _relax_surface(base: BoundsSurface, bbar: float) -> BoundsSurface:
    if not bbar >= 0:
        raise ValueError("bbar must be nonnegative")
    lb, ub = _relax_arms(base.s_min, base.s_max, bbar)
    lb_avg = np.tensordot(lb, base.w, axes=([3], [0]))
    ub_avg = np.tensordot(ub, base.w, axes=([3], [0]))
    lo, hi, flip = _order(lb, ub)
    lo_avg, hi_avg, _ = _order(lb_avg, ub_avg)
    return replace(base, lb=lo, ub=hi, flipped=flip, dmte_lo=lb[1] - ub[0],
                   dmte_hi=ub[1] - lb[0], lb_avg=lo_avg, ub_avg=hi_avg,
                   dmte_lo_avg=lb_avg[1] - ub_avg[0], dmte_hi_avg=ub_avg[1] - lb_avg[0],
                   bbar=bbar, diagnostics={"flipped_cells": int(np.count_nonzero(flip))})


def bounds_continuous_relaxation(fit: DistRegFit, table: ObservationTable, design: EvalDesign,
                                 delta_grid: Optional[DeltaGrid] = None, bbar: float = 0.0, *,
                                 ks: Optional[Sequence[int]] = None,
                                 x_weights: Optional[np.ndarray] = None) -> BoundsSurface:
    """Bounds when conditional and unconditional DMTR differ by at most ``bbar``.

    Per arm, ``LB_d = -bbar + (2d-1) max_delta gamma_d`` and
    ``UB_d = bbar + (2d-1) min_delta gamma_d`` as printed; DMTE bounds are
    ``LB_1 - UB_0`` and ``UB_1 - LB_0``.
    """
    return relaxation_envelope(fit, table, design, delta_grid, ks=ks,
                               x_weights=x_weights).at(bbar)


def _dmte_arrays(surface: BoundsSurface, k: int, average: bool):
    if average:
        return surface.dmte_lo_avg[k], surface.dmte_hi_avg[k]
    return surface.dmte_lo[k], surface.dmte_hi[k]


def _contains_zero_everywhere(surface: BoundsSurface, k: int, average: bool) -> bool:
    lo, hi = _dmte_arrays(surface, k, average)
    ok = np.isfinite(lo) & np.isfinite(hi)
    return bool(np.all((lo[ok] <= 0.0) & (hi[ok] >= 0.0)))


def breakdown_from_surface(surface: BoundsSurface, k: int, *, average: bool = False) -> float:
    """Closed-form breakdown point at threshold ``k`` from relaxation bounds.

    The DMTE bounds move by ``2 bbar`` in each direction, so at each ``v`` the
    smallest sufficient relaxation is ``max(0, lo/2, -hi/2)`` evaluated at
    ``bbar = 0``. The result is the maximum over ``v`` (and covariate levels
    unless ``average``), nudged up by a few ulps if rounding would otherwise
    leave zero just outside the bounds.
    """
    base = surface.at(0.0) if surface.bbar != 0.0 else surface
    lo, hi = _dmte_arrays(base, k, average)
    ok = np.isfinite(lo) & np.isfinite(hi)
    if not ok.any():
        return float("nan")
    needed = np.maximum(0.0, np.maximum(lo[ok] / 2.0, -hi[ok] / 2.0))
    b = float(needed.max())
    for _ in range(64):
        if _contains_zero_everywhere(base.at(b), k, average):
            break
        b = float(np.nextafter(b, np.inf))
    return b


def breakdown_point(fit: DistRegFit, table: ObservationTable, design: EvalDesign,
                    delta_grid: Optional[DeltaGrid], k: int, *, average: bool = False,
                    x_weights: Optional[np.ndarray] = None) -> float:
    """Smallest ``bbar`` whose DMTE bounds at threshold ``k`` contain zero at every ``v``."""
    env = relaxation_envelope(fit, table, design, delta_grid, ks=[k], x_weights=x_weights)
    return breakdown_from_surface(env, k, average=average)


def breakdown_curve(surface: BoundsSurface, *, average: bool = False) -> dict:
    """Breakdown point per threshold index in ``surface.ks``."""
    return {k: breakdown_from_surface(surface, k, average=average) for k in surface.ks}


def breakdown_bisection(surface: BoundsSurface, k: int, *, average: bool = False,
                        tol: float = 1e-12, upper: Optional[float] = None) -> float:
    """Reference breakdown point by bisection on the containment predicate."""
    base = surface.at(0.0)
    if _contains_zero_everywhere(base, k, average):
        return 0.0
    hi = 1.0 if upper is None else float(upper)
    while not _contains_zero_everywhere(base.at(hi), k, average):
        hi *= 2.0
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _contains_zero_everywhere(base.at(mid), k, average):
            hi = mid
        else:
            lo = mid
    return hi


def is_robust(bbar: float) -> bool:
    """A breakdown point of at least ``ROBUST_BBAR`` counts as robust."""
    return bool(np.isfinite(bbar) and bbar >= ROBUST_BBAR)
