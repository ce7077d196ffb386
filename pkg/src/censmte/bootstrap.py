"""Weighted-bootstrap confidence bands for the MTE surfaces.

Every replicate redraws unit-mean, unit-variance multiplier weights (one per
cluster by default), refits the propensity score and all distribution
regressions under those weights, and reassembles the surfaces on the point
estimate's evaluation design. Bands are symmetric around the point estimate
with half-width equal to an empirical quantile of the absolute deviations.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import ObservationTable
from .errors import CensMteError, ReplicateFailure
from .pipeline import Estimate, EstimatorOptions, estimate

__all__ = ["BootstrapPlan", "Band", "ConfidenceBands", "run_bootstrap", "replicate_weights",
           "band_from_replicates", "WEIGHT_LAWS"]

WEIGHT_LAWS = ("exponential", "poisson", "ones")

# Share of replicates that must identify a point for its band to be reported.
IDENTIFIED_SHARE = 0.95
# Largest tolerated share of failed replicates.
MAX_FAILED_SHARE = 0.10


@dataclass(frozen=True)
class BootstrapPlan:
    """Replication settings.

    Parameters
    ----------
    B : int
        Number of replicates.
    alpha : float
        Bands have nominal pointwise coverage ``1 - alpha``.
    weight_law : {"exponential", "poisson", "ones"}
        Law of the multiplier weights. ``"exponential"`` (unit rate) and
        ``"poisson"`` (mean one) both have mean and variance one. ``"ones"``
        is degenerate and only useful as a check that a refit under unit
        weights reproduces the point estimate.
    cluster_level : bool
        Draw one weight per cluster and broadcast it to the cluster's rows.
    seed : int
        Replicate ``b`` uses a stream derived from ``(seed, b)`` alone.
    keep_replicates : bool
        Store the replicate surfaces on the result.
    """

    B: int = 299
    alpha: float = 0.05
    weight_law: str = "exponential"
    cluster_level: bool = True
    seed: int = 0
    keep_replicates: bool = False

    def __post_init__(self):
        if int(self.B) < 1:
            raise ValueError("B must be at least 1")
        if not 0.0 < float(self.alpha) < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.weight_law not in WEIGHT_LAWS:
            raise ValueError(f"weight_law must be one of {WEIGHT_LAWS}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def _generator(seed: int, b: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), int(b)))))


def replicate_weights(plan: BootstrapPlan, b: int, table: ObservationTable) -> np.ndarray:
    """Row weights of replicate ``b`` (0-based)."""
    groups = table.cluster if plan.cluster_level else np.arange(table.n)
    n_draws = int(groups.max()) + 1 if groups.size else 0
    if plan.weight_law == "ones":
        draws = np.ones(n_draws)
    else:
        rng = _generator(plan.seed, b)
        if plan.weight_law == "exponential":
            draws = rng.standard_exponential(n_draws)
        else:
            draws = rng.poisson(1.0, n_draws).astype(float)
    return draws[groups]


@dataclass(frozen=True, eq=False)
class Band:
    """Pointwise symmetric band for one functional.

    ``identified`` is False where the point estimate is missing or fewer than
    95% of the replicates produced a value; ``crit``, ``lo`` and ``hi`` are
    ``NaN`` there.
    """

    estimate: np.ndarray
    crit: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    identified: np.ndarray
    n_used: np.ndarray


def band_from_replicates(est: np.ndarray, reps: np.ndarray, alpha: float) -> Band:
    """Band with half-width the ``1-alpha`` quantile of ``|reps - est|``.

    The quantile is the right-continuous inverse of the empirical CDF, so with
    a single replicate the half-width equals its absolute deviation.
    """
    est = np.asarray(est, dtype=float)
    reps = np.asarray(reps, dtype=float).reshape((-1,) + est.shape)
    dev = np.abs(reps - est)
    finite = np.isfinite(dev)
    n_used = finite.sum(axis=0)
    identified = np.isfinite(est) & (n_used >= IDENTIFIED_SHARE * reps.shape[0]) & (n_used > 0)
    crit = np.full(est.shape, np.nan)
    flat_dev = dev.reshape(reps.shape[0], -1)
    flat_ok = identified.ravel()
    flat_crit = crit.ravel()
    for i in np.flatnonzero(flat_ok):
        col = flat_dev[:, i]
        flat_crit[i] = np.quantile(col[np.isfinite(col)], 1.0 - alpha, method="inverted_cdf")
    crit = flat_crit.reshape(est.shape)
    return Band(estimate=est, crit=crit, lo=est - crit, hi=est + crit, identified=identified,
                n_used=n_used)


@dataclass(frozen=True, eq=False)
class ConfidenceBands:
    plan: BootstrapPlan
    bands: dict
    failed: tuple = ()
    replicates: Optional[dict] = None
    warnings: tuple = field(default_factory=tuple)

    def __getitem__(self, name: str) -> Band:
        return self.bands[name]

    @property
    def n_failed(self) -> int:
        return len(self.failed)

    def summary(self) -> dict:
        out = {"B": self.plan.B, "alpha": self.plan.alpha, "weight_law": self.plan.weight_law,
               "cluster_level": self.plan.cluster_level, "seed": self.plan.seed,
               "failed_replicates": list(self.failed), "warnings": list(self.warnings)}
        out["unidentified_points"] = {k: int((~b.identified & np.isfinite(b.estimate)).sum())
                                      for k, b in self.bands.items()}
        return out


# Worker state, set once per process so the table is not re-sent per replicate.
_STATE: dict = {}


def _init_worker(table, options, point, plan):
    _STATE.update(table=table, options=options, point=point, plan=plan)


def _replicate(b: int):
    table, options, point, plan = (_STATE[k] for k in ("table", "options", "point", "plan"))
    w = replicate_weights(plan, b, table)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = estimate(table, options, design=point.design, weights=w,
                           x_weights=table.x_shares(w),
                           z_transform=(point.pfit.z_center, point.pfit.z_scale),
                           diagnostics=False)
    except (CensMteError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return b, None, f"{type(exc).__name__}: {exc}"
    return b, rep.surfaces.functionals(), None


def run_bootstrap(table: ObservationTable, point: Estimate, plan: BootstrapPlan = BootstrapPlan(),
                  options: EstimatorOptions = EstimatorOptions(), *,
                  workers: Optional[int] = None) -> ConfidenceBands:
    """Weighted bootstrap around the point estimate ``point``.

    Parameters
    ----------
    table : ObservationTable
        The estimation sample.
    point : Estimate
        Point estimate computed from ``table`` with ``options``; its
        evaluation design and instrument standardization are held fixed.
    plan : BootstrapPlan
    options : EstimatorOptions
        Estimator settings, identical to those used for ``point``.
    workers : int, optional
        Process count; defaults to ``options.threads``. Results do not depend
        on it.

    Raises
    ------
    ReplicateFailure
        When more than 10% of the replicates fail.
    """
    notes = []
    if plan.cluster_level and len(np.unique(table.cluster)) < 2:
        notes.append("only one cluster; falling back to per-row weights")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
        plan = BootstrapPlan(plan.B, plan.alpha, plan.weight_law, False, plan.seed,
                             plan.keep_replicates)
    workers = max(1, int(workers if workers is not None else options.threads))
    # Distribution regressions inside a replicate run serially; parallelism is across replicates.
    inner = EstimatorOptions(**{**options.__dict__, "threads": 1})
    results = []
    if workers == 1:
        _init_worker(table, inner, point, plan)
        try:
            results = [_replicate(b) for b in range(plan.B)]
        finally:
            _STATE.clear()
    else:
        with ProcessPoolExecutor(max_workers=min(workers, os.cpu_count() or 1, plan.B),
                                 initializer=_init_worker,
                                 initargs=(table, inner, point, plan)) as pool:
            results = list(pool.map(_replicate, range(plan.B), chunksize=1))
    results.sort(key=lambda r: r[0])
    failed = tuple(b for b, f, _ in results if f is None)
    if len(failed) > MAX_FAILED_SHARE * plan.B:
        first = next(msg for _, f, msg in results if f is None)
        raise ReplicateFailure(f"{len(failed)} of {plan.B} replicates failed (first: {first})",
                               failed=list(failed))
    good = [f for _, f, _ in results if f is not None]
    est = point.surfaces.functionals()
    reps = {name: np.stack([g[name] for g in good]) for name in est}
    bands = {name: band_from_replicates(est[name], reps[name], plan.alpha) for name in est}
    return ConfidenceBands(plan=plan, bands=bands, failed=failed,
                           replicates=reps if plan.keep_replicates else None,
                           warnings=tuple(notes))
