"""Partially linear series propensity score with trimming and first-stage diagnostics.

The propensity model is linear in an intercept, x-level dummies (first level
absorbed), the censoring horizon ``c`` and a polynomial series in the
standardized instrument. Coefficients are fitted by (weighted) least squares;
fitted values outside ``[0, 1]`` are pulled back to ``epsilon`` or
``1 - epsilon``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.polynomial import polynomial as npoly

from ._design import independent_columns
from .dataset import ObservationTable
from .errors import DegenerateTreatment, RankDeficient, TooFewClusters

__all__ = ["SeriesBasis", "PropensityFit", "trim", "fit_propensity", "first_stage_fstat"]


@dataclass(frozen=True)
class SeriesBasis:
    """Polynomial basis ``(z, z**2, ..., z**degree)``; no constant term."""

    degree: int = 2

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError(f"basis degree must be a positive integer, got {self.degree!r}")

    def evaluate(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.stack([z ** j for j in range(1, self.degree + 1)], axis=-1)


def trim(p, epsilon: float = 0.01) -> np.ndarray:
    """Identity on ``[0, 1]``; values above 1 map to ``1 - epsilon``, below 0 to ``epsilon``."""
    p = np.asarray(p, dtype=float)
    # same map as p + (1 - eps - p) 1{p > 1} + (eps - p) 1{p < 0}, without the rounding
    return np.where(p > 1, 1.0 - epsilon, np.where(p < 0, epsilon, p))


@dataclass(frozen=True, eq=False)
class PropensityFit:
    alpha0: float
    alpha_x: np.ndarray
    alpha_c: float
    alpha_z: np.ndarray
    epsilon: float
    basis: SeriesBasis
    z_center: float
    z_scale: float
    x_levels: tuple
    include_c: bool
    fitted_raw: np.ndarray
    fitted: np.ndarray
    n_trimmed: int
    dropped: tuple
    design: np.ndarray
    kept: np.ndarray
    names: tuple
    weights: Optional[np.ndarray] = None

    @property
    def coef(self) -> np.ndarray:
        return np.concatenate(([self.alpha0], self.alpha_x[1:],
                               [self.alpha_c] if self.include_c else [], self.alpha_z))

    @property
    def residuals(self) -> np.ndarray:
        return self._d - self.fitted_raw

    def predict_raw(self, z, c, x_codes) -> np.ndarray:
        zs = (np.asarray(z, dtype=float) - self.z_center) / self.z_scale
        out = self.alpha0 + self.alpha_x[np.asarray(x_codes)] + self.basis.evaluate(zs) @ self.alpha_z
        if self.include_c:
            out = out + self.alpha_c * np.asarray(c, dtype=float)
        return out

    def predict(self, z, c, x_codes) -> np.ndarray:
        return trim(self.predict_raw(z, c, x_codes), self.epsilon)

    def raw_z_coefficients(self) -> tuple[float, np.ndarray]:
        """Re-express the series on the unstandardized instrument.

        Returns the intercept (``alpha0`` plus the constant produced by the
        expansion) and the coefficients on ``z, z**2, ...``.
        """
        poly = np.zeros(1)
        lin = np.array([-self.z_center / self.z_scale, 1.0 / self.z_scale])
        power = np.ones(1)
        for a in self.alpha_z:
            power = npoly.polymul(power, lin)
            poly = npoly.polyadd(poly, a * power)
        poly = np.pad(poly, (0, self.basis.degree + 1 - poly.size))
        return self.alpha0 + poly[0], poly[1:]

    def summary(self) -> dict:
        const, raw = self.raw_z_coefficients()
        return {
            "alpha0": self.alpha0,
            "alpha_x": dict(zip(self.x_levels, self.alpha_x.tolist())),
            "alpha_c": self.alpha_c,
            "alpha_z_standardized": self.alpha_z.tolist(),
            "z_transform": {"center": self.z_center, "scale": self.z_scale},
            "raw_scale": {"intercept": float(const), "alpha_z": raw.tolist()},
            "epsilon": self.epsilon,
            "n_trimmed": self.n_trimmed,
            "dropped_columns": list(self.dropped),
        }


def _design(table: ObservationTable, basis: SeriesBasis, center: float, scale: float,
            include_c: bool):
    cols = [np.ones(table.n)]
    names = ["const"]
    for j, lev in enumerate(table.x_levels[1:], start=1):
        cols.append((table.x == j).astype(float))
        names.append(f"x[{lev}]")
    if include_c:
        cols.append(table.c)
        names.append("c")
    zs = (table.z - center) / scale
    series = basis.evaluate(zs)
    cols.extend(series.T)
    names.extend(f"z^{j}" for j in range(1, basis.degree + 1))
    return np.column_stack(cols), names


def fit_propensity(table: ObservationTable, basis: SeriesBasis = SeriesBasis(2),
                   epsilon: float = 0.01, *, weights=None, include_c: bool = True,
                   strict: bool = False, z_transform: Optional[tuple[float, float]] = None
                   ) -> PropensityFit:
    """Least-squares fit of ``d`` on ``[1, x dummies, c, series(z)]`` with trimmed fitted values.

    Collinear columns (a constant ``c`` alongside the intercept, say) are
    dropped with a warning, or raise :class:`RankDeficient` when ``strict``.
    ``z_transform`` fixes the instrument standardization; by default the sample
    mean and standard deviation are used.
    """
    if not 0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    w = np.ones(table.n) if weights is None else np.asarray(weights, dtype=float)
    d = table.d.astype(float)
    active = w > 0
    if d[active].min() == d[active].max():
        raise DegenerateTreatment("every observation has the same treatment status")
    if z_transform is None:
        center, scale = float(table.z.mean()), float(table.z.std())
        if scale == 0:
            scale = 1.0
    else:
        center, scale = map(float, z_transform)
    M, names = _design(table, basis, center, scale, include_c)
    sw = np.sqrt(w)
    kept = independent_columns(M * sw[:, None])
    dropped = tuple(names[j] for j in range(len(names)) if j not in set(kept.tolist()))
    if dropped:
        if strict:
            raise RankDeficient(f"collinear design columns: {list(dropped)}", columns=list(dropped))
        warnings.warn(f"dropping collinear propensity columns {list(dropped)}", stacklevel=2)
    beta_k, *_ = np.linalg.lstsq(M[:, kept] * sw[:, None], d * sw, rcond=None)
    beta = np.zeros(M.shape[1])
    beta[kept] = beta_k
    fitted_raw = M @ beta
    fitted = trim(fitted_raw, epsilon)

    nxl = table.n_x
    alpha_x = np.concatenate(([0.0], beta[1:nxl]))
    pos = nxl
    alpha_c = 0.0
    if include_c:
        alpha_c = float(beta[pos])
        pos += 1
    fit = PropensityFit(
        alpha0=float(beta[0]), alpha_x=alpha_x, alpha_c=alpha_c, alpha_z=beta[pos:].copy(),
        epsilon=epsilon, basis=basis, z_center=center, z_scale=scale, x_levels=table.x_levels,
        include_c=include_c, fitted_raw=fitted_raw, fitted=fitted,
        n_trimmed=int(np.sum(fitted != fitted_raw)), dropped=dropped, design=M, kept=kept,
        names=tuple(names), weights=None if weights is None else w)
    object.__setattr__(fit, "_d", d)
    return fit


def first_stage_fstat(fit: PropensityFit, table: ObservationTable) -> float:
    """Cluster-robust (CR0) Wald statistic for all series coefficients being zero, divided by
    the number of series terms tested. Clusters come from ``table.cluster``."""
    n_clusters = len(np.unique(table.cluster))
    if n_clusters < 2:
        raise TooFewClusters(f"need at least 2 clusters, found {n_clusters}",
                             n_clusters=n_clusters)
    M = fit.design[:, fit.kept]
    names = [fit.names[j] for j in fit.kept]
    zidx = [i for i, nm in enumerate(names) if nm.startswith("z^")]
    if not zidx:
        return 0.0
    u = table.d - M @ np.linalg.lstsq(M, table.d.astype(float), rcond=None)[0]
    bread = np.linalg.pinv(M.T @ M)
    scores = np.zeros((n_clusters, M.shape[1]))
    np.add.at(scores, np.unique(table.cluster, return_inverse=True)[1], M * u[:, None])
    meat = scores.T @ scores
    cov = bread @ meat @ bread
    a = (bread @ (M.T @ table.d.astype(float)))[zidx]
    vzz = cov[np.ix_(zidx, zidx)]
    return float(a @ np.linalg.pinv(vzz) @ a / len(zidx))
