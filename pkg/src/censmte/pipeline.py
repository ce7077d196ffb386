"""One-call estimation: propensity, distribution regression, surfaces."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import ObservationTable
from .distreg import DistRegFit, PBasis, ThresholdGrid, default_grid, fit_distreg
from .mte import DEFAULT_TAUS, EvalDesign, MteSurfaces, assemble_surfaces, default_design
from .propensity import PropensityFit, SeriesBasis, first_stage_fstat, fit_propensity

__all__ = ["EstimatorOptions", "Estimate", "estimate"]


@dataclass(frozen=True)
class EstimatorOptions:
    """Tuning choices shared by point estimation and bootstrap refits.

    ``p_basis`` names the propensity terms in the distribution-regression
    index (see :meth:`PBasis.parse`); ``"linear"`` is the standard choice.
    ``naive`` drops the censoring horizon from both regressions and from the
    averaging restriction.
    """

    basis_degree: int = 2
    trim_eps: float = 0.01
    p_basis: str = "linear"
    naive: bool = False
    grid_size: int = 64
    n_v: int = 41
    tau_grid: tuple = DEFAULT_TAUS
    threads: int = 1
    rule: str = "trapezoid"
    fit_sample: str = "all"
    tail: str = "support"


@dataclass(frozen=True, eq=False)
class Estimate:
    pfit: PropensityFit
    drfit: DistRegFit
    design: EvalDesign
    surfaces: MteSurfaces
    fstat: Optional[float] = None
    n_clusters: int = 0
    diagnostics: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "n": int(self.pfit.fitted.size),
            "propensity": self.pfit.summary(),
            "first_stage_f": self.fstat,
            "n_clusters": self.n_clusters,
            "n_trimmed": self.pfit.n_trimmed,
            "distreg_dropped_columns": list(self.drfit.dropped),
            "unusable_cells": self.drfit.unusable_cells(),
            "surfaces": self.surfaces.summary(),
            **self.diagnostics,
        }


def estimate(table: ObservationTable, options: EstimatorOptions = EstimatorOptions(), *,
             grid: Optional[ThresholdGrid] = None, design: Optional[EvalDesign] = None,
             weights: Optional[np.ndarray] = None, x_weights: Optional[np.ndarray] = None,
             z_transform: Optional[tuple] = None, diagnostics: bool = True) -> Estimate:
    """Run the full estimator on ``table``.

    ``grid`` and ``design`` default to the data-driven choices; pass them
    explicitly to hold evaluation points fixed (the bootstrap does).
    ``weights`` are row multipliers applied to both regressions and to the averaging step.
    """
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        pfit = fit_propensity(table, SeriesBasis(options.basis_degree), options.trim_eps,
                              weights=weights, include_c=not options.naive,
                              z_transform=z_transform)
    for w in caught:
        warnings.warn(w.message, w.category, stacklevel=2)
    if design is None:
        grid = grid if grid is not None else default_grid(table, options.grid_size)
        design = default_design(pfit, grid, options.n_v, options.tau_grid)
    drfit = fit_distreg(table, pfit, design.y_grid, weights=weights, naive=options.naive,
                        p_basis=PBasis.parse(options.p_basis), threads=options.threads,
                        fit_sample=options.fit_sample)
    surfaces = assemble_surfaces(drfit, table, design, x_weights=x_weights, rule=options.rule,
                                 tail=options.tail, weights=weights)
    fstat = None
    n_clusters = len(np.unique(table.cluster))
    if diagnostics and n_clusters >= 2:
        fstat = first_stage_fstat(pfit, table)
    return Estimate(pfit, drfit, design, surfaces, fstat, n_clusters)
