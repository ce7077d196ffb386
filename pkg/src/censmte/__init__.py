"""Marginal treatment effects for right-censored durations.

Estimates distributional, quantile and restricted-mean marginal treatment
effects when the treatment is endogenous, an instrument shifts it, and the
outcome is a duration observed only up to a censoring horizon. Also provides
weighted-bootstrap bands, bounds under dependent censoring, and a simulator
with closed-form truth.
"""

__version__ = "0.1.0"

from . import errors  # noqa: E402
from .bootstrap import Band, BootstrapPlan, ConfidenceBands, run_bootstrap  # noqa: E402
from .bounds import (BoundsSurface, DeltaGrid, bounds_continuous_relaxation,  # noqa: E402
                     bounds_regression_dependence, breakdown_point, default_delta_grid)
from .dataset import (ColumnMap, ObservationTable, apply_caseload_filter,  # noqa: E402
                      build_leave_one_out_instrument, load_csv, save_csv)
from .distreg import DistRegFit, PBasis, ThresholdGrid, default_grid, fit_distreg  # noqa: E402
from .kernels import BACKEND  # noqa: E402
from .mte import EvalDesign, MteSurfaces, assemble_surfaces, default_design  # noqa: E402
from .oracle import (DgpSpec, OracleCurves, PmfSpec, simulate, toy_quantities,  # noqa: E402
                     true_curves)
from .pipeline import Estimate, EstimatorOptions, estimate  # noqa: E402
from .propensity import PropensityFit, SeriesBasis, fit_propensity  # noqa: E402

__all__ = [
    "__version__", "errors", "BACKEND",
    "ColumnMap", "ObservationTable", "load_csv", "save_csv", "build_leave_one_out_instrument",
    "apply_caseload_filter", "SeriesBasis", "PropensityFit", "fit_propensity",
    "ThresholdGrid", "default_grid", "PBasis", "DistRegFit", "fit_distreg",
    "EvalDesign", "default_design", "MteSurfaces", "assemble_surfaces",
    "EstimatorOptions", "Estimate", "estimate",
    "BootstrapPlan", "Band", "ConfidenceBands", "run_bootstrap",
    "DeltaGrid", "default_delta_grid", "BoundsSurface", "bounds_regression_dependence",
    "bounds_continuous_relaxation", "breakdown_point",
    "DgpSpec", "OracleCurves", "PmfSpec", "simulate", "true_curves", "toy_quantities",
]
