"""``cens-mte`` command-line interface.

Every subcommand is a pure function of its input files, flags and seed: it
writes long-format CSV tables, each with a ``<name>.meta.json`` sidecar that
records the full run configuration and its hash. Errors are reported as one
JSON object on stderr. Exit codes: 0 success, 1 failed check, 2 invalid input
or unusable data.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import __version__
from .bootstrap import WEIGHT_LAWS, BootstrapPlan, run_bootstrap
from .bounds import (ROBUST_BBAR, is_robust, breakdown_curve, bounds_regression_dependence,
                     default_delta_grid, relaxation_envelope)
from .dataset import ColumnMap, build_leave_one_out_instrument, load_csv, save_csv
from .distreg import ThresholdGrid
from .errors import CensMteError, ParseError
from .mte import to_long_rows
from .oracle import TOY_EXPECTED, DgpSpec, PmfSpec, simulate, toy_quantities
from .pipeline import EstimatorOptions, estimate

DAYS_PER_YEAR = 365.25


class UsageError(Exception):
    """Bad command-line usage (reported like any other invalid input)."""


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Everything a subcommand needs besides input bytes.

    ``estimator``, ``bootstrap`` and ``bounds`` are plain dictionaries so the
    configuration serializes to JSON and back without loss.
    """

    subcommand: str
    data: Optional[str] = None
    columns: dict = field(default_factory=lambda: asdict(ColumnMap()))
    loo_instrument: bool = False
    estimator: dict = field(default_factory=lambda: _options_dict(EstimatorOptions()))
    bootstrap: dict = field(default_factory=lambda: {
        "B": 299, "alpha": 0.05, "weight_law": "exponential", "cluster_level": True})
    bounds: dict = field(default_factory=lambda: {
        "mode": "relax", "bbar": 0.0, "breakdown": False, "n_delta": 8, "min_cell": 50})
    simulate: dict = field(default_factory=lambda: {"spec": None, "n": 5000, "out": None,
                                                      "latent_out": None})
    toy_pmf: Optional[str] = None
    grid_file: Optional[str] = None
    out_dir: str = "."
    seed: int = 0
    threads: int = 1
    report_years: bool = False

    def validate(self) -> None:
        if self.subcommand not in SUBCOMMANDS:
            raise UsageError(f"unknown subcommand {self.subcommand!r}")
        est = self.estimator
        checks = [
            (1 <= int(est["basis_degree"]) <= 10, "basis degree must be in 1..10"),
            (0.0 <= float(est["trim_eps"]) < 0.5, "trim epsilon must be in [0, 0.5)"),
            (int(est["grid_size"]) >= 1, "grid size must be positive"),
            (int(est["n_v"]) >= 1, "number of v points must be positive"),
            (all(0 < float(t) < 1 for t in est["tau_grid"]), "quantile levels must be in (0, 1)"),
            (est["rule"] in ("trapezoid", "step"), "rule must be trapezoid or step"),
            (est["tail"] in ("support", "carry"), "tail must be support or carry"),
            (est["fit_sample"] in ("all", "above"), "fit sample must be all or above"),
            (int(self.bootstrap["B"]) >= 1, "bootstrap B must be at least 1"),
            (0 < float(self.bootstrap["alpha"]) < 1, "alpha must be in (0, 1)"),
            (self.bootstrap["weight_law"] in WEIGHT_LAWS, f"weight law must be one of {WEIGHT_LAWS}"),
            (self.bounds["mode"] in ("regdep", "relax"), "bounds mode must be regdep or relax"),
            (float(self.bounds["bbar"]) >= 0, "bbar must be nonnegative"),
            (int(self.bounds["n_delta"]) >= 1, "number of offsets must be positive"),
            (int(self.bounds["min_cell"]) >= 1, "minimum cell size must be positive"),
            (0 <= int(self.seed) < 2**64, "seed must be a 64-bit unsigned integer"),
            (int(self.threads) >= 1, "threads must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise UsageError(msg)
        if self.subcommand in ("estimate", "bootstrap", "bounds") and not self.data:
            raise UsageError(f"{self.subcommand} needs --data")
        if self.subcommand == "simulate":
            if not self.simulate.get("spec") or not self.simulate.get("out"):
                raise UsageError("simulate needs --spec and --out")
            if int(self.simulate["n"]) < 1:
                raise UsageError("simulate needs n >= 1")
        EstimatorOptions(**self.estimator_kwargs())

    def estimator_kwargs(self) -> dict:
        kw = dict(self.estimator)
        kw["tau_grid"] = tuple(float(t) for t in kw["tau_grid"])
        kw["threads"] = int(self.threads)
        return kw

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        raw = json.loads(text)
        names = {f.name for f in fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise UsageError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**raw)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def _options_dict(opts: EstimatorOptions) -> dict:
    out = asdict(opts)
    out.pop("threads")
    out["tau_grid"] = [float(t) for t in out["tau_grid"]]
    return out


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if not math.isfinite(v) else repr(v)
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _write_table(path: Path, header: Sequence[str], rows, cfg: RunConfig) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
            n += 1
    _write_sidecar(path, cfg, rows=n, columns=list(header))


def _write_sidecar(path: Path, cfg: RunConfig, **extra) -> None:
    meta = {"file": path.name, "config_hash": cfg.config_hash(), "config": json.loads(cfg.to_json()),
            "version": __version__, **extra}
    Path(str(path) + ".meta.json").write_text(_dumps(meta) + "\n", encoding="utf-8")


def _write_json(path: Path, obj, cfg: RunConfig) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dumps(obj) + "\n", encoding="utf-8")
    _write_sidecar(path, cfg)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Fraction):
        return float(obj)
    return obj


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2)


SURFACE_HEADER = ("functional", "y_or_tau", "v", "x", "value", "lo", "hi")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _load(cfg: RunConfig):
    table = load_csv(cfg.data, ColumnMap(**cfg.columns))
    if cfg.loo_instrument:
        table = build_leave_one_out_instrument(table)
    return table


def _scale(cfg: RunConfig) -> float:
    return DAYS_PER_YEAR if cfg.report_years else 1.0


def _read_grid(path: str) -> ThresholdGrid:
    values = []
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or not row[0].strip():
                continue
            try:
                values.append(float(row[0]))
            except ValueError:
                if i == 0:  # header
                    continue
                raise ParseError(i + 1, "threshold", row[0]) from None
    return ThresholdGrid(np.asarray(values))


def _estimate(cfg: RunConfig, table):
    grid = _read_grid(cfg.grid_file) if cfg.grid_file else None
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        est = estimate(table, EstimatorOptions(**cfg.estimator_kwargs()), grid=grid)
    caught = sorted({str(w.message) for w in rec})
    return est, caught


def cmd_estimate(cfg: RunConfig) -> tuple[int, dict]:
    table = _load(cfg)
    est, notes = _estimate(cfg, table)
    out = Path(cfg.out_dir)
    rows = to_long_rows(est.surfaces, duration_scale=_scale(cfg))
    _write_table(out / "surfaces.csv", SURFACE_HEADER, rows, cfg)
    diag = {"data": table.summary(), **est.summary(), "warnings": notes}
    _write_json(out / "diagnostics.json", diag, cfg)
    _write_json(out / "distreg_fit.json", est.drfit.to_records(), cfg)
    return 0, {"rows": len(rows), "first_stage_f": est.fstat, "n_trimmed": est.pfit.n_trimmed,
               "unusable_cells": len(est.drfit.unusable_cells()), "out_dir": str(out)}


def cmd_bootstrap(cfg: RunConfig) -> tuple[int, dict]:
    table = _load(cfg)
    est, notes = _estimate(cfg, table)
    b = cfg.bootstrap
    plan = BootstrapPlan(B=int(b["B"]), alpha=float(b["alpha"]), weight_law=b["weight_law"],
                         cluster_level=bool(b["cluster_level"]), seed=int(cfg.seed))
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        bands = run_bootstrap(table, est, plan, EstimatorOptions(**cfg.estimator_kwargs()),
                              workers=int(cfg.threads))
    notes += sorted({str(w.message) for w in rec})
    out = Path(cfg.out_dir)
    rows = to_long_rows(est.surfaces, bands.bands, duration_scale=_scale(cfg))
    _write_table(out / "surfaces.csv", SURFACE_HEADER, rows, cfg)
    diag = {"data": table.summary(), **est.summary(), "bootstrap": bands.summary(),
            "warnings": notes}
    _write_json(out / "diagnostics.json", diag, cfg)
    widths = [float(np.nanmax(bd.hi - bd.lo)) for bd in bands.bands.values()
              if np.isfinite(bd.hi - bd.lo).any()]
    return 0, {"rows": len(rows), "B": plan.B, "failed_replicates": bands.n_failed,
               "max_band_width": max(widths) if widths else None, "out_dir": str(out)}


def cmd_bounds(cfg: RunConfig) -> tuple[int, dict]:
    table = _load(cfg)
    est, notes = _estimate(cfg, table)
    bc = cfg.bounds
    grid = default_delta_grid(table, est.design.y_grid, int(bc["n_delta"]), int(bc["min_cell"]))
    ks = [k for k, d in enumerate(grid.deltas) if d.size]
    skipped = [float(est.design.y_grid.yk[k]) / _scale(cfg) for k, d in enumerate(grid.deltas)
               if not d.size]
    out = Path(cfg.out_dir)
    scale = _scale(cfg)
    if bc["breakdown"]:
        env = relaxation_envelope(est.drfit, table, est.design, grid, ks=ks)
        curve = breakdown_curve(env, average=True)
        rows = [(est.design.y_grid.yk[k] / scale, b) for k, b in curve.items()]
        _write_table(out / "breakdown.csv", ("y", "bbar"), rows, cfg)
        summary = {"thresholds": len(rows), "skipped_thresholds": skipped,
                   "robust_threshold": ROBUST_BBAR,
                   "robust_thresholds": sum(is_robust(b) for _, b in rows)}
        detail = {"breakdown": [{"y": y, "bbar": b, "robust": is_robust(b)}
                                for y, b in rows]}
    else:
        if bc["mode"] == "regdep":
            surf = bounds_regression_dependence(est.drfit, table, est.design, grid, ks=ks)
        else:
            surf = relaxation_envelope(est.drfit, table, est.design, grid, ks=ks).at(float(bc["bbar"]))
        rows = surf.to_rows(duration_scale=scale)
        _write_table(out / "bounds.csv", ("y", "v", "x", "lb", "ub", "mode", "bbar"), rows, cfg)
        summary = {"rows": len(rows), "mode": surf.mode, "bbar": surf.bbar,
                   "skipped_thresholds": skipped, **surf.diagnostics}
        detail = {}
    _write_json(out / "bounds_diagnostics.json", {**summary, **detail, "warnings": notes}, cfg)
    return 0, summary


def cmd_simulate(cfg: RunConfig) -> tuple[int, dict]:
    s = cfg.simulate
    spec = DgpSpec.from_json(Path(s["spec"]).read_text(encoding="utf-8"))
    res = simulate(spec, int(s["n"]), int(cfg.seed))
    out = Path(s["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(res.table, out)
    _write_sidecar(out, cfg, rows=res.table.n)
    if s.get("latent_out"):
        lat = res.latent_rows()
        _write_table(Path(s["latent_out"]), lat[0], lat[1:], cfg)
    return 0, {"rows": res.table.n, "out": str(out), "treated_share": float(res.table.d.mean())}


def _exact(q: Fraction) -> str:
    """Decimal string of a fraction, exact when the expansion terminates."""
    q = Fraction(q)
    den, twos, fives = q.denominator, 0, 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return str(q)
    places = max(twos, fives)
    scaled = q * 10**places
    sign = "-" if scaled < 0 else ""
    digits = str(abs(scaled.numerator)).rjust(places + 1, "0")
    text = digits if places == 0 else digits[:-places] + "." + digits[-places:]
    return sign + (text.rstrip("0").rstrip(".") if places else text)


def cmd_toy_check(cfg: RunConfig) -> tuple[int, dict]:
    pmf = None
    if cfg.toy_pmf:
        pmf = PmfSpec.from_dict(json.loads(Path(cfg.toy_pmf).read_text(encoding="utf-8")))
    got = toy_quantities(pmf)
    checks = {}
    for key, want in TOY_EXPECTED.items():
        checks[key] = {"value": _exact(got[key]), "expected": _exact(want),
                       "pass": got[key] == want}
    ok = all(c["pass"] for c in checks.values())
    return (0 if ok else 1), {"status": "PASS" if ok else "FAIL", "checks": checks}


SUBCOMMANDS = {"estimate": cmd_estimate, "bootstrap": cmd_bootstrap, "bounds": cmd_bounds,
               "simulate": cmd_simulate, "toy-check": cmd_toy_check}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=d, help="worker count (default 1)")
    p.add_argument("--out-dir", default=d, help="output directory (default .)")
    p.add_argument("--json", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="print the result summary as JSON")
    p.add_argument("--config", default=d, help="RunConfig JSON; explicit flags override it")


def _data_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("input")
    g.add_argument("--data", help="observation CSV")
    for role in ("y", "c", "d", "z", "x", "cluster", "decider"):
        g.add_argument(f"--col-{role}", dest=f"col_{role}", help=f"header of the {role} column")
    g.add_argument("--no-x", action="store_true", default=None,
                   help="ignore covariates (single level)")
    g.add_argument("--loo-instrument", action="store_true", default=None,
                   help="replace z by the decider's leave-one-out treatment rate")
    e = p.add_argument_group("estimator")
    e.add_argument("--basis-degree", type=int)
    e.add_argument("--trim-eps", type=float)
    e.add_argument("--p-basis", help="propensity terms in the DR index: linear, polyK, logit, logitK, loglog")
    e.add_argument("--naive", action="store_true", default=None,
                   help="drop the censoring horizon from both regressions")
    e.add_argument("--grid-size", type=int)
    e.add_argument("--grid-file", help="CSV with one column of explicit thresholds")
    e.add_argument("--n-v", type=int)
    e.add_argument("--taus", help="comma-separated quantile levels")
    e.add_argument("--rule", choices=("trapezoid", "step"))
    e.add_argument("--tail", choices=("support", "carry"))
    e.add_argument("--fit-sample", choices=("all", "above"))
    e.add_argument("--report-years", action="store_true", default=None,
                   help="input durations are days; report durations in years")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cens-mte", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="point estimates of all surfaces")
    _data_flags(p)
    _global_flags(p, suppress=True)

    p = sub.add_parser("bootstrap", help="point estimates with weighted-bootstrap bands")
    _data_flags(p)
    p.add_argument("--boot-B", dest="boot_B", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--cluster-weights", choices=("on", "off"))
    p.add_argument("--weight-law", choices=WEIGHT_LAWS)
    _global_flags(p, suppress=True)

    p = sub.add_parser("bounds", help="bounds under dependent censoring and breakdown points")
    _data_flags(p)
    p.add_argument("--mode", choices=("regdep", "relax"))
    g = p.add_mutually_exclusive_group()
    g.add_argument("--bbar", type=float)
    g.add_argument("--breakdown", action="store_true", default=None)
    p.add_argument("--n-delta", type=int)
    p.add_argument("--min-cell", type=int)
    _global_flags(p, suppress=True)

    p = sub.add_parser("simulate", help="draw a data set from a DGP spec")
    p.add_argument("--spec")
    p.add_argument("--n", type=int)
    p.add_argument("--out")
    p.add_argument("--latent-out")
    _global_flags(p, suppress=True)

    p = sub.add_parser("toy-check", help="verify the embedded discrete toy example")
    p.add_argument("--pmf", help="alternative joint PMF JSON (for negative controls)")
    _global_flags(p, suppress=True)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    if getattr(args, "config", None):
        cfg = RunConfig.from_json(Path(args.config).read_text(encoding="utf-8"))
        cfg.subcommand = args.subcommand
    else:
        cfg = RunConfig(subcommand=args.subcommand)
    a = vars(args)

    def put(target: dict, key: str, name: str, conv=lambda v: v):
        if a.get(name) is not None:
            target[key] = conv(a[name])

    for name, key in (("seed", "seed"), ("threads", "threads"), ("out_dir", "out_dir")):
        if a.get(name) is not None:
            setattr(cfg, key, a[name])
    if a.get("data") is not None:
        cfg.data = a["data"]
    if a.get("grid_file") is not None:
        cfg.grid_file = a["grid_file"]
    for role in ("y", "c", "d", "z", "x", "cluster", "decider"):
        put(cfg.columns, role, f"col_{role}")
    if a.get("no_x"):
        cfg.columns["x"] = None
    if a.get("loo_instrument"):
        cfg.loo_instrument = True
        if cfg.columns.get("decider") is None:
            cfg.columns["decider"] = "decider"
    if a.get("report_years"):
        cfg.report_years = True
    est = cfg.estimator
    put(est, "basis_degree", "basis_degree")
    put(est, "trim_eps", "trim_eps")
    put(est, "p_basis", "p_basis")
    put(est, "naive", "naive", bool)
    put(est, "grid_size", "grid_size")
    put(est, "n_v", "n_v")
    put(est, "rule", "rule")
    put(est, "tail", "tail")
    put(est, "fit_sample", "fit_sample")
    if a.get("taus") is not None:
        try:
            est["tau_grid"] = [float(t) for t in a["taus"].split(",") if t.strip()]
        except ValueError:
            raise UsageError(f"cannot parse --taus {a['taus']!r}") from None
    put(cfg.bootstrap, "B", "boot_B")
    put(cfg.bootstrap, "alpha", "alpha")
    put(cfg.bootstrap, "weight_law", "weight_law")
    put(cfg.bootstrap, "cluster_level", "cluster_weights", lambda v: v == "on")
    put(cfg.bounds, "mode", "mode")
    put(cfg.bounds, "bbar", "bbar")
    put(cfg.bounds, "breakdown", "breakdown", bool)
    put(cfg.bounds, "n_delta", "n_delta")
    put(cfg.bounds, "min_cell", "min_cell")
    put(cfg.simulate, "spec", "spec")
    put(cfg.simulate, "n", "n")
    put(cfg.simulate, "out", "out")
    put(cfg.simulate, "latent_out", "latent_out")
    if a.get("pmf") is not None:
        cfg.toy_pmf = a["pmf"]
    return cfg


def _print_result(name: str, result: dict, as_json: bool) -> None:
    if as_json:
        print(_dumps(result))
        return
    if name == "toy-check":
        for key, c in result["checks"].items():
            print(f"{key:12s} {c['value']:>8s}  expected {c['expected']:>6s}  "
                  f"{'PASS' if c['pass'] else 'FAIL'}")
        print(result["status"])
        return
    for key, val in result.items():
        print(f"{key}: {val}")


def _fail(err: dict) -> int:
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return 2


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    as_json = False
    try:
        args = build_parser().parse_args(argv)
        as_json = bool(getattr(args, "json", False))
        cfg = config_from_args(args)
        cfg.validate()
        code, result = SUBCOMMANDS[cfg.subcommand](cfg)
    except UsageError as exc:
        return _fail({"error": "usage", "message": str(exc)})
    except CensMteError as exc:
        return _fail(_clean(exc.to_dict()))
    except (OSError, json.JSONDecodeError, ValueError, KeyError, TypeError) as exc:
        return _fail({"error": type(exc).__name__, "message": str(exc)})
    _print_result(cfg.subcommand, result, as_json)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
