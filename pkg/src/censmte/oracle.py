"""Synthetic designs with known answers.

A :class:`DgpSpec` describes a threshold-crossing selection model
``D = 1{P(Z, C) >= V}`` with ``V ~ U(0, 1)``, a censoring law, and potential
durations that are either exponential with rate ``a_d + b_d v`` or drawn
from a discrete joint table. :func:`simulate` draws data from it and
:func:`true_curves` evaluates the corresponding population functionals.

Specs are plain JSON. Example::

    {"instrument": {"low": 0, "high": 1},
     "propensity": {"p0": 0.2, "pz": 0.6, "pz2": 0.0, "pc": 0.0},
     "censoring": {"kind": "uniform", "low": 2, "high": 10},
     "outcomes": {"kind": "exponential", "a0": 1, "b0": 1, "a1": 0.5, "b1": 2},
     "covariates": {"levels": ["a"], "shares": [1.0]},
     "dependence": {"kind": "independent"}}

Censoring kinds are ``degenerate`` (``value``), ``uniform`` (``low``,
``high``) and ``cohorts`` (``values``, ``probs``). Dependence kinds are
``independent``, ``negRegDep`` (``kappa`` in ``(0, 2)``: the rate is scaled
by ``1 + kappa (c - cbar) / range``) and ``relaxed`` (``bbar``: with
probability ``bbar (c - cmin) / (cmax - cmin)`` the rate doubles).
Covariate levels may carry ``rate_mult`` and ``p_shift`` lists. Optional
``clusters`` (``{"count": G}``) and ``deciders`` (``{"count": J}``: the
instrument is drawn once per decider) blocks add id columns.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from .dataset import ObservationTable
from .errors import InvalidSpec, NoClosedForm

__all__ = [
    "DgpSpec", "SimulationResult", "simulate", "OracleCurves", "true_curves",
    "conditional_dmtr", "PmfSpec", "TOY_PMF", "brute_force_curves", "toy_quantities",
    "TOY_EXPECTED", "policy_value", "threshold_rule", "exhaustive_policy_search",
]

_STREAMS = {"z": 1, "c": 2, "v": 3, "x": 4, "y0": 5, "y1": 6, "mix": 7, "cluster": 8,
            "decider": 9, "pair": 10}


def _rng(seed: int, variable: str, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, _STREAMS[variable], block))))


@dataclass(frozen=True, eq=False)
class DgpSpec:
    instrument: dict
    propensity: dict
    censoring: dict
    outcomes: dict
    covariates: dict = field(default_factory=lambda: {"levels": ["all"], "shares": [1.0]})
    dependence: dict = field(default_factory=lambda: {"kind": "independent"})
    clusters: Optional[dict] = None
    deciders: Optional[dict] = None

    def __post_init__(self):
        self.validate()

    # ---- construction -------------------------------------------------
    @classmethod
    def from_dict(cls, obj: dict) -> "DgpSpec":
        known = {"instrument", "propensity", "censoring", "outcomes", "covariates",
                 "dependence", "clusters", "deciders"}
        extra = set(obj) - known
        if extra:
            raise InvalidSpec(f"unknown spec keys {sorted(extra)}")
        missing = {"instrument", "propensity", "censoring", "outcomes"} - set(obj)
        if missing:
            raise InvalidSpec(f"missing spec keys {sorted(missing)}")
        return cls(**copy.deepcopy(obj))

    @classmethod
    def from_json(cls, text: str) -> "DgpSpec":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise InvalidSpec(f"spec is not valid JSON: {exc}") from None

    def to_dict(self) -> dict:
        out = {k: copy.deepcopy(getattr(self, k)) for k in
               ("instrument", "propensity", "censoring", "outcomes", "covariates", "dependence")}
        if self.clusters is not None:
            out["clusters"] = copy.deepcopy(self.clusters)
        if self.deciders is not None:
            out["deciders"] = copy.deepcopy(self.deciders)
        return out

    # ---- validation ---------------------------------------------------
    def validate(self) -> None:
        ins = self.instrument
        if not ins.get("low", 0.0) < ins.get("high", 1.0):
            raise InvalidSpec("instrument needs low < high")
        cens = self.censoring
        kind = cens.get("kind")
        if kind == "degenerate":
            if cens.get("value", -1) <= 0:
                raise InvalidSpec("degenerate censoring needs a positive value")
        elif kind == "uniform":
            if not 0 <= cens.get("low", -1) < cens.get("high", -1):
                raise InvalidSpec("uniform censoring needs 0 <= low < high")
        elif kind == "cohorts":
            vals, probs = cens.get("values", []), cens.get("probs", [])
            if len(vals) == 0 or len(vals) != len(probs) or min(vals) <= 0 \
                    or min(probs) < 0 or not math.isclose(sum(probs), 1.0):
                raise InvalidSpec("cohort censoring needs positive values and probabilities summing to 1")
        else:
            raise InvalidSpec(f"unknown censoring kind {kind!r}")
        out = self.outcomes
        if out.get("kind") == "exponential":
            for d in (0, 1):
                a, b = out.get(f"a{d}"), out.get(f"b{d}", 0.0)
                if a is None or a <= 0 or b < 0:
                    raise InvalidSpec(f"arm {d} rate needs a_d > 0 and b_d >= 0")
        elif out.get("kind") == "pmf":
            PmfSpec.from_dict(out)
        else:
            raise InvalidSpec(f"unknown outcome kind {out.get('kind')!r}")
        cov = self.covariates
        levels, shares = cov.get("levels", []), cov.get("shares", [])
        if len(levels) == 0 or len(levels) != len(shares) or min(shares) < 0 \
                or not math.isclose(sum(shares), 1.0):
            raise InvalidSpec("covariate shares must be nonnegative, one per level, summing to 1")
        for key in ("rate_mult", "p_shift"):
            if key in cov and len(cov[key]) != len(levels):
                raise InvalidSpec(f"covariates.{key} needs one entry per level")
        if min(cov.get("rate_mult", [1.0])) <= 0:
            raise InvalidSpec("rate multipliers must be positive")
        dep = self.dependence.get("kind")
        if dep == "negRegDep":
            kappa = self.dependence.get("kappa", 0.0)
            if not 0 < kappa < 2:
                raise InvalidSpec("negRegDep needs 0 < kappa < 2 so rates stay positive")
            if out.get("kind") != "exponential":
                raise InvalidSpec("negRegDep requires exponential outcomes")
        elif dep == "relaxed":
            if not 0 <= self.dependence.get("bbar", -1) <= 1:
                raise InvalidSpec("relaxed dependence needs 0 <= bbar <= 1")
            if out.get("kind") != "exponential":
                raise InvalidSpec("relaxed dependence requires exponential outcomes")
        elif dep != "independent":
            raise InvalidSpec(f"unknown dependence kind {dep!r}")

    # ---- model pieces -------------------------------------------------
    @property
    def levels(self) -> list:
        return [str(v) for v in self.covariates["levels"]]

    @property
    def shares(self) -> np.ndarray:
        return np.asarray(self.covariates["shares"], dtype=float)

    def rate_mult(self, x: int) -> float:
        return float(self.covariates.get("rate_mult", [1.0] * len(self.levels))[x])

    def propensity_value(self, z, c, x=0):
        p = self.propensity
        z = np.asarray(z, dtype=float)
        shift = self.covariates.get("p_shift", [0.0] * len(self.levels))
        return (p.get("p0", 0.0) + p.get("pz", 0.0) * z + p.get("pz2", 0.0) * z ** 2
                + p.get("pc", 0.0) * np.asarray(c, dtype=float) + np.asarray(shift, float)[x])

    def rate(self, d: int, v, x=0):
        o = self.outcomes
        return (o[f"a{d}"] + o.get(f"b{d}", 0.0) * np.asarray(v, dtype=float)) \
            * np.asarray(self.covariates.get("rate_mult", [1.0] * len(self.levels)), float)[x]

    @property
    def gamma_c(self) -> float:
        cens = self.censoring
        return float({"degenerate": lambda: cens["value"], "uniform": lambda: cens["high"],
                      "cohorts": lambda: max(cens["values"])}[cens["kind"]]())

    def _c_range(self) -> tuple[float, float, float]:
        """(min, mean, max) of the censoring law."""
        cens = self.censoring
        if cens["kind"] == "degenerate":
            return cens["value"], cens["value"], cens["value"]
        if cens["kind"] == "uniform":
            return cens["low"], 0.5 * (cens["low"] + cens["high"]), cens["high"]
        vals = np.asarray(cens["values"], float)
        return vals.min(), float(vals @ np.asarray(cens["probs"], float)), vals.max()

    def rate_factor(self, c) -> np.ndarray:
        """Multiplicative rate change at censoring value ``c`` under negRegDep (1 otherwise)."""
        c = np.asarray(c, dtype=float)
        if self.dependence["kind"] != "negRegDep":
            return np.ones_like(c)
        lo, mid, hi = self._c_range()
        rng = hi - lo
        if rng == 0:
            return np.ones_like(c)
        return 1.0 + self.dependence["kappa"] * (c - mid) / rng

    def mix_prob(self, c) -> np.ndarray:
        """Probability of the fast component at ``c`` under relaxed dependence (0 otherwise)."""
        c = np.asarray(c, dtype=float)
        if self.dependence["kind"] != "relaxed":
            return np.zeros_like(c)
        lo, _, hi = self._c_range()
        if hi == lo:
            return np.zeros_like(c)
        return self.dependence["bbar"] * (c - lo) / (hi - lo)

    def support_upper_bound(self, d: int) -> float:
        """Upper end of the support of ``Y*(d)`` (infinite for exponential outcomes)."""
        if self.outcomes["kind"] == "pmf":
            pmf = PmfSpec.from_dict(self.outcomes)
            return float(max(pmf.support[d]))
        return math.inf


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SimulationResult:
    table: ObservationTable
    latent: dict

    def latent_rows(self) -> list:
        keys = ["v", "p", "y0", "y1"]
        return [keys] + [[float(self.latent[k][i]) for k in keys] for i in range(self.table.n)]


def _draw_censoring(spec: DgpSpec, rng: np.random.Generator, m: int) -> np.ndarray:
    cens = spec.censoring
    if cens["kind"] == "degenerate":
        return np.full(m, float(cens["value"]))
    if cens["kind"] == "uniform":
        return rng.uniform(cens["low"], cens["high"], m)
    return rng.choice(np.asarray(cens["values"], float), size=m, p=np.asarray(cens["probs"], float))


def simulate(spec: DgpSpec, n: int, seed: int, *, block_size: int = 65536) -> SimulationResult:
    """Draw ``n`` rows. Each variable has its own random stream per block of rows,
    so output depends only on ``(spec, n, seed, block_size)``."""
    if n < 1:
        raise InvalidSpec("n must be positive")
    parts = {k: [] for k in ("z", "c", "v", "x", "y0", "y1", "cluster", "decider")}
    n_dec = spec.deciders.get("count") if spec.deciders else None
    if n_dec is not None:
        zr = _rng(seed, "z", 0)
        dec_z = zr.uniform(spec.instrument["low"], spec.instrument["high"], n_dec)
    pmf = PmfSpec.from_dict(spec.outcomes) if spec.outcomes["kind"] == "pmf" else None
    for b, start in enumerate(range(0, n, block_size)):
        m = min(block_size, n - start)
        if n_dec is not None:
            dec = (np.arange(start, start + m) % n_dec)
            z = dec_z[dec]
            parts["decider"].append(dec)
        else:
            z = _rng(seed, "z", b).uniform(spec.instrument["low"], spec.instrument["high"], m)
        c = _draw_censoring(spec, _rng(seed, "c", b), m)
        v = _rng(seed, "v", b).uniform(size=m)
        x = _rng(seed, "x", b).choice(len(spec.levels), size=m, p=spec.shares)
        if pmf is None:
            fac = spec.rate_factor(c)
            fast = _rng(seed, "mix", b).uniform(size=m) < spec.mix_prob(c)
            mult = np.where(fast, 2.0, 1.0) * fac
            y0 = _rng(seed, "y0", b).exponential(size=m) / (spec.rate(0, v, x) * mult)
            y1 = _rng(seed, "y1", b).exponential(size=m) / (spec.rate(1, v, x) * mult)
        else:
            flat = np.array([float(p) for p in pmf.joint.ravel()])
            idx = _rng(seed, "pair", b).choice(flat.size, size=m, p=flat / flat.sum())
            i1, i0 = np.divmod(idx, pmf.joint.shape[1])
            y0 = np.asarray(pmf.support[0], float)[i0]
            y1 = np.asarray(pmf.support[1], float)[i1]
        if spec.clusters:
            parts["cluster"].append(_rng(seed, "cluster", b).integers(0, spec.clusters["count"], m))
        for k, arr in (("z", z), ("c", c), ("v", v), ("x", x), ("y0", y0), ("y1", y1)):
            parts[k].append(arr)
    cat = {k: np.concatenate(v) if v else None for k, v in parts.items()}
    p = spec.propensity_value(cat["z"], cat["c"], cat["x"])
    d = (p >= cat["v"]).astype(np.int64)
    ystar = np.where(d == 1, cat["y1"], cat["y0"])
    y = np.minimum(ystar, cat["c"])
    levels = np.asarray(spec.levels)
    table = ObservationTable.from_arrays(
        y, cat["c"], d, cat["z"], x=levels[cat["x"]],
        cluster=None if cat["cluster"] is None else np.char.add("g", cat["cluster"].astype(str)),
        decider=None if cat["decider"] is None else np.char.add("j", cat["decider"].astype(str)))
    latent = {"v": cat["v"], "p": p, "y0": cat["y0"], "y1": cat["y1"], "ystar": ystar}
    return SimulationResult(table, latent)


# ---------------------------------------------------------------------------
# closed-form truth
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OracleCurves:
    """Population functionals. Arrays indexed ``[d, k, v]``, ``[k, v]``, ``[d, tau, v]``, ``[v]``."""

    y: np.ndarray
    v: np.ndarray
    tau: np.ndarray
    gamma_c: float
    dmtr: np.ndarray
    dmte: np.ndarray
    qmtr: np.ndarray
    qmte: np.ndarray
    tau_bar: np.ndarray
    ramtr: np.ndarray
    rmte: np.ndarray
    mte: np.ndarray


def _cens_expect(spec: DgpSpec, f) -> np.ndarray:
    """E_C[f(C)] for a vectorised ``f``."""
    cens = spec.censoring
    if cens["kind"] == "degenerate":
        return f(np.asarray(float(cens["value"])))
    if cens["kind"] == "cohorts":
        return sum(p * f(np.asarray(float(c))) for c, p in zip(cens["values"], cens["probs"]))
    lo, hi = cens["low"], cens["high"]
    nodes, wts = np.polynomial.legendre.leggauss(64)
    cs = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    return sum(0.5 * w * f(np.asarray(c)) for c, w in zip(cs, wts))


def conditional_dmtr(spec: DgpSpec, d: int, y, v, c, x: int = 0) -> np.ndarray:
    """``P[Y*(d) <= y | V = v, C = c]`` for exponential outcomes."""
    lam = spec.rate(d, v, x) * spec.rate_factor(c)
    pi = spec.mix_prob(c)
    y = np.asarray(y, dtype=float)
    return (1 - pi) * (-np.expm1(-lam * y)) + pi * (-np.expm1(-2 * lam * y))


def _dmtr_exp(spec: DgpSpec, d: int, y, v, x: int) -> np.ndarray:
    y, v = np.broadcast_arrays(np.asarray(y, float), np.asarray(v, float))
    kind = spec.dependence["kind"]
    lam = spec.rate(d, v, x)
    if kind == "independent":
        return -np.expm1(-lam * y)
    if kind == "negRegDep" and spec.censoring["kind"] == "uniform":
        sh = spec.dependence["kappa"] * lam * y / 2.0
        ratio = np.where(sh > 0, np.sinh(sh) / np.where(sh > 0, sh, 1.0), 1.0)
        return 1.0 - np.exp(-lam * y) * ratio
    return _cens_expect(spec, lambda c: conditional_dmtr(spec, d, y, v, c, x))


def _mean_min(spec: DgpSpec, d: int, v: float, x: int, upper: float) -> float:
    """E[min(Y*(d), upper) | V=v]."""
    if spec.dependence["kind"] == "independent":
        lam = float(spec.rate(d, v, x))
        return -math.expm1(-lam * upper) / lam if math.isfinite(upper) else 1.0 / lam
    if math.isfinite(upper):
        val, _ = integrate.quad(lambda t: 1.0 - float(_dmtr_exp(spec, d, t, v, x)), 0.0, upper,
                                epsabs=1e-13, epsrel=1e-12, limit=200)
        return val
    return float(_cens_expect(spec, lambda c: (1 - spec.mix_prob(c) / 2)
                              / (spec.rate(d, v, x) * spec.rate_factor(c))))


def _avg_over_x(spec: DgpSpec, x: Optional[int], fn):
    if x is not None:
        return fn(x)
    return sum(w * fn(j) for j, w in enumerate(spec.shares))


def true_curves(spec: DgpSpec, y_grid, v_grid, tau_grid=(0.25, 0.5, 0.75), *,
                x: Optional[int] = None) -> OracleCurves:
    """Population DMTR/DMTE/QMTR/QMTE/RMTE/MTE on the given grids.

    ``x=None`` averages the response curves over covariate levels with their
    shares; quantiles are then found numerically. Under independence and a
    single level, quantiles use the closed form ``-log(1 - tau) / lambda``.
    """
    if spec.outcomes["kind"] != "exponential":
        raise NoClosedForm("true_curves needs exponential outcomes; use brute_force_curves")
    y = np.asarray(y_grid, dtype=float)
    v = np.asarray(v_grid, dtype=float)
    tau = np.asarray(tau_grid, dtype=float)
    gc = spec.gamma_c
    dmtr = np.stack([_avg_over_x(spec, x, lambda j: _dmtr_exp(spec, d, y[:, None], v[None, :], j))
                     for d in (0, 1)])
    tau_bar_arm = np.stack([_avg_over_x(spec, x, lambda j: _dmtr_exp(spec, d, gc, v, j)) for d in (0, 1)])
    tau_bar = np.minimum(tau_bar_arm[0], tau_bar_arm[1])
    closed = spec.dependence["kind"] == "independent" and (x is not None or len(spec.levels) == 1)
    qmtr = np.full((2, tau.size, v.size), np.nan)
    for d in (0, 1):
        for j, vv in enumerate(v):
            for i, t in enumerate(tau):
                if t >= tau_bar_arm[d, j]:
                    continue
                if closed:
                    qmtr[d, i, j] = -math.log1p(-t) / float(spec.rate(d, vv, 0 if x is None else x))
                else:
                    F = lambda s: float(_avg_over_x(spec, x, lambda k: _dmtr_exp(spec, d, s, vv, k))) - t
                    qmtr[d, i, j] = optimize.brentq(F, 0.0, gc, xtol=1e-14, rtol=1e-14)
    ramtr = np.stack([[float(_avg_over_x(spec, x, lambda k: _mean_min(spec, d, vv, k, gc)))
                       for vv in v] for d in (0, 1)])
    mte = np.array([float(_avg_over_x(spec, x, lambda k: _mean_min(spec, 1, vv, k, math.inf)
                                      - _mean_min(spec, 0, vv, k, math.inf))) for vv in v])
    return OracleCurves(y=y, v=v, tau=tau, gamma_c=gc, dmtr=dmtr, dmte=dmtr[1] - dmtr[0],
                        qmtr=qmtr, qmte=qmtr[1] - qmtr[0], tau_bar=tau_bar, ramtr=ramtr,
                        rmte=ramtr[1] - ramtr[0], mte=mte)


# ---------------------------------------------------------------------------
# discrete joint distributions and the toy fixture
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PmfSpec:
    """Joint PMF of ``(Y*(0), Y*(1))``: ``joint[i1][i0] = P(Y*(1)=support[1][i1], Y*(0)=support[0][i0])``."""

    support: tuple
    joint: np.ndarray  # object array of Fractions

    @classmethod
    def from_dict(cls, obj: dict) -> "PmfSpec":
        try:
            s0 = [Fraction(str(s)) for s in obj["support0"]]
            s1 = [Fraction(str(s)) for s in obj["support1"]]
            joint = np.array([[Fraction(str(p)) for p in row] for row in obj["joint"]], dtype=object)
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpec(f"bad pmf spec: {exc}") from None
        if joint.shape != (len(s1), len(s0)):
            raise InvalidSpec("joint table must have one row per support1 value and one column per support0 value")
        if any(p < 0 for p in joint.ravel()) or sum(joint.ravel()) != 1:
            raise InvalidSpec("joint probabilities must be nonnegative and sum to exactly 1")
        if sorted(s0) != s0 or sorted(s1) != s1 or min(s0 + s1) < 0:
            raise InvalidSpec("supports must be sorted and nonnegative")
        return cls((tuple(s0), tuple(s1)), joint)

    def marginal(self, d: int) -> list:
        axis = 0 if d == 0 else 1
        return [sum(self.joint[:, i]) for i in range(self.joint.shape[1])] if axis == 0 else \
            [sum(self.joint[i, :]) for i in range(self.joint.shape[0])]


# rows: Y*(1) in (1, 2, 3, 10, 20); columns: Y*(0) in (1, 2, 3, 10, 20); years
TOY_PMF = {
    "kind": "pmf",
    "support0": [1, 2, 3, 10, 20],
    "support1": [1, 2, 3, 10, 20],
    "joint": [["0.10", "0", "0.10", "0", "0"],
              ["0", "0.10", "0.10", "0", "0"],
              ["0", "0", "0", "0", "0"],
              ["0", "0", "0", "0.10", "0"],
              ["0.05", "0.05", "0", "0.40", "0"]],
}

TOY_EXPECTED = {"dmte_1": Fraction("0.05"), "dmte_2": Fraction("0.10"),
                "qte_median": Fraction(7), "ate": Fraction("5.55")}


def brute_force_curves(pmf, y_points: Sequence = (), taus: Sequence = (Fraction(1, 2),),
                       gamma_c=None) -> dict:
    """Exact functionals of a discrete joint law by enumeration (rational arithmetic).

    Returns a dict with per-arm CDF values at ``y_points``, left-continuous
    quantiles at ``taus``, means, and restricted means ``E[min(Y*(d), gamma_c)]``
    (when ``gamma_c`` is given), plus the matching treated-minus-untreated
    differences.
    """
    if isinstance(pmf, dict):
        pmf = PmfSpec.from_dict(pmf)
    out: dict = {"cdf": {}, "quantile": {}, "mean": {}, "restricted_mean": {}}
    for d in (0, 1):
        sup, prob = pmf.support[d], pmf.marginal(d)
        cdf = lambda t: sum((p for s, p in zip(sup, prob) if s <= Fraction(str(t))), Fraction(0))
        out["cdf"][d] = [cdf(t) for t in y_points]
        qs = []
        for tau in taus:
            tau = Fraction(str(tau))
            acc = Fraction(0)
            for s, p in zip(sup, prob):
                acc += p
                if acc >= tau:
                    break
            qs.append(s)
        out["quantile"][d] = qs
        out["mean"][d] = sum(s * p for s, p in zip(sup, prob))
        if gamma_c is not None:
            g = Fraction(str(gamma_c))
            out["restricted_mean"][d] = sum(min(s, g) * p for s, p in zip(sup, prob))
    out["dmte"] = [a - b for a, b in zip(out["cdf"][1], out["cdf"][0])]
    out["qte"] = [a - b for a, b in zip(out["quantile"][1], out["quantile"][0])]
    out["ate"] = out["mean"][1] - out["mean"][0]
    if gamma_c is not None:
        out["rmte"] = out["restricted_mean"][1] - out["restricted_mean"][0]
    return out


def toy_quantities(pmf=None) -> dict:
    """The four headline toy numbers: DMTE at 1 and 2 years, median QTE, ATE."""
    bf = brute_force_curves(TOY_PMF if pmf is None else pmf, y_points=(1, 2), taus=(Fraction(1, 2),))
    return {"dmte_1": bf["dmte"][0], "dmte_2": bf["dmte"][1],
            "qte_median": bf["qte"][0], "ate": bf["ate"]}


# ---------------------------------------------------------------------------
# policy value
# ---------------------------------------------------------------------------

def _mte_integral(spec: DgpSpec, lo: float, hi: float) -> float:
    if spec.outcomes["kind"] != "exponential" or spec.dependence["kind"] != "independent" \
            or len(spec.levels) != 1:
        raise NoClosedForm("policy value needs independent exponential outcomes and one level")
    total = 0.0
    m = spec.rate_mult(0)
    for d, sign in ((1, 1.0), (0, -1.0)):
        a, b = spec.outcomes[f"a{d}"], spec.outcomes.get(f"b{d}", 0.0)
        if b == 0:
            part = (hi - lo) / a
        else:
            part = (math.log(a + b * hi) - math.log(a + b * lo)) / b
        total += sign * part / m
    return total


def policy_value(spec: DgpSpec, rule: Sequence[tuple]) -> float:
    """``E[MTE(V) 1{V in G}]`` for ``G`` a union of disjoint intervals ``[(lo, hi), ...]``."""
    return float(sum(_mte_integral(spec, lo, hi) for lo, hi in rule if hi > lo))


def threshold_rule(spec: DgpSpec, n_scan: int = 2001) -> list:
    """Intervals of ``(0, 1)`` where ``MTE(v) > 0``, with sign changes located by root finding."""
    _mte_integral(spec, 0.0, 0.0)  # raises NoClosedForm for unsupported specs

    def mte(v):
        return 1 / spec.rate(1, v, 0) - 1 / spec.rate(0, v, 0)

    grid = np.linspace(0.0, 1.0, n_scan)
    vals = np.array([float(mte(g)) for g in grid])
    cuts = [0.0]
    for i in range(n_scan - 1):
        if vals[i] == 0.0 and 0 < i:
            cuts.append(grid[i])
        elif vals[i] * vals[i + 1] < 0:
            cuts.append(optimize.brentq(lambda t: float(mte(t)), grid[i], grid[i + 1], xtol=1e-15))
    cuts.append(1.0)
    cuts = sorted(set(cuts))
    rule = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if float(mte(0.5 * (lo + hi))) > 0:
            if rule and rule[-1][1] == lo:
                rule[-1] = (rule[-1][0], hi)
            else:
                rule.append((lo, hi))
    return rule


def exhaustive_policy_search(spec: DgpSpec, n_intervals: int = 20) -> tuple[float, int]:
    """Best value over all ``2**n_intervals`` unions of equal-width cells of ``(0, 1)``.

    Returns ``(value, mask)`` where bit ``i`` of ``mask`` selects cell ``i``.
    """
    edges = np.linspace(0.0, 1.0, n_intervals + 1)
    cell = np.array([_mte_integral(spec, edges[i], edges[i + 1]) for i in range(n_intervals)])
    sums = np.zeros(1)
    for val in cell:
        sums = np.concatenate((sums, sums + val))
    best = int(np.argmax(sums))
    return float(sums[best]), best
