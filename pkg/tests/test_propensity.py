import warnings

import numpy as np
import pytest
from scipy import stats

from censmte.dataset import ObservationTable
from censmte.errors import DegenerateTreatment, RankDeficient, TooFewClusters
from censmte.oracle import simulate
from censmte.propensity import SeriesBasis, first_stage_fstat, fit_propensity, trim

from conftest import make_spec


def linear_cells(zvals, per=10):
    """Rows whose treated share at each z equals 0.2 + 0.5 z exactly."""
    z, d = [], []
    for zv in zvals:
        k = round((0.2 + 0.5 * zv) * per)
        z += [zv] * per
        d += [1] * k + [0] * (per - k)
    n = len(z)
    return ObservationTable.from_arrays(np.ones(n), np.full(n, 3.0), d, z)


def test_exact_linear_recovery_drops_constant_c():
    t = linear_cells([0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    with pytest.warns(UserWarning, match="collinear"):
        fit = fit_propensity(t, SeriesBasis(2), 0.01)
    assert fit.dropped == ("c",)
    const, raw = fit.raw_z_coefficients()
    assert abs(const - 0.2) <= 1e-10
    np.testing.assert_allclose(raw, [0.5, 0.0], atol=1e-10)
    np.testing.assert_allclose(fit.fitted, 0.2 + 0.5 * t.z, atol=1e-10)


def test_strict_mode_raises_on_collinearity():
    t = linear_cells([0.0, 0.5, 1.0])
    with pytest.raises(RankDeficient) as info:
        fit_propensity(t, strict=True)
    assert "c" in info.value.details["columns"]


def test_degenerate_treatment():
    t = ObservationTable.from_arrays([1, 1], [2, 3], [1, 1], [0, 1])
    with pytest.raises(DegenerateTreatment):
        fit_propensity(t)


def test_trim_formula():
    assert trim(1.004, 0.01) == pytest.approx(0.99, abs=1e-15)
    assert trim(-0.2, 0.01) == pytest.approx(0.01, abs=1e-15)
    x = np.linspace(0, 1, 101)
    assert np.array_equal(trim(x, 0.05), x)


def test_basis_at_zero_is_zero():
    assert np.array_equal(SeriesBasis(3).evaluate(0.0), np.zeros(3))
    with pytest.raises(ValueError):
        SeriesBasis(0)


def test_oracle_propensity_recovered():
    spec = make_spec(propensity={"p0": 0.3, "pz": 0.4, "pc": 0.0001})
    t = simulate(spec, 50_000, 2).table
    fit = fit_propensity(t)
    truth = spec.propensity_value(t.z, t.c)
    assert np.max(np.abs(fit.fitted - truth)) <= 0.02


def test_residuals_orthogonal(small_table):
    fit = fit_propensity(small_table)
    M = fit.design[:, fit.kept]
    scale = np.abs(M).sum(axis=0) * np.abs(fit.residuals).max()
    assert np.all(np.abs(M.T @ fit.residuals) <= 1e-8 * scale)


def test_label_permutation_invariance(multi_x_table):
    t = multi_x_table
    relabel = {"north": "zz", "south": "aa", "west": "mm"}
    t2 = ObservationTable.from_arrays(t.y, t.c, t.d, t.z,
                                      x=[relabel[s] for s in t.x_labels], cluster=t.cluster_labels)
    np.testing.assert_allclose(fit_propensity(t).fitted, fit_propensity(t2).fitted, atol=1e-12)


def test_fitted_values_inside_trim_band():
    rng = np.random.default_rng(9)
    n = 2000
    z = rng.uniform(-2, 2, n)
    d = (rng.random(n) < np.clip(0.5 + 0.6 * z, 0, 1)).astype(int)
    t = ObservationTable.from_arrays(np.ones(n), rng.uniform(2, 3, n), d, z)
    fit = fit_propensity(t, epsilon=0.02)
    assert fit.n_trimmed > 0
    inside = (fit.fitted_raw >= 0) & (fit.fitted_raw <= 1)
    assert np.array_equal(fit.fitted[inside], fit.fitted_raw[inside])
    assert np.all(fit.fitted[~inside] == np.where(fit.fitted_raw[~inside] > 1, 0.98, 0.02))


def test_fstat_size_under_null():
    spec = make_spec(propensity={"p0": 0.5, "pz": 0.0}, clusters={"count": 200})
    crit = stats.chi2.ppf(0.95, 2) / 2
    below = 0
    for seed in range(100):
        t = simulate(spec, 20_000, seed).table
        below += first_stage_fstat(fit_propensity(t), t) < crit
    assert below >= 90


def test_fstat_strong_instrument():
    rng = np.random.default_rng(1)
    n = 5000
    z = rng.uniform(size=n)
    d = (z > np.median(z)).astype(int)
    t = ObservationTable.from_arrays(np.ones(n), rng.uniform(2, 3, n), d, z,
                                     cluster=rng.integers(0, 40, n))
    assert first_stage_fstat(fit_propensity(t), t) > 1000


def test_fstat_needs_two_clusters(small_table):
    one = ObservationTable.from_arrays(small_table.y, small_table.c, small_table.d, small_table.z)
    with pytest.raises(TooFewClusters):
        first_stage_fstat(fit_propensity(one), one)


def test_summary_is_plain(small_table):
    s = fit_propensity(small_table).summary()
    assert isinstance(s["raw_scale"]["intercept"], float)
    assert s["epsilon"] == 0.01


def test_weights_change_fit(small_table):
    w = np.linspace(0.5, 1.5, small_table.n)
    a = fit_propensity(small_table).coef
    b = fit_propensity(small_table, weights=w).coef
    assert not np.allclose(a, b)
    np.testing.assert_allclose(fit_propensity(small_table, weights=np.full(small_table.n, 3.0)).coef,
                               a, atol=1e-12)
