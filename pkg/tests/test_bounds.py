import numpy as np
import pytest

from censmte.bounds import (ROBUST_BBAR, DeltaGrid, bounds_continuous_relaxation,
                            bounds_regression_dependence, breakdown_bisection, breakdown_curve,
                            breakdown_from_surface, breakdown_point, censoring_probabilities,
                            default_delta_grid, is_robust, regression_dependence_envelope,
                            relaxation_envelope, relaxation_from_values)
from censmte.errors import EmptyDeltaGrid
from censmte.mte import monotonize_and_clamp
from censmte.oracle import simulate, true_curves
from censmte.pipeline import EstimatorOptions, estimate

from conftest import ORACLE_OPTIONS, make_spec


def signed(s1, s0):
    """Conditional values (n_delta, 2, 1, 1, 1) from per-offset lists for each arm."""
    out = np.zeros((len(s1), 2, 1, 1, 1))
    out[:, 0, 0, 0, 0] = s0
    out[:, 1, 0, 0, 0] = s1
    return out


# ---- arithmetic ---------------------------------------------------------------------

def test_censoring_probabilities():
    c = np.array([1.0, 2.0, 3.0, 4.0])
    p = censoring_probabilities(c, 2.0, np.array([1.0, 2.0]))
    assert p["le_y"] == 0.5
    np.testing.assert_array_equal(p["window"], [0.5, 0.75])
    np.testing.assert_array_equal(p["ge_upper"], [0.5, 0.25])


def test_zero_derivative_envelope():
    s = np.zeros((2, 3))
    lb, ub = regression_dependence_envelope(s, 0.2, np.array([0.1, 0.3]), np.array([0.7, 0.5]))
    np.testing.assert_array_equal(lb, 0.0)
    np.testing.assert_allclose(ub, 0.2 + 0.5)


def test_degenerate_censoring_envelope():
    # all horizons at c0 well above y: no mass at or below y + delta
    c = np.full(100, 50.0)
    p = censoring_probabilities(c, 1.0, np.array([5.0, 10.0]))
    s = np.array([[0.3], [0.3]])
    lb, ub = regression_dependence_envelope(s, p["le_y"], p["window"], p["ge_upper"])
    assert p["le_y"] == 0 and np.all(p["window"] == 0) and np.all(p["ge_upper"] == 1)
    assert lb[0] == 0.3
    assert ub[0] == 1.0


def test_degenerate_censoring_has_no_default_offsets():
    t = simulate(make_spec(censoring={"kind": "degenerate", "value": 20.0}), 500, 1).table
    grid = default_delta_grid(t, [1.0, 2.0])
    assert all(d.size == 0 for d in grid.deltas)
    with pytest.raises(EmptyDeltaGrid):
        grid.check([0])


def test_default_delta_grid_respects_cell_size(small_table):
    yk = np.array([2.0, 5.0, 9.0])
    grid = default_delta_grid(small_table, yk, n_delta=8, min_cell=50)
    c = small_table.c
    for y, ds in zip(yk, grid.deltas):
        assert np.all(y + ds < small_table.gamma_c_hat)
        h = (small_table.gamma_c_hat - y) / 9 / 2
        for dl in ds:
            assert np.sum(np.abs(c - (y + dl)) <= h) >= 50


def test_delta_grid_validation():
    with pytest.raises(ValueError):
        DeltaGrid([1.0], (np.array([0.0]),))
    with pytest.raises(ValueError):
        DeltaGrid([1.0, 2.0], (np.array([1.0]),))


# ---- continuous relaxation -------------------------------------------------------------

def test_toy_relaxation():
    b = relaxation_from_values(signed([0.3, 0.4], [-0.1, -0.1]), [1.0], [0.5]).at(0.05)
    assert b.lb[1, 0, 0, 0] == pytest.approx(0.35, abs=1e-15)
    assert b.ub[1, 0, 0, 0] == pytest.approx(0.35, abs=1e-15)


def test_constant_values_collapse():
    b = relaxation_from_values(signed([0.3, 0.3, 0.3], [0.2, 0.2, 0.2]), [1.0], [0.5])
    assert b.lb[1, 0, 0, 0] == b.ub[1, 0, 0, 0] == 0.3
    assert b.lb[0, 0, 0, 0] == b.ub[0, 0, 0, 0] == 0.2
    assert b.dmte_lo[0, 0, 0] == b.dmte_hi[0, 0, 0] == pytest.approx(0.1)


def test_full_relaxation_contains_zero(oracle_40k):
    spec, table, est = oracle_40k
    b = bounds_continuous_relaxation(est.drfit, table, est.design, bbar=1.0)
    ks = list(b.ks)
    lo, hi = b.dmte_lo[ks], b.dmte_hi[ks]
    assert np.all(lo <= 0) and np.all(hi >= 0)
    assert np.all(hi - lo >= 2)


def test_width_at_zero_relaxation(oracle_40k):
    spec, table, est = oracle_40k
    env = relaxation_envelope(est.drfit, table, est.design)
    ks = list(env.ks)
    width = (env.ub - env.lb)[:, ks]
    np.testing.assert_array_equal(width, (env.s_max - env.s_min)[:, ks])


def test_dmte_bounds_move_linearly_in_bbar(oracle_40k):
    spec, table, est = oracle_40k
    env = relaxation_envelope(est.drfit, table, est.design)
    a = env.at(0.02)
    np.testing.assert_allclose(a.dmte_lo, env.dmte_lo - 0.04, atol=1e-14)
    np.testing.assert_allclose(a.dmte_hi, env.dmte_hi + 0.04, atol=1e-14)


# ---- regression dependence ------------------------------------------------------------

def test_regdep_bounds_ordered_and_monotone(oracle_40k):
    spec, table, est = oracle_40k
    b = bounds_regression_dependence(est.drfit, table, est.design)
    ks = list(b.ks)
    assert np.all(b.lb[:, ks] <= b.ub[:, ks])
    for arr in (b.lb, b.ub):
        sub = arr[:, ks]
        assert np.all(np.diff(sub, axis=1) >= 0)
        np.testing.assert_array_equal(monotonize_and_clamp(sub, axis=1), sub)


def test_regdep_point_inside_under_independence(oracle_40k):
    spec, table, est = oracle_40k
    b = bounds_regression_dependence(est.drfit, table, est.design)
    ks = list(b.ks)
    pt = est.surfaces.dmtr[:, ks]
    inside = (b.lb[:, ks] <= pt) & (pt <= b.ub[:, ks])
    rate = float(np.mean(~inside & ~b.flipped[:, ks]))
    assert rate <= 0.05, f"point estimate outside unflagged bounds at {rate:.1%} of cells"


def test_relax_point_inside_under_independence(oracle_40k):
    spec, table, est = oracle_40k
    b = bounds_continuous_relaxation(est.drfit, table, est.design, bbar=ROBUST_BBAR)
    ks = list(b.ks)
    pt = est.surfaces.dmtr[:, ks]
    inside = (b.lb[:, ks] <= pt) & (pt <= b.ub[:, ks])
    rate = float(np.mean(~inside & ~b.flipped[:, ks]))
    assert rate <= 0.05, f"point estimate outside unflagged bounds at {rate:.1%} of cells"


@pytest.fixture(scope="module")
def negreg_40k():
    spec = make_spec(dependence={"kind": "negRegDep", "kappa": 0.8})
    table = simulate(spec, 40_000, 0).table
    est = estimate(table, EstimatorOptions(**ORACLE_OPTIONS))
    b = bounds_regression_dependence(est.drfit, table, est.design)
    tc = true_curves(spec, est.surfaces.y, est.surfaces.v)
    return b, tc


def test_negative_dependence_dmtr_inside_bounds(negreg_40k):
    b, tc = negreg_40k
    ks = list(b.ks)
    truth = tc.dmtr[:, ks]
    share = float(np.mean((b.lb[:, ks][..., 0] <= truth) & (truth <= b.ub[:, ks][..., 0])))
    assert share >= 0.95, f"true DMTR inside bounds at {share:.1%} of grid points"


def test_negative_dependence_dmte_inside_bounds(negreg_40k):
    b, tc = negreg_40k
    ks = list(b.ks)
    truth = tc.dmte[ks]
    share = float(np.mean((b.dmte_lo[ks][..., 0] <= truth) & (truth <= b.dmte_hi[ks][..., 0])))
    assert share >= 0.95, f"true DMTE inside bounds at {share:.1%} of grid points"


# ---- breakdown -----------------------------------------------------------------------

def test_breakdown_zero_when_bounds_straddle():
    b = relaxation_from_values(signed([0.3, 0.4], [0.2, 0.5]), [1.0], [0.5])
    assert b.dmte_lo[0, 0, 0] <= 0 <= b.dmte_hi[0, 0, 0]
    assert breakdown_from_surface(b, 0) == 0.0


def test_breakdown_closed_form_example():
    # lower DMTE bound at bbar = 0 is max s1 - max s0 = 0.08
    b = relaxation_from_values(signed([0.5, 0.5], [0.42, 0.42]), [1.0], [0.5])
    assert b.dmte_lo[0, 0, 0] == pytest.approx(0.08)
    bb = breakdown_from_surface(b, 0)
    assert bb == pytest.approx(0.04, abs=1e-12)
    assert abs(bb - breakdown_bisection(b, 0)) <= 1e-9


def test_breakdown_worst_v_and_negative_side():
    s = np.zeros((2, 2, 1, 3, 1))
    s[:, 1, 0, :, 0] = [[0.1, 0.2, 0.1]] * 2
    s[:, 0, 0, :, 0] = [[0.3, 0.15, 0.2]] * 2
    b = relaxation_from_values(s, [1.0], [0.3, 0.5, 0.7])
    # per v: dmte bounds are the single value s1 - s0 = (-0.2, 0.05, -0.1)
    assert breakdown_from_surface(b, 0) == pytest.approx(0.1, abs=1e-12)


def test_robust_flag():
    assert is_robust(0.1) and is_robust(0.3)
    assert not is_robust(0.099) and not is_robust(float("nan"))


def test_breakdown_matches_bisection_on_data(oracle_40k):
    spec, table, est = oracle_40k
    env = relaxation_envelope(est.drfit, table, est.design)
    curve = breakdown_curve(env)
    for k, bb in curve.items():
        assert abs(bb - breakdown_bisection(env, k)) <= 1e-9
        lo, hi = env.at(bb).dmte_lo[k], env.at(bb).dmte_hi[k]
        assert np.all((lo <= 0) & (hi >= 0))
        if bb > 0:
            lo, hi = env.at(bb * (1 - 1e-6)).dmte_lo[k], env.at(bb * (1 - 1e-6)).dmte_hi[k]
            assert np.any((lo > 0) | (hi < 0))


def test_breakdown_point_wrapper(oracle_40k):
    spec, table, est = oracle_40k
    env = relaxation_envelope(est.drfit, table, est.design)
    k = env.ks[len(env.ks) // 2]
    assert breakdown_point(est.drfit, table, est.design, None, k) == breakdown_from_surface(env, k)


def test_rows_format(oracle_40k):
    spec, table, est = oracle_40k
    b = bounds_continuous_relaxation(est.drfit, table, est.design, bbar=0.05)
    rows = b.to_rows()
    assert len(rows) == len(b.ks) * len(b.v) * (len(b.x_levels) + 1)
    assert rows[0][5:] == ("relax", 0.05)
