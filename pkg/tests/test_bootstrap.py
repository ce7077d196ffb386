import warnings

import numpy as np
import pytest

from censmte.bootstrap import (BootstrapPlan, band_from_replicates, replicate_weights,
                               run_bootstrap)
from censmte.errors import ReplicateFailure
from censmte.oracle import simulate
from censmte.pipeline import EstimatorOptions, estimate

from conftest import make_spec

OPTS = EstimatorOptions(grid_size=8, n_v=5, tau_grid=(0.25, 0.5))


@pytest.fixture(scope="module")
def clustered():
    t = simulate(make_spec(clusters={"count": 15}), 1500, 21).table
    return t, estimate(t, OPTS)


def test_single_replicate_half_width(clustered):
    t, point = clustered
    cb = run_bootstrap(t, point, BootstrapPlan(B=1, keep_replicates=True), OPTS)
    for name, band in cb.bands.items():
        rep = cb.replicates[name][0]
        ok = band.identified
        np.testing.assert_array_equal(band.crit[ok], np.abs(rep - band.estimate)[ok])


def test_unit_weights_give_zero_width(clustered):
    t, point = clustered
    cb = run_bootstrap(t, point, BootstrapPlan(B=3, weight_law="ones"), OPTS)
    for band in cb.bands.values():
        assert np.all(band.crit[band.identified] == 0.0)


def test_bands_are_symmetric(clustered):
    t, point = clustered
    cb = run_bootstrap(t, point, BootstrapPlan(B=9, seed=4), OPTS)
    for band in cb.bands.values():
        ok = band.identified
        assert np.all(band.crit[ok] >= 0)
        np.testing.assert_array_equal(band.hi[ok], band.estimate[ok] + band.crit[ok])
        np.testing.assert_array_equal(band.lo[ok], band.estimate[ok] - band.crit[ok])


def test_same_seed_any_worker_count(clustered):
    t, point = clustered
    plan = BootstrapPlan(B=4, seed=77, keep_replicates=True)
    a = run_bootstrap(t, point, plan, OPTS, workers=1)
    b = run_bootstrap(t, point, plan, OPTS, workers=2)
    for name in a.bands:
        assert np.array_equal(a.replicates[name], b.replicates[name], equal_nan=True)
        assert np.array_equal(a[name].crit, b[name].crit, equal_nan=True)


def test_replicate_stream_is_isolated(clustered):
    t, _ = clustered
    w5 = replicate_weights(BootstrapPlan(B=10, seed=3), 5, t)
    w5_again = replicate_weights(BootstrapPlan(B=500, seed=3), 5, t)
    assert np.array_equal(w5, w5_again)
    assert not np.array_equal(w5, replicate_weights(BootstrapPlan(B=10, seed=4), 5, t))


def test_cluster_weights_are_constant_within_cluster(clustered):
    t, _ = clustered
    w = replicate_weights(BootstrapPlan(), 0, t)
    for g in np.unique(t.cluster):
        assert np.ptp(w[t.cluster == g]) == 0


@pytest.mark.parametrize("law", ["exponential", "poisson"])
def test_weight_moments(law):
    t = simulate(make_spec(), 200_000, 1).table
    w = replicate_weights(BootstrapPlan(weight_law=law, cluster_level=False), 0, t)
    assert abs(w.mean() - 1) < 0.01
    assert abs(w.var() - 1) < 0.02
    assert np.all(w >= 0)


def test_alpha_monotonicity():
    rng = np.random.default_rng(0)
    est = rng.normal(size=(4, 3))
    reps = est + rng.normal(size=(50, 4, 3))
    crits = [band_from_replicates(est, reps, a).crit for a in (0.01, 0.05, 0.1, 0.2, 0.5)]
    for lo, hi in zip(crits[1:], crits[:-1]):
        assert np.all(lo <= hi)


def test_identification_share():
    est = np.array([0.0, 0.0])
    reps = np.zeros((20, 2))
    reps[0, 0] = np.nan          # 19/20 = 95% finite: still identified
    reps[:2, 1] = np.nan         # 90%: not identified
    b = band_from_replicates(est, reps, 0.1)
    assert b.identified.tolist() == [True, False]
    assert np.isnan(b.crit[1])


def test_single_cluster_falls_back_to_rows(small_table):
    opts = EstimatorOptions(grid_size=6, n_v=3, tau_grid=(0.5,))
    point = estimate(small_table, opts)
    with pytest.warns(RuntimeWarning, match="one cluster"):
        cb = run_bootstrap(small_table, point, BootstrapPlan(B=2), opts)
    assert cb.plan.cluster_level is False
    assert cb.warnings


def test_too_many_failures(clustered, monkeypatch):
    t, point = clustered
    import censmte.bootstrap as bs
    real = bs.estimate
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] % 2:
            raise np.linalg.LinAlgError("singular")
        return real(*args, **kwargs)

    monkeypatch.setattr(bs, "estimate", flaky)
    with pytest.raises(ReplicateFailure):
        run_bootstrap(t, point, BootstrapPlan(B=4), OPTS)


def test_plan_validation():
    for bad in ({"B": 0}, {"alpha": 1.0}, {"weight_law": "normal"}, {"seed": -1}):
        with pytest.raises(ValueError):
            BootstrapPlan(**bad)
