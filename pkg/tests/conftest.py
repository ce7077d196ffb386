import warnings

import numpy as np
import pytest

from censmte.oracle import DgpSpec, simulate

BASE = {
    "instrument": {"low": 0.0, "high": 1.0},
    "propensity": {"p0": 0.2, "pz": 0.6},
    "censoring": {"kind": "uniform", "low": 2.0, "high": 10.0},
    "outcomes": {"kind": "exponential", "a0": 1.0, "b0": 1.0, "a1": 0.5, "b1": 2.0},
}


def make_spec(**overrides) -> DgpSpec:
    obj = {k: dict(v) for k, v in BASE.items()}
    for key, val in overrides.items():
        obj[key] = val
    return DgpSpec.from_dict(obj)


@pytest.fixture(scope="session")
def base_spec():
    return make_spec()


@pytest.fixture(scope="session")
def small_table(base_spec):
    return simulate(base_spec, 4000, 11).table


@pytest.fixture(scope="session")
def small_estimate(small_table):
    from censmte.pipeline import EstimatorOptions, estimate
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return estimate(small_table, EstimatorOptions(grid_size=24, n_v=9))


@pytest.fixture(scope="session")
def multi_x_table():
    spec = make_spec(covariates={"levels": ["north", "south", "west"], "shares": [0.5, 0.3, 0.2],
                                 "rate_mult": [1.0, 1.3, 0.8], "p_shift": [0.0, 0.05, -0.05]},
                     clusters={"count": 12})
    return simulate(spec, 6000, 5).table


@pytest.fixture(scope="session")
def multi_x_estimate(multi_x_table):
    from censmte.pipeline import EstimatorOptions, estimate
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return estimate(multi_x_table, EstimatorOptions(grid_size=16, n_v=7))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ORACLE_OPTIONS = dict(p_basis="poly2", n_v=11, grid_size=32)


@pytest.fixture(scope="session")
def oracle_40k():
    """n = 40,000 draw of the independent-censoring exponential oracle with its estimate."""
    from censmte.pipeline import EstimatorOptions, estimate
    spec = make_spec()
    table = simulate(spec, 40_000, 0).table
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = estimate(table, EstimatorOptions(**ORACLE_OPTIONS))
    return spec, table, est


_VERDICTS = []


def record_verdict(line: str) -> None:
    """Print an acceptance verdict now and keep it for the end-of-run summary."""
    _VERDICTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
