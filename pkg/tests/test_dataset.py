import numpy as np
import pytest

from censmte.dataset import (ColumnMap, ObservationTable, apply_caseload_filter,
                             build_leave_one_out_instrument, load_csv, save_csv)
from censmte.errors import (EmptyResult, InvariantViolation, MissingColumn, ParseError,
                            SingletonDecider)
from censmte.oracle import simulate

from conftest import make_spec


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_four_row_file(tmp_path):
    f = write(tmp_path / "a.csv", "y,c,d,z\n1,5,0,0.1\n2,5,1,0.2\n3,5,0,0.3\n4,5,1,0.4\n")
    t = load_csv(f)
    assert t.n == 4
    assert t.gamma_c_hat == 5.0
    assert t.counts() == {"all": {"n": 4, "treated": 2, "untreated": 2}}
    np.testing.assert_array_equal(t.y, [1, 2, 3, 4])


def test_y_above_c_is_rejected(tmp_path):
    f = write(tmp_path / "a.csv", "y,c,d,z\n1,5,0,0.1\n6,5,1,0.2\n")
    with pytest.raises(InvariantViolation) as info:
        load_csv(f)
    assert info.value.details["row"] == 2


def test_missing_column(tmp_path):
    f = write(tmp_path / "a.csv", "y,c,d\n1,5,0\n")
    with pytest.raises(MissingColumn):
        load_csv(f)
    with pytest.raises(MissingColumn):
        load_csv(write(tmp_path / "b.csv", "y,c,d,z\n1,5,0,0\n"), ColumnMap(cluster="court"))


def test_parse_error_reports_row_and_column(tmp_path):
    f = write(tmp_path / "a.csv", "y,c,d,z\n1,5,0,0.1\n2,5,1,abc\n")
    with pytest.raises(ParseError) as info:
        load_csv(f)
    assert info.value.details["row"] == 2
    assert info.value.details["column"] == "z"


def test_column_mapping(tmp_path):
    f = write(tmp_path / "a.csv", "dur,hor,trt,inst,dist\n1,5,0,0.1,A\n2,5,1,0.2,B\n")
    t = load_csv(f, ColumnMap(y="dur", c="hor", d="trt", z="inst", x="dist"))
    assert t.x_levels == ("A", "B")
    # cluster defaults to the covariate level
    assert list(t.cluster_labels) == ["A", "B"]


@pytest.mark.parametrize("d", [[0, 2], [0, 0.5]])
def test_treatment_must_be_binary(d):
    with pytest.raises(InvariantViolation):
        ObservationTable.from_arrays([1, 1], [2, 2], d, [0, 1])


def test_negative_duration():
    with pytest.raises(InvariantViolation):
        ObservationTable.from_arrays([-1, 1], [2, 2], [0, 1], [0, 1])


def test_overlap_validation():
    with pytest.raises(InvariantViolation):
        ObservationTable.from_arrays([1, 1, 1], [2, 2, 2], [0, 1, 1], [0, 1, 2],
                                     x=["a", "a", "b"], validate_overlap=True)


def test_round_trip_large(tmp_path):
    spec = make_spec(covariates={"levels": ["n", "s"], "shares": [0.6, 0.4]},
                     clusters={"count": 7})
    t = simulate(spec, 43_468, 3).table
    path = tmp_path / "dump.csv"
    save_csv(t, path)
    back = load_csv(path, ColumnMap(cluster="cluster"))
    assert back.n == 43_468
    assert back.equals(t)


def test_round_trip_with_deciders(tmp_path):
    spec = make_spec(deciders={"count": 9})
    t = simulate(spec, 300, 1).table
    save_csv(t, tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv", ColumnMap(cluster="cluster", decider="decider"))
    assert back.equals(t)


def _table_with_deciders(d, dec, x=None):
    n = len(d)
    return ObservationTable.from_arrays(np.ones(n), np.full(n, 2.0), d, np.zeros(n), x=x,
                                        decider=dec)


def test_leave_one_out_arithmetic():
    t = _table_with_deciders([1, 0, 1, 0, 1], ["a", "a", "a", "b", "b"])
    out = build_leave_one_out_instrument(t, clip=False)
    np.testing.assert_allclose(out.z[:3], [0.5, 1.0, 0.5])
    np.testing.assert_allclose(out.z[3:], [1.0, 0.0])


def test_singleton_decider():
    t = _table_with_deciders([1, 0, 1], ["a", "a", "b"])
    with pytest.raises(SingletonDecider) as info:
        build_leave_one_out_instrument(t)
    assert info.value.details["decider"] == "b"


def test_leave_one_out_ignores_own_treatment():
    rng = np.random.default_rng(0)
    d = rng.integers(0, 2, 60)
    dec = np.repeat(["a", "b", "c"], 20)
    base = build_leave_one_out_instrument(_table_with_deciders(d, dec), clip=False).z
    for i in (0, 25, 59):
        d2 = d.copy()
        d2[i] = 1 - d2[i]
        z2 = build_leave_one_out_instrument(_table_with_deciders(d2, dec), clip=False).z
        assert z2[i] == base[i]
        same = (dec == dec[i]) & (np.arange(60) != i)
        assert np.all(z2[same] != base[same])
        assert np.array_equal(z2[dec != dec[i]], base[dec != dec[i]])


def test_leave_one_out_clipping_matches_ranges():
    spec = make_spec(deciders={"count": 30})
    t = simulate(spec, 3000, 4).table
    out = build_leave_one_out_instrument(t)
    lo, hi = out.diagnostics["instrument_range"]
    for arm in (0, 1):
        z = t.with_instrument(build_leave_one_out_instrument(t, clip=False).z).z[t.d == arm]
        # the intersection is bounded by each arm's own extremes
        assert z.min() <= lo and z.max() >= hi
    assert out.z.min() == lo and out.z.max() == hi
    assert np.all((out.z >= lo) & (out.z <= hi))
    assert out.diagnostics["instrument_rows_dropped"] == t.n - out.n


def test_leave_one_out_recovers_judge_propensity():
    spec = make_spec(deciders={"count": 50})
    t = simulate(spec, 5000, 8).table
    out = build_leave_one_out_instrument(t, clip=False)
    # each judge's true treatment rate is P(z_j) since V is uniform and P does not depend on c
    q = np.clip(0.2 + 0.6 * t.z, 0, 1)
    assert np.all(np.abs(out.z - q) <= 3 / np.sqrt(99))


def test_caseload_filter_removes_small_deciders():
    dec = ["a"] * 19 + ["b"] * 20 + ["c"] * 25
    d = np.arange(64) % 2
    t = _table_with_deciders(d, dec)
    out = apply_caseload_filter(t, 20, 2)
    assert set(out.decider_labels) == {"b", "c"}
    assert out.n == 45


def test_caseload_filter_drops_thin_levels():
    dec = ["a"] * 20 + ["b"] * 20 + ["c"] * 20
    x = ["n"] * 40 + ["s"] * 20
    t = _table_with_deciders(np.arange(60) % 2, dec, x)
    out = apply_caseload_filter(t, 20, 2)
    assert out.x_levels == ("n",)
    assert out.n == 40


def test_caseload_filter_idempotent_and_monotone():
    rng = np.random.default_rng(3)
    dec = rng.integers(0, 40, 800).astype(str)
    x = np.where(rng.random(800) < 0.5, "n", "s")
    t = _table_with_deciders(rng.integers(0, 2, 800), dec, x)
    once = apply_caseload_filter(t, 20, 2)
    twice = apply_caseload_filter(once, 20, 2)
    assert once.equals(twice)
    assert once.n <= t.n


def test_caseload_filter_empty():
    t = _table_with_deciders([0, 1, 0], ["a", "a", "b"])
    with pytest.raises(EmptyResult):
        apply_caseload_filter(t, 20, 2)


def test_filters_need_deciders(small_table):
    with pytest.raises(InvariantViolation):
        apply_caseload_filter(small_table)
    with pytest.raises(InvariantViolation):
        build_leave_one_out_instrument(small_table)


def test_error_payload_is_json_ready(tmp_path):
    f = write(tmp_path / "a.csv", "y,c,d,z\n1,5,0,x\n")
    try:
        load_csv(f)
    except ParseError as exc:
        payload = exc.to_dict()
    assert payload["error"] == "parse_error"
    assert payload["row"] == 1 and payload["column"] == "z"
