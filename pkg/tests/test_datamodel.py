import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mbiv.datamodel import (
    Dataset,
    corr_matrix,
    cov_to_corr,
    load_csv,
    log_transform,
    partial_corr,
    skewness,
    standardize,
    write_csv,
)
from mbiv.errors import DataError, NumericError
from mbiv.sem import iv_basic, population_covariance, sample, scenario


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- load_csv ------------------------------------------------------------------


def test_load_csv_basic(tmp_path):
    ds = load_csv(_write(tmp_path, "a,b\n1,2\n3,4\n5,6\n"))
    assert ds.names == ("a", "b")
    assert ds.n == 3
    np.testing.assert_array_equal(ds["b"], [2, 4, 6])
    assert ds.transforms == {"a": (), "b": ()}


def test_load_csv_na_cell_names_row_and_column(tmp_path):
    with pytest.raises(DataError, match=r"row 2, column b"):
        load_csv(_write(tmp_path, "a,b\n1,NA\n3,4\n"))


def test_load_csv_headerless(tmp_path):
    ds = load_csv(_write(tmp_path, "1,2,3\n4,5,6\n"), header=False)
    assert ds.names == ("v1", "v2", "v3")
    assert ds.n == 2


@pytest.mark.parametrize(
    "text, msg",
    [
        ("a,b\n1,2\n3\n", "ragged row 3"),
        ("a,a\n1,2\n", "duplicate"),
        ("a,b\n", "no data rows"),
        ("a,b\n1,inf\n", "non-finite"),
    ],
)
def test_load_csv_errors(tmp_path, text, msg):
    with pytest.raises(DataError, match=msg):
        load_csv(_write(tmp_path, text))


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(DataError, match="no such file"):
        load_csv(tmp_path / "nope.csv")


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.floats(-1e6, 1e6, allow_nan=False).map(lambda v: float(f"{v:.15g}")),
                         min_size=2, max_size=2), min_size=1, max_size=20))
def test_csv_round_trip_bit_identical(tmp_path_factory, rows):
    ds = Dataset(("a", "b"), np.array(rows))
    p = tmp_path_factory.mktemp("rt") / "x.csv"
    write_csv(ds, p)
    back = load_csv(p)
    assert back.names == ds.names
    assert np.array_equal(back.values, ds.values)


def test_dataset_invariants():
    with pytest.raises(DataError):
        Dataset(("a", "a"), np.zeros((2, 2)))
    with pytest.raises(DataError):
        Dataset(("a", ""), np.zeros((2, 2)))
    with pytest.raises(DataError, match="non-finite"):
        Dataset(("a",), np.array([[1.0], [np.nan]]))
    with pytest.raises(DataError):
        Dataset(("a",), np.zeros((0, 1)))
    with pytest.raises(DataError, match="unequal"):
        Dataset.from_columns({"a": [1, 2], "b": [1]})
    ds = Dataset.from_columns({"a": [1, 2], "b": [3, 4]})
    with pytest.raises(ValueError):
        ds.values[0, 0] = 9.0  # read-only
    with pytest.raises(DataError, match="unknown column"):
        ds.column("c")


# -- transforms -------------------------------------------------------------------


def test_log_transform():
    ds = Dataset.from_columns({"a": [1, math.e, math.e**2], "b": [1, 2, 3]})
    out = log_transform(ds, ["a"])
    np.testing.assert_allclose(out["a"], [0, 1, 2], atol=1e-15)
    np.testing.assert_array_equal(out["b"], ds["b"])
    assert out.transforms["a"] == ("logged",)
    assert out.transforms["b"] == ()


def test_log_transform_rejects_zero_and_names_row():
    ds = Dataset.from_columns({"a": [1.0, 0.0, 2.0]})
    with pytest.raises(DataError, match="row 2"):
        log_transform(ds, ["a"])
    with pytest.raises(DataError):
        log_transform(ds, ["zzz"])


def test_log_transform_empty_is_identity():
    ds = Dataset.from_columns({"a": [1.0, 2.0]})
    assert log_transform(ds, []) is ds


def test_standardize():
    ds = Dataset.from_columns({"a": [1.0, 2.0, 3.0], "b": [5.0, 5.0, 5.0]})
    out = standardize(ds, ["a"])
    a = out["a"]
    assert abs(a.mean()) < 1e-12 and abs(a.std(ddof=1) - 1) < 1e-12
    assert out.transforms["a"] == ("standardized",)
    with pytest.raises(NumericError, match="constant"):
        standardize(ds, ["b"])
    with pytest.raises(DataError):
        standardize(ds, ["c"])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=3, max_size=40))
def test_standardize_idempotent(vals):
    v = np.array(vals)
    if v.std() < 1e-6 * max(1.0, np.abs(v).max()):
        return
    once = standardize(Dataset.from_columns({"a": v}))
    twice = standardize(once)
    np.testing.assert_allclose(twice["a"], once["a"], atol=1e-12)


def test_skewness():
    assert skewness([-1, 0, 1]) == 0.0
    assert skewness([0, 0, 0, 10]) > 0
    rng = np.random.default_rng(11)
    assert skewness(np.exp(rng.standard_normal(10_000))) > 1
    with pytest.raises(NumericError):
        skewness([2, 2, 2])
    with pytest.raises(DataError):
        skewness([1, 2])


# -- correlations ---------------------------------------------------------------------


def test_corr_matrix_basic():
    x = np.array([1.0, 2.0, 4.0, 7.0])
    R = corr_matrix(Dataset.from_columns({"x": x, "nx": -x}))
    assert R["x", "x"] == 1.0
    assert R["x", "nx"] == pytest.approx(-1.0, abs=1e-15)
    assert np.array_equal(R.matrix, R.matrix.T)
    with pytest.raises(NumericError):
        corr_matrix(Dataset.from_columns({"x": x, "c": [1.0] * 4}))


def test_corr_matrix_iv_scenario():
    ds = sample(iv_basic(alpha1=0.8, r=0.0), 100_000, seed=4)
    assert corr_matrix(ds)["z", "x"] == pytest.approx(0.8 / math.sqrt(1.64), abs=0.02)


def test_corr_table_csv(tmp_path):
    R = corr_matrix(Dataset.from_columns({"a": [1.0, 2.0, 3.0], "b": [1.0, 3.0, 2.0]}))
    R.to_csv(tmp_path / "r.csv")
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0] == ",a,b"
    assert rows[1].startswith("a,1.0,")


@pytest.mark.parametrize("name", ["iv_basic", "mb_reduced", "rent_price_sem"])
def test_empirical_corr_converges(name):
    sem = scenario(name)
    ds = sample(sem, 1_000_000, seed=2)
    R = corr_matrix(ds).matrix
    P = cov_to_corr(population_covariance(sem, observed=True))
    assert np.max(np.abs(R - P)) < 0.01


def _chain_cov():
    # z -> x -> y, unit weights and noises
    W = np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], float)
    A = np.linalg.inv(np.eye(3) - W)
    return A.T @ A


def test_partial_corr_cases():
    S = _chain_cov()
    assert partial_corr(S, 0, 2) == pytest.approx(S[0, 2] / math.sqrt(S[0, 0] * S[2, 2]), abs=1e-15)
    assert abs(partial_corr(S, 0, 2, [1])) < 1e-10
    # collider z -> m <- y
    W = np.array([[0, 1, 0], [0, 0, 0], [0, 1, 0]], float)
    A = np.linalg.inv(np.eye(3) - W)
    C = A.T @ A
    assert abs(partial_corr(C, 0, 2)) < 1e-12
    assert abs(partial_corr(C, 0, 2, [1])) > 0.1
    with pytest.raises(DataError):
        partial_corr(S, 0, 0)
    with pytest.raises(NumericError):
        partial_corr(np.ones((3, 3)), 0, 1, [2])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_partial_corr_equals_residual_correlation(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((200, 5)) @ rng.standard_normal((5, 5))
    S = np.cov(X, rowvar=False)
    Xc = X - X.mean(axis=0)
    Z = Xc[:, [2, 3]]
    ri = Xc[:, 0] - Z @ np.linalg.lstsq(Z, Xc[:, 0], rcond=None)[0]
    rj = Xc[:, 1] - Z @ np.linalg.lstsq(Z, Xc[:, 1], rcond=None)[0]
    ref = ri @ rj / math.sqrt((ri @ ri) * (rj @ rj))
    assert partial_corr(S, 0, 1, [2, 3]) == pytest.approx(ref, abs=1e-10)
