import io
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bvsurv.data import (SurvivalDataset, TiedTimesWarning, ingest_dataset, model_id,
                         resort, sort_by_time, standardize, submatrix)
from bvsurv.exceptions import DataValidationError


def test_ingest_three_rows():
    text = "time,status,x\n1.0,1,0.5\n2.0,0,0.1\n3.0,1,-0.2\n"
    d = ingest_dataset(text)
    assert d.n == 3 and d.p == 1
    assert list(d.status) == [1, 0, 1]
    assert d.censoring_fraction == pytest.approx(1 / 3)


def test_ingest_rejects_bad_status_with_row():
    text = "time,status,x\n1.0,1,0.5\n2.0,2,0.1\n"
    with pytest.raises(DataValidationError, match="row 2"):
        ingest_dataset(text)


def test_ingest_rejects_missing_and_text_cells():
    with pytest.raises(DataValidationError, match="missing"):
        ingest_dataset("time,status,x\n1.0,1,\n2.0,1,0.1\n")
    with pytest.raises(DataValidationError, match="non-numeric time"):
        ingest_dataset("time,status,x\nabc,1,1\n2.0,1,0.1\n")
    with pytest.raises(DataValidationError, match="no covariate"):
        ingest_dataset("time,status\n1,1\n2,1\n")
    with pytest.raises(DataValidationError, match="only fixed"):
        ingest_dataset("time,status,g\n1,1,a\n2,1,b\n")


def test_ingest_reference_codes_categorical_fixed():
    text = ("time,status,stage,x\n1,1,1,0.1\n2,1,2,0.2\n3,0,3,0.3\n4,1,2,0.4\n")
    d = ingest_dataset(text, fixed_cols=["stage"], categorical_cols=["stage"])
    assert d.column_names == ("stage 2", "stage 3", "x")
    assert d.fixed_columns == (0, 1)
    np.testing.assert_array_equal(d.design[:, :2], [[0, 0], [1, 0], [0, 1], [1, 0]])


def test_ingest_tsv_autodetect():
    d = ingest_dataset(io.StringIO("time\tstatus\tx\n1\t1\t0\n2\t1\t1\n"))
    assert d.p == 1


def test_wide_ingest_records_p():
    rng = np.random.default_rng(0)
    n, p = 20, 1500
    X = rng.standard_normal((n, p))
    header = "time,status," + ",".join(f"g{j}" for j in range(p))
    rows = [f"{i + 1},{i % 2}," + ",".join(f"{v:.4f}" for v in X[i]) for i in range(n)]
    d = ingest_dataset("\n".join([header, *rows]) + "\n")
    assert d.p == p


def test_sort_by_time_permutation():
    d = sort_by_time([3, 1, 2], [1, 1, 0], np.array([[30.0], [10.0], [20.0]]))
    np.testing.assert_array_equal(d.times, [1, 2, 3])
    np.testing.assert_array_equal(d.status, [1, 0, 1])
    np.testing.assert_array_equal(d.design[:, 0], [10, 20, 30])
    np.testing.assert_array_equal(d.order, [1, 2, 0])


def test_sorted_input_identity():
    d = sort_by_time([1, 2, 3], [1, 0, 1], np.eye(3))
    np.testing.assert_array_equal(d.order, [0, 1, 2])


def test_ties_events_first_and_warning():
    with pytest.warns(TiedTimesWarning):
        d = sort_by_time([2, 2, 1], [0, 1, 1], np.array([[1.0], [2.0], [3.0]]))
    np.testing.assert_array_equal(d.status, [1, 1, 0])
    np.testing.assert_array_equal(d.design[:, 0], [3, 2, 1])
    assert d.has_ties


def test_dataset_invariants_enforced():
    with pytest.raises(DataValidationError, match="no events"):
        sort_by_time([1, 2], [0, 0], np.ones((2, 1)))
    with pytest.raises(DataValidationError, match="non-finite"):
        sort_by_time([1, 2], [1, 0], np.array([[np.nan], [1.0]]))
    with pytest.raises(DataValidationError, match="length"):
        sort_by_time([1, 2], [1], np.ones((2, 1)))
    with pytest.raises(DataValidationError, match="sorted"):
        SurvivalDataset(np.array([2.0, 1.0]), np.array([1, 1]), np.ones((2, 1)), ("a",))
    with pytest.raises(DataValidationError, match="fixed"):
        sort_by_time([1, 2], [1, 0], np.ones((2, 1)), fixed_columns=(3,))


def test_dataset_is_read_only_and_copies():
    X = np.ones((2, 1))
    d = sort_by_time([1, 2], [1, 0], X)
    with pytest.raises(ValueError):
        d.design[0, 0] = 5.0
    X[0, 0] = 7.0
    assert d.design[0, 0] == 1.0


def test_submatrix():
    X = np.arange(9.0).reshape(3, 3)
    d = sort_by_time([1, 2, 3], [1, 1, 1], X, fixed_columns=(0,))
    np.testing.assert_array_equal(submatrix(d, (1,)), X[:, [1]])
    np.testing.assert_array_equal(submatrix(d, d.fixed_columns), X[:, [0]])
    np.testing.assert_array_equal(submatrix(d, (0, 1, 2)), X)
    with pytest.raises(IndexError):
        submatrix(d, (3,))


def test_case1_submatrix_shape():
    from bvsurv.simulate import simulate_dataset
    d, _ = simulate_dataset("1", 400, 1000, seed=0)
    assert submatrix(d, (0, 3, 4)).shape == (400, 3)


def test_model_id_includes_fixed():
    assert model_id([5, 2, 2], fixed=(0,)) == (0, 2, 5)


def test_standardize_records_scale():
    rng = np.random.default_rng(1)
    X = rng.normal(3.0, 2.0, size=(50, 3))
    d = standardize(sort_by_time(rng.exponential(size=50), np.ones(50), X, fixed_columns=(0,)))
    np.testing.assert_allclose(d.design[:, 1:].std(axis=0), 1.0)
    np.testing.assert_allclose(d.design[:, 0], sort_by_time(d.times, np.ones(50), X[d.order]).design[:, 0])
    assert d.scale[0] == 1.0 and d.center[0] == 0.0


def test_subset_keeps_order_mapping():
    rng = np.random.default_rng(2)
    d = sort_by_time(rng.exponential(size=10), np.ones(10), rng.standard_normal((10, 2)))
    s = d.subset([7, 2, 5])
    np.testing.assert_array_equal(s.order, d.order[[2, 5, 7]])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 100.0, allow_nan=False), min_size=2, max_size=30),
       st.integers(0, 2**31 - 1))
def test_sort_idempotent(times, seed):
    rng = np.random.default_rng(seed)
    n = len(times)
    status = rng.integers(0, 2, n)
    status[0] = 1
    X = rng.standard_normal((n, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TiedTimesWarning)
        once = sort_by_time(times, status, X)
        twice = resort(once)
    np.testing.assert_array_equal(once.times, twice.times)
    np.testing.assert_array_equal(once.status, twice.status)
    np.testing.assert_array_equal(once.design, twice.design)
    np.testing.assert_array_equal(once.order, twice.order)
    assert np.all(np.diff(once.times) >= 0)
