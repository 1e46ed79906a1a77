import numpy as np
import pandas as pd
import pytest

from threepart import (ColumnSpec, Dataset, PriorSpec, RegressorSpec,
                       build_dataset, identify, leading_block)
from threepart.data import CovarianceState, DesignInfo
from threepart.errors import DataError, DecompositionError, SchemaError


def _basic_frame():
    return pd.DataFrame({
        "A": [0, 1, 1, 1, 0, 1],
        "C": [np.nan, 0, 1, 1, np.nan, 0],
        "Y": [np.nan, np.nan, 12.0, 3.0, np.nan, np.nan],
        "x": [0.1, -0.2, 0.5, 1.0, -1.0, 0.0],
        "grp": ["low", "mid", "mid", "high", "low", "low"],
        "w": [1.0, 2.0, 1.5, 1.0, 1.0, 3.0],
        "m": ["m1", "m1", "m2", "m2", "m1", "m2"],
    })


def _basic_spec(**kwargs):
    return ColumnSpec(
        access="A", use="C", quantity="Y", weight="w", market="m",
        regressors=(
            RegressorSpec(column="x", equations=("a", "c", "y")),
            RegressorSpec(column="grp", equations=("a",), kind="categorical", base="low"),
        ),
        **kwargs,
    )


def test_build_dataset_partition_and_designs():
    ds = build_dataset(_basic_frame(), _basic_spec())
    assert ds.groups.sizes == {1: 2, 2: 2, 3: 2}
    # intercept is prepended; categorical expands against its stated base
    assert ds.design.names["a"] == ["const", "x", "grp[high]", "grp[mid]"]
    assert ds.design.names["c"] == ["const", "x"]
    assert np.all(ds.x_a[:, 0] == 1.0)
    # designs exist for every row, including the no-access group
    assert ds.x_c.shape == (6, 2) and ds.x_y.shape == (6, 2)
    assert np.isnan(ds.use[ds.access == 0]).all()
    assert np.array_equal(np.isnan(ds.log_quantity), ds.use != 1.0)
    assert np.allclose(ds.log_quantity[2], np.log(12.0))


def test_consumer_without_access_is_corrected_and_counted():
    df = _basic_frame()
    df.loc[0, "C"] = 1
    df.loc[0, "Y"] = 5.0
    ds = build_dataset(df, _basic_spec())
    assert ds.access_corrections == 1
    assert ds.access[0] == 1
    assert ds.groups.codes[0] == 3


def test_partition_matches_survey_scale_counts():
    # 49,414 rows with 28,505 accessed and 1,159 consumers split into
    # 20,909 / 27,346 / 1,159
    n, n_acc, n_use = 49_414, 28_505, 1_159
    access = np.zeros(n, dtype=int)
    access[:n_acc] = 1
    use = np.full(n, np.nan)
    use[:n_acc] = 0.0
    use[:n_use] = 1.0
    qty = np.where(use == 1.0, 2.0, np.nan)
    df = pd.DataFrame({"A": access, "C": use, "Y": qty, "x": 0.0})
    spec = ColumnSpec(access="A", use="C", quantity="Y",
                      regressors=(RegressorSpec(column="x", equations=("a",)),))
    ds = build_dataset(df, spec)
    assert ds.groups.sizes == {1: 20_909, 2: 27_346, 3: 1_159}


def test_missing_quantity_for_consumer_lists_rows():
    df = _basic_frame()
    df.loc[2, "Y"] = np.nan
    with pytest.raises(DataError, match=r"\[2\]"):
        build_dataset(df, _basic_spec())


def test_unknown_category_is_a_schema_error():
    spec = ColumnSpec(
        access="A", use="C", quantity="Y",
        regressors=(RegressorSpec(column="grp", equations=("a",), kind="categorical",
                                  base="low", categories=("low", "mid")),),
    )
    with pytest.raises(SchemaError, match="high"):
        build_dataset(_basic_frame(), spec)


def test_missing_use_for_accessed_row_is_a_data_error():
    df = _basic_frame()
    df.loc[1, "C"] = np.nan
    with pytest.raises(DataError):
        build_dataset(df, _basic_spec())


def test_quantity_in_logs_flag():
    df = _basic_frame()
    df["Y"] = np.where(df["C"] == 1, -0.5, np.nan)  # already log scale
    spec = ColumnSpec(access="A", use="C", quantity="Y", quantity_in_logs=True,
                      regressors=(RegressorSpec(column="x", equations=("y",)),))
    ds = build_dataset(df, spec)
    assert np.allclose(ds.log_quantity[df["C"] == 1], -0.5)


def test_interaction_terms_multiply_dummy_and_log_value():
    df = pd.DataFrame({
        "A": [1, 1], "C": [1.0, 0.0], "Y": [4.0, np.nan],
        "age": ["20s", "30s"], "price": [10.0, 20.0],
    })
    spec = ColumnSpec(
        access="A", use="C", quantity="Y",
        regressors=(
            RegressorSpec(column="price", equations=("y",), kind="log"),
            RegressorSpec(column="age", equations=("y",), kind="categorical",
                          base="20s", interact_with="price"),
        ),
    )
    ds = build_dataset(df, spec)
    assert ds.design.names["y"] == ["const", "log(price)", "age[30s]*log(price)"]
    assert np.allclose(ds.x_y[0], [1.0, np.log(10.0), 0.0])
    assert np.allclose(ds.x_y[1], [1.0, np.log(20.0), np.log(20.0)])


def test_profile_row_matches_matrix_row():
    df = _basic_frame()
    ds = build_dataset(df, _basic_spec())
    profile = {"x": 0.5, "grp": "mid"}
    x_a, x_c, x_y = ds.design.profile_row(profile)
    assert np.allclose(x_a, [1.0, 0.5, 0.0, 1.0])
    assert np.allclose(x_c, [1.0, 0.5])
    with pytest.raises(SchemaError):
        ds.design.profile_row({"x": 0.5, "grp": "nope"})


def test_design_serialization_roundtrip():
    ds = build_dataset(_basic_frame(), _basic_spec())
    clone = DesignInfo.from_dict(ds.design.to_dict())
    assert clone.names == ds.design.names
    assert clone.terms == ds.design.terms


def test_reordered_carries_row_ids_and_records():
    ds = build_dataset(_basic_frame(), _basic_spec())
    perm = np.array([3, 1, 4, 0, 5, 2])
    shuffled = ds.reordered(perm)
    assert np.array_equal(shuffled.row_ids, perm)
    rec = shuffled.record(0)
    assert rec.access == 1 and rec.use == 1
    assert rec.log_quantity == pytest.approx(np.log(3.0))
    rec1 = ds.record(0)
    assert rec1.use is None and rec1.log_quantity is None


def test_leading_block_selector():
    m = np.arange(9).reshape(3, 3)
    assert np.array_equal(leading_block(m, 2), [[0, 1], [3, 4]])
    assert np.array_equal(leading_block(np.array([5, 6, 7]), 1), [5])


def test_nonpositive_weights_rejected():
    df = _basic_frame()
    df.loc[1, "w"] = 0.0
    with pytest.raises(DataError):
        build_dataset(df, _basic_spec())


# ---------------------------------------------------------------------------
# identification map
# ---------------------------------------------------------------------------

def test_identify_identity_and_diagonal():
    sigma, scale = identify(np.eye(3))
    assert np.array_equal(sigma, np.eye(3))
    assert np.allclose(scale, 1.0)
    sigma, scale = identify(np.diag([4.0, 9.0, 2.0]))
    assert np.allclose(sigma, np.diag([1.0, 1.0, 2.0]))
    assert np.allclose(scale, [0.5, 1.0 / 3.0, 1.0])


def test_identify_normalizes_to_correlations():
    rng = np.random.default_rng(3)
    for _ in range(50):
        chol = rng.standard_normal((3, 3)) * 0.4 + np.eye(3)
        omega = chol @ chol.T
        sigma, _ = identify(omega)
        assert sigma[0, 0] == 1.0 and sigma[1, 1] == 1.0
        expected = omega[0, 1] / np.sqrt(omega[0, 0] * omega[1, 1])
        assert sigma[0, 1] == pytest.approx(expected)
        assert -1.0 < sigma[0, 1] < 1.0
        np.linalg.cholesky(sigma)


def test_identify_is_idempotent_and_scale_invariant():
    rng = np.random.default_rng(4)
    chol = rng.standard_normal((3, 3)) * 0.3 + np.eye(3)
    omega = chol @ chol.T
    sigma, _ = identify(omega)
    again, scale = identify(sigma)
    assert np.allclose(again, sigma, atol=1e-14)
    assert np.allclose(scale, 1.0)
    d = np.diag([3.7, 0.2, 1.0])
    rescaled, _ = identify(d @ omega @ d)
    assert np.allclose(rescaled, sigma, atol=1e-12)


def test_identify_rejects_non_spd():
    with pytest.raises(DecompositionError):
        identify(np.array([[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))


def test_covariance_state_links_scales():
    state = CovarianceState.from_omega(np.diag([4.0, 1.0, 1.0]))
    assert state.sigma[0, 0] == 1.0
    assert state.omega[0, 0] == 4.0


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------

def test_prior_defaults_and_helpers():
    prior = PriorSpec()
    assert prior.r_dof == 5.0
    assert np.array_equal(prior.r_scale, np.eye(3))
    assert np.allclose(prior.theta_mean_vector(4), 0.0)
    assert np.allclose(prior.theta_precision(3), np.eye(3) / 1000.0)


def test_prior_validation():
    with pytest.raises(ValueError):
        PriorSpec(r_dof=2.0)
    with pytest.raises(ValueError):
        PriorSpec(theta_var=0.0)
    with pytest.raises(DecompositionError):
        PriorSpec(r_scale=np.array([[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))


def test_empty_dataset_keeps_dimensions():
    ds = Dataset.empty(2, 3, 4)
    assert ds.n == 0
    assert ds.dims == (2, 3, 4)
    assert ds.groups.sizes == {1: 0, 2: 0, 3: 0}
