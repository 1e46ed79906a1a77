import numpy as np
import pandas as pd
import pytest

from threepart.errors import DataError, PipelineError
from threepart.pipeline import (InfeasibleSplitError, PipelineConfig,
                                impute_prices, nn_match_prices, risk_index,
                                run_pipeline, split_varieties, thc_weight,
                                trim_donor_pool)


# ---------------------------------------------------------------------------
# potency weighting
# ---------------------------------------------------------------------------

def test_thc_weight_basics():
    assert thc_weight(regular=10.0) == (10.0, False)
    assert thc_weight(creepy=5.0) == (20.0, False)
    assert thc_weight(corinto=3.0, creepy=1.0) == (7.0, False)
    equivalent, excluded = thc_weight(other=3.0)
    assert excluded


def test_thc_weight_rejects_negative_quantities():
    with pytest.raises(DataError):
        thc_weight(regular=-1.0)


def test_thc_weight_is_linear():
    rng = np.random.default_rng(0)
    a = rng.uniform(0, 5, size=(4, 100))
    b = rng.uniform(0, 5, size=(4, 100))
    qa, _ = thc_weight(*a)
    qb, _ = thc_weight(*b)
    qab, _ = thc_weight(*(a + b))
    assert np.allclose(qab, qa + qb)


# ---------------------------------------------------------------------------
# variety split
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("avg,total,pi,pj,expected", [
    (5.0, 10.0, 5.0, 7.0, (10.0, 0.0)),
    (6.0, 10.0, 5.0, 7.0, (5.0, 5.0)),
    (6.5, 8.0, 5.0, 7.0, (2.0, 6.0)),
])
def test_split_varieties_solves_the_two_by_two_system(avg, total, pi, pj, expected):
    qi, qj = split_varieties(avg, total, pi, pj)
    assert (qi, qj) == pytest.approx(expected)
    assert qi >= 0.0 and qj >= 0.0


def test_split_round_trip_reproduces_average_price():
    rng = np.random.default_rng(1)
    for _ in range(300):
        pi, pj = sorted(rng.uniform(1.0, 10.0, size=2))
        if pj - pi < 1e-6:
            continue
        total = rng.uniform(0.5, 40.0)
        avg = rng.uniform(pi, pj)
        qi, qj = split_varieties(avg, total, pi, pj)
        back = (pi * qi + pj * qj) / total
        assert abs(back - avg) / avg < 1e-10


def test_split_validation():
    with pytest.raises(ValueError):
        split_varieties(5.0, 10.0, 4.0, 4.0)
    with pytest.raises(InfeasibleSplitError):
        split_varieties(9.0, 10.0, 5.0, 7.0)


# ---------------------------------------------------------------------------
# risk index
# ---------------------------------------------------------------------------

def test_risk_index_extremes_and_cutoffs():
    assert risk_index(1, 1, 1) == "low"
    assert risk_index(4, 4, 4) == "high"
    assert risk_index(2, 3, 3) == "medium"   # mean 2.67
    assert risk_index(2, 2, 2) == "medium"   # boundary: mean exactly 2
    assert risk_index(3, 3, 3) == "high"     # boundary: mean exactly 3
    assert risk_index(1, 2, 2) == "low"      # mean 1.67


def test_risk_index_is_monotone():
    order = {"low": 0, "medium": 1, "high": 2}
    for r in range(1, 5):
        for s in range(1, 5):
            for f in range(1, 4):
                assert order[str(risk_index(r, s, f))] <= order[str(risk_index(r, s, f + 1))]


def test_risk_index_rejects_out_of_range():
    with pytest.raises(DataError):
        risk_index(0, 2, 2)
    with pytest.raises(DataError):
        risk_index(1, 5, 2)


# ---------------------------------------------------------------------------
# price imputation
# ---------------------------------------------------------------------------

def test_trim_keeps_nearest_rank_percentile_band():
    prices = np.arange(1.0, 101.0)  # 100 distinct sorted prices
    keep = trim_donor_pool(prices)
    kept_ranks = np.flatnonzero(keep) + 1
    assert kept_ranks.min() == 10 and kept_ranks.max() == 95


def test_impute_fallback_levels():
    prices = np.array([4.0, 6.0, 8.0, np.nan, np.nan, np.nan])
    muni = np.array(["m1", "m1", "m2", "m1", "m3", "m9"])
    stratum = np.array(["s1", "s1", "s2", "s1", "s2", "s9"])
    consumer = np.array([True, True, True, False, False, False])
    filled, level = impute_prices(prices, muni, stratum, consumer, trim=(0.0, 100.0))
    assert filled[3] == 5.0 and level[3] == 1      # same municipality and stratum
    assert filled[4] == 8.0 and level[4] == 3      # stratum fallback
    assert filled[5] == 6.0 and level[5] == 4      # unconditional donor mean
    assert np.all(level[:3] == 0)
    assert np.all((filled >= 4.0) & (filled <= 8.0))


def test_impute_municipality_fallback_level_two():
    prices = np.array([4.0, 10.0, np.nan])
    muni = np.array(["m1", "m1", "m1"])
    stratum = np.array(["s1", "s2", "s3"])
    consumer = np.array([True, True, False])
    filled, level = impute_prices(prices, muni, stratum, consumer, trim=(0.0, 100.0))
    assert filled[2] == 7.0 and level[2] == 2


def test_impute_requires_donors():
    with pytest.raises(PipelineError):
        impute_prices(np.array([np.nan, np.nan]), ["m", "m"], ["s", "s"],
                      np.array([False, False]))


def test_imputed_prices_stay_inside_donor_range():
    rng = np.random.default_rng(2)
    n = 400
    prices = np.where(rng.uniform(size=n) < 0.5, rng.uniform(2.0, 9.0, n), np.nan)
    consumer = np.isfinite(prices)
    muni = rng.choice(["a", "b", "c"], n)
    stratum = rng.choice(["x", "y"], n)
    filled, level = impute_prices(prices, muni, stratum, consumer)
    donors = prices[consumer]
    keep = trim_donor_pool(donors)
    assert filled[~consumer].min() >= donors[keep].min()
    assert filled[~consumer].max() <= donors[keep].max()
    assert np.all(level[~consumer] >= 1)


# ---------------------------------------------------------------------------
# nearest-neighbor matching
# ---------------------------------------------------------------------------

def test_single_donor_always_wins():
    prices, idx = nn_match_prices([[0.0, 0.0]], [[50.0, -3.0]], [7.5])
    assert prices[0] == 7.5 and idx[0] == 0


def test_nearer_donor_wins_and_ties_break_low():
    donors = np.array([[1.0, 0.0], [2.0, 0.0]])
    prices, idx = nn_match_prices([[0.9, 0.0]], donors, [5.0, 9.0])
    assert prices[0] == 5.0
    tie_donors = np.array([[1.0, 0.0], [-1.0, 0.0]])
    _, idx = nn_match_prices([[0.0, 0.0]], tie_donors, [5.0, 9.0])
    assert idx[0] == 0


def test_standardization_makes_matches_scale_invariant():
    rng = np.random.default_rng(3)
    recipients = rng.standard_normal((20, 2))
    donors = rng.standard_normal((30, 2))
    prices = rng.uniform(1.0, 9.0, 30)
    _, idx = nn_match_prices(recipients, donors, prices)
    scaled_r = recipients * [10.0, 1.0]
    scaled_d = donors * [10.0, 1.0]
    _, idx_scaled = nn_match_prices(scaled_r, scaled_d, prices)
    assert np.array_equal(idx, idx_scaled)
    # the raw-space oracle does change matches, which is why we standardize
    raw = ((recipients[:, None, :] - donors[None, :, :]) ** 2).sum(axis=2).argmin(axis=1)
    raw_scaled = ((scaled_r[:, None, :] - scaled_d[None, :, :]) ** 2).sum(axis=2).argmin(axis=1)
    assert not np.array_equal(raw, raw_scaled)


def test_matching_requires_donors():
    with pytest.raises(PipelineError):
        nn_match_prices([[0.0]], np.empty((0, 1)), [])


# ---------------------------------------------------------------------------
# frame-level runner
# ---------------------------------------------------------------------------

def _raw_frame():
    return pd.DataFrame({
        "qty_regular": [10.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        "qty_corinto": [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        "qty_creepy": [0.0, 5.0, 0.0, 0.0, 0.0, 0.0],
        "qty_other": [0.0, 0.0, 3.0, 0.0, 0.0, 0.0],
        "qty_total": [np.nan, np.nan, np.nan, 8.0, np.nan, np.nan],
        "price": [5.0, 7.0, 6.0, 6.5, np.nan, np.nan],
        "expenditure": [50.0, 35.0, np.nan, np.nan, np.nan, np.nan],
        "municipality": ["m1", "m1", "m2", "m1", "m1", "m2"],
        "stratum": ["s1", "s2", "s1", "s1", "s1", "s9"],
        "feat": [0.0, 1.0, 0.5, 0.4, 0.2, 0.9],
        "risk_r": [1, 2, 3, 4, 1, 2],
        "risk_s": [1, 3, 3, 4, 2, 2],
        "risk_f": [1, 3, 4, 4, 2, 2],
    })


def test_run_pipeline_end_to_end():
    config = PipelineConfig(total_quantity="qty_total", expenditure="expenditure",
                            match_features=("feat",), risk_rarely="risk_r",
                            risk_sometimes="risk_s", risk_frequently="risk_f")
    out = run_pipeline(_raw_frame(), config)
    assert list(out["risk_perception"][:3]) == ["low", "medium", "high"]
    # row 0: pure regular; row 1: creepy scaled by potency
    assert out.loc[0, "quantity_regular_equivalent"] == 10.0
    assert out.loc[1, "quantity_regular_equivalent"] == 20.0
    assert bool(out.loc[2, "excluded_other_variety"])
    # row 3 reported only a total of 8 at average price 6.5; donors price the
    # varieties at 5 (regular, row 0 by expenditure ratio) and 7 (creepy)
    assert bool(out.loc[3, "split_applied"])
    assert out.loc[3, "quantity_regular_equivalent"] == pytest.approx(2.0 + 4.0 * 6.0)
    # non-consumers get imputed prices with audit levels
    assert out.loc[4, "price_impute_level"] >= 1
    assert np.isfinite(out.loc[4, "price_final"])
    assert out.loc[0, "price_source"] == "expenditure_ratio"
    assert out.loc[0, "price_final"] == pytest.approx(5.0)


def test_split_rows_without_donors_are_flagged_unmatchable():
    df = _raw_frame()
    df["qty_creepy"] = 0.0  # no single-creepy donors anywhere
    config = PipelineConfig(total_quantity="qty_total", expenditure="expenditure",
                            match_features=("feat",))
    out = run_pipeline(df, config)
    assert bool(out.loc[3, "excluded_infeasible_split"])
    assert not bool(out.loc[3, "split_applied"])


def test_pipeline_config_json_roundtrip(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text('{"match_features": ["feat"], "trim": [10, 95], '
                    '"risk_rarely": "r", "risk_sometimes": "s", "risk_frequently": "f"}')
    config = PipelineConfig.from_json(path)
    assert config.match_features == ("feat",)
    assert config.trim == (10, 95)
