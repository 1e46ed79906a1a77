"""Survey preparation: potency weighting, variety splits, price imputation,
and the risk-perception index.

The frame-level runner stitches the pieces together for the CLI and writes
an audit trail (imputation level, exclusion flags, split markers) next to
the derived columns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DataError, PipelineError

CREEPY_THC_MULTIPLIER = 4.0  # potency of the creepy variety relative to regular


class InfeasibleSplitError(PipelineError):
    """The reported average price cannot be a convex mix of the two variety prices."""


def thc_weight(regular=0.0, corinto=0.0, creepy=0.0, other=0.0):
    """Regular-equivalent monthly quantity, with an exclusion flag.

    Corinto counts as regular; creepy is scaled by its potency multiple;
    any 'other' consumption makes the record unusable (unknown potency).
    Returns (equivalent, excluded).
    """
    regular = np.asarray(regular, dtype=float)
    corinto = np.asarray(corinto, dtype=float)
    creepy = np.asarray(creepy, dtype=float)
    other = np.asarray(other, dtype=float)
    for name, arr in (("regular", regular), ("corinto", corinto),
                      ("creepy", creepy), ("other", other)):
        if np.any(arr < 0.0):
            raise DataError(f"negative {name} quantity")
    equivalent = regular + corinto + CREEPY_THC_MULTIPLIER * creepy
    excluded = other > 0.0
    if equivalent.ndim == 0:
        return float(equivalent), bool(excluded)
    return equivalent, excluded


def split_varieties(avg_price, total_quantity, price_i, price_j):
    """Solve the two-variety quantities from the reported average price.

    The average price is the consumption-weighted mean of the two variety
    prices and the quantities add up to the total, a 2x2 linear system.
    """
    if price_i == price_j:
        raise ValueError("variety prices must differ to identify the split")
    lo, hi = min(price_i, price_j), max(price_i, price_j)
    if not lo <= avg_price <= hi:
        raise InfeasibleSplitError(
            f"average price {avg_price} outside the variety price range [{lo}, {hi}]")
    q_i = total_quantity * (avg_price - price_j) / (price_i - price_j)
    q_j = total_quantity - q_i
    return q_i, q_j


def risk_index(rarely, sometimes, frequently, cutoffs=(2.0, 3.0)):
    """Collapse the three frequency-specific risk answers into one category.

    Answers are the ordered codes 1..4; the category is the mean against the
    documented cutoffs: low below the first, high at or above the second.
    """
    arrays = [np.asarray(v, dtype=float) for v in (rarely, sometimes, frequently)]
    for arr in arrays:
        if not np.all(np.isin(arr, (1.0, 2.0, 3.0, 4.0))):
            raise DataError("risk answers must be the ordered codes 1..4")
    mean = sum(arrays) / 3.0
    cats = np.where(mean < cutoffs[0], "low",
                    np.where(mean < cutoffs[1], "medium", "high"))
    return str(cats) if cats.ndim == 0 else cats


def _nearest_rank(sorted_values, pct):
    n = sorted_values.size
    rank = int(np.ceil(pct / 100.0 * n))
    return sorted_values[max(rank, 1) - 1]


def trim_donor_pool(prices, trim=(10.0, 95.0)):
    """Keep prices inside the nearest-rank percentile bounds, inclusive."""
    prices = np.asarray(prices, dtype=float)
    srt = np.sort(prices)
    lo = _nearest_rank(srt, trim[0])
    hi = _nearest_rank(srt, trim[1])
    return (prices >= lo) & (prices <= hi)


def impute_prices(prices, municipality, stratum, consumer, trim=(10.0, 95.0)):
    """Fill missing prices from trimmed consumer donors, coarsening the match.

    Fallback order: same municipality and stratum, same municipality, same
    stratum, unconditional donor mean.  Returns (filled, level) where level
    is 0 for an observed price and 1..4 for the fallback used.
    """
    prices = np.asarray(prices, dtype=float)
    municipality = np.asarray(municipality).astype(str)
    stratum = np.asarray(stratum).astype(str)
    consumer = np.asarray(consumer, dtype=bool)

    donor = consumer & np.isfinite(prices)
    if not np.any(donor):
        raise PipelineError("no consumer prices available to build a donor pool")
    keep = np.zeros(prices.size, dtype=bool)
    keep[donor] = trim_donor_pool(prices[donor], trim)

    pool = pd.DataFrame({
        "price": prices[keep], "muni": municipality[keep], "stratum": stratum[keep]})
    cell_mean = pool.groupby(["muni", "stratum"])["price"].mean()
    muni_mean = pool.groupby("muni")["price"].mean()
    stratum_mean = pool.groupby("stratum")["price"].mean()
    overall = pool["price"].mean()

    filled = prices.copy()
    level = np.zeros(prices.size, dtype=np.int64)
    for i in np.flatnonzero(~(consumer & np.isfinite(prices))):
        key = (municipality[i], stratum[i])
        if key in cell_mean.index:
            filled[i], level[i] = cell_mean[key], 1
        elif municipality[i] in muni_mean.index:
            filled[i], level[i] = muni_mean[municipality[i]], 2
        elif stratum[i] in stratum_mean.index:
            filled[i], level[i] = stratum_mean[stratum[i]], 3
        else:
            filled[i], level[i] = overall, 4
    return filled, level


def nn_match_prices(recipient_features, donor_features, donor_prices):
    """Nearest-donor price in standardized feature space.

    Features are standardized with pooled moments so rescaling a raw column
    cannot change the matches.  Ties break toward the lowest donor index.
    Returns (prices, donor_index).
    """
    recipients = np.atleast_2d(np.asarray(recipient_features, dtype=float))
    donors = np.atleast_2d(np.asarray(donor_features, dtype=float))
    donor_prices = np.asarray(donor_prices, dtype=float)
    if donors.shape[0] == 0:
        raise PipelineError("no single-variety donors available for matching")
    pooled = np.vstack([recipients, donors])
    mean = pooled.mean(axis=0)
    sd = pooled.std(axis=0)
    sd[sd == 0.0] = 1.0  # constant features carry no information
    r = (recipients - mean) / sd
    d = (donors - mean) / sd
    dist2 = ((r[:, None, :] - d[None, :, :]) ** 2).sum(axis=2)
    idx = np.argmin(dist2, axis=1)  # first minimum = lowest donor index on ties
    return donor_prices[idx], idx


# ---------------------------------------------------------------------------
# Frame-level runner
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    """Column roles for the preparation run; see README for the schema."""

    regular: str = "qty_regular"
    corinto: str = "qty_corinto"
    creepy: str = "qty_creepy"
    other: str = "qty_other"
    total_quantity: str | None = None
    price: str = "price"
    expenditure: str | None = None
    municipality: str = "municipality"
    stratum: str = "stratum"
    match_features: tuple = ()
    risk_rarely: str | None = None
    risk_sometimes: str | None = None
    risk_frequently: str | None = None
    risk_cutoffs: tuple = (2.0, 3.0)
    trim: tuple = (10.0, 95.0)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("match_features", "risk_cutoffs", "trim"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _column(df, name, default=np.nan):
    if name and name in df.columns:
        return df[name].to_numpy(dtype=float, na_value=np.nan)
    return np.full(len(df), default)


def run_pipeline(df: pd.DataFrame, config: PipelineConfig) -> pd.DataFrame:
    """Full preparation pass; returns a copy with derived and audit columns."""
    out = df.copy()
    n = len(df)

    if config.risk_rarely:
        out["risk_perception"] = risk_index(
            df[config.risk_rarely], df[config.risk_sometimes],
            df[config.risk_frequently], config.risk_cutoffs)

    regular = np.nan_to_num(_column(df, config.regular))
    corinto = np.nan_to_num(_column(df, config.corinto))
    creepy = np.nan_to_num(_column(df, config.creepy))
    other = np.nan_to_num(_column(df, config.other))
    price = _column(df, config.price)
    expenditure = _column(df, config.expenditure)

    # direct price: expenditure over quantity when available, else as reported
    reported_total = regular + corinto + creepy + other
    if config.total_quantity:
        total = _column(df, config.total_quantity)
        reported_total = np.where(np.isfinite(total) & (total > 0), total, reported_total)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio_price = expenditure / reported_total
    direct = np.where(np.isfinite(ratio_price) & (ratio_price > 0), ratio_price, price)
    out["price_source"] = np.where(
        np.isfinite(ratio_price) & (ratio_price > 0), "expenditure_ratio",
        np.where(np.isfinite(price), "reported", "missing"))

    # variety split for consumers who reported only a total plus an average price
    split_applied = np.zeros(n, dtype=bool)
    split_infeasible = np.zeros(n, dtype=bool)
    needs_split = (reported_total > 0) & (regular + corinto + creepy + other == 0.0)
    if np.any(needs_split) and config.match_features:
        feats = df[list(config.match_features)].to_numpy(dtype=float)
        single_regular = ((regular + corinto > 0) & (creepy == 0)
                          & (other == 0) & np.isfinite(direct))
        single_creepy = ((creepy > 0) & (regular + corinto == 0)
                         & (other == 0) & np.isfinite(direct))
        rows = np.flatnonzero(needs_split)
        try:
            p_reg, _ = nn_match_prices(feats[needs_split], feats[single_regular],
                                       direct[single_regular])
            p_crp, _ = nn_match_prices(feats[needs_split], feats[single_creepy],
                                       direct[single_creepy])
        except PipelineError:
            split_infeasible[rows] = True  # no single-variety donors: unmatchable
        else:
            for j, i in enumerate(rows):
                try:
                    q_reg, q_crp = split_varieties(direct[i], reported_total[i],
                                                   p_reg[j], p_crp[j])
                except InfeasibleSplitError:
                    split_infeasible[i] = True
                    continue
                regular[i], creepy[i] = q_reg, q_crp
                split_applied[i] = True
            out["matched_regular_price"] = np.nan
            out["matched_creepy_price"] = np.nan
            out.loc[rows, "matched_regular_price"] = p_reg
            out.loc[rows, "matched_creepy_price"] = p_crp
    out["split_applied"] = split_applied
    out["split_infeasible"] = split_infeasible

    equivalent, excluded = thc_weight(regular, corinto, creepy, other)
    out["quantity_regular_equivalent"] = equivalent
    out["excluded_other_variety"] = excluded
    out["excluded_infeasible_split"] = split_infeasible

    consumer = (equivalent > 0) | (other > 0) | split_infeasible
    filled, level = impute_prices(direct, df[config.municipality],
                                  df[config.stratum], consumer, config.trim)
    out["price_final"] = filled
    out["price_impute_level"] = level
    return out
