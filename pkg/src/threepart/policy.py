"""Posterior-predictive engine and counterfactual simulator.

Per retained draw the access probability is a probit evaluation (or one
under legalization); the use probability given access integrates the
selection term by Monte Carlo over the truncated access utility; quantity
is simulated from the trivariate-normal conditional and exponentiated.
Reported standard errors are standard deviations across retained draws.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import special

from . import distributions as dist
from .data import Dataset, DesignInfo
from .errors import DataError
from .sampler import ChainStore

ZERO_PROB_DIGITS = 4  # probabilities that round to zero at this many digits get flagged


@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float


@dataclass(frozen=True)
class Scenario:
    """One counterfactual description.

    Under tax scenarios the per-gram price equals cost plus tax (validated
    to float tolerance); prices are in the units the chain was fitted in.
    """

    name: str = "baseline"
    access: str = "observed"  # or "legalized"
    price_per_joint: float | None = None
    risk_override: str | None = None
    tax_per_gram: float = 0.0
    black_market_share: float = 0.0
    cost_per_gram: float | None = None

    def __post_init__(self):
        if self.access not in ("observed", "legalized"):
            raise ValueError("access must be 'observed' or 'legalized'")
        if not 0.0 <= self.black_market_share < 1.0:
            raise ValueError("black_market_share must lie in [0, 1)")
        if self.tax_per_gram < 0.0:
            raise ValueError("tax_per_gram must be nonnegative")
        if self.tax_per_gram > 0.0:
            if self.price_per_joint is None or self.cost_per_gram is None:
                raise ValueError("tax scenarios need price_per_joint and cost_per_gram")
            gap = abs(self.price_per_joint - (self.cost_per_gram + self.tax_per_gram))
            if gap > 1e-9 * max(1.0, abs(self.price_per_joint)):
                raise ValueError("tax scenario must satisfy price = cost + tax")

    @classmethod
    def from_price(cls, price: float, cost: float, **kwargs) -> "Scenario":
        """Tax scenario with the tax derived as price minus cost."""
        return cls(price_per_joint=price, cost_per_gram=cost,
                   tax_per_gram=price - cost, **kwargs)

    @classmethod
    def from_dict(cls, d) -> "Scenario":
        if "tax_per_gram" not in d and {"price_per_joint", "cost_per_gram"} <= set(d):
            d = dict(d)
            d["tax_per_gram"] = d["price_per_joint"] - d["cost_per_gram"]
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {
            "name": self.name, "access": self.access,
            "price_per_joint": self.price_per_joint,
            "risk_override": self.risk_override,
            "tax_per_gram": self.tax_per_gram,
            "black_market_share": self.black_market_share,
            "cost_per_gram": self.cost_per_gram,
        }


@dataclass(frozen=True)
class PredictiveResult:
    """Per-profile posterior predictive summary (means with simulation SEs)."""

    access_prob: Estimate
    use_prob: Estimate            # unconditional
    use_prob_given_access: Estimate
    change_pp: Estimate           # legalization effect on P(use), percentage points
    consumption: Estimate         # joints per month, conditional on use
    zero_use_probability: bool
    skipped_draws: int

    def to_dict(self):
        out = {}
        for key in ("access_prob", "use_prob", "use_prob_given_access",
                    "change_pp", "consumption"):
            est = getattr(self, key)
            out[key] = est.mean
            out[key + "_se"] = est.se
        out["zero_use_probability"] = self.zero_use_probability
        out["skipped_draws"] = self.skipped_draws
        return out


def conditional_moments(sigma, y_mean, dev_a, dev_c):
    """Mean and variance of log quantity given both latent utilities.

    Uses the identified-scale closed form with the explicit 2x2 inverse of
    [[1, s_ac], [s_ac, 1]]; requires unit variances in the probit slots.
    """
    sigma = np.asarray(sigma, dtype=float)
    if not (np.isclose(sigma[0, 0], 1.0) and np.isclose(sigma[1, 1], 1.0)):
        raise ValueError("conditional_moments expects identified-scale sigma")
    s_ac, s_ya, s_yc = sigma[0, 1], sigma[2, 0], sigma[2, 1]
    det = 1.0 - s_ac**2
    w_a = (s_ya - s_yc * s_ac) / det
    w_c = (s_yc - s_ya * s_ac) / det
    mu = y_mean + w_a * dev_a + w_c * dev_c
    var = sigma[2, 2] - (s_ya * w_a + s_yc * w_c)
    return mu, var


def _as_generator(rng) -> np.random.Generator:
    if rng is None:
        return np.random.Generator(np.random.Philox(key=[0, 909]))
    if isinstance(rng, (int, np.integer)):
        return np.random.Generator(np.random.Philox(key=[int(rng), 909]))
    return rng


def _sigma_parts(chain: ChainStore):
    sig = chain.sigma_matrices()
    return sig[:, 0, 1], sig[:, 2, 0], sig[:, 2, 1], sig[:, 2, 2]


def _predict_draws(chain, x_a, x_c, x_y, legalized, mc_draws, rng):
    """Per-retained-draw predictive quantities for one covariate profile."""
    a_lin = chain.theta_draws("a") @ np.asarray(x_a, dtype=float)
    c_lin = chain.theta_draws("c") @ np.asarray(x_c, dtype=float)
    y_lin = chain.theta_draws("y") @ np.asarray(x_y, dtype=float)
    s_ac, s_ya, s_yc, s_yy = _sigma_parts(chain)

    det = 1.0 - s_ac**2
    with np.errstate(divide="ignore", invalid="ignore"):
        w_a = (s_ya - s_yc * s_ac) / det
        w_c = (s_yc - s_ya * s_ac) / det
        var_y = s_yy - (s_ya * w_a + s_yc * w_c)
    valid = (s_ac**2 < 1.0) & (var_y > 0.0)
    skipped = int(np.sum(~valid))
    a_lin, c_lin, y_lin = a_lin[valid], c_lin[valid], y_lin[valid]
    s_ac, w_a, w_c, var_y = s_ac[valid], w_a[valid], w_c[valid], var_y[valid]
    d = a_lin.size

    p_access = special.ndtr(a_lin)
    u_a = dist.truncated_normal_draws(
        np.broadcast_to(a_lin[:, None], (d, mc_draws)), 1.0, 0.0, np.inf, rng)
    zc = c_lin[:, None] + s_ac[:, None] * (u_a - a_lin[:, None])
    csd = np.sqrt(1.0 - s_ac**2)[:, None]
    weight = special.ndtr(zc / csd)
    p_use_acc = weight.mean(axis=1)

    # truncated use-utility draw; weights already carry the truncation mass,
    # so cells whose interval underflows contribute exactly zero
    bound = -zc / csd
    drawable = bound < dist.MAX_TAIL_SD
    u_c = np.zeros_like(zc)
    if np.any(drawable):
        u_c[drawable] = (zc + csd * dist._truncnorm_standard(
            np.where(drawable, bound, 0.0), np.inf, rng))[drawable]
    mu = y_lin[:, None] + w_a[:, None] * (u_a - a_lin[:, None]) \
        + w_c[:, None] * (u_c - c_lin[:, None])
    log_q = mu + np.sqrt(var_y)[:, None] * rng.standard_normal((d, mc_draws))
    with np.errstate(over="ignore", invalid="ignore"):
        joints = np.where(weight > 0.0, np.exp(log_q), 0.0)
        contrib = weight * joints
    wsum = weight.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        consumption = np.where(wsum > 0.0, contrib.sum(axis=1) / wsum, np.nan)

    p_use_all = p_use_acc if legalized else p_access * p_use_acc
    delta_pp = 100.0 * p_use_acc * (1.0 - p_access)
    return {
        "p_access": np.ones(d) if legalized else p_access,
        "p_use_acc": p_use_acc,
        "p_use_all": p_use_all,
        "delta_pp": delta_pp,
        "consumption": consumption,
        "skipped": skipped,
    }


def _estimate(values) -> Estimate:
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return Estimate(float("nan"), float("nan"))
    se = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return Estimate(float(np.mean(values)), se)


def predict_individual(x_a, x_c, x_y, chain: ChainStore, scenario: Scenario | None = None,
                       mc_draws: int = 512, rng=None) -> PredictiveResult:
    """Posterior predictive for one profile; the x vectors must already
    reflect any scenario price or risk override (see profile_under_scenario).
    """
    if chain.n_draws == 0:
        raise DataError("chain has no retained draws")
    legalized = scenario is not None and scenario.access == "legalized"
    per = _predict_draws(chain, x_a, x_c, x_y, legalized, mc_draws, _as_generator(rng))
    p_use = _estimate(per["p_use_all"])
    return PredictiveResult(
        access_prob=_estimate(per["p_access"]),
        use_prob=p_use,
        use_prob_given_access=_estimate(per["p_use_acc"]),
        change_pp=_estimate(per["delta_pp"]),
        consumption=_estimate(per["consumption"]),
        zero_use_probability=bool(round(p_use.mean, ZERO_PROB_DIGITS) == 0.0),
        skipped_draws=per["skipped"],
    )


def legalize_delta(x_a, x_c, chain: ChainStore, mc_draws: int = 512, rng=None) -> Estimate:
    """Change in P(use) from setting access to one, in percentage points."""
    x_y = np.zeros(chain.dims[2])
    per = _predict_draws(chain, x_a, x_c, x_y, False, mc_draws, _as_generator(rng))
    return _estimate(per["delta_pp"])


def population_delta(chain: ChainStore, x_a, x_c, weights,
                     mc_draws: int = 8, rng=None, chunk: int = 512) -> Estimate:
    """Survey-weighted aggregate legalization effect in percentage points."""
    rng = _as_generator(rng)
    x_a = np.asarray(x_a, dtype=float)
    x_c = np.asarray(x_c, dtype=float)
    weights = np.asarray(weights, dtype=float)
    th_a = chain.theta_draws("a")
    th_c = chain.theta_draws("c")
    s_ac, _, _, _ = _sigma_parts(chain)
    d = chain.n_draws
    num = np.zeros(d)
    for start in range(0, x_a.shape[0], chunk):
        sl = slice(start, min(start + chunk, x_a.shape[0]))
        a_lin = th_a @ x_a[sl].T          # (d, m)
        c_lin = th_c @ x_c[sl].T
        m = a_lin.shape[1]
        u_a = dist.truncated_normal_draws(
            np.broadcast_to(a_lin[..., None], (d, m, mc_draws)), 1.0, 0.0, np.inf, rng)
        zc = c_lin[..., None] + s_ac[:, None, None] * (u_a - a_lin[..., None])
        csd = np.sqrt(1.0 - s_ac**2)[:, None, None]
        p_use = special.ndtr(zc / csd).mean(axis=2)
        num += (weights[sl] * p_use * (1.0 - special.ndtr(a_lin))).sum(axis=1)
    return _estimate(100.0 * num / weights.sum())


@dataclass(frozen=True)
class TaxRevenueResult:
    scenario: Scenario
    annual_revenue: Estimate
    use_probability: Estimate         # weighted, under legalization
    monthly_joints_per_user: Estimate


def tax_revenue(chain: ChainStore, dataset: Dataset, scenario: Scenario,
                rng=None, mc_draws: int = 1, currency_rate: float | None = None,
                chunk: int = 4096) -> TaxRevenueResult:
    """Annual tax take under legalization for the weighted population.

    The dataset's quantity design must already carry the scenario price.
    Per individual and retained draw: a Bernoulli use indicator at the
    selection-adjusted probability, then simulated monthly joints, scaled by
    12 months, the taxed market share, the survey weight, and the per-gram
    tax (one joint is one gram).
    """
    if dataset.weight is None or dataset.n == 0:
        raise DataError("tax aggregation needs a weighted population")
    rng = _as_generator(rng)
    th_a = chain.theta_draws("a")
    th_c = chain.theta_draws("c")
    th_y = chain.theta_draws("y")
    s_ac, s_ya, s_yc, s_yy = _sigma_parts(chain)
    det = 1.0 - s_ac**2
    w_a = (s_ya - s_yc * s_ac) / det
    w_c = (s_yc - s_ya * s_ac) / det
    var_y = s_yy - (s_ya * w_a + s_yc * w_c)
    d = chain.n_draws

    scale = 12.0 * (1.0 - scenario.black_market_share) * scenario.tax_per_gram
    totals = np.zeros((d, mc_draws))
    use_w = np.zeros(d)
    joints_sum = np.zeros((d, mc_draws))
    users = np.zeros((d, mc_draws))
    for start in range(0, dataset.n, chunk):
        sl = slice(start, min(start + chunk, dataset.n))
        wts = dataset.weight[sl]
        a_lin = th_a @ dataset.x_a[sl].T       # (d, m)
        c_lin = th_c @ dataset.x_c[sl].T
        y_lin = th_y @ dataset.x_y[sl].T
        m = a_lin.shape[1]
        for rep in range(mc_draws):
            u_a = dist.truncated_normal_draws(a_lin, 1.0, 0.0, np.inf, rng)
            zc = c_lin + s_ac[:, None] * (u_a - a_lin)
            csd = np.sqrt(det)[:, None]
            if rep == 0:
                use_w[:] += (wts * special.ndtr(zc / csd)).sum(axis=1)
            u_c = zc + csd * rng.standard_normal((d, m))
            used = u_c > 0.0
            mu = y_lin + w_a[:, None] * (u_a - a_lin) + w_c[:, None] * (u_c - c_lin)
            log_q = mu + np.sqrt(var_y)[:, None] * rng.standard_normal((d, m))
            with np.errstate(over="ignore"):
                joints = np.where(used, np.exp(log_q), 0.0)
            totals[:, rep] += (wts * joints).sum(axis=1) * scale
            joints_sum[:, rep] += (wts * joints).sum(axis=1)
            users[:, rep] += (wts * used).sum(axis=1)

    per_draw = np.array([math.fsum(row) / mc_draws for row in totals])
    if currency_rate:
        per_draw = per_draw / currency_rate
    wsum = dataset.weight.sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        joints_per_user = np.where(users > 0.0, joints_sum / users, np.nan).mean(axis=1)
    return TaxRevenueResult(
        scenario=scenario,
        annual_revenue=_estimate(per_draw),
        use_probability=_estimate(use_w / wsum),
        monthly_joints_per_user=_estimate(joints_per_user),
    )


def elasticity(chain: ChainStore, price_col: str, interaction_col: str | None = None) -> np.ndarray:
    """Posterior draws of the price elasticity for one age group.

    The base group's elasticity is the log-price coefficient alone; other
    groups add their interaction coefficient.
    """
    names = chain.column_names("y")
    if price_col not in names:
        raise ValueError(f"price column {price_col!r} not among {names}")
    draws = chain.theta_draws("y")[:, names.index(price_col)].copy()
    if interaction_col is not None:
        if interaction_col not in names:
            raise ValueError(f"interaction column {interaction_col!r} not among {names}")
        draws = draws + chain.theta_draws("y")[:, names.index(interaction_col)]
    return draws


def elasticity_summary(draws) -> dict:
    lo, hi = np.percentile(draws, [2.5, 97.5])
    return {"mean": float(np.mean(draws)), "sd": float(np.std(draws, ddof=1)),
            "q2.5": float(lo), "q97.5": float(hi)}


def profile_under_scenario(design: DesignInfo, profile: dict, scenario: Scenario | None):
    """Apply price / risk overrides to a raw profile and build its x vectors."""
    row = dict(profile)
    if scenario is not None:
        spec = design.spec_dict
        if scenario.price_per_joint is not None:
            if not spec.get("price_column"):
                raise DataError("scenario sets a price but the design names no price column")
            row[spec["price_column"]] = scenario.price_per_joint
        if scenario.risk_override is not None:
            if not spec.get("risk_column"):
                raise DataError("scenario overrides risk but the design names no risk column")
            row[spec["risk_column"]] = scenario.risk_override
    return design.profile_row(row)


def apply_scenario_frame(df: pd.DataFrame, design: DesignInfo,
                         scenario: Scenario | None) -> pd.DataFrame:
    """Scenario overrides applied to a whole population table."""
    out = df.copy()
    if scenario is not None:
        spec = design.spec_dict
        if scenario.price_per_joint is not None:
            if not spec.get("price_column"):
                raise DataError("scenario sets a price but the design names no price column")
            out[spec["price_column"]] = scenario.price_per_joint
        if scenario.risk_override is not None:
            if not spec.get("risk_column"):
                raise DataError("scenario overrides risk but the design names no risk column")
            out[spec["risk_column"]] = scenario.risk_override
    return out
