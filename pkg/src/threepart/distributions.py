"""Samplers and density helpers used by the Gibbs sampler and the predictive engine.

Everything draws from a caller-supplied ``numpy.random.Generator``: one
stream, one consumer at a time.  Identical generator state gives identical
draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy import stats

from .errors import DecompositionError, DegenerateTailError

# One-sided truncations whose standardized bound exceeds TAIL_SWITCH_SD use
# exponential-proposal rejection instead of the inverse CDF.
TAIL_SWITCH_SD = 4.0
# Beyond this many standard deviations the interval mass underflows float64.
MAX_TAIL_SD = 38.0


@dataclass(frozen=True)
class TruncationInterval:
    """Open-ended interval on the real line; either bound may be infinite."""

    lower: float = -np.inf
    upper: float = np.inf

    def __post_init__(self):
        if np.isnan(self.lower) or np.isnan(self.upper):
            raise ValueError("interval bounds must not be NaN")
        if not self.lower < self.upper:
            raise ValueError(f"empty interval [{self.lower}, {self.upper}]")


#: (-inf, 0], the region of a latent utility behind an observed zero.
NEGATIVE_HALF_LINE = TruncationInterval(-np.inf, 0.0)
#: (0, inf), the region behind an observed one.
POSITIVE_HALF_LINE = TruncationInterval(0.0, np.inf)


def normal_cdf(x):
    """Standard normal CDF."""
    return special.ndtr(x)


def normal_quantile(p):
    """Standard normal quantile; requires 0 < p < 1."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
        raise ValueError("probability must lie strictly inside (0, 1)")
    out = special.ndtri(p_arr)
    return float(out) if np.isscalar(p) or out.ndim == 0 else out


def _robert_tail(a, rng):
    """Exponential-proposal rejection for N(0,1) truncated to (a, inf), a > 0.

    Vectorized over a; loops until every slot is accepted.  Consumption order
    follows the canonical order of the pending subset, so results are a
    deterministic function of the generator state.
    """
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    pending = np.arange(a.size)
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    while pending.size:
        bound = a[pending]
        rate = lam[pending]
        z = bound + rng.standard_exponential(pending.size) / rate
        u = rng.uniform(size=pending.size)
        accept = u <= np.exp(-0.5 * (z - rate) ** 2)
        out[pending[accept]] = z[accept]
        pending = pending[~accept]
    return out


def _truncnorm_standard(lower, upper, rng):
    """Draws from N(0,1) truncated to [lower, upper], elementwise bounds.

    Inverse CDF in the body; Robert's exponential rejection for one-sided
    intervals whose bound lies beyond TAIL_SWITCH_SD.  Far-tail inverse CDF
    evaluates in survival form so accuracy does not degrade as the interval
    moves out.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    lower, upper = np.broadcast_arrays(lower, upper)
    shape = lower.shape
    lower = lower.ravel()
    upper = upper.ravel()
    out = np.empty(lower.shape)

    if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
        raise ValueError("non-finite truncation bounds")
    too_far = np.minimum(np.abs(lower), np.abs(upper)) > MAX_TAIL_SD
    # a one-sided interval containing the mode is never degenerate
    too_far &= ~((lower == -np.inf) & (upper >= -MAX_TAIL_SD))
    too_far &= ~((upper == np.inf) & (lower <= MAX_TAIL_SD))
    if np.any(too_far):
        bad = np.flatnonzero(too_far)
        raise DegenerateTailError(
            f"truncation interval mass underflows for observation(s) {bad[:10].tolist()}"
            f"{'...' if bad.size > 10 else ''} "
            f"(standardized bounds beyond {MAX_TAIL_SD} sd)"
        )

    right_tail = (upper == np.inf) & (lower > TAIL_SWITCH_SD)
    left_tail = (lower == -np.inf) & (upper < -TAIL_SWITCH_SD)
    body = ~(right_tail | left_tail)

    if np.any(body):
        lo, up = lower[body], upper[body]
        u = rng.uniform(size=lo.size)
        z = np.empty(lo.size)
        flip = lo >= 0.0  # interval in the right half: work in survival space
        if np.any(flip):
            sa = special.ndtr(-lo[flip])
            sb = np.where(np.isinf(up[flip]), 0.0, special.ndtr(-up[flip]))
            s = sa * (1.0 - u[flip]) + u[flip] * sb
            z[flip] = -special.ndtri(np.maximum(s, np.finfo(float).tiny))
        if np.any(~flip):
            pa = np.where(np.isinf(lo[~flip]), 0.0, special.ndtr(lo[~flip]))
            pb = special.ndtr(up[~flip])
            p = pa + u[~flip] * (pb - pa)
            z[~flip] = special.ndtri(np.maximum(p, np.finfo(float).tiny))
        out[body] = z
    if np.any(right_tail):
        out[right_tail] = _robert_tail(lower[right_tail], rng)
    if np.any(left_tail):
        out[left_tail] = -_robert_tail(-upper[left_tail], rng)

    # keep draws strictly inside finite bounds
    finite_lo = np.isfinite(lower)
    finite_up = np.isfinite(upper)
    out[finite_lo] = np.maximum(out[finite_lo], np.nextafter(lower[finite_lo], np.inf))
    out[finite_up] = np.minimum(out[finite_up], np.nextafter(upper[finite_up], -np.inf))

    inside = (out > lower) & (out < upper)
    if not np.all(inside):  # hard in-interval assertion, never disabled
        raise AssertionError("truncated-normal draw escaped its interval")
    return out.reshape(shape)


def truncated_normal_draws(mean, sd, lower, upper, rng):
    """Vectorized truncated-normal draws on the original scale.

    ``mean``, ``lower`` and ``upper`` broadcast together; ``sd`` may be a
    scalar or an array.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    a = (np.asarray(lower, dtype=float) - mean) / sd
    b = (np.asarray(upper, dtype=float) - mean) / sd
    return mean + sd * _truncnorm_standard(a, b, rng)


def sample_truncated_normal(mean, variance, interval, rng, size=None):
    """Draw from N(mean, variance) restricted to ``interval``.

    Returns a scalar when ``size`` is None, otherwise an array.
    """
    if not np.isfinite(mean) or not np.isfinite(variance):
        raise ValueError("mean and variance must be finite")
    if variance <= 0.0:
        raise ValueError("variance must be positive")
    sd = np.sqrt(variance)
    n = 1 if size is None else int(size)
    draws = truncated_normal_draws(
        np.full(n, float(mean)), sd, interval.lower, interval.upper, rng
    )
    return float(draws[0]) if size is None else draws


def truncated_normal_cdf(x, mean, variance, interval):
    """CDF of the truncated normal, used by the distributional test suite."""
    sd = np.sqrt(variance)
    a = (interval.lower - mean) / sd
    b = (interval.upper - mean) / sd
    z = (np.asarray(x, dtype=float) - mean) / sd
    if a >= 0.0:  # survival form for right-half intervals
        sa = special.ndtr(-a)
        sb = special.ndtr(-b) if np.isfinite(b) else 0.0
        num = sa - special.ndtr(-np.clip(z, a, b))
        return np.clip(num / (sa - sb), 0.0, 1.0)
    pa = special.ndtr(a) if np.isfinite(a) else 0.0
    pb = special.ndtr(b) if np.isfinite(b) else 1.0
    return np.clip((special.ndtr(np.clip(z, a, b)) - pa) / (pb - pa), 0.0, 1.0)


def sample_inverse_gamma(scale, shape, rng, size=None):
    """Inverse gamma with density proportional to x^-(shape+1) exp(-scale/x).

    Mean is scale/(shape-1) for shape > 1; reciprocals of draws are
    Gamma(shape, rate=scale).
    """
    if not (scale > 0.0) or not (shape > 0.0):
        raise ValueError("scale and shape must be positive")
    g = rng.standard_gamma(shape, size=size)
    return scale / g


def sample_matrix_normal(mean, row_scale, col_scale, rng):
    """Matrix normal draw: rows are independent N(mean_row, col_scale * row_scale).

    ``row_scale`` is SPD with dimension equal to the number of columns of
    ``mean``; ``col_scale`` is a nonnegative scalar, so the vectorized draw
    has covariance col_scale (x) row_scale.
    """
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    row_scale = np.asarray(row_scale, dtype=float)
    if col_scale < 0.0:
        raise ValueError("col_scale must be nonnegative")
    try:
        chol = np.linalg.cholesky(row_scale)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError("row_scale is not positive definite") from exc
    z = rng.standard_normal(mean.shape)
    return mean + np.sqrt(col_scale) * (z @ chol.T)


def sample_inverse_wishart(scale, dof, rng):
    """Inverse Wishart draw with E[X] = scale/(dof - dim - 1) for dof > dim + 1.

    Thin wrapper over scipy's sampler; it is the independent reference the
    sequential covariance sampler is validated against.
    """
    scale = np.asarray(scale, dtype=float)
    dim = scale.shape[0]
    if dof <= dim - 1:
        raise ValueError(f"dof must exceed dim - 1 = {dim - 1}")
    try:
        np.linalg.cholesky(scale)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError("scale matrix is not positive definite") from exc
    draw = stats.invwishart.rvs(df=dof, scale=scale, random_state=rng)
    return np.atleast_2d(draw)
