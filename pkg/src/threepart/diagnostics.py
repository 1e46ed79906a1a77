"""Convergence and stationarity diagnostics for posterior chains.

All statistics are pure functions of the input series.  Spectral density
at frequency zero is estimated by an autoregressive fit whose order
minimizes AIC over Yule-Walker solutions, the classic approach behind
these tests.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import special

from .errors import DataError

GEWEKE_CRITICAL = 1.959963984540054  # two-sided 5%


# ---------------------------------------------------------------------------
# Spectral variance
# ---------------------------------------------------------------------------

def _autocovariances(x, maxlag):
    x = x - x.mean()
    n = x.size
    return np.array([x[: n - k] @ x[k:] / n for k in range(maxlag + 1)])


def spectral_variance(x) -> float:
    """AR-based estimate of the spectral density at frequency zero.

    This is the variance-of-the-mean scale: var(mean) ~ spectral_variance/n.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 10:
        raise DataError("series too short for a spectral estimate")
    if np.var(x) == 0.0:
        raise DataError("zero-variance (degenerate) series")
    max_order = int(min(n - 1, np.floor(10.0 * np.log10(n))))
    c = _autocovariances(x, max_order)

    # Levinson-Durbin recursion; track AIC over orders.
    best_order, best_aic = 0, n * np.log(c[0])
    best_phi_sum, best_v = 0.0, c[0]
    phi_prev = np.zeros(0)
    v = c[0]
    for k in range(1, max_order + 1):
        acc = c[k] - phi_prev @ c[k - 1:0:-1] if k > 1 else c[1]
        ref = acc / v
        phi = np.empty(k)
        phi[:-1] = phi_prev - ref * phi_prev[::-1]
        phi[-1] = ref
        v = v * (1.0 - ref**2)
        if v <= 0.0:
            break
        aic = n * np.log(v) + 2.0 * k
        if aic < best_aic:
            best_order, best_aic = k, aic
            best_phi_sum, best_v = phi.sum(), v
        phi_prev = phi
    # small-sample correction on the innovation variance
    v_pred = best_v * n / (n - (best_order + 1))
    return float(v_pred / (1.0 - best_phi_sum) ** 2)


def effective_sample_size(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.size * np.var(x) / spectral_variance(x))


# ---------------------------------------------------------------------------
# Geweke
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GewekeResult:
    z: float
    passed: bool


def geweke(chain, first_frac=0.10, last_frac=0.50, spectral=True) -> GewekeResult:
    """Equality-of-means z-test between the early and late chain windows.

    ``spectral=False`` swaps in the naive variance; it exists so the test
    suite can demonstrate why the spectral estimate is the right one.
    """
    x = np.asarray(chain, dtype=float)
    if x.size < 100:
        raise DataError("geweke needs a series of length >= 100")
    n1 = int(np.floor(first_frac * x.size))
    n2 = int(np.floor(last_frac * x.size))
    a, b = x[:n1], x[x.size - n2:]
    if spectral:
        va, vb = spectral_variance(a), spectral_variance(b)
    else:
        va, vb = np.var(a, ddof=1), np.var(b, ddof=1)
    if va == 0.0 and vb == 0.0:
        raise DataError("zero-variance (degenerate) series")
    z = (a.mean() - b.mean()) / np.sqrt(va / n1 + vb / n2)
    return GewekeResult(float(z), bool(abs(z) < GEWEKE_CRITICAL))


# ---------------------------------------------------------------------------
# Heidelberger-Welch
# ---------------------------------------------------------------------------

def _cramer_von_mises_cdf(q: float) -> float:
    """Asymptotic CDF of the Cramer-von-Mises statistic (Bessel series).

    The truncated series is accurate in the decision range; past q = 3 the
    survival probability is below 1e-6, where the series would need O(sqrt(q))
    terms, so the CDF is clamped to one there.
    """
    if q <= 0.0:
        return 0.0
    if q > 3.0:
        return 1.0
    total = 0.0
    for k in range(8):
        u = (4 * k + 1) ** 2 / (16.0 * q)
        if u > 50.0:
            continue
        coef = special.gamma(k + 0.5) * np.sqrt(4 * k + 1) / (
            special.gamma(k + 1.0) * np.pi**1.5 * np.sqrt(q))
        total += coef * np.exp(-u) * special.kv(0.25, u)
    return float(np.clip(total, 0.0, 1.0))


@dataclass(frozen=True)
class HeidelbergerResult:
    stationary: bool              # the 5% CvM test on the chain as given
    stationary_portion_found: bool  # some suffix passed under the discard schedule
    start_fraction: float         # first passing discard fraction (NaN if none)
    cvm_pvalue: float             # p-value of the full-chain test
    mean: float
    halfwidth: float
    halfwidth_ratio: float
    halfwidth_passed: bool


def heidelberger_welch(chain, eps=0.1, alpha=0.05) -> HeidelbergerResult:
    """Cramer-von-Mises stationarity test plus the halfwidth test.

    The pass flag is the 5% test on the full chain, which keeps the null
    rejection rate at its nominal level.  The 10%-discard schedule then
    locates a usable stationary suffix (up to half the chain) on which the
    mean and its halfwidth are computed.  The Brownian-bridge scale uses
    the spectral variance of the second half of the full chain.
    """
    x = np.asarray(chain, dtype=float)
    n = x.size
    if n < 100:
        raise DataError("heidelberger-welch needs a series of length >= 100")
    if np.var(x) == 0.0:
        raise DataError("zero-variance (degenerate) series")
    s0 = spectral_variance(x[n // 2:])

    def stage_pvalue(start):
        y = x[start:]
        m = y.size
        bridge = np.cumsum(y) - y.mean() * np.arange(1, m + 1)
        stat = float(np.sum(bridge**2) / (m**2 * s0))
        return 1.0 - _cramer_von_mises_cdf(stat)

    full_pvalue = stage_pvalue(0)
    stationary = full_pvalue > alpha

    found = False
    start = 0
    for frac in (0.0, 0.1, 0.2, 0.3, 0.4, 0.5):
        start = int(np.floor(frac * n))
        if stage_pvalue(start) > alpha:
            found = True
            break

    if found:
        y = x[start:]
        mean = float(y.mean())
        halfwidth = float(GEWEKE_CRITICAL * np.sqrt(spectral_variance(y) / y.size))
        ratio = float(abs(halfwidth / mean)) if mean != 0.0 else np.inf
    else:
        mean, halfwidth, ratio = float(x.mean()), np.nan, np.nan
    return HeidelbergerResult(
        stationary=bool(stationary),
        stationary_portion_found=found,
        start_fraction=start / n if found else np.nan,
        cvm_pvalue=float(full_pvalue),
        mean=mean,
        halfwidth=halfwidth,
        halfwidth_ratio=ratio,
        halfwidth_passed=bool(found and ratio < eps),
    )


# ---------------------------------------------------------------------------
# Raftery-Lewis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RafteryLewisResult:
    kthin: int
    burn_in: int
    required: int
    minimum: int
    dependence_factor: float


def raftery_lewis(chain, q=0.025, r=0.01, s=0.95, eps=0.001) -> RafteryLewisResult:
    """Run-length control for estimating the q-quantile to precision r.

    Thins the indicator chain until a first-order Markov fit beats a
    second-order one on BIC, then sizes burn-in and run length from the
    2x2 transition matrix.
    """
    x = np.asarray(chain, dtype=float)
    phi = special.ndtri(0.5 * (1.0 + s))
    nmin = int(np.ceil(q * (1.0 - q) * phi**2 / r**2))
    if x.size < nmin:
        raise DataError(f"series too short for the pilot estimate: need >= {nmin} points")

    cutoff = np.quantile(x, q)
    binary = (x <= cutoff).astype(np.int64)

    kthin = 0
    while True:
        kthin += 1
        z = binary[::kthin]
        if z.size < 4:
            raise DataError("thinning exhausted the series before a Markov fit succeeded")
        triples = np.zeros((2, 2, 2))
        np.add.at(triples, (z[:-2], z[1:-1], z[2:]), 1.0)
        g2 = 0.0
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    if triples[i, j, k] == 0.0:
                        continue
                    fitted = (triples[i, j, :].sum() * triples[:, j, k].sum()
                              / triples[:, j, :].sum())
                    g2 += 2.0 * triples[i, j, k] * np.log(triples[i, j, k] / fitted)
        bic = g2 - 2.0 * np.log(z.size - 2.0)
        if bic < 0.0:
            break

    pairs = np.zeros((2, 2))
    np.add.at(pairs, (z[:-1], z[1:]), 1.0)
    if pairs[0].sum() == 0.0 or pairs[1].sum() == 0.0:
        raise DataError("indicator chain never crosses the quantile; series too short")
    alpha = pairs[0, 1] / pairs[0].sum()
    beta = pairs[1, 0] / pairs[1].sum()

    lam = 1.0 - alpha - beta
    if lam == 0.0:
        burn = 0
    else:
        temp = np.log(eps * (alpha + beta) / max(alpha, beta)) / np.log(abs(lam))
        burn = int(np.ceil(temp)) * kthin
    keep = int(np.ceil((2.0 - alpha - beta) * alpha * beta * phi**2
                       / ((alpha + beta) ** 3 * r**2))) * kthin
    return RafteryLewisResult(
        kthin=kthin, burn_in=burn, required=burn + keep, minimum=nmin,
        dependence_factor=float((burn + keep) / nmin),
    )


# ---------------------------------------------------------------------------
# Per-chain report
# ---------------------------------------------------------------------------

@dataclass
class ParameterDiagnostics:
    parameter: str
    section: str
    geweke_z: float
    geweke_passed: bool
    hw_stationary: bool
    hw_halfwidth_ratio: float
    hw_passed: bool
    rl_dependence_factor: float
    ess: float


class DiagnosticReport:
    """Table of per-parameter diagnostics with text and JSON renderings."""

    def __init__(self, entries):
        self.entries = list(entries)

    def summary(self) -> dict:
        out = {}
        for section in ("location", "scale"):
            rows = [e for e in self.entries if e.section == section]
            if not rows:
                continue
            out[section] = {
                "parameters": len(rows),
                "geweke_passed": sum(e.geweke_passed for e in rows),
                "hw_stationary": sum(e.hw_stationary for e in rows),
                "dependence_factor_below_5": sum(
                    e.rl_dependence_factor < 5.0 for e in rows
                    if np.isfinite(e.rl_dependence_factor)),
            }
        return out

    def to_json(self) -> str:
        payload = {"parameters": [asdict(e) for e in self.entries],
                   "summary": self.summary()}
        return json.dumps(payload, indent=2, sort_keys=True, default=float)

    def to_text(self) -> str:
        head = f"{'parameter':<34}{'geweke z':>10}{'pass':>6}{'HW stat':>9}" \
               f"{'hw ratio':>10}{'RL factor':>11}{'ESS':>10}"
        lines = [head, "-" * len(head)]
        for e in self.entries:
            rl = f"{e.rl_dependence_factor:.2f}" if np.isfinite(e.rl_dependence_factor) else "n/a"
            lines.append(
                f"{e.parameter:<34}{e.geweke_z:>10.3f}{('yes' if e.geweke_passed else 'NO'):>6}"
                f"{('yes' if e.hw_stationary else 'NO'):>9}{e.hw_halfwidth_ratio:>10.3f}"
                f"{rl:>11}{e.ess:>10.1f}")
        for section, counts in self.summary().items():
            lines.append(
                f"{section}: {counts['geweke_passed']} of {counts['parameters']} passed "
                f"the mean-equality test, {counts['hw_stationary']} stationary, "
                f"{counts['dependence_factor_below_5']} with dependence factor < 5")
        return "\n".join(lines)


def diagnose_chain(chain_store) -> DiagnosticReport:
    """Diagnostics for every identified location and scale parameter."""
    from .sampler import SIGMA_COLS  # local import avoids a cycle

    entries = []

    def add(name, section, series):
        gw = geweke(series)
        hw = heidelberger_welch(series)
        try:
            rl = raftery_lewis(series).dependence_factor
        except DataError:
            rl = np.nan  # chain shorter than the pilot minimum
        entries.append(ParameterDiagnostics(
            parameter=name, section=section,
            geweke_z=gw.z, geweke_passed=gw.passed,
            hw_stationary=hw.stationary, hw_halfwidth_ratio=hw.halfwidth_ratio,
            hw_passed=hw.halfwidth_passed,
            rl_dependence_factor=rl, ess=effective_sample_size(series)))

    for eq in ("a", "c", "y"):
        draws = chain_store.theta_draws(eq, identified=True)
        for j, name in enumerate(chain_store.column_names(eq)):
            add(f"theta[{eq}:{name}]", "location", draws[:, j])
    for col, name in enumerate(SIGMA_COLS):
        add(name, "scale", chain_store.sigma[:, col])
    return DiagnosticReport(entries)
