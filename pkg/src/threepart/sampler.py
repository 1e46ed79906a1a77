"""Data-augmented Gibbs sampler for the three-part model.

Sweep order per iteration: latent utilities, then the stacked location
block, then the unidentified covariance via its sequential decomposition,
then the identification map.  Draw storage keeps both scales.

Randomness: one run seed feeds counter-based Philox substreams, one per
(iteration, step).  All per-observation work happens in canonical row-id
order, so physically reordering the observations changes nothing.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import linalg as sla

from . import distributions as dist
from .data import Dataset, DesignInfo, PriorSpec, identify
from .errors import ChainError, NumericalError

_STREAM_TAGS = {"latents": 1, "theta": 2, "omega": 3}


def _substream(seed: int, tag: str, iteration: int) -> np.random.Generator:
    key1 = (np.uint64(_STREAM_TAGS[tag]) << np.uint64(56)) | np.uint64(iteration)
    bitgen = np.random.Philox(key=[np.uint64(seed & (2**64 - 1)), key1])
    return np.random.Generator(bitgen)


@dataclass
class ChainConfig:
    """Run controls for one chain."""

    iterations: int = 6000
    burn_in: int = 1000
    thin: int = 5
    seed: int = 0
    step2_set: str = "accessed"  # "accessed" (G2 and G3) or "extensive_only" (G2)

    def __post_init__(self):
        if self.iterations <= 0 or self.burn_in < 0 or self.thin < 1:
            raise ValueError("iterations must be positive, burn_in >= 0, thin >= 1")
        if self.iterations <= self.burn_in:
            raise ValueError("no retained draws: iterations must exceed burn_in")
        if self.step2_set not in ("accessed", "extensive_only"):
            raise ValueError("step2_set must be 'accessed' or 'extensive_only'")

    @property
    def kept(self) -> int:
        return (self.iterations - self.burn_in - 1) // self.thin + 1


@dataclass
class LatentState:
    """Augmented utilities; u_c is NaN for observations without access."""

    u_a: np.ndarray
    u_c: np.ndarray

    def check_signs(self, access: np.ndarray, use: np.ndarray):
        ok = np.where(access == 0, self.u_a <= 0.0, self.u_a > 0.0)
        if not np.all(ok):
            raise AssertionError("latent access utility sign disagrees with outcome")
        observed = ~np.isnan(use)
        sign_ok = np.where(use[observed] == 0.0,
                           self.u_c[observed] <= 0.0,
                           self.u_c[observed] > 0.0)
        if not np.all(sign_ok):
            raise AssertionError("latent use utility sign disagrees with outcome")


OMEGA_COLS = ("omega[1.1]", "omega[2.1]", "omega[2.2]",
              "omega[3.1]", "omega[3.2]", "omega[3.3]")
SIGMA_COLS = ("sigma[2.1]", "sigma[3.1]", "sigma[3.2]", "sigma[3.3]")
_OMEGA_IDX = ((0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2))
_SIGMA_IDX = ((1, 0), (2, 0), (2, 1), (2, 2))


class ChainStore:
    """Ordered posterior draws of (theta, omega, sigma) plus run metadata."""

    def __init__(self, theta, theta_ident, omega, sigma, iterations_kept, meta):
        self.theta = np.asarray(theta, dtype=float)
        self.theta_ident = np.asarray(theta_ident, dtype=float)
        self.omega = np.asarray(omega, dtype=float)
        self.sigma = np.asarray(sigma, dtype=float)
        self.iterations_kept = np.asarray(iterations_kept, dtype=np.int64)
        self.meta = meta

    # -- structure -----------------------------------------------------
    @property
    def n_draws(self) -> int:
        return self.theta.shape[0]

    @property
    def dims(self):
        d = self.meta["dims"]
        return d["a"], d["c"], d["y"]

    def equation_slice(self, equation: str) -> slice:
        h, k, _ = self.dims
        start = {"a": 0, "c": h, "y": h + k}[equation]
        width = self.meta["dims"][equation]
        return slice(start, start + width)

    def theta_draws(self, equation: str, identified: bool = True) -> np.ndarray:
        src = self.theta_ident if identified else self.theta
        return src[:, self.equation_slice(equation)]

    def column_names(self, equation: str):
        return list(self.meta["columns"][equation])

    def sigma_matrices(self) -> np.ndarray:
        out = np.empty((self.n_draws, 3, 3))
        out[:, 0, 0] = 1.0
        out[:, 1, 1] = 1.0
        for col, (i, j) in enumerate(_SIGMA_IDX):
            out[:, i, j] = self.sigma[:, col]
            out[:, j, i] = self.sigma[:, col]
        return out

    def omega_matrices(self) -> np.ndarray:
        out = np.empty((self.n_draws, 3, 3))
        for col, (i, j) in enumerate(_OMEGA_IDX):
            out[:, i, j] = self.omega[:, col]
            out[:, j, i] = self.omega[:, col]
        return out

    @property
    def design(self) -> DesignInfo | None:
        d = self.meta.get("design")
        return DesignInfo.from_dict(d) if d else None

    # -- reporting -----------------------------------------------------
    def summary(self) -> pd.DataFrame:
        rows = []

        def add(section, equation, name, draws):
            lo, hi = np.percentile(draws, [2.5, 97.5])
            rows.append({
                "section": section, "equation": equation, "parameter": name,
                "mean": float(np.mean(draws)), "sd": float(np.std(draws, ddof=1)),
                "q2.5": float(lo), "q97.5": float(hi),
            })

        for eq in ("a", "c", "y"):
            names = self.column_names(eq)
            ident = self.theta_draws(eq, identified=True)
            for j, name in enumerate(names):
                add("location", eq, name, ident[:, j])
        for col, name in enumerate(SIGMA_COLS):
            add("scale", "sigma", name, self.sigma[:, col])
        return pd.DataFrame(rows)

    # -- serialization ---------------------------------------------------
    def _header(self):
        cols = ["iteration"]
        for eq in ("a", "c", "y"):
            cols += [f"theta[{eq}:{n}]" for n in self.column_names(eq)]
        for eq in ("a", "c", "y"):
            cols += [f"theta_ident[{eq}:{n}]" for n in self.column_names(eq)]
        cols += list(OMEGA_COLS) + list(SIGMA_COLS)
        return cols

    def save(self, stem):
        """Write <stem>.csv (draws, %.17g so reload is bit exact) and <stem>.json."""
        stem = str(stem)
        block = np.column_stack([
            self.iterations_kept.astype(float),
            self.theta, self.theta_ident, self.omega, self.sigma,
        ])
        np.savetxt(stem + ".csv", block, fmt="%.17g", delimiter=",",
                   header=",".join(self._header()), comments="")
        with open(stem + ".json", "w") as fh:
            json.dump(self.meta, fh, indent=2, sort_keys=True)
        return stem + ".csv", stem + ".json"

    @classmethod
    def load(cls, stem) -> "ChainStore":
        stem = str(stem)
        with open(stem + ".json") as fh:
            meta = json.load(fh)
        block = np.loadtxt(stem + ".csv", delimiter=",", skiprows=1, ndmin=2)
        p = meta["dims"]["a"] + meta["dims"]["c"] + meta["dims"]["y"]
        it = block[:, 0].astype(np.int64)
        theta = block[:, 1:1 + p]
        theta_ident = block[:, 1 + p:1 + 2 * p]
        omega = block[:, 1 + 2 * p:7 + 2 * p]
        sigma = block[:, 7 + 2 * p:11 + 2 * p]
        return cls(theta, theta_ident, omega, sigma, it, meta)


# ---------------------------------------------------------------------------
# The Gibbs engine
# ---------------------------------------------------------------------------

def _repair_spd(m: np.ndarray) -> np.ndarray:
    """Clip eigenvalues so the matrix is numerically SPD again."""
    sym = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(sym)
    floor = max(vals.max(), 1.0) * 1e-10
    return (vecs * np.maximum(vals, floor)) @ vecs.T


def _schur_scalar(mat: np.ndarray, last: int) -> float:
    """Schur complement of element (last, last) on the leading block."""
    lead = np.delete(np.delete(mat, last, 0), last, 1)
    cross = np.delete(mat[last], last)
    direct = mat[last, last] - cross @ np.linalg.solve(lead, cross)
    if direct > 0.0:
        return float(direct)
    chol = np.linalg.cholesky(mat)  # raises if truly non-PD
    return float(chol[last, last] ** 2)


class GibbsSampler:
    """Engine bound to one dataset; exposes the individual Gibbs steps."""

    def __init__(self, dataset: Dataset, prior: PriorSpec | None = None,
                 step2_set: str = "accessed"):
        prior = prior or PriorSpec()
        order = np.argsort(dataset.row_ids, kind="stable")
        if not np.array_equal(order, np.arange(dataset.n)):
            dataset = dataset.reordered(order)
        self.dataset = dataset
        self.prior = prior
        self.step2_set = step2_set
        self.spd_repairs = 0

        g = dataset.groups
        self.i1, self.i2, self.i3 = g.indices(1), g.indices(2), g.indices(3)
        self.xa1 = dataset.x_a[self.i1]
        self.xa2, self.xc2 = dataset.x_a[self.i2], dataset.x_c[self.i2]
        self.xa3, self.xc3 = dataset.x_a[self.i3], dataset.x_c[self.i3]
        self.xy3 = dataset.x_y[self.i3]
        self.y3 = dataset.log_quantity[self.i3]

        h, k, l = dataset.dims
        self.h, self.k, self.l = h, k, l
        self.p = h + k + l
        self.sl_a, self.sl_c, self.sl_y = (
            slice(0, h), slice(h, h + k), slice(h + k, h + k + l))

        # Gram blocks are constant across iterations; only the 2x2/3x3
        # precision scalars change.
        self.g_aa = (self.xa1.T @ self.xa1, self.xa2.T @ self.xa2, self.xa3.T @ self.xa3)
        self.g_ac = (self.xa2.T @ self.xc2, self.xa3.T @ self.xc3)
        self.g_ay = self.xa3.T @ self.xy3
        self.g_cc = (self.xc2.T @ self.xc2, self.xc3.T @ self.xc3)
        self.g_cy = self.xc3.T @ self.xy3
        self.g_yy = self.xy3.T @ self.xy3

        self.theta0 = prior.theta_mean_vector(self.p)
        self.prec0 = prior.theta_precision(self.p)

    # -- helpers ---------------------------------------------------------
    def split_theta(self, theta):
        return theta[self.sl_a], theta[self.sl_c], theta[self.sl_y]

    def _equation_means(self, theta):
        th_a, th_c, th_y = self.split_theta(theta)
        return {
            "a1": self.xa1 @ th_a, "a2": self.xa2 @ th_a, "a3": self.xa3 @ th_a,
            "c2": self.xc2 @ th_c, "c3": self.xc3 @ th_c, "y3": self.xy3 @ th_y,
        }

    def _conditional(self, omega, target, given):
        """Weights and residual variance of one coordinate given the others."""
        cross = omega[target, given]
        w = np.linalg.solve(omega[np.ix_(given, given)], cross)
        tau2 = omega[target, target] - cross @ w
        if tau2 <= 0.0:
            self.spd_repairs += 1
            omega = _repair_spd(omega)
            cross = omega[target, given]
            w = np.linalg.solve(omega[np.ix_(given, given)], cross)
            tau2 = omega[target, target] - cross @ w
            if tau2 <= 0.0:
                raise ChainError("conditional variance not positive after SPD repair")
        return w, float(tau2)

    # -- Gibbs steps -----------------------------------------------------
    def draw_latents(self, latents: LatentState, theta, omega, rng) -> LatentState:
        """One sweep over latent utilities, u_a before u_c inside each group."""
        m = self._equation_means(theta)
        u_a = latents.u_a.copy()
        u_c = latents.u_c.copy()

        if self.i1.size:
            sd = np.sqrt(omega[0, 0])
            u_a[self.i1] = dist.truncated_normal_draws(m["a1"], sd, -np.inf, 0.0, rng)

        if self.i2.size:
            w, tau2 = self._conditional(omega[:2, :2], 0, [1])
            mean = m["a2"] + w[0] * (u_c[self.i2] - m["c2"])
            u_a[self.i2] = dist.truncated_normal_draws(mean, np.sqrt(tau2), 0.0, np.inf, rng)
            w, tau2 = self._conditional(omega[:2, :2], 1, [0])
            mean = m["c2"] + w[0] * (u_a[self.i2] - m["a2"])
            u_c[self.i2] = dist.truncated_normal_draws(mean, np.sqrt(tau2), -np.inf, 0.0, rng)

        if self.i3.size:
            dev_y = self.y3 - m["y3"]
            w, tau2 = self._conditional(omega, 0, [1, 2])
            mean = m["a3"] + w[0] * (u_c[self.i3] - m["c3"]) + w[1] * dev_y
            u_a[self.i3] = dist.truncated_normal_draws(mean, np.sqrt(tau2), 0.0, np.inf, rng)
            w, tau2 = self._conditional(omega, 1, [0, 2])
            mean = m["c3"] + w[0] * (u_a[self.i3] - m["a3"]) + w[1] * dev_y
            u_c[self.i3] = dist.truncated_normal_draws(mean, np.sqrt(tau2), 0.0, np.inf, rng)

        return LatentState(u_a, u_c)

    def theta_moments(self, latents: LatentState, omega):
        """Posterior mean and precision Cholesky factor of the stacked block."""
        prec = self.prec0.copy()
        b = self.prec0 @ self.theta0

        p1 = 1.0 / omega[0, 0]
        eye2 = np.eye(2)
        w2 = sla.cho_solve(sla.cho_factor(omega[:2, :2], lower=True), eye2)
        w3 = sla.cho_solve(sla.cho_factor(omega, lower=True), np.eye(3))

        a, c, y = self.sl_a, self.sl_c, self.sl_y
        prec[a, a] += p1 * self.g_aa[0] + w2[0, 0] * self.g_aa[1] + w3[0, 0] * self.g_aa[2]
        prec[c, c] += w2[1, 1] * self.g_cc[0] + w3[1, 1] * self.g_cc[1]
        prec[y, y] += w3[2, 2] * self.g_yy
        block_ac = w2[0, 1] * self.g_ac[0] + w3[0, 1] * self.g_ac[1]
        block_ay = w3[0, 2] * self.g_ay
        block_cy = w3[1, 2] * self.g_cy
        prec[a, c] += block_ac
        prec[c, a] += block_ac.T
        prec[a, y] += block_ay
        prec[y, a] += block_ay.T
        prec[c, y] += block_cy
        prec[y, c] += block_cy.T

        ua1 = latents.u_a[self.i1]
        ua2, uc2 = latents.u_a[self.i2], latents.u_c[self.i2]
        ua3, uc3 = latents.u_a[self.i3], latents.u_c[self.i3]
        if self.i1.size:
            b[a] += p1 * (self.xa1.T @ ua1)
        if self.i2.size:
            b[a] += self.xa2.T @ (w2[0, 0] * ua2 + w2[0, 1] * uc2)
            b[c] += self.xc2.T @ (w2[0, 1] * ua2 + w2[1, 1] * uc2)
        if self.i3.size:
            b[a] += self.xa3.T @ (w3[0, 0] * ua3 + w3[0, 1] * uc3 + w3[0, 2] * self.y3)
            b[c] += self.xc3.T @ (w3[0, 1] * ua3 + w3[1, 1] * uc3 + w3[1, 2] * self.y3)
            b[y] += self.xy3.T @ (w3[0, 2] * ua3 + w3[1, 2] * uc3 + w3[2, 2] * self.y3)

        try:
            chol = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError as exc:
            raise ChainError(
                f"singular location precision (condition number {np.linalg.cond(prec):.3e})"
            ) from exc
        mean = sla.cho_solve((chol, True), b)
        return mean, chol

    def draw_theta(self, latents: LatentState, omega, rng) -> np.ndarray:
        mean, chol = self.theta_moments(latents, omega)
        z = rng.standard_normal(self.p)
        return mean + sla.solve_triangular(chol, z, lower=True, trans="T")

    def draw_omega(self, latents: LatentState, theta, rng) -> np.ndarray:
        """Sequential draw of the unidentified covariance.

        Layer degrees of freedom are (r0-2+N, r0-1+n2, r0+n3): with no data
        the composite draw is exactly IW(R0, r0).
        """
        r0_scale = np.asarray(self.prior.r_scale, dtype=float)
        r0 = float(self.prior.r_dof)
        m = self._equation_means(theta)
        e_a1 = latents.u_a[self.i1] - m["a1"]
        e_a2 = latents.u_a[self.i2] - m["a2"]
        e_a3 = latents.u_a[self.i3] - m["a3"]
        e_c2 = latents.u_c[self.i2] - m["c2"]
        e_c3 = latents.u_c[self.i3] - m["c3"]
        e_y3 = self.y3 - m["y3"]

        # layer 1: access variance from every observation
        r11 = float(e_a1 @ e_a1 + e_a2 @ e_a2 + e_a3 @ e_a3) + r0_scale[0, 0]
        n = self.dataset.n
        om_a2 = dist.sample_inverse_gamma(r11 / 2.0, (r0 - 2.0 + n) / 2.0, rng)

        # layer 2: regression of the use residual on the access residual
        if self.step2_set == "accessed":
            ea = np.concatenate([e_a2, e_a3])
            ec = np.concatenate([e_c2, e_c3])
        else:
            ea, ec = e_a2, e_c2
        r22 = r0_scale[:2, :2] + np.array([
            [ea @ ea, ea @ ec],
            [ea @ ec, ec @ ec],
        ])
        r22_1 = _schur_scalar(r22, 1)
        dof2 = r0 - 1.0 + ea.size
        om_c1 = dist.sample_inverse_gamma(r22_1 / 2.0, dof2 / 2.0, rng)
        om_ca1 = rng.normal(r22[1, 0] / r22[0, 0], np.sqrt(om_c1 / r22[0, 0]))
        om_ca = om_ca1 * om_a2
        om_c2 = om_c1 + om_ca1 ** 2 * om_a2
        o22 = np.array([[om_a2, om_ca], [om_ca, om_c2]])

        # layer 3: regression of the quantity residual on the first two
        e3 = np.column_stack([e_a3, e_c3, e_y3])
        rn = r0_scale + e3.T @ e3
        r33_1 = _schur_scalar(rn, 2)
        om_y1 = dist.sample_inverse_gamma(r33_1 / 2.0, (r0 + self.i3.size) / 2.0, rng)
        r22n = rn[:2, :2]
        coef = np.linalg.solve(r22n, rn[2, :2])
        l22 = np.linalg.cholesky(r22n)
        z = rng.standard_normal(2)
        om_321 = coef + np.sqrt(om_y1) * sla.solve_triangular(l22, z, lower=True, trans="T")
        om_32 = om_321 @ o22
        om_y2 = om_y1 + om_321 @ o22 @ om_321

        omega = np.empty((3, 3))
        omega[:2, :2] = o22
        omega[2, :2] = om_32
        omega[:2, 2] = om_32
        omega[2, 2] = om_y2
        return omega

    # -- full run ----------------------------------------------------------
    def run(self, config: ChainConfig) -> ChainStore:
        ds = self.dataset
        start = time.perf_counter()
        theta = np.zeros(self.p)
        omega = np.eye(3)
        latents = LatentState(np.zeros(ds.n), np.full(ds.n, np.nan))
        latents.u_c[np.concatenate([self.i2, self.i3])] = 0.0

        kept = config.kept
        theta_out = np.empty((kept, self.p))
        theta_ident_out = np.empty((kept, self.p))
        omega_out = np.empty((kept, 6))
        sigma_out = np.empty((kept, 4))
        it_out = np.empty(kept, dtype=np.int64)
        row = 0

        for t in range(config.iterations):
            try:
                latents = self.draw_latents(
                    latents, theta, omega, _substream(config.seed, "latents", t))
                theta = self.draw_theta(
                    latents, omega, _substream(config.seed, "theta", t))
                omega = self.draw_omega(
                    latents, theta, _substream(config.seed, "omega", t))
                sigma, rescale = identify(omega)
            except ChainError as exc:
                exc.iteration = t
                exc.state = {"theta": theta, "omega": omega}
                raise
            except NumericalError as exc:
                raise ChainError(f"{exc} (iteration {t})", iteration=t,
                                 state={"theta": theta, "omega": omega}) from exc
            except (np.linalg.LinAlgError, ValueError) as exc:
                raise ChainError(f"numerical failure at iteration {t}: {exc}",
                                 iteration=t, state={"theta": theta, "omega": omega}) from exc

            # per-iteration invariants: SPD covariance, finite state, sign match
            np.linalg.cholesky(omega)
            if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(omega))):
                raise ChainError(f"non-finite parameter state at iteration {t}",
                                 iteration=t, state={"theta": theta, "omega": omega})
            latents.check_signs(ds.access, ds.use)

            if t >= config.burn_in and (t - config.burn_in) % config.thin == 0:
                theta_out[row] = theta
                scale_vec = np.concatenate([
                    np.full(self.h, rescale[0]),
                    np.full(self.k, rescale[1]),
                    np.full(self.l, rescale[2]),
                ])
                theta_ident_out[row] = theta * scale_vec
                omega_out[row] = [omega[i, j] for i, j in _OMEGA_IDX]
                sigma_out[row] = [sigma[i, j] for i, j in _SIGMA_IDX]
                it_out[row] = t
                row += 1

        if ds.design is not None:
            columns = {eq: ds.design.names[eq] for eq in ("a", "c", "y")}
            design_dict = ds.design.to_dict()
        else:
            columns = {
                "a": [f"a{j}" for j in range(self.h)],
                "c": [f"c{j}" for j in range(self.k)],
                "y": [f"y{j}" for j in range(self.l)],
            }
            design_dict = None
        meta = {
            "seed": int(config.seed),
            "iterations": int(config.iterations),
            "burn_in": int(config.burn_in),
            "thin": int(config.thin),
            "kept": int(kept),
            "step2_set": config.step2_set,
            "dims": {"a": self.h, "c": self.k, "y": self.l},
            "columns": columns,
            "design": design_dict,
            "group_sizes": ds.groups.sizes,
            "access_corrections": int(ds.access_corrections),
            "spd_repairs": int(self.spd_repairs),
            "wall_time_s": time.perf_counter() - start,
        }
        return ChainStore(theta_out, theta_ident_out, omega_out, sigma_out, it_out, meta)


def run_chain(dataset: Dataset, prior: PriorSpec | None = None,
              config: ChainConfig | None = None, **kwargs) -> ChainStore:
    """Run one chain; keyword arguments override ChainConfig fields."""
    if config is None:
        config = ChainConfig(**kwargs)
    elif kwargs:
        raise ValueError("pass either a ChainConfig or keyword overrides, not both")
    sampler = GibbsSampler(dataset, prior, config.step2_set)
    return sampler.run(config)
