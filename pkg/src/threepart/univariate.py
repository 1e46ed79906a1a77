"""Single-equation Gibbs samplers.

These are deliberately simple, separately coded references: an augmented
probit and a conjugate linear regression.  When the three equations are
exogenous the joint sampler must agree with them, which the test suite
checks estimator-against-estimator.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg as sla
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import distributions as dist


def _kept_rows(iterations, burn_in, thin):
    return range(burn_in, iterations, thin)


class AugmentedProbitGibbs(BaseEstimator):
    """Probit regression via truncated-normal data augmentation."""

    def __init__(self, iterations=2000, burn_in=500, thin=1, seed=0, theta_var=1000.0):
        self.iterations = iterations
        self.burn_in = burn_in
        self.thin = thin
        self.seed = seed
        self.theta_var = theta_var

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n, p = X.shape
        rng = np.random.Generator(np.random.Philox(key=[self.seed, 101]))

        prec0 = np.eye(p) / self.theta_var
        prec = prec0 + X.T @ X
        chol = np.linalg.cholesky(prec)
        lower = np.where(y == 1.0, 0.0, -np.inf)
        upper = np.where(y == 1.0, np.inf, 0.0)

        beta = np.zeros(p)
        kept = list(_kept_rows(self.iterations, self.burn_in, self.thin))
        draws = np.empty((len(kept), p))
        row = 0
        for t in range(self.iterations):
            z = dist.truncated_normal_draws(X @ beta, 1.0, lower, upper, rng)
            mean = sla.cho_solve((chol, True), X.T @ z)
            beta = mean + sla.solve_triangular(chol, rng.standard_normal(p),
                                               lower=True, trans="T")
            if t >= self.burn_in and (t - self.burn_in) % self.thin == 0:
                draws[row] = beta
                row += 1
        self.draws_ = draws
        return self

    def posterior_mean(self):
        check_is_fitted(self, "draws_")
        return self.draws_.mean(axis=0)


class ConjugateLinearGibbs(BaseEstimator):
    """Normal linear regression with independent N / inverse-gamma priors.

    The variance prior defaults to the 1x1 inverse-Wishart marginal implied
    by scale 1 and dof 3 (Wishart-style half convention), matching the joint
    model's prior on the quantity-equation variance.
    """

    def __init__(self, iterations=2000, burn_in=500, thin=1, seed=0,
                 theta_var=1000.0, var_scale=1.0, var_dof=3.0):
        self.iterations = iterations
        self.burn_in = burn_in
        self.thin = thin
        self.seed = seed
        self.theta_var = theta_var
        self.var_scale = var_scale
        self.var_dof = var_dof

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n, p = X.shape
        rng = np.random.Generator(np.random.Philox(key=[self.seed, 202]))

        prec0 = np.eye(p) / self.theta_var
        xtx = X.T @ X
        xty = X.T @ y

        beta = np.zeros(p)
        sigma2 = 1.0
        kept = list(_kept_rows(self.iterations, self.burn_in, self.thin))
        draws = np.empty((len(kept), p))
        sigma2_draws = np.empty(len(kept))
        row = 0
        for t in range(self.iterations):
            prec = prec0 + xtx / sigma2
            chol = np.linalg.cholesky(prec)
            mean = sla.cho_solve((chol, True), xty / sigma2)
            beta = mean + sla.solve_triangular(chol, rng.standard_normal(p),
                                               lower=True, trans="T")
            resid = y - X @ beta
            scale = self.var_scale + resid @ resid
            sigma2 = dist.sample_inverse_gamma(scale / 2.0, (self.var_dof + n) / 2.0, rng)
            if t >= self.burn_in and (t - self.burn_in) % self.thin == 0:
                draws[row] = beta
                sigma2_draws[row] = sigma2
                row += 1
        self.draws_ = draws
        self.sigma2_draws_ = sigma2_draws
        return self

    def posterior_mean(self):
        check_is_fitted(self, "draws_")
        return self.draws_.mean(axis=0)
