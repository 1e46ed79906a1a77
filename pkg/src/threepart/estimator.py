"""sklearn-style front door for the Gibbs sampler."""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import Dataset, PriorSpec
from .sampler import ChainConfig, ChainStore, run_chain


class ThreePartGibbs(BaseEstimator):
    """Endogenous three-part model estimated by data-augmented Gibbs sampling.

    Parameters mirror ChainConfig; ``prior`` is a PriorSpec (None for the
    default flat choice).  After ``fit``, the posterior lives in ``chain_``.

    Examples
    --------
    >>> model = ThreePartGibbs(iterations=1100, burn_in=100, thin=5, seed=3)
    >>> model.fit(dataset).chain_.n_draws
    200
    """

    def __init__(self, iterations=6000, burn_in=1000, thin=5, seed=0,
                 prior=None, step2_set="accessed"):
        self.iterations = iterations
        self.burn_in = burn_in
        self.thin = thin
        self.seed = seed
        self.prior = prior
        self.step2_set = step2_set

    def fit(self, dataset: Dataset, y=None) -> "ThreePartGibbs":
        if not isinstance(dataset, Dataset):
            raise TypeError("fit expects a threepart.Dataset")
        prior = self.prior if self.prior is not None else PriorSpec()
        config = ChainConfig(
            iterations=self.iterations, burn_in=self.burn_in,
            thin=self.thin, seed=self.seed, step2_set=self.step2_set,
        )
        self.chain_: ChainStore = run_chain(dataset, prior, config)
        self.n_features_in_ = sum(dataset.dims)
        return self

    def summary(self):
        check_is_fitted(self, "chain_")
        return self.chain_.summary()

    def predict(self, x_a, x_c, x_y, scenario=None, mc_draws=512, rng=None):
        """Posterior predictive for one covariate profile; see policy module."""
        check_is_fitted(self, "chain_")
        from .policy import predict_individual

        return predict_individual(x_a, x_c, x_y, self.chain_,
                                  scenario=scenario, mc_draws=mc_draws, rng=rng)
