import numpy as np
import pytest

from threepart import GeneratorSpec, generate, run_chain
from threepart.sampler import ChainStore


@pytest.fixture(scope="session")
def recovery_data():
    """Moderate synthetic dataset shared by sampler and diagnostics tests."""
    spec = GeneratorSpec(
        n=1500,
        theta_a=[0.8, -0.9], theta_c=[0.6, 0.9], theta_y=[1.0, 1.4],
        sigma=np.array([[1.0, 0.5, 0.3], [0.5, 1.0, 0.6], [0.3, 0.6, 1.2]]),
        seed=11,
    )
    return generate(spec)


@pytest.fixture(scope="session")
def fitted_chain(recovery_data):
    dataset, _ = recovery_data
    return run_chain(dataset, iterations=700, burn_in=100, thin=2, seed=42)


@pytest.fixture
def make_constant_chain():
    """ChainStore factory with every draw pinned to the same values."""

    def _make(theta_a=(0.0,), theta_c=(0.0,), theta_y=(0.3,),
              sigma_free=(0.0, 0.0, 0.0, 1.0), n_draws=50, sigma_rows=None):
        theta_a, theta_c, theta_y = map(list, (theta_a, theta_c, theta_y))
        p = len(theta_a) + len(theta_c) + len(theta_y)
        theta = np.tile(theta_a + theta_c + theta_y, (n_draws, 1))
        if sigma_rows is None:
            sigma = np.tile(list(sigma_free), (n_draws, 1))
        else:
            sigma = np.asarray(sigma_rows, dtype=float)
            n_draws = sigma.shape[0]
            theta = np.tile(theta_a + theta_c + theta_y, (n_draws, 1))
        s = sigma
        omega = np.column_stack([
            np.ones(n_draws), s[:, 0], np.ones(n_draws), s[:, 1], s[:, 2], s[:, 3]])
        meta = {
            "seed": 0, "iterations": n_draws, "burn_in": 0, "thin": 1,
            "kept": n_draws, "step2_set": "accessed",
            "dims": {"a": len(theta_a), "c": len(theta_c), "y": len(theta_y)},
            "columns": {
                "a": [f"a{j}" for j in range(len(theta_a))],
                "c": [f"c{j}" for j in range(len(theta_c))],
                "y": [f"y{j}" for j in range(len(theta_y))],
            },
            "design": None,
        }
        return ChainStore(theta, theta, omega, sigma, np.arange(n_draws), meta)

    return _make
