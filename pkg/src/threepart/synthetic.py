"""Forward simulator of the three-part model.

Generates datasets with known parameters for parameter-recovery and
distributional tests, and can emit the same CSV schema the loader consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import ColumnSpec, Dataset, RegressorSpec, build_dataset


@dataclass
class GeneratorSpec:
    """Ground truth for the simulator.

    Designs are an intercept plus independent standard-normal columns unless
    explicit matrices are supplied via ``x_a``/``x_c``/``x_y``.  ``sigma`` is
    on the identified scale (unit variances in the two probit slots).
    """

    n: int
    theta_a: np.ndarray
    theta_c: np.ndarray
    theta_y: np.ndarray
    sigma: np.ndarray = field(default_factory=lambda: np.eye(3))
    seed: int = 0
    x_a: np.ndarray | None = None
    x_c: np.ndarray | None = None
    x_y: np.ndarray | None = None

    def __post_init__(self):
        self.theta_a = np.asarray(self.theta_a, dtype=float)
        self.theta_c = np.asarray(self.theta_c, dtype=float)
        self.theta_y = np.asarray(self.theta_y, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.sigma.shape != (3, 3):
            raise ValueError("sigma must be 3x3")
        if not (np.isclose(self.sigma[0, 0], 1.0) and np.isclose(self.sigma[1, 1], 1.0)):
            raise ValueError("sigma must have unit variances in slots (1,1) and (2,2)")
        try:
            np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError as exc:
            raise ValueError("sigma is not positive definite") from exc


def _default_design(n, dim, rng):
    x = np.empty((n, dim))
    x[:, 0] = 1.0
    if dim > 1:
        x[:, 1:] = rng.standard_normal((n, dim - 1))
    return x


def generate(spec: GeneratorSpec):
    """Simulate observations; returns (dataset, truth).

    ``truth`` holds the latent utilities and the generating parameters so
    white-box tests can condition on them.
    """
    rng = np.random.Generator(np.random.Philox(key=[spec.seed, 404]))
    n = spec.n
    x_a = spec.x_a if spec.x_a is not None else _default_design(n, spec.theta_a.size, rng)
    x_c = spec.x_c if spec.x_c is not None else _default_design(n, spec.theta_c.size, rng)
    x_y = spec.x_y if spec.x_y is not None else _default_design(n, spec.theta_y.size, rng)

    chol = np.linalg.cholesky(spec.sigma)
    errors = rng.standard_normal((n, 3)) @ chol.T

    u_a = x_a @ spec.theta_a + errors[:, 0]
    access = (u_a > 0.0).astype(np.int8)
    u_c = x_c @ spec.theta_c + errors[:, 1]
    use = np.where(access == 1, (u_c > 0.0).astype(float), np.nan)
    consumer = use == 1.0
    log_quantity = np.where(consumer, x_y @ spec.theta_y + errors[:, 2], np.nan)

    dataset = Dataset.from_arrays(x_a, x_c, x_y, access, use, log_quantity)
    truth = {
        "theta_a": spec.theta_a, "theta_c": spec.theta_c, "theta_y": spec.theta_y,
        "sigma": spec.sigma, "u_a": u_a, "u_c": u_c,
    }
    return dataset, truth


def to_frame(dataset: Dataset) -> pd.DataFrame:
    """Flatten a simulated dataset into the CSV schema build_dataset reads.

    Non-intercept design columns become a_1..., c_1..., y_1...; the quantity
    column is exp(log quantity) so the loader's log transform round-trips.
    """
    cols = {"A": dataset.access.astype(int)}
    cols["C"] = dataset.use
    with np.errstate(invalid="ignore"):
        cols["Y"] = np.exp(dataset.log_quantity)
    for eq, x in (("a", dataset.x_a), ("c", dataset.x_c), ("y", dataset.x_y)):
        for j in range(1, x.shape[1]):
            cols[f"{eq}_{j}"] = x[:, j]
    cols["weight"] = dataset.weight
    cols["market"] = dataset.market
    return pd.DataFrame(cols)


def frame_column_spec(dataset: Dataset) -> ColumnSpec:
    """Column spec matching ``to_frame`` output."""
    regressors = []
    for eq, x in (("a", dataset.x_a), ("c", dataset.x_c), ("y", dataset.x_y)):
        for j in range(1, x.shape[1]):
            regressors.append(RegressorSpec(column=f"{eq}_{j}", equations=(eq,)))
    return ColumnSpec(
        access="A", use="C", quantity="Y", regressors=tuple(regressors),
        weight="weight", market="market",
    )


def roundtrip(dataset: Dataset) -> Dataset:
    """Write-free self-hosting loop: frame -> build_dataset."""
    return build_dataset(to_frame(dataset), frame_column_spec(dataset))
