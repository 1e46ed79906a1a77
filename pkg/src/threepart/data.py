"""Data model: observations, design matrices, group partition, priors,
and the map from the unidentified covariance to the identified one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError, DecompositionError, SchemaError

EQUATIONS = ("a", "c", "y")


# ---------------------------------------------------------------------------
# Column spec and design terms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegressorSpec:
    """One raw survey variable and how it enters the three equations.

    kind: "numeric" | "binary" | "log" | "categorical".  Categorical entries
    expand to one-hot dummies against ``base``; ``interact_with`` names a
    numeric/log entry whose (transformed) value multiplies each dummy.
    """

    column: str
    equations: tuple
    kind: str = "numeric"
    base: str | None = None
    categories: tuple | None = None
    interact_with: str | None = None

    def __post_init__(self):
        if self.kind not in ("numeric", "binary", "log", "categorical"):
            raise SchemaError(f"unknown regressor kind {self.kind!r} for {self.column!r}")
        bad = [e for e in self.equations if e not in EQUATIONS]
        if bad:
            raise SchemaError(f"unknown equation tag(s) {bad} for {self.column!r}")
        if self.interact_with is not None and self.kind != "categorical":
            raise SchemaError("interact_with is only supported on categorical entries")


@dataclass(frozen=True)
class ColumnSpec:
    """Mapping from survey columns to model roles."""

    access: str
    use: str
    quantity: str
    regressors: tuple
    weight: str | None = None
    market: str | None = None
    quantity_in_logs: bool = False
    price_column: str | None = None
    risk_column: str | None = None

    @classmethod
    def from_dict(cls, d):
        regs = tuple(
            RegressorSpec(
                column=r["column"],
                equations=tuple(r["equations"]),
                kind=r.get("kind", "numeric"),
                base=r.get("base"),
                categories=tuple(r["categories"]) if r.get("categories") else None,
                interact_with=r.get("interact_with"),
            )
            for r in d["regressors"]
        )
        return cls(
            access=d["access"],
            use=d["use"],
            quantity=d["quantity"],
            regressors=regs,
            weight=d.get("weight"),
            market=d.get("market"),
            quantity_in_logs=bool(d.get("quantity_in_logs", False)),
            price_column=d.get("price_column"),
            risk_column=d.get("risk_column"),
        )

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _transform(kind, col, values):
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise DataError(f"non-finite values in regressor column {col!r}")
    if kind == "log":
        if np.any(v <= 0.0):
            raise DataError(f"log regressor {col!r} requires strictly positive values")
        return np.log(v)
    if kind == "binary" and not np.all(np.isin(v, (0.0, 1.0))):
        raise DataError(f"binary regressor {col!r} has values outside {{0, 1}}")
    return v


class DesignInfo:
    """Resolved design: per-equation term lists plus categorical level maps.

    Terms are JSON-friendly tuples:
      ("const",) | ("num", col) | ("log", col) | ("dum", col, level)
      | ("int", col, level, other_col, other_kind)
    """

    def __init__(self, terms, names, levels, spec_dict):
        self.terms = terms
        self.names = names
        self.levels = levels
        self.spec_dict = spec_dict  # original column spec, kept for profiles

    @classmethod
    def from_spec(cls, spec: ColumnSpec, df: pd.DataFrame):
        levels = {}
        value_kind = {}
        for reg in spec.regressors:
            if reg.kind in ("numeric", "binary", "log"):
                value_kind[reg.column] = "log" if reg.kind == "log" else "num"
        for reg in spec.regressors:
            if reg.kind != "categorical":
                continue
            if reg.categories is not None:
                levs = [str(c) for c in reg.categories]
            else:
                if reg.column not in df.columns:
                    raise SchemaError(f"missing categorical column {reg.column!r}")
                levs = sorted(df[reg.column].astype(str).unique())
            base = str(reg.base) if reg.base is not None else levs[0]
            if base not in levs:
                raise SchemaError(f"base category {base!r} not among levels of {reg.column!r}")
            levels[reg.column] = {"levels": levs, "base": base}
            if reg.interact_with is not None and reg.interact_with not in value_kind:
                raise SchemaError(
                    f"{reg.column!r} interacts with unknown numeric entry {reg.interact_with!r}"
                )

        terms = {eq: [("const",)] for eq in EQUATIONS}
        names = {eq: ["const"] for eq in EQUATIONS}
        for reg in spec.regressors:
            for eq in reg.equations:
                if reg.kind in ("numeric", "binary"):
                    terms[eq].append(("num", reg.column))
                    names[eq].append(reg.column)
                elif reg.kind == "log":
                    terms[eq].append(("log", reg.column))
                    names[eq].append(f"log({reg.column})")
                else:
                    info = levels[reg.column]
                    for lev in info["levels"]:
                        if lev == info["base"]:
                            continue
                        if reg.interact_with is None:
                            terms[eq].append(("dum", reg.column, lev))
                            names[eq].append(f"{reg.column}[{lev}]")
                        else:
                            other_kind = value_kind[reg.interact_with]
                            terms[eq].append(
                                ("int", reg.column, lev, reg.interact_with, other_kind)
                            )
                            tag = (
                                f"log({reg.interact_with})"
                                if other_kind == "log"
                                else reg.interact_with
                            )
                            names[eq].append(f"{reg.column}[{lev}]*{tag}")
        spec_dict = {
            "access": spec.access,
            "use": spec.use,
            "quantity": spec.quantity,
            "weight": spec.weight,
            "market": spec.market,
            "quantity_in_logs": spec.quantity_in_logs,
            "price_column": spec.price_column,
            "risk_column": spec.risk_column,
        }
        return cls(terms, names, levels, spec_dict)

    def _term_values(self, term, get):
        kind = term[0]
        if kind == "const":
            return 1.0
        if kind in ("num", "log"):
            return _transform("log" if kind == "log" else "num", term[1], get(term[1]))
        if kind == "dum":
            raw = np.asarray(get(term[1])).astype(str)
            self._check_levels(term[1], raw)
            return (raw == term[2]).astype(float)
        # interaction dummy * numeric
        _, col, lev, other, other_kind = term
        raw = np.asarray(get(col)).astype(str)
        self._check_levels(col, raw)
        dummy = (raw == lev).astype(float)
        return dummy * _transform(other_kind, other, get(other))

    def _check_levels(self, col, raw):
        known = set(self.levels[col]["levels"])
        unknown = set(np.unique(raw)) - known
        if unknown:
            raise SchemaError(f"unknown categories {sorted(unknown)} in column {col!r}")

    def matrix(self, df: pd.DataFrame, equation: str) -> np.ndarray:
        """Design matrix for one equation over a full table."""
        n = len(df)

        def get(col):
            if col not in df.columns:
                raise SchemaError(f"missing regressor column {col!r}")
            return df[col].to_numpy()

        cols = []
        for term in self.terms[equation]:
            v = self._term_values(term, get)
            cols.append(np.full(n, 1.0) if np.isscalar(v) else np.broadcast_to(v, (n,)))
        return np.column_stack(cols) if cols else np.empty((n, 0))

    def profile_row(self, profile: dict):
        """(x_a, x_c, x_y) for one covariate profile given as a plain dict."""
        frame = pd.DataFrame([profile])
        return tuple(self.matrix(frame, eq)[0] for eq in EQUATIONS)

    def to_dict(self):
        return {
            "terms": {eq: [list(t) for t in ts] for eq, ts in self.terms.items()},
            "names": self.names,
            "levels": self.levels,
            "spec": self.spec_dict,
        }

    @classmethod
    def from_dict(cls, d):
        terms = {eq: [tuple(t) for t in ts] for eq, ts in d["terms"].items()}
        return cls(terms, d["names"], d["levels"], d["spec"])


# ---------------------------------------------------------------------------
# Partition and records
# ---------------------------------------------------------------------------

def leading_block(m, size):
    """f(G_s, M): the leading ``size`` rows/columns of a stacked vector or matrix."""
    m = np.asarray(m)
    return m[:size] if m.ndim == 1 else m[:size, :size]


@dataclass(frozen=True)
class GroupPartition:
    """Exhaustive disjoint split: G1 no access, G2 access only, G3 consumers."""

    codes: np.ndarray

    @classmethod
    def from_outcomes(cls, access, use):
        codes = np.ones(access.shape[0], dtype=np.int8)
        codes[(access == 1) & (use == 0)] = 2
        codes[(access == 1) & (use == 1)] = 3
        return cls(codes)

    def indices(self, group: int) -> np.ndarray:
        return np.flatnonzero(self.codes == group)

    @property
    def sizes(self):
        return {g: int(np.sum(self.codes == g)) for g in (1, 2, 3)}


@dataclass(frozen=True)
class ObservationRecord:
    """Single-row view of the dataset, mainly for inspection and tests."""

    access: int
    use: int | None
    log_quantity: float | None
    x_a: np.ndarray
    x_c: np.ndarray
    x_y: np.ndarray
    weight: float
    market: str


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Columnar store of observations plus the resolved design."""

    x_a: np.ndarray
    x_c: np.ndarray
    x_y: np.ndarray
    access: np.ndarray
    use: np.ndarray           # NaN when access == 0
    log_quantity: np.ndarray  # NaN unless use == 1
    weight: np.ndarray
    market: np.ndarray
    row_ids: np.ndarray
    groups: GroupPartition
    design: DesignInfo | None = None
    access_corrections: int = 0

    @property
    def n(self) -> int:
        return self.x_a.shape[0]

    @property
    def dims(self):
        """(H, K, L): columns of the access / use / quantity designs."""
        return self.x_a.shape[1], self.x_c.shape[1], self.x_y.shape[1]

    def record(self, i: int) -> ObservationRecord:
        a = int(self.access[i])
        c = None if np.isnan(self.use[i]) else int(self.use[i])
        y = None if np.isnan(self.log_quantity[i]) else float(self.log_quantity[i])
        return ObservationRecord(
            a, c, y, self.x_a[i], self.x_c[i], self.x_y[i],
            float(self.weight[i]), str(self.market[i]),
        )

    def reordered(self, perm) -> "Dataset":
        """Same observations in a different physical order; row ids travel along."""
        perm = np.asarray(perm)
        return Dataset(
            x_a=self.x_a[perm], x_c=self.x_c[perm], x_y=self.x_y[perm],
            access=self.access[perm], use=self.use[perm],
            log_quantity=self.log_quantity[perm],
            weight=self.weight[perm], market=self.market[perm],
            row_ids=self.row_ids[perm],
            groups=GroupPartition(self.groups.codes[perm]),
            design=self.design, access_corrections=self.access_corrections,
        )

    @classmethod
    def from_arrays(cls, x_a, x_c, x_y, access, use, log_quantity,
                    weight=None, market=None, design=None, access_corrections=0):
        x_a = np.asarray(x_a, dtype=float)
        x_c = np.asarray(x_c, dtype=float)
        x_y = np.asarray(x_y, dtype=float)
        n = x_a.shape[0]
        access = np.asarray(access, dtype=np.int8)
        use = np.asarray(use, dtype=float)
        log_quantity = np.asarray(log_quantity, dtype=float)
        weight = np.ones(n) if weight is None else np.asarray(weight, dtype=float)
        market = np.full(n, "all", dtype=object) if market is None else np.asarray(market, dtype=object)
        if np.any(weight <= 0.0):
            raise DataError("weights must be strictly positive")
        groups = GroupPartition.from_outcomes(access, np.nan_to_num(use, nan=-1.0))
        return cls(x_a, x_c, x_y, access, use, log_quantity, weight, market,
                   np.arange(n, dtype=np.int64), groups, design, access_corrections)

    @classmethod
    def empty(cls, h: int, k: int, l: int) -> "Dataset":
        """Zero-row dataset with fixed design dimensions (prior-only runs)."""
        z = np.empty(0)
        return cls.from_arrays(
            np.empty((0, h)), np.empty((0, k)), np.empty((0, l)),
            np.empty(0, dtype=np.int8), z, z,
        )


def build_dataset(df: pd.DataFrame, spec: ColumnSpec) -> Dataset:
    """Validate a raw table against the column spec and assemble a Dataset.

    Applies the consistency rule: a reported consumer without access gets
    access overwritten to 1 (counted in ``access_corrections``).
    """
    for col in (spec.access, spec.use, spec.quantity):
        if col not in df.columns:
            raise SchemaError(f"missing outcome column {col!r}")

    access_raw = df[spec.access].to_numpy()
    if not np.all(np.isin(access_raw[~pd.isna(access_raw)], (0, 1))):
        raise DataError(f"access column {spec.access!r} must be binary")
    if np.any(pd.isna(access_raw)):
        raise DataError(f"access column {spec.access!r} has missing values")
    access = access_raw.astype(np.int8)

    use_raw = df[spec.use].to_numpy(dtype=float, na_value=np.nan)
    consumer = use_raw == 1.0
    fixed = consumer & (access == 0)
    n_fixed = int(np.sum(fixed))
    access = np.where(fixed, 1, access).astype(np.int8)

    missing_use = (access == 1) & ~np.isin(use_raw, (0.0, 1.0))
    if np.any(missing_use):
        rows = np.flatnonzero(missing_use)[:10].tolist()
        raise DataError(f"use outcome missing or non-binary for accessed rows {rows}")
    use = np.where(access == 1, use_raw, np.nan)

    qty = df[spec.quantity].to_numpy(dtype=float, na_value=np.nan)
    bad_y = consumer & ~np.isfinite(qty)
    if spec.quantity_in_logs:
        log_quantity = np.where(consumer, qty, np.nan)
    else:
        bad_y |= consumer & (qty <= 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            log_quantity = np.where(consumer & (qty > 0.0), np.log(qty), np.nan)
    if np.any(bad_y):
        rows = np.flatnonzero(bad_y)[:10].tolist()
        raise DataError(f"quantity missing or non-positive for consumer rows {rows}")

    design = DesignInfo.from_spec(spec, df)
    x_a = design.matrix(df, "a")
    x_c = design.matrix(df, "c")
    x_y = design.matrix(df, "y")

    weight = None
    if spec.weight is not None:
        if spec.weight not in df.columns:
            raise SchemaError(f"missing weight column {spec.weight!r}")
        weight = df[spec.weight].to_numpy(dtype=float)
    market = None
    if spec.market is not None:
        if spec.market not in df.columns:
            raise SchemaError(f"missing market column {spec.market!r}")
        market = df[spec.market].astype(str).to_numpy(dtype=object)

    return Dataset.from_arrays(
        x_a, x_c, x_y, access, use, log_quantity,
        weight=weight, market=market, design=design, access_corrections=n_fixed,
    )


# ---------------------------------------------------------------------------
# Priors and identification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PriorSpec:
    """Conjugate prior block: N(theta0, Theta0) on locations, IW(R0, r0) on the
    unidentified covariance.  Defaults are the flat working choice: zero mean,
    variance 1000 per coordinate, identity scale, dof 5.
    """

    theta_mean: float = 0.0
    theta_var: float = 1000.0
    r_scale: np.ndarray = field(default_factory=lambda: np.eye(3))
    r_dof: float = 5.0

    def __post_init__(self):
        if self.theta_var <= 0.0:
            raise ValueError("theta_var must be positive")
        scale = np.asarray(self.r_scale, dtype=float)
        if scale.shape != (3, 3):
            raise ValueError("r_scale must be 3x3")
        try:
            np.linalg.cholesky(scale)
        except np.linalg.LinAlgError as exc:
            raise DecompositionError("r_scale is not positive definite") from exc
        if self.r_dof <= 2.0:
            raise ValueError("r_dof must exceed 2 so every conditional shape is proper")

    def theta_mean_vector(self, p: int) -> np.ndarray:
        return np.full(p, float(self.theta_mean))

    def theta_precision(self, p: int) -> np.ndarray:
        return np.eye(p) / float(self.theta_var)


def identify(omega: np.ndarray):
    """Map the unidentified covariance to the identified scale.

    Returns (sigma, rescalers) with sigma = D omega D for
    D = diag(1/sqrt(omega_11), 1/sqrt(omega_22), 1); the rescalers multiply
    the corresponding location-parameter blocks.
    """
    omega = np.asarray(omega, dtype=float)
    try:
        np.linalg.cholesky(omega)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError("covariance is not positive definite") from exc
    d = np.array([1.0 / np.sqrt(omega[0, 0]), 1.0 / np.sqrt(omega[1, 1]), 1.0])
    sigma = omega * np.outer(d, d)
    sigma[0, 0] = 1.0
    sigma[1, 1] = 1.0
    return sigma, d


@dataclass(frozen=True)
class CovarianceState:
    """Unidentified covariance and its identified image, kept in lockstep."""

    omega: np.ndarray
    sigma: np.ndarray

    @classmethod
    def from_omega(cls, omega) -> "CovarianceState":
        sigma, _ = identify(omega)
        return cls(np.asarray(omega, dtype=float), sigma)
