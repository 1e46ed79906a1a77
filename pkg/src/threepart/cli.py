"""Command-line surface: simulate, impute, fit, diagnose, predict, policy.

Exit codes: 0 success, 2 validation problem, 3 numerical failure, 4 I/O
failure.  Every output lands in --out via a temp-file rename, so an
interrupted run never corrupts earlier results.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from .data import ColumnSpec, Dataset, build_dataset
from .diagnostics import diagnose_chain
from .errors import DataError, NumericalError, ThreePartError
from .pipeline import PipelineConfig, run_pipeline
from .policy import (Scenario, apply_scenario_frame, population_delta,
                     predict_individual, profile_under_scenario, tax_revenue)
from .sampler import ChainConfig, ChainStore, run_chain
from .synthetic import GeneratorSpec, frame_column_spec, generate, to_frame


def _atomic_write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_frame(path: Path, df: pd.DataFrame, fmt: str = "csv"):
    if fmt == "json":
        _atomic_write_text(path.with_suffix(".json"),
                           df.to_json(orient="records", indent=2))
    else:
        _atomic_write_text(path.with_suffix(".csv"), df.to_csv(index=False))


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    spec_dict = _load_json(args.input)
    spec = GeneratorSpec(
        n=spec_dict["n"],
        theta_a=spec_dict["theta_a"], theta_c=spec_dict["theta_c"],
        theta_y=spec_dict["theta_y"],
        sigma=np.asarray(spec_dict.get("sigma", np.eye(3).tolist())),
        seed=spec_dict.get("seed", args.seed),
    )
    dataset, truth = generate(spec)
    out = _out_dir(args)
    _atomic_write_frame(out / "synthetic", to_frame(dataset))
    colspec = frame_column_spec(dataset)
    spec_json = {
        "access": colspec.access, "use": colspec.use, "quantity": colspec.quantity,
        "weight": colspec.weight, "market": colspec.market,
        "regressors": [
            {"column": r.column, "equations": list(r.equations), "kind": r.kind}
            for r in colspec.regressors
        ],
    }
    _atomic_write_text(out / "columns.json", json.dumps(spec_json, indent=2))
    truth_json = {
        "theta_a": truth["theta_a"].tolist(), "theta_c": truth["theta_c"].tolist(),
        "theta_y": truth["theta_y"].tolist(), "sigma": truth["sigma"].tolist(),
        "group_sizes": dataset.groups.sizes,
    }
    _atomic_write_text(out / "truth.json", json.dumps(truth_json, indent=2))
    print(f"wrote synthetic.csv, columns.json, truth.json to {out}")


def cmd_impute(args):
    df = pd.read_csv(args.input)
    config = PipelineConfig.from_json(args.columns)
    prepared = run_pipeline(df, config)
    out = _out_dir(args)
    _atomic_write_frame(out / "prepared", prepared)
    n_excluded = int(prepared["excluded_other_variety"].sum())
    n_imputed = int((prepared["price_impute_level"] > 0).sum())
    print(f"prepared {len(prepared)} rows: {n_excluded} excluded (unknown variety), "
          f"{n_imputed} prices imputed")


def _fit_worker(payload):
    csv_path, columns_path, cfg_kwargs, stem = payload
    dataset = build_dataset(pd.read_csv(csv_path), ColumnSpec.from_json(columns_path))
    chain = run_chain(dataset, config=ChainConfig(**cfg_kwargs))
    tmp_stem = stem + ".tmp"
    chain.save(tmp_stem)
    os.replace(tmp_stem + ".csv", stem + ".csv")
    os.replace(tmp_stem + ".json", stem + ".json")
    return stem


def cmd_fit(args):
    out = _out_dir(args)
    jobs = []
    for c in range(args.chains):
        cfg = {"iterations": args.iterations, "burn_in": args.burn_in,
               "thin": args.thin, "seed": args.seed + c, "step2_set": args.step2_set}
        ChainConfig(**cfg)  # validate before spawning workers
        jobs.append((args.input, args.columns, cfg, str(out / f"chain_{c}")))
    if args.chains == 1:
        stems = [_fit_worker(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=args.chains) as pool:
            stems = list(pool.map(_fit_worker, jobs))

    summaries = []
    for c, stem in enumerate(stems):
        summary = ChainStore.load(stem).summary()
        summary.insert(0, "chain", c)
        summaries.append(summary)
    table = pd.concat(summaries, ignore_index=True)
    _atomic_write_frame(out / "fit_summary", table, args.format)
    print(f"fit {args.chains} chain(s); summary rows: {len(table)}")


def cmd_diagnose(args):
    stem = str(args.input)
    if stem.endswith(".csv"):
        stem = stem[:-4]
    chain = ChainStore.load(stem)
    report = diagnose_chain(chain)
    out = _out_dir(args)
    _atomic_write_text(out / "diagnostics.json", report.to_json())
    _atomic_write_text(out / "diagnostics.txt", report.to_text())
    for section, counts in report.summary().items():
        print(f"{section}: {counts['geweke_passed']} of {counts['parameters']} "
              f"passed the mean-equality test; {counts['hw_stationary']} stationary")


def cmd_predict(args):
    stem = str(args.chain)
    if stem.endswith(".csv"):
        stem = stem[:-4]
    chain = ChainStore.load(stem)
    design = chain.design
    if design is None:
        raise DataError("chain metadata carries no design; cannot build profiles")
    profiles = _load_json(args.profile)
    if isinstance(profiles, dict):
        profiles = [profiles]
    scenario = Scenario.from_json(args.scenario) if args.scenario else None

    rows = []
    for idx, profile in enumerate(profiles):
        name = profile.pop("name", f"profile_{idx}")
        x_a, x_c, x_y = profile_under_scenario(design, profile, scenario)
        result = predict_individual(x_a, x_c, x_y, chain, scenario=scenario,
                                    mc_draws=args.mc_draws, rng=args.seed)
        row = {"profile": name}
        row.update(result.to_dict())
        rows.append(row)
    out = _out_dir(args)
    _atomic_write_frame(out / "prediction", pd.DataFrame(rows), args.format)
    print(f"predicted {len(rows)} profile(s)")


def cmd_policy(args):
    stem = str(args.chain)
    if stem.endswith(".csv"):
        stem = stem[:-4]
    chain = ChainStore.load(stem)
    design = chain.design
    if design is None:
        raise DataError("chain metadata carries no design; cannot build scenarios")
    grid = _load_json(args.scenario)
    cost = grid.get("cost_per_gram")
    black = grid.get("black_market_share", 0.0)
    if args.currency_rate is not None:
        currency = args.currency_rate
    else:
        currency = grid.get("currency_rate", 3274.0)
    scenarios = []
    for entry in grid["scenarios"]:
        entry = dict(entry)
        entry.setdefault("access", "legalized")
        entry.setdefault("black_market_share", black)
        if cost is not None and "cost_per_gram" not in entry:
            entry["cost_per_gram"] = cost
        if "tax_per_gram" not in entry and entry.get("cost_per_gram") is not None:
            entry["tax_per_gram"] = entry["price_per_joint"] - entry["cost_per_gram"]
        scenarios.append(Scenario.from_dict(entry))

    out = _out_dir(args)
    df = pd.read_csv(args.input)
    spec = ColumnSpec.from_json(args.columns)
    if spec.weight is None:
        raise DataError("population aggregation needs a weight column in the spec")

    revenue_rows = []
    for scenario in scenarios:
        scen_df = apply_scenario_frame(df, design, scenario)
        x_a = design.matrix(scen_df, "a")
        x_c = design.matrix(scen_df, "c")
        x_y = design.matrix(scen_df, "y")
        weight = scen_df[spec.weight].to_numpy(dtype=float)
        population = Dataset.from_arrays(
            x_a, x_c, x_y,
            np.zeros(len(scen_df), dtype=np.int8),
            np.full(len(scen_df), np.nan), np.full(len(scen_df), np.nan),
            weight=weight)
        result = tax_revenue(chain, population, scenario, rng=args.seed,
                             mc_draws=args.mc_draws, currency_rate=currency)
        price = scenario.price_per_joint
        revenue_rows.append({
            "scenario": scenario.name,
            "price_per_gram": f"{price:.1f}" if price is not None else "n/a",
            "tax_per_gram": f"{scenario.tax_per_gram:.1f}",
            "annual_revenue": result.annual_revenue.mean,
            "annual_revenue_se": result.annual_revenue.se,
            "use_probability": result.use_probability.mean,
            "monthly_joints_per_user": result.monthly_joints_per_user.mean,
        })
    _atomic_write_frame(out / "revenue", pd.DataFrame(revenue_rows), args.format)

    profile_rows = []
    for p_idx, profile in enumerate(grid.get("profiles", [])):
        profile = dict(profile)
        name = profile.pop("name", f"profile_{p_idx}")
        for scenario in scenarios:
            x_a, x_c, x_y = profile_under_scenario(design, profile, scenario)
            result = predict_individual(x_a, x_c, x_y, chain, scenario=None,
                                        mc_draws=args.mc_draws, rng=args.seed)
            row = {"profile": name, "scenario": scenario.name,
                   "price": scenario.price_per_joint,
                   "risk": scenario.risk_override or "as-profiled"}
            row.update(result.to_dict())
            profile_rows.append(row)
    if profile_rows:
        _atomic_write_frame(out / "scenarios", pd.DataFrame(profile_rows), args.format)

    x_a = design.matrix(df, "a")
    x_c = design.matrix(df, "c")
    weight = df[spec.weight].to_numpy(dtype=float)
    delta = population_delta(chain, x_a, x_c, weight, rng=args.seed)
    _atomic_write_text(out / "summary.json", json.dumps({
        "population_delta_pp": delta.mean, "population_delta_pp_se": delta.se,
        "scenarios": [s.to_dict() for s in scenarios],
    }, indent=2))
    print(f"policy tables written for {len(scenarios)} scenario(s); "
          f"population delta {delta.mean:.2f} p.p.")


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------

def _add_common(sub, chain_settings=False, mc=False):
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--format", choices=("csv", "json"), default="csv")
    if chain_settings:
        sub.add_argument("--iterations", type=int, default=6000)
        sub.add_argument("--burn-in", dest="burn_in", type=int, default=1000)
        sub.add_argument("--thin", type=int, default=5)
        sub.add_argument("--chains", type=int, default=1)
        sub.add_argument("--step2-set", dest="step2_set",
                         choices=("accessed", "extensive_only"), default="accessed")
    if mc:
        sub.add_argument("--mc-draws", dest="mc_draws", type=int, default=256)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="threepart",
        description="Three-part demand model: preparation, fitting, diagnostics, "
                    "and counterfactual simulation.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("simulate", help="generate a synthetic dataset from a spec")
    p.add_argument("--input", required=True, help="generator spec JSON")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("impute", help="run the survey preparation pipeline")
    p.add_argument("--input", required=True, help="raw CSV")
    p.add_argument("--columns", required=True, help="pipeline config JSON")
    _add_common(p)
    p.set_defaults(func=cmd_impute)

    p = subs.add_parser("fit", help="run the Gibbs sampler")
    p.add_argument("--input", required=True, help="prepared CSV")
    p.add_argument("--columns", required=True, help="column spec JSON")
    _add_common(p, chain_settings=True)
    p.set_defaults(func=cmd_fit)

    p = subs.add_parser("diagnose", help="convergence diagnostics for a chain")
    p.add_argument("--input", required=True, help="chain file (csv or stem)")
    _add_common(p)
    p.set_defaults(func=cmd_diagnose)

    p = subs.add_parser("predict", help="posterior predictive for covariate profiles")
    p.add_argument("--chain", required=True)
    p.add_argument("--profile", required=True, help="profile JSON (one or a list)")
    p.add_argument("--scenario", help="scenario JSON")
    _add_common(p, mc=True)
    p.set_defaults(func=cmd_predict)

    p = subs.add_parser("policy", help="scenario grid: revenue and profile tables")
    p.add_argument("--chain", required=True)
    p.add_argument("--input", required=True, help="population CSV")
    p.add_argument("--columns", required=True, help="column spec JSON")
    p.add_argument("--scenario", required=True, help="scenario grid JSON")
    p.add_argument("--currency-rate", dest="currency_rate", type=float, default=None,
                   help="divide revenue by this rate (default: grid value, else 3274)")
    _add_common(p, mc=True)
    p.set_defaults(func=cmd_policy)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (NumericalError,) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, ThreePartError, ValueError, KeyError, TypeError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
