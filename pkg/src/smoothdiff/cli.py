"""Command-line interface: analysis on user data, simulation presets, diagnostics.

Exit codes: 0 success, 2 input/configuration error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from .basis import design_matrix, difference_penalty, make_basis
from .errors import NumericalError, ParameterError
from .fitting import StratumData, StratumFit, fit_stratum, select_lambda
from .simulate import (
    SimScenario,
    outcome_to_json,
    run_scenario,
    table_csv_lines,
)
from .tdp import threshold_regions
from .toeplitz import PentaParams, build_pentadiagonal, decay_rate, factor_pentadiagonal
from .windows import window_stat_correlation, window_statistics

SEED_ENV_VAR = "SMOOTHDIFF_SEED"
CURVE_GRID_POINTS = 201
BAND_MULTIPLIER = 1.96


@dataclass(frozen=True)
class AnalysisConfig:
    """Resolved settings for the analyze command (flags > config file > defaults)."""

    stratum1: str | None = None
    stratum2: str | None = None
    data: str | None = None
    stratum_col: str = "stratum"
    family: str = "gaussian"
    basis_dim: int = 120
    degree: int = 3
    domain: tuple[float, float] | None = None
    alpha: float = 0.05
    tdp: tuple[float, ...] = (0.5, 0.7, 0.9)
    lam: float | None = None
    out: str = "smoothdiff_out"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ParameterError(f"alpha must be in (0, 1), got {self.alpha}")
        taus = tuple(sorted({float(t) for t in self.tdp}, reverse=True))
        if any(not 0 < t <= 1 for t in taus):
            raise ParameterError("TDP thresholds must lie in (0, 1]")
        object.__setattr__(self, "tdp", taus)


def _parse_kv_file(path: str) -> dict[str, str]:
    """Flat key = value configuration text; '#' starts a comment."""
    out: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ParameterError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
                key, value = line.split("=", 1)
                out[key.strip()] = value.strip()
    except OSError as exc:
        raise ParameterError(f"cannot read config file {path}: {exc}") from exc
    return out


def _float_tuple(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.replace(",", " ").split())


def read_stratum_csv(path: str, stratum_col: str | None = None):
    """Read 'y,z[,stratum][,x_*]' CSV into one or two StratumData-ready dicts."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise ParameterError(f"{path}: empty file (header row required)")
            fields = [f.strip() for f in reader.fieldnames]
            if "y" not in fields or "z" not in fields:
                raise ParameterError(f"{path}: header must contain 'y' and 'z' columns")
            x_cols = [f for f in fields if f.startswith("x_")]
            rows = []
            for lineno, row in enumerate(reader, 2):
                try:
                    parsed = {
                        "y": float(row["y"]),
                        "z": float(row["z"]),
                        "x": [float(row[c]) for c in x_cols],
                    }
                except (TypeError, ValueError) as exc:
                    raise ParameterError(f"{path}:{lineno}: non-numeric field ({exc})") from exc
                if stratum_col is not None:
                    if stratum_col not in row or row[stratum_col] is None:
                        raise ParameterError(f"{path}:{lineno}: missing stratum column {stratum_col!r}")
                    parsed["stratum"] = row[stratum_col].strip()
                rows.append(parsed)
    except OSError as exc:
        raise ParameterError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ParameterError(f"{path}: no data rows")
    return rows, x_cols


def _rows_to_data(rows: list[dict], x_cols: list[str], family: str) -> StratumData:
    y = np.asarray([r["y"] for r in rows])
    z = np.asarray([r["z"] for r in rows])
    X = np.asarray([r["x"] for r in rows]) if x_cols else None
    return StratumData(y=y, z=z, family=family, X=X)


def load_strata(config: AnalysisConfig) -> tuple[StratumData, StratumData]:
    if config.data is not None:
        rows, x_cols = read_stratum_csv(config.data, config.stratum_col)
        labels = sorted({r["stratum"] for r in rows})
        if len(labels) != 2:
            raise ParameterError(
                f"{config.data}: expected exactly 2 stratum labels, found {labels}"
            )
        groups = [[r for r in rows if r["stratum"] == lab] for lab in labels]
        return tuple(_rows_to_data(g, x_cols, config.family) for g in groups)
    if config.stratum1 is None or config.stratum2 is None:
        raise ParameterError("provide either --data with a stratum column or both stratum files")
    out = []
    for path in (config.stratum1, config.stratum2):
        rows, x_cols = read_stratum_csv(path)
        out.append(_rows_to_data(rows, x_cols, config.family))
    return out[0], out[1]


def write_stratum_csv(path: str, data1: StratumData, data2: StratumData) -> None:
    """Dump two strata to the analyze input format (full float precision)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("y,z,stratum\n")
        for label, data in (("1", data1), ("2", data2)):
            for yi, zi in zip(data.y, data.z):
                fh.write(f"{float(yi)!r},{float(zi)!r},{label}\n")


def _fit_payload(fit: StratumFit, lam_source: str) -> dict:
    return {
        "lambda": fit.lam,
        "lambda_source": lam_source,
        "dispersion": fit.dispersion,
        "edf": fit.edf,
        "deviance": fit.deviance,
        "family": fit.family,
        "n_obs": fit.n_obs,
        "coef": [float(c) for c in fit.coef],
        "beta": [float(b) for b in fit.beta],
        "cov": [[float(v) for v in row] for row in fit.cov],
    }


def cmd_analyze(config: AnalysisConfig) -> int:
    data1, data2 = load_strata(config)
    if config.domain is not None:
        z_lo, z_hi = config.domain
    else:
        z_lo = min(data1.z.min(), data2.z.min())
        z_hi = max(data1.z.max(), data2.z.max())
    spec = make_basis(z_lo, z_hi, config.basis_dim, config.degree)
    pen = difference_penalty(config.basis_dim)

    fits = []
    sources = []
    for data in (data1, data2):
        if config.lam is not None:
            lam, source = config.lam, "fixed"
        else:
            lam, source = select_lambda(data, spec, pen), "gcv"
        fits.append(fit_stratum(data, spec, pen, lam))
        sources.append(source)
    series = window_statistics(fits[0], fits[1], spec)
    report = threshold_regions(series, config.alpha, config.tdp)

    os.makedirs(config.out, exist_ok=True)
    fits_payload = {
        "basis": {
            "degree": spec.degree,
            "m": spec.m,
            "domain": [spec.z_lo, spec.z_hi],
            "knots": [float(k) for k in spec.knots],
        },
        "alpha": config.alpha,
        "strata": [_fit_payload(f, s) for f, s in zip(fits, sources)],
    }
    with open(os.path.join(config.out, "fits.json"), "w", encoding="utf-8") as fh:
        json.dump(fits_payload, fh, sort_keys=True, indent=1)

    with open(os.path.join(config.out, "windows.csv"), "w", encoding="utf-8") as fh:
        fh.write("k,region_lo,region_hi,T,p\n")
        for k in range(series.n_windows):
            lo, hi = series.regions[k]
            fh.write(
                f"{k},{float(lo)!r},{float(hi)!r},{float(series.T[k])!r},{float(series.p[k])!r}\n"
            )

    regions_payload = {
        "alpha": config.alpha,
        "h": report.h,
        "regions": [
            {
                "tdp_threshold": rec.tau,
                "windows": list(rec.windows),
                "phi": rec.phi,
                "tdp_lower_bound": rec.bound,
                "intervals": [list(iv) for iv in rec.intervals],
            }
            for rec in report.records
        ],
    }
    with open(os.path.join(config.out, "regions.json"), "w", encoding="utf-8") as fh:
        json.dump(regions_payload, fh, sort_keys=True, indent=1)
    with open(os.path.join(config.out, "regions.csv"), "w", encoding="utf-8") as fh:
        fh.write("tdp_threshold,interval_lo,interval_hi,tdp_lower_bound,alpha\n")
        for rec in report.records:
            for lo, hi in rec.intervals:
                fh.write(f"{rec.tau!r},{lo!r},{hi!r},{rec.bound!r},{config.alpha!r}\n")

    grid = np.linspace(spec.z_lo, spec.z_hi, CURVE_GRID_POINTS)
    dm = design_matrix(spec, grid)
    with open(os.path.join(config.out, "curves.csv"), "w", encoding="utf-8") as fh:
        fh.write("z,fit1,lo1,hi1,fit2,lo2,hi2\n")
        cols = []
        for fit in fits:
            center = dm.predict(fit.coef)
            se = np.sqrt(np.einsum("ij,jk,ik->i", dm.dense, fit.cov, dm.dense))
            cols.append((center, center - BAND_MULTIPLIER * se, center + BAND_MULTIPLIER * se))
        for i, z in enumerate(grid):
            row = [repr(float(z))]
            for center, lo, hi in cols:
                row += [repr(float(center[i])), repr(float(lo[i])), repr(float(hi[i]))]
            fh.write(",".join(row) + "\n")

    for rec in report.records:
        ivals = ", ".join(f"[{lo:.4g}, {hi:.4g}]" for lo, hi in rec.intervals) or "(none)"
        print(f"tdp>={rec.tau}: bound={rec.bound:.3f} windows={len(rec.windows)} intervals={ivals}")
    return 0


_TABLE_SCENARIOS = {
    "table1a": SimScenario(
        n_nonzero=15, alphas=(0.1, 0.2, 0.3), n_replicates=2000, seed=20260810
    ),
    "table1b": SimScenario(
        n_nonzero=30, alphas=(0.1, 0.2, 0.3), n_replicates=1000, seed=20260810
    ),
    "tableS1": SimScenario(
        n_nonzero=20,
        family="binomial",
        m_delta=6.0,
        alphas=(0.1, 0.2, 0.3),
        n_replicates=1000,
        seed=20260810,
    ),
    "fig5": SimScenario(
        n_nonzero=15,
        alphas=(0.2,),
        m_delta_sweep=(0.0, 2.5),
        n_replicates=1000,
        seed=20260810,
    ),
    "fig6": SimScenario(
        n_nonzero=30,
        alphas=(0.2,),
        m_delta_sweep=(0.0, 2.5),
        n_replicates=1000,
        seed=20260810,
    ),
    "fig8": SimScenario(
        n_nonzero=20,
        family="binomial",
        alphas=(0.2,),
        m_delta_sweep=(0.0, 9.0),
        n_replicates=1000,
        seed=20260810,
    ),
}
_TABLE_SCENARIOS["table2a"] = _TABLE_SCENARIOS["table1a"]
_TABLE_SCENARIOS["table2b"] = _TABLE_SCENARIOS["table1b"]

_SCENARIO_FIELD_PARSERS = {
    "n_nonzero": int,
    "sigma_b2": float,
    "sigma_delta2": float,
    "m_delta": float,
    "noise_var": float,
    "n_per_stratum": int,
    "m": int,
    "degree": int,
    "penalty_order": int,
    "nu": float,
    "domain": _float_tuple,
    "family": str,
    "alphas": _float_tuple,
    "thresholds": _float_tuple,
    "n_replicates": int,
    "seed": int,
    "m_delta_sweep": _float_tuple,
}


def load_scenario(path: str) -> SimScenario:
    """SimScenario from a flat key = value file."""
    raw = _parse_kv_file(path)
    kwargs = {}
    for key, value in raw.items():
        if key not in _SCENARIO_FIELD_PARSERS:
            raise ParameterError(f"{path}: unknown scenario key {key!r}")
        try:
            kwargs[key] = _SCENARIO_FIELD_PARSERS[key](value)
        except ValueError as exc:
            raise ParameterError(f"{path}: bad value for {key!r}: {value!r}") from exc
    if "n_nonzero" not in kwargs:
        raise ParameterError(f"{path}: scenario requires n_nonzero")
    return SimScenario(**kwargs)


def _write_sweep_csv(path: str, outcome) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            "replicate,m_delta,alpha,tdp_threshold,n_windows,bound,"
            "empirical_tdp,truth_coverage,truth_region_tdp\n"
        )
        for rec in outcome.records:
            if rec.failed:
                continue
            for region in rec.regions:
                emp = "" if region.empirical_tdp is None else repr(region.empirical_tdp)
                covg = "" if region.truth_coverage is None else repr(region.truth_coverage)
                truth_tdp = rec.truth_region_tdp.get(region.alpha)
                tr = "" if truth_tdp is None else repr(truth_tdp)
                fh.write(
                    f"{rec.index},{rec.m_delta!r},{region.alpha!r},{region.tau!r},"
                    f"{region.n_windows},{region.bound!r},{emp},{covg},{tr}\n"
                )


def cmd_simulate(args) -> int:
    if args.scenario is not None:
        scenario = load_scenario(args.scenario)
        name = os.path.splitext(os.path.basename(args.scenario))[0]
    else:
        if args.preset not in _TABLE_SCENARIOS:
            raise ParameterError(
                f"unknown preset {args.preset!r}; available: {', '.join(sorted(_TABLE_SCENARIOS))}"
            )
        scenario = _TABLE_SCENARIOS[args.preset]
        name = args.preset
    overrides = {}
    if args.replicates is not None:
        overrides["n_replicates"] = args.replicates
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.alpha is not None:
        overrides["alphas"] = (args.alpha,)
    if args.tdp is not None:
        overrides["thresholds"] = tuple(args.tdp)
    if overrides:
        scenario = replace(scenario, **overrides)

    outcome = run_scenario(scenario, threads=args.threads)

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, f"{name}_outcome.json"), "w", encoding="utf-8") as fh:
        fh.write(outcome_to_json(outcome))
    for label, table in (("error", outcome.error_table), ("tdp", outcome.tdp_table)):
        with open(os.path.join(args.out, f"{name}_{label}_table.csv"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(table_csv_lines(table)) + "\n")
    if scenario.m_delta_sweep is not None:
        _write_sweep_csv(os.path.join(args.out, f"{name}_curves.csv"), outcome)

    table = outcome.tdp_table if name.startswith("table2") or name == "tableS1" else outcome.error_table
    kind = "mean empirical TDP" if table is outcome.tdp_table else "type 1 error"
    print(f"{name}: {kind} over {outcome.n_effective} replicates ({outcome.n_failed} failed)")
    taus = scenario.thresholds
    print("          " + "  ".join(f"tdp={t:<5g}" for t in taus))
    for alpha in scenario.alphas:
        cells = "  ".join(f"{table[(alpha, t)][0]:<9.3f}" for t in taus)
        print(f"alpha={alpha:<4g} {cells}")
    return 0


def cmd_diagnose(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    payload = {}
    if args.model is None:
        params = PentaParams(eps=args.epsilon, theta=args.theta, lam_p=args.lambda_p, n=args.dim)
        z1, z2 = factor_pentadiagonal(params)
        residual = float(
            np.max(np.abs(z1.dense() @ z2.dense() - build_pentadiagonal(params)))
        )
        payload = {
            "epsilon": args.epsilon,
            "theta": args.theta,
            "lambda_p": args.lambda_p,
            "dim": args.dim,
            "pi": [z1.diag, z2.diag * args.lambda_p],
            "psi": [z1.psi, z2.psi],
            "psi_min": None,
            "empirical_decay_rate": None,
            "reconstruction_residual": residual,
        }
        summary = f"residual={residual:.3e}"
        if z1.psi is not None and z2.psi is not None:
            diag = decay_rate(params)
            payload["psi_min"] = diag.psi_min
            payload["empirical_decay_rate"] = diag.empirical_rate
            summary += f" psi_min={diag.psi_min:.6f} empirical={diag.empirical_rate:.6f}"
        else:
            summary += " (decay rate undefined: some pi_i <= 2*lam_p)"
        print(summary)
    else:
        with open(args.model, encoding="utf-8") as fh:
            model = json.load(fh)
        basis = model["basis"]
        spec = make_basis(basis["domain"][0], basis["domain"][1], basis["m"], basis["degree"])
        fits = []
        for entry in model["strata"]:
            fits.append(
                StratumFit(
                    coef=np.asarray(entry["coef"]),
                    beta=np.asarray(entry["beta"]),
                    lam=entry["lambda"],
                    dispersion=entry["dispersion"],
                    cov=np.asarray(entry["cov"]),
                    edf=entry["edf"],
                    family=entry["family"],
                    deviance=entry["deviance"],
                    n_obs=entry["n_obs"],
                )
            )
        max_lag = min(args.max_lag, spec.n_regions - 1)
        anchor = spec.n_regions // 2 - max_lag // 2
        rows = []
        for lag in range(max_lag + 1):
            corr = window_stat_correlation(fits[0], fits[1], spec, anchor, anchor + lag)
            rows.append((lag, float(corr)))
        path = os.path.join(args.out, "correlation_table.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("lag,correlation\n")
            for lag, corr in rows:
                fh.write(f"{lag},{corr!r}\n")
        payload = {"anchor_window": anchor, "correlations": [list(r) for r in rows]}
        for lag, corr in rows:
            print(f"lag={lag}: corr={corr:.6f}")
    with open(os.path.join(args.out, "diagnostics.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
    return 0


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise ParameterError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smoothdiff",
        description="Localize differences between two spline smooths with TDP lower bounds",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="fit two strata and report TDP regions")
    pa.add_argument("--config", help="flat key = value config file")
    pa.add_argument("--stratum1", help="CSV for stratum 1 (columns y,z[,x_*])")
    pa.add_argument("--stratum2", help="CSV for stratum 2")
    pa.add_argument("--data", help="single CSV with a stratum column")
    pa.add_argument("--stratum-col", help="stratum column name (default 'stratum')")
    pa.add_argument("--family", choices=["gaussian", "binomial"])
    pa.add_argument("--basis-dim", type=int, help="basis dimension m")
    pa.add_argument("--degree", type=int, help="B-spline degree")
    pa.add_argument("--domain", type=float, nargs=2, metavar=("LO", "HI"))
    pa.add_argument("--alpha", type=float)
    pa.add_argument("--tdp", type=float, nargs="+", help="TDP thresholds")
    pa.add_argument("--lambda", dest="lam", type=float, help="fixed smoothing parameter")
    pa.add_argument("--seed", type=int)
    pa.add_argument("--threads", type=int, default=None)
    pa.add_argument("--out", help="output directory")

    ps = sub.add_parser("simulate", help="run a simulation preset or scenario file")
    group = ps.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", choices=sorted(_TABLE_SCENARIOS), help="named preset")
    group.add_argument("--scenario", help="flat key = value scenario file")
    ps.add_argument("--replicates", type=int)
    ps.add_argument("--alpha", type=float)
    ps.add_argument("--tdp", type=float, nargs="+")
    ps.add_argument("--seed", type=int)
    ps.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    ps.add_argument("--out", default="smoothdiff_out")

    pd = sub.add_parser("diagnose", help="factorization, decay and correlation diagnostics")
    pd.add_argument("--epsilon", type=float, help="diagonal value")
    pd.add_argument("--theta", type=float, help="first off-diagonal")
    pd.add_argument("--lambda-p", dest="lambda_p", type=float, help="second off-diagonal")
    pd.add_argument("--dim", type=int, default=60)
    pd.add_argument("--model", help="fits.json from analyze")
    pd.add_argument("--max-lag", type=int, default=12)
    pd.add_argument("--out", default="smoothdiff_out")
    return parser


_CONFIG_FIELD_PARSERS = {
    "stratum1": str,
    "stratum2": str,
    "data": str,
    "stratum_col": str,
    "family": str,
    "basis_dim": int,
    "degree": int,
    "domain": _float_tuple,
    "alpha": float,
    "tdp": _float_tuple,
    "lambda": float,
    "seed": int,
    "out": str,
}


def _analysis_config(args) -> AnalysisConfig:
    settings: dict = {}
    if args.config is not None:
        raw = _parse_kv_file(args.config)
        for key, value in raw.items():
            if key not in _CONFIG_FIELD_PARSERS:
                raise ParameterError(f"{args.config}: unknown config key {key!r}")
            try:
                settings["lam" if key == "lambda" else key] = _CONFIG_FIELD_PARSERS[key](value)
            except ValueError as exc:
                raise ParameterError(f"{args.config}: bad value for {key!r}: {value!r}") from exc
    flag_map = {
        "stratum1": args.stratum1,
        "stratum2": args.stratum2,
        "data": args.data,
        "stratum_col": args.stratum_col,
        "family": args.family,
        "basis_dim": args.basis_dim,
        "degree": args.degree,
        "domain": tuple(args.domain) if args.domain else None,
        "alpha": args.alpha,
        "tdp": tuple(args.tdp) if args.tdp else None,
        "lam": args.lam,
        "seed": args.seed,
        "out": args.out,
    }
    for key, value in flag_map.items():
        if value is not None:
            settings[key] = value
    settings.setdefault("seed", _default_seed())
    return AnalysisConfig(**settings)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "analyze":
            return cmd_analyze(_analysis_config(args))
        if args.command == "simulate":
            if args.seed is None and SEED_ENV_VAR in os.environ:
                args.seed = _default_seed()
            return cmd_simulate(args)
        if args.command == "diagnose":
            if args.model is None and None in (args.epsilon, args.theta, args.lambda_p):
                raise ParameterError(
                    "diagnose needs either --model or all of --epsilon/--theta/--lambda-p"
                )
            return cmd_diagnose(args)
        raise ParameterError(f"unknown command {args.command!r}")
    except ParameterError as exc:
        print(f"smoothdiff: input error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"smoothdiff: numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
