"""Two-stratum simulation engine with seeded, replicate-keyed substreams.

A replicate draws shared baseline coefficients, plants sign-shifted
differences on a clumped index set, synthesizes one dataset per stratum,
runs the full fit / window-test / TDP pipeline, and scores the selected
regions against the planted truth by covariate length. Replicates are keyed
by (seed, index) through a counter-based generator, so serial and parallel
runs produce identical output.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from .basis import BasisSpec, design_matrix, difference_penalty, make_basis
from .errors import NumericalError, ParameterError
from .fitting import StratumData, fit_stratum, select_lambda
from .tdp import PValueFamily, phi_alpha, threshold_regions
from .windows import window_statistics

__all__ = [
    "SimScenario",
    "RegionOutcome",
    "ReplicateRecord",
    "SimOutcome",
    "replicate_rng",
    "clumped_indices",
    "gen_coefficients",
    "gen_stratum",
    "run_replicate",
    "run_scenario",
    "outcome_to_json",
    "table_csv_lines",
]


@dataclass(frozen=True)
class SimScenario:
    """Generation and analysis settings for one simulation study."""

    n_nonzero: int
    sigma_b2: float = 0.1
    sigma_delta2: float = 0.05
    m_delta: float = 2.4
    noise_var: float = 0.8
    n_per_stratum: int = 4000
    m: int = 120
    degree: int = 3
    penalty_order: int = 2
    nu: float = 6.0
    domain: tuple[float, float] = (0.0, 10.0)
    family: str = "gaussian"
    alphas: tuple[float, ...] = (0.1,)
    thresholds: tuple[float, ...] = (0.5, 0.7, 0.9)
    n_replicates: int = 100
    seed: int = 0
    m_delta_sweep: tuple[float, float] | None = None

    def __post_init__(self):
        if not 0 < self.n_nonzero < self.m:
            raise ParameterError("n_nonzero must lie strictly between 0 and m")
        if self.m_delta < 0 or self.sigma_delta2 < 0 or self.sigma_b2 < 0:
            raise ParameterError("variances and the minimum shift must be non-negative")
        if self.nu < 1:
            raise ParameterError("clumping factor must be at least 1")
        if self.family not in ("gaussian", "binomial"):
            raise ParameterError(f"unknown family {self.family!r}")
        if any(not 0 < a < 1 for a in self.alphas):
            raise ParameterError("alpha levels must lie in (0, 1)")
        if any(not 0 < t <= 1 for t in self.thresholds):
            raise ParameterError("TDP thresholds must lie in (0, 1]")
        if self.n_replicates < 1:
            raise ParameterError("replicate count must be at least 1")
        object.__setattr__(self, "domain", (float(self.domain[0]), float(self.domain[1])))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(
            self, "thresholds", tuple(sorted((float(t) for t in self.thresholds), reverse=True))
        )

    def basis(self) -> BasisSpec:
        return make_basis(self.domain[0], self.domain[1], self.m, self.degree)

    def m_delta_at(self, index: int) -> float:
        if self.m_delta_sweep is None:
            return self.m_delta
        lo, hi = self.m_delta_sweep
        if self.n_replicates == 1:
            return float(lo)
        return float(lo + (hi - lo) * index / (self.n_replicates - 1))


@dataclass(frozen=True)
class RegionOutcome:
    """Scored selection for one (alpha, threshold) pair in one replicate."""

    alpha: float
    tau: float
    n_windows: int
    bound: float
    empirical_tdp: float | None
    truth_coverage: float | None
    error: int


@dataclass(frozen=True)
class ReplicateRecord:
    index: int
    m_delta: float
    true_indices: tuple[int, ...]
    p_values: tuple[float, ...]
    regions: tuple[RegionOutcome, ...]
    truth_region_tdp: dict
    failed: bool = False
    message: str = ""


@dataclass(frozen=True)
class SimOutcome:
    """Aggregated simulation results: per-cell tables plus raw records."""

    scenario: SimScenario
    records: tuple[ReplicateRecord, ...]
    error_table: dict
    tdp_table: dict
    n_failed: int

    @property
    def n_effective(self) -> int:
        return len(self.records) - self.n_failed


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based substream for one replicate, independent of run order."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def clumped_indices(m: int, k: int, nu: float, rng: np.random.Generator) -> np.ndarray:
    """Draw k distinct indices where neighbors of chosen ones carry weight nu."""
    if not 0 < k < m:
        raise ParameterError(f"number of indices k={k} must lie strictly between 0 and m={m}")
    if nu < 1:
        raise ParameterError("clumping factor must be at least 1")
    chosen = np.zeros(m, dtype=bool)
    for _ in range(k):
        weights = np.ones(m)
        idx = np.flatnonzero(chosen)
        if idx.size:
            adjacent = np.zeros(m, dtype=bool)
            adjacent[idx[idx > 0] - 1] = True
            adjacent[idx[idx < m - 1] + 1] = True
            weights[adjacent] = nu
            weights[chosen] = 0.0
        pick = rng.choice(m, p=weights / weights.sum())
        chosen[pick] = True
    return np.flatnonzero(chosen)


def gen_coefficients(
    scenario: SimScenario, rng: np.random.Generator, m_delta: float | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Baseline and shifted coefficient vectors plus the difference index set.

    Differences on the chosen set are N(0, sigma_delta2) draws pushed away
    from zero by m_delta in the direction of their sign, so every planted
    difference has magnitude at least m_delta.
    """
    if m_delta is None:
        m_delta = scenario.m_delta
    b_base = rng.normal(0.0, np.sqrt(scenario.sigma_b2), scenario.m)
    k_set = clumped_indices(scenario.m, scenario.n_nonzero, scenario.nu, rng)
    delta = rng.normal(0.0, np.sqrt(scenario.sigma_delta2), k_set.size)
    delta = delta + np.where(delta >= 0, 1.0, -1.0) * m_delta
    b_alt = b_base.copy()
    b_alt[k_set] += delta
    return b_base, b_alt, k_set


def gen_stratum(
    coefs: np.ndarray,
    scenario: SimScenario,
    rng: np.random.Generator,
    spec: BasisSpec | None = None,
) -> StratumData:
    """Synthesize one stratum: uniform covariates plus family-specific noise."""
    if spec is None:
        spec = scenario.basis()
    if coefs.size != spec.m:
        raise ParameterError("coefficient vector does not match the basis dimension")
    z = rng.uniform(scenario.domain[0], scenario.domain[1], scenario.n_per_stratum)
    eta = design_matrix(spec, z).predict(coefs)
    if scenario.family == "gaussian":
        y = eta + rng.normal(0.0, np.sqrt(scenario.noise_var), z.size)
    else:
        y = (rng.random(z.size) < expit(eta)).astype(float)
    return StratumData(y=y, z=z, family=scenario.family)


def _truth_cells(spec: BasisSpec, nonzero: np.ndarray) -> np.ndarray:
    cells = np.zeros(spec.n_regions, dtype=bool)
    for j in nonzero:
        lo, hi = spec.basis_support_cells(int(j))
        cells[lo:hi] = True
    return cells


def _selected_cells(spec: BasisSpec, windows) -> np.ndarray:
    cells = np.zeros(spec.n_regions, dtype=bool)
    cells[[int(k) for k in windows]] = True
    return cells


def run_replicate(scenario: SimScenario, index: int) -> ReplicateRecord:
    """Generate, fit and score one replicate; failures are recorded, not raised."""
    rng = replicate_rng(scenario.seed, index)
    m_delta = scenario.m_delta_at(index)
    spec = scenario.basis()
    pen = difference_penalty(scenario.m, scenario.penalty_order)
    b_base, b_alt, k_set = gen_coefficients(scenario, rng, m_delta)
    data_base = gen_stratum(b_base, scenario, rng, spec)
    data_alt = gen_stratum(b_alt, scenario, rng, spec)
    try:
        fits = []
        for data in (data_alt, data_base):
            lam = select_lambda(data, spec, pen)
            fits.append(fit_stratum(data, spec, pen, lam))
        series = window_statistics(fits[0], fits[1], spec)
    except NumericalError as exc:
        return ReplicateRecord(
            index=index,
            m_delta=m_delta,
            true_indices=tuple(int(j) for j in k_set),
            p_values=(),
            regions=(),
            truth_region_tdp={},
            failed=True,
            message=str(exc),
        )

    nonzero = k_set[b_alt[k_set] != b_base[k_set]]
    truth_cells = _truth_cells(spec, nonzero)
    truth_count = int(truth_cells.sum())
    width = spec.degree + 1
    truth_windows = np.flatnonzero(
        [np.any((nonzero >= k) & (nonzero <= k + width - 1)) for k in range(spec.n_regions)]
    )

    regions = []
    truth_region_tdp = {}
    for alpha in scenario.alphas:
        report = threshold_regions(series, alpha, scenario.thresholds)
        if truth_windows.size:
            family = PValueFamily(p=series.p, alpha=alpha)
            truth_region_tdp[alpha] = phi_alpha(family, truth_windows) / truth_windows.size
        for rec in report.records:
            if rec.windows:
                # Uniform knot cells: Lebesgue-measure ratios reduce to exact
                # integer cell-count ratios, keeping the error comparison sharp.
                sel = _selected_cells(spec, rec.windows)
                sel_count = int(sel.sum())
                inter_count = int((sel & truth_cells).sum())
                empirical = inter_count / sel_count
                coverage = inter_count / truth_count if truth_count > 0 else None
                error = int(rec.phi > inter_count)
            else:
                empirical = None
                coverage = 0.0 if truth_count > 0 else None
                error = 0
            regions.append(
                RegionOutcome(
                    alpha=alpha,
                    tau=rec.tau,
                    n_windows=len(rec.windows),
                    bound=rec.bound,
                    empirical_tdp=empirical,
                    truth_coverage=coverage,
                    error=error,
                )
            )
    return ReplicateRecord(
        index=index,
        m_delta=m_delta,
        true_indices=tuple(int(j) for j in k_set),
        p_values=tuple(float(p) for p in series.p),
        regions=tuple(regions),
        truth_region_tdp=truth_region_tdp,
    )


def _cell_stats(values: list[float]) -> tuple[float, float, int]:
    arr = np.asarray(values, dtype=float)
    n = arr.size
    if n == 0:
        return float("nan"), float("nan"), 0
    mean = float(arr.mean())
    se = float(arr.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return mean, se, n


def _aggregate(scenario: SimScenario, records: list[ReplicateRecord]) -> SimOutcome:
    ok = [r for r in records if not r.failed]
    error_table = {}
    tdp_table = {}
    for alpha in scenario.alphas:
        for tau in scenario.thresholds:
            errors = []
            tdps = []
            for rec in ok:
                for region in rec.regions:
                    if region.alpha == alpha and region.tau == tau:
                        errors.append(float(region.error))
                        if region.empirical_tdp is not None:
                            tdps.append(region.empirical_tdp)
            error_table[(alpha, tau)] = _cell_stats(errors)
            tdp_table[(alpha, tau)] = _cell_stats(tdps)
    return SimOutcome(
        scenario=scenario,
        records=tuple(records),
        error_table=error_table,
        tdp_table=tdp_table,
        n_failed=len(records) - len(ok),
    )


def run_scenario(scenario: SimScenario, threads: int = 1) -> SimOutcome:
    """Run every replicate and aggregate; identical output for any thread count."""
    indices = list(range(scenario.n_replicates))
    if threads <= 1:
        records = [run_replicate(scenario, i) for i in indices]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(run_replicate, [scenario] * len(indices), indices, chunksize=8))
    records.sort(key=lambda r: r.index)
    if all(r.failed for r in records):
        raise NumericalError("every replicate failed; first message: " + records[0].message)
    return _aggregate(scenario, records)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def outcome_to_json(outcome: SimOutcome) -> str:
    """Canonical JSON serialization (sorted keys, full float precision)."""
    payload = {
        "scenario": _jsonable(asdict(outcome.scenario)),
        "n_failed": outcome.n_failed,
        "n_effective": outcome.n_effective,
        "error_table": {
            f"alpha={a}|tdp={t}": {"value": v, "mc_se": se, "n": n}
            for (a, t), (v, se, n) in sorted(outcome.error_table.items())
        },
        "tdp_table": {
            f"alpha={a}|tdp={t}": {"value": v, "mc_se": se, "n": n}
            for (a, t), (v, se, n) in sorted(outcome.tdp_table.items())
        },
        "replicates": [_jsonable(asdict(r)) for r in outcome.records],
    }
    return json.dumps(payload, sort_keys=True, indent=1)


def table_csv_lines(table: dict) -> list[str]:
    """CSV rows (alpha, tdp_threshold, value, n_replicates, mc_se) for one table."""
    lines = ["alpha,tdp_threshold,value,n_replicates,mc_se"]
    for (alpha, tau), (value, se, n) in sorted(table.items()):
        lines.append(f"{alpha!r},{tau!r},{value!r},{n},{se!r}")
    return lines
