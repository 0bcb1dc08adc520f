"""Penalized spline regression per stratum.

Gaussian outcomes are fit by penalized least squares, binary outcomes by
penalized IRLS; both return the coefficient vector together with the
posterior covariance of the coefficients, phi * (Z'WZ + lambda S)^{-1}
(or the inverse Schur complement of the fixed-effect block when extra
covariates are present). The smoothing parameter is chosen by GCV on a
log-spaced grid and then treated as fixed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit, xlogy

from .basis import BasisSpec, DesignMatrix, PenaltyMatrix, design_matrix
from .errors import NumericalError, ParameterError

__all__ = [
    "StratumData",
    "StratumFit",
    "fit_gaussian",
    "fit_binomial",
    "fit_stratum",
    "select_lambda",
]

MAX_IRLS_ITER = 100
IRLS_REL_TOL = 1e-8
ETA_DIVERGENCE = 20.0


@dataclass(frozen=True)
class StratumData:
    """One stratum's outcomes, smooth covariate, and optional fixed effects."""

    y: np.ndarray
    z: np.ndarray
    family: str = "gaussian"
    X: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if y.ndim != 1 or z.ndim != 1 or y.size != z.size or y.size == 0:
            raise ParameterError("y and z must be non-empty vectors of equal length")
        if self.family not in ("gaussian", "binomial"):
            raise ParameterError(f"unknown family {self.family!r}")
        if self.family == "binomial" and not np.all(np.isin(y, (0.0, 1.0))):
            raise ParameterError("binomial outcomes must be 0/1")
        X = self.X
        if X is not None:
            X = np.asarray(X, dtype=float)
            if X.ndim != 2 or X.shape[0] != y.size:
                raise ParameterError("fixed-effect matrix must be n x p")
            if X.shape[1] == 0:
                X = None
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return 0 if self.X is None else self.X.shape[1]


@dataclass(frozen=True)
class StratumFit:
    """Fitted coefficients, smoothing parameter, dispersion and posterior covariance."""

    coef: np.ndarray
    beta: np.ndarray
    lam: float
    dispersion: float
    cov: np.ndarray
    edf: float
    family: str
    deviance: float
    n_obs: int


def _band_form(a: np.ndarray, bandwidth: int) -> np.ndarray:
    """Upper band storage of a symmetric banded matrix for solveh_banded."""
    m = a.shape[0]
    ab = np.zeros((bandwidth + 1, m))
    for off in range(bandwidth + 1):
        ab[bandwidth - off, off:] = np.diagonal(a, off)
    return ab


def penalized_inverse(a: np.ndarray, bandwidth: int | None = None) -> np.ndarray:
    """Inverse of an SPD penalized system, via its band when the width is given."""
    m = a.shape[0]
    try:
        if bandwidth is not None and bandwidth < m - 1:
            inv = scipy.linalg.solveh_banded(_band_form(a, bandwidth), np.eye(m))
        else:
            c, low = scipy.linalg.cho_factor(a)
            inv = scipy.linalg.cho_solve((c, low), np.eye(m))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"penalized system is not positive definite (cond={np.linalg.cond(a):.3e})"
        ) from exc
    return inv


def _warn_small_sample(data: StratumData, spec: BasisSpec) -> None:
    if data.n <= spec.m:
        warnings.warn(
            f"sample size n={data.n} does not exceed basis dimension m={spec.m}; "
            "the fit may be poorly determined",
            stacklevel=3,
        )


def _weighted_blocks(
    dm: DesignMatrix, data: StratumData, w: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    ztz = dm.crossprod(w)
    if data.X is None:
        return ztz, None, None
    X = data.X
    wx = X if w is None else w[:, None] * X
    xtx = X.T @ wx
    zx = dm.cross_with(X, w)
    return ztz, xtx, zx


def _solve_penalized(
    dm: DesignMatrix,
    data: StratumData,
    pen: PenaltyMatrix,
    lam: float,
    resp: np.ndarray,
    w: np.ndarray | None,
    bandwidth: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Solve the penalized (weighted) normal equations.

    Returns (beta, coef, cov_unit, edf) where cov_unit is the unit-dispersion
    posterior covariance of the spline coefficients.
    """
    ztz, xtx, zx = _weighted_blocks(dm, data, w)
    a = ztz + lam * pen.S
    if data.X is None:
        ainv = penalized_inverse(a, bandwidth)
        coef = ainv @ dm.rhs(resp, w)
        edf = float(np.sum(ainv * ztz))
        return np.zeros(0), coef, ainv, edf

    # Fixed effects present: solve the full block system. A minimum-norm
    # solve keeps the fitted values defined even when the spline spans a
    # fixed-effect column (the block matrix is then singular).
    X, p, m = data.X, data.p, dm.m
    c = np.block([[xtx, zx.T], [zx, a]])
    wresp = resp if w is None else w * resp
    rhs = np.concatenate([X.T @ wresp, dm.rhs(resp, w)])
    theta = np.linalg.lstsq(c, rhs, rcond=None)[0]
    beta, coef = theta[:p], theta[p:]
    gram = np.block([[xtx, zx.T], [zx, ztz]])
    edf = float(np.trace(np.linalg.lstsq(c, gram, rcond=None)[0]))
    schur = a - zx @ np.linalg.lstsq(xtx, zx.T, rcond=None)[0]
    try:
        cov_unit = penalized_inverse(schur, None)
    except NumericalError:
        cov_unit = np.linalg.pinv(schur)
    return beta, coef, cov_unit, edf


def _linear_predictor(dm: DesignMatrix, data: StratumData, beta: np.ndarray, coef: np.ndarray) -> np.ndarray:
    eta = dm.predict(coef)
    if data.X is not None:
        eta = eta + data.X @ beta
    return eta


def fit_gaussian(
    data: StratumData, spec: BasisSpec, pen: PenaltyMatrix, lam: float
) -> StratumFit:
    """Penalized least squares fit of one stratum at a fixed smoothing parameter."""
    if lam < 0:
        raise ParameterError("smoothing parameter must be non-negative")
    if data.family != "gaussian":
        raise ParameterError("fit_gaussian requires gaussian data")
    _warn_small_sample(data, spec)
    dm = design_matrix(spec, data.z)
    return _gaussian_at(dm, data, spec, pen, lam)


def _gaussian_at(
    dm: DesignMatrix, data: StratumData, spec: BasisSpec, pen: PenaltyMatrix, lam: float
) -> StratumFit:
    bandwidth = max(spec.degree, pen.order)
    beta, coef, cov_unit, edf = _solve_penalized(dm, data, pen, lam, data.y, None, bandwidth)
    resid = data.y - _linear_predictor(dm, data, beta, coef)
    rss = float(resid @ resid)
    denom = data.n - edf
    if denom <= 0:
        if rss <= 1e-12 * (float(data.y @ data.y) + 1.0):
            dispersion = 0.0  # saturated interpolation
        else:
            raise NumericalError(
                f"effective degrees of freedom {edf:.2f} exhaust the sample size {data.n}"
            )
    else:
        dispersion = rss / denom
    cov = dispersion * cov_unit
    cov = 0.5 * (cov + cov.T)
    return StratumFit(
        coef=coef,
        beta=beta,
        lam=float(lam),
        dispersion=dispersion,
        cov=cov,
        edf=edf,
        family="gaussian",
        deviance=rss,
        n_obs=data.n,
    )


def _binomial_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    return float(2.0 * np.sum(xlogy(y, y) - xlogy(y, mu) + xlogy(1 - y, 1 - y) - xlogy(1 - y, 1 - mu)))


def fit_binomial(
    data: StratumData, spec: BasisSpec, pen: PenaltyMatrix, lam: float
) -> StratumFit:
    """Penalized logistic IRLS fit of one stratum at a fixed smoothing parameter."""
    if lam < 0:
        raise ParameterError("smoothing parameter must be non-negative")
    if data.family != "binomial":
        raise ParameterError("fit_binomial requires binomial data")
    _warn_small_sample(data, spec)
    dm = design_matrix(spec, data.z)
    return _binomial_at(dm, data, spec, pen, lam)


def _binomial_at(
    dm: DesignMatrix, data: StratumData, spec: BasisSpec, pen: PenaltyMatrix, lam: float
) -> StratumFit:
    bandwidth = max(spec.degree, pen.order)
    y = data.y
    mu = (y + 0.5) / 2.0
    eta = np.log(mu / (1.0 - mu))
    deviance = _binomial_deviance(y, mu)
    trace = [deviance]
    for _ in range(MAX_IRLS_ITER):
        w = np.clip(mu * (1.0 - mu), 1e-10, None)
        u = eta + (y - mu) / w
        beta, coef, cov_unit, edf = _solve_penalized(dm, data, pen, lam, u, w, bandwidth)
        eta = _linear_predictor(dm, data, beta, coef)
        if np.max(np.abs(eta)) > ETA_DIVERGENCE:
            raise NumericalError(
                "linear predictor diverged (complete or quasi-complete separation)"
            )
        mu = expit(eta)
        new_deviance = _binomial_deviance(y, np.clip(mu, 1e-12, 1.0 - 1e-12))
        trace.append(new_deviance)
        if abs(new_deviance - deviance) <= IRLS_REL_TOL * (abs(deviance) + 1e-12):
            deviance = new_deviance
            break
        deviance = new_deviance
    else:
        raise NumericalError(
            f"IRLS failed to converge in {MAX_IRLS_ITER} iterations; "
            f"deviance trace tail {trace[-4:]}"
        )
    cov = 0.5 * (cov_unit + cov_unit.T)
    return StratumFit(
        coef=coef,
        beta=beta,
        lam=float(lam),
        dispersion=1.0,
        cov=cov,
        edf=edf,
        family="binomial",
        deviance=deviance,
        n_obs=data.n,
    )


def fit_stratum(
    data: StratumData, spec: BasisSpec, pen: PenaltyMatrix, lam: float
) -> StratumFit:
    """Dispatch to the family-specific fitter."""
    if data.family == "gaussian":
        return fit_gaussian(data, spec, pen, lam)
    return fit_binomial(data, spec, pen, lam)


def default_lambda_grid(dm: DesignMatrix, pen: PenaltyMatrix, n_grid: int = 40) -> np.ndarray:
    """Log-spaced grid spanning [1e-4, 1e4] times tr(Z'Z)/tr(S)."""
    scale = float(np.trace(dm.crossprod())) / float(np.trace(pen.S))
    return np.geomspace(1e-4 * scale, 1e4 * scale, n_grid)


def _penalized_logdet(
    dm: DesignMatrix, data: StratumData, pen: PenaltyMatrix, lam: float, w: np.ndarray | None
) -> float:
    ztz, xtx, zx = _weighted_blocks(dm, data, w)
    a = ztz + lam * pen.S
    if data.X is None:
        sign, logdet = np.linalg.slogdet(a)
    else:
        sign, logdet = np.linalg.slogdet(np.block([[xtx, zx.T], [zx, a]]))
    if sign <= 0:
        raise NumericalError("penalized system lost positive definiteness")
    return float(logdet)


def _reml_score(
    fit: StratumFit,
    dm: DesignMatrix,
    data: StratumData,
    pen: PenaltyMatrix,
    lam: float,
    flushed: bool,
) -> float:
    """Negative restricted log-likelihood of lambda, up to lambda-free constants.

    Gaussian: (n - p - M) log(rss + lam b'Sb) + log|C| - (m - M) log lam with
    M the penalty nullity (the profile over the dispersion). Binomial uses the
    Laplace/working-model analog with the deviance at dispersion 1.
    """
    rank = dm.m - pen.order
    roughness = lam * float(fit.coef @ pen.S @ fit.coef)
    if fit.family == "gaussian":
        w = None
        quad = fit.deviance + roughness
        nm = data.n - data.p - pen.order
        if nm <= 0:
            raise NumericalError("too few observations for the restricted likelihood")
        data_term = 0.0 if flushed else nm * np.log(max(quad, 1e-300))
    else:
        mu = expit(_linear_predictor(dm, data, fit.beta, fit.coef))
        w = np.clip(mu * (1.0 - mu), 1e-10, None)
        data_term = fit.deviance + roughness
    logdet = _penalized_logdet(dm, data, pen, lam, w)
    return data_term + logdet - rank * np.log(lam)


def select_lambda(
    data: StratumData,
    spec: BasisSpec,
    pen: PenaltyMatrix,
    grid: np.ndarray | None = None,
    method: str = "gcv",
) -> float:
    """Smoothing parameter minimizing a selection score over a log-spaced grid.

    method="gcv" (default) minimizes n * deviance / (n - edf)^2;
    method="reml" minimizes the restricted marginal likelihood. Deviance at
    the rounding level is treated as an exact fit, so ties resolve toward the
    heaviest smoothing; the selected value is then held fixed downstream.
    """
    if method not in ("reml", "gcv"):
        raise ParameterError(f"unknown selection method {method!r}")
    dm = design_matrix(spec, data.z)
    if grid is None:
        grid = default_lambda_grid(dm, pen)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid <= 0):
        raise ParameterError("lambda grid must be a non-empty vector of positive values")
    yss = float(data.y @ data.y)
    best_lam, best_score = None, np.inf
    for lam in np.sort(grid):
        try:
            if data.family == "gaussian":
                fit = _gaussian_at(dm, data, spec, pen, float(lam))
            else:
                fit = _binomial_at(dm, data, spec, pen, float(lam))
            flushed = data.family == "gaussian" and fit.deviance <= 1e-16 * max(yss, 1e-300)
            if method == "gcv":
                dev = 0.0 if flushed else fit.deviance
                score = data.n * dev / (data.n - fit.edf) ** 2
            else:
                score = _reml_score(fit, dm, data, pen, float(lam), flushed)
        except NumericalError:
            continue
        if score <= best_score:
            best_lam, best_score = float(lam), score
    if best_lam is None:
        raise NumericalError("no smoothing parameter candidate could be fit")
    return best_lam
