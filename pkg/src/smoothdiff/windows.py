"""Sliding-window chi-square tests of region-wise equality of two smooths.

Each knot-defined region depends on degree+1 adjacent coefficients; the test
statistic for region k is the quadratic form of the coefficient-difference
window against the summed posterior covariances of the two fits. Adjacent
windows share all but one index, so each window's inverse is obtained from
its predecessor by deleting the leading row/column of the inverse and
appending the new trailing one via blockwise-inversion identities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .basis import BasisSpec
from .errors import NumericalError, ParameterError
from .fitting import StratumFit
from .toeplitz import QuadFormProblem, cov_quadratic_forms

__all__ = [
    "WindowTestSeries",
    "SlidingInverses",
    "sliding_inverses",
    "window_statistics",
    "window_stat_covariance",
    "window_stat_correlation",
]

REANCHOR_EVERY = 64


@dataclass(frozen=True)
class WindowTestSeries:
    """Sliding-window statistics, their p-values, and the tested regions."""

    spec: BasisSpec
    T: np.ndarray
    p: np.ndarray
    regions: np.ndarray

    @property
    def width(self) -> int:
        return self.spec.degree + 1

    @property
    def n_windows(self) -> int:
        return self.T.size


@dataclass
class SlidingInverses:
    """Window inverses plus the count of full factorizations performed."""

    inverses: list[np.ndarray]
    n_factorizations: int

    def __len__(self) -> int:
        return len(self.inverses)

    def __getitem__(self, k: int) -> np.ndarray:
        return self.inverses[k]

    def __iter__(self):
        return iter(self.inverses)


def _direct_inverse(block: np.ndarray, k: int) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(block)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"window {k} covariance is not positive definite") from exc
    half = np.linalg.solve(chol, np.eye(block.shape[0]))
    return half.T @ half


def sliding_inverses(
    v: np.ndarray,
    w: int,
    reanchor: int | None = REANCHOR_EVERY,
    check_tol: float | None = None,
) -> SlidingInverses:
    """Inverses of every w x w diagonal window of a symmetric matrix.

    Only the first window is factorized; each subsequent inverse comes from
    a delete-leading/append-trailing update costing O(w^2). Every `reanchor`
    windows the inverse is recomputed directly to cap error accumulation
    (None disables re-anchoring). `check_tol`, when set, verifies every
    incremental inverse against direct inversion.
    """
    v = np.asarray(v, dtype=float)
    m = v.shape[0]
    if v.ndim != 2 or v.shape[1] != m:
        raise ParameterError("covariance must be a square matrix")
    if not 1 <= w <= m:
        raise ParameterError(f"window width {w} outside [1, {m}]")
    n_windows = m - w + 1
    inverses: list[np.ndarray] = []
    n_fact = 0
    inv = _direct_inverse(v[:w, :w], 0)
    n_fact += 1
    inverses.append(inv)
    for k in range(1, n_windows):
        if reanchor and k % reanchor == 0:
            inv = _direct_inverse(v[k : k + w, k : k + w], k)
            n_fact += 1
            inverses.append(inv)
            continue
        # Delete the leading row/column: the trailing (w-1) block of the
        # previous inverse minus the rank-one part held by the deleted entry.
        core = inv[1:, 1:] - np.outer(inv[1:, 0], inv[0, 1:]) / inv[0, 0]
        # Append the new trailing row/column via its Schur complement.
        b_new = v[k : k + w - 1, k + w - 1]
        d_new = v[k + w - 1, k + w - 1]
        u = core @ b_new
        gamma = d_new - b_new @ u
        if gamma <= 0 or not np.isfinite(gamma):
            raise NumericalError(f"window {k} covariance is not positive definite")
        inv = np.empty((w, w))
        inv[: w - 1, : w - 1] = core + np.outer(u, u) / gamma
        inv[: w - 1, w - 1] = -u / gamma
        inv[w - 1, : w - 1] = -u / gamma
        inv[w - 1, w - 1] = 1.0 / gamma
        if check_tol is not None:
            direct = _direct_inverse(v[k : k + w, k : k + w], k)
            err = np.max(np.abs(inv - direct)) / max(np.max(np.abs(direct)), 1e-300)
            if err > check_tol:
                raise NumericalError(
                    f"incremental inverse drifted at window {k}: relative error {err:.3e}"
                )
        inverses.append(inv)
    return SlidingInverses(inverses=inverses, n_factorizations=n_fact)


def window_statistics(
    fit1: StratumFit,
    fit2: StratumFit,
    spec: BasisSpec,
    check_tol: float | None = None,
) -> WindowTestSeries:
    """Quadratic-form statistics and chi-square p-values for every region.

    T_k = d_k' (V1_k + V2_k)^{-1} d_k over the coefficient-difference windows
    d_k of width degree+1; p-values use the chi-square survival function with
    degree+1 degrees of freedom.
    """
    if fit1.coef.size != spec.m or fit2.coef.size != spec.m:
        raise ParameterError("fits do not match the basis dimension")
    w = spec.degree + 1
    delta = fit1.coef - fit2.coef
    vsum = fit1.cov + fit2.cov
    inverses = sliding_inverses(vsum, w, check_tol=check_tol)
    n_windows = spec.n_regions
    t = np.empty(n_windows)
    for k in range(n_windows):
        d = delta[k : k + w]
        t[k] = d @ inverses[k] @ d
    t = np.maximum(t, 0.0)
    p = chi2.sf(t, df=w)
    regions = np.asarray([spec.region(k) for k in range(n_windows)])
    return WindowTestSeries(spec=spec, T=t, p=p, regions=regions)


def window_stat_covariance(
    fit1: StratumFit, fit2: StratumFit, spec: BasisSpec, k: int, k2: int
) -> float:
    """Covariance of the window statistics T_k and T_k2 under the fitted model.

    The coefficient-difference windows are jointly Gaussian with covariance
    blocks drawn from V1 + V2, and each statistic is a quadratic form in its
    window precision, so the quadratic-form covariance identity applies.
    """
    w = spec.degree + 1
    n_windows = spec.n_regions
    if not (0 <= k < n_windows and 0 <= k2 < n_windows):
        raise ParameterError(f"window indices must lie in [0, {n_windows})")
    vsum = fit1.cov + fit2.cov
    sl1 = slice(k, k + w)
    sl2 = slice(k2, k2 + w)
    sigma = np.block([[vsum[sl1, sl1], vsum[sl1, sl2]], [vsum[sl2, sl1], vsum[sl2, sl2]]])
    a = _direct_inverse(vsum[sl1, sl1], k)
    b = _direct_inverse(vsum[sl2, sl2], k2)
    problem = QuadFormProblem(A=0.5 * (a + a.T), B=0.5 * (b + b.T), sigma=0.5 * (sigma + sigma.T))
    return cov_quadratic_forms(problem)


def window_stat_correlation(
    fit1: StratumFit, fit2: StratumFit, spec: BasisSpec, k: int, k2: int
) -> float:
    """Correlation of T_k and T_k2 implied by window_stat_covariance."""
    cov = window_stat_covariance(fit1, fit2, spec, k, k2)
    var1 = window_stat_covariance(fit1, fit2, spec, k, k)
    var2 = window_stat_covariance(fit1, fit2, spec, k2, k2)
    return cov / np.sqrt(var1 * var2)
