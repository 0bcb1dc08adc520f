"""Banded-Toeplitz and quadratic-form kernels behind the dependence diagnostics.

A pentadiagonal Toeplitz matrix with corner deficits factors into two real
tridiagonal Toeplitz matrices; their closed-form inverses decay log-linearly
off the diagonal, and the covariance between Gaussian quadratic forms built
from overlapping coefficient windows inherits that decay. These kernels make
those facts executable so they can be checked on fitted models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterError

__all__ = [
    "PentaParams",
    "TridiagFactor",
    "QuadFormProblem",
    "DecayDiagnostics",
    "build_pentadiagonal",
    "factor_pentadiagonal",
    "tridiag_toeplitz_inverse",
    "decay_rate",
    "cov_quadratic_forms",
    "frobenius_form",
]


@dataclass(frozen=True)
class PentaParams:
    """Pentadiagonal Toeplitz matrix with corner deficits.

    Diagonal `eps`, first off-diagonal `theta`, second off-diagonal `lam_p`
    (named to avoid the smoothing parameter), and the two corner diagonal
    entries reduced by `zeta1`, `zeta2`. `n` is the dimension.
    """

    eps: float
    theta: float
    lam_p: float
    n: int
    zeta1: float | None = None
    zeta2: float | None = None

    def __post_init__(self):
        if self.n < 3:
            raise ParameterError("pentadiagonal dimension must be at least 3")
        if self.zeta1 is None:
            object.__setattr__(self, "zeta1", self.lam_p)
        if self.zeta2 is None:
            object.__setattr__(self, "zeta2", self.lam_p)

    @property
    def discriminant(self) -> float:
        return self.theta**2 - 4.0 * self.lam_p * (self.eps - 2.0 * self.lam_p)


@dataclass(frozen=True)
class TridiagFactor:
    """Tridiagonal Toeplitz factor with constant (off, diag, off) bands."""

    off: float
    diag: float
    n: int

    @property
    def psi(self) -> float | None:
        """Off-diagonal decay rate arcosh(diag / (2 off)) of the inverse, when real."""
        ratio = self.diag / (2.0 * self.off)
        if ratio <= 1.0:
            return None
        return math.acosh(ratio)

    def dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        idx = np.arange(self.n)
        out[idx, idx] = self.diag
        out[idx[:-1], idx[:-1] + 1] = self.off
        out[idx[:-1] + 1, idx[:-1]] = self.off
        return out


@dataclass(frozen=True)
class QuadFormProblem:
    """Covariance of x'Ax and y'By for jointly Gaussian zero-mean (x, y)."""

    A: np.ndarray
    B: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        dx, dy = A.shape[0], B.shape[0]
        if A.shape != (dx, dx) or B.shape != (dy, dy):
            raise ParameterError("A and B must be square")
        if sigma.shape != (dx + dy, dx + dy):
            raise ParameterError(
                f"joint covariance must be {(dx + dy, dx + dy)}, got {sigma.shape}"
            )
        if not np.allclose(A, A.T) or not np.allclose(B, B.T):
            raise ParameterError("A and B must be symmetric")
        if not np.allclose(sigma, sigma.T):
            raise ParameterError("joint covariance must be symmetric")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "sigma", sigma)

    @property
    def d_x(self) -> int:
        return self.A.shape[0]

    @property
    def d_y(self) -> int:
        return self.B.shape[0]

    @property
    def sigma_xx(self) -> np.ndarray:
        return self.sigma[: self.d_x, : self.d_x]

    @property
    def sigma_xy(self) -> np.ndarray:
        return self.sigma[: self.d_x, self.d_x :]

    @property
    def sigma_yy(self) -> np.ndarray:
        return self.sigma[self.d_x :, self.d_x :]


@dataclass(frozen=True)
class DecayDiagnostics:
    """Predicted and empirically fitted off-diagonal decay of the inverse."""

    psi_1: float
    psi_2: float
    psi_min: float
    empirical_rate: float
    n_lags: int


def build_pentadiagonal(params: PentaParams) -> np.ndarray:
    """Dense realization of the pentadiagonal matrix."""
    n = params.n
    out = np.zeros((n, n))
    idx = np.arange(n)
    out[idx, idx] = params.eps
    out[idx[:-1], idx[:-1] + 1] = params.theta
    out[idx[:-1] + 1, idx[:-1]] = params.theta
    out[idx[:-2], idx[:-2] + 2] = params.lam_p
    out[idx[:-2] + 2, idx[:-2]] = params.lam_p
    out[0, 0] -= params.zeta1
    out[n - 1, n - 1] -= params.zeta2
    return out


def factor_pentadiagonal(params: PentaParams) -> tuple[TridiagFactor, TridiagFactor]:
    """Split the pentadiagonal matrix into two real tridiagonal Toeplitz factors.

    The factor diagonals pi_1, pi_2 are theta/2 +- sqrt(disc)/2 with
    disc = theta^2 - 4 lam_p (eps - 2 lam_p); the first factor has bands
    (lam_p, pi_1, lam_p) and the second (1, pi_2/lam_p, 1). The product is
    verified against the dense matrix before returning.
    """
    if params.lam_p == 0.0:
        raise DomainError("factorization requires a non-zero second off-diagonal")
    if not (params.zeta1 == params.lam_p and params.zeta2 == params.lam_p):
        raise ParameterError("factorization requires corner deficits equal to the second off-diagonal")
    disc = params.discriminant
    if disc <= 0.0:
        raise DomainError(
            "factorization requires theta^2 - 4*lam_p*(eps - 2*lam_p) > 0, "
            f"got {disc:.6g}"
        )
    root = math.sqrt(disc)
    pi_1 = params.theta / 2.0 + root / 2.0
    pi_2 = params.theta / 2.0 - root / 2.0
    z1 = TridiagFactor(off=params.lam_p, diag=pi_1, n=params.n)
    z2 = TridiagFactor(off=1.0, diag=pi_2 / params.lam_p, n=params.n)
    product = z1.dense() @ z2.dense()
    target = build_pentadiagonal(params)
    scale = max(abs(params.eps), abs(params.theta), abs(params.lam_p), 1.0)
    if not np.allclose(product, target, atol=1e-9 * scale, rtol=0.0):
        raise DomainError("tridiagonal factor product failed to reconstruct the matrix")
    return z1, z2


def _logsinh(x: np.ndarray) -> np.ndarray:
    """log(sinh(x)) for x > 0 without overflow."""
    return x + np.log1p(-np.exp(-2.0 * x)) - math.log(2.0)


def tridiag_toeplitz_inverse(factor: TridiagFactor, n: int | None = None) -> np.ndarray:
    """Closed-form inverse of a tridiagonal Toeplitz factor.

    Entry (k, l), 1-based with k <= l, of the inverse of tridiag(1, 2cosh(psi), 1)
    is (-1)^(l-k) sinh(psi k) sinh(psi (n+1-l)) / (sinh(psi) sinh(psi (n+1)));
    the general factor is that matrix scaled by its off-diagonal value.
    Evaluated in log space so large n does not overflow.
    """
    if n is None:
        n = factor.n
    psi = factor.psi
    if psi is None:
        raise DomainError(
            "closed-form inverse requires diag > 2*off > 0 (real decay rate)"
        )
    if n == 1:
        return np.asarray([[1.0 / factor.diag]])
    k = np.arange(1, n + 1)
    log_fwd = _logsinh(psi * k)
    log_bwd = _logsinh(psi * (n + 1 - k))
    log_scale = _logsinh(np.asarray(psi)) + _logsinh(np.asarray(psi * (n + 1)))
    kk, ll = np.meshgrid(k, k, indexing="ij")
    lo = np.minimum(kk, ll)
    hi = np.maximum(kk, ll)
    log_mag = log_fwd[lo - 1] + log_bwd[hi - 1] - log_scale
    signs = np.where((hi - lo) % 2 == 0, 1.0, -1.0)
    return signs * np.exp(log_mag) / factor.off


def decay_rate(params: PentaParams, n: int | None = None, n_lags: int = 12) -> DecayDiagnostics:
    """Predicted off-diagonal decay rate min_i psi_i, plus an empirical slope check.

    The empirical rate is the least-squares slope of -log|inv(P)[r, r+lag]|
    against lag, averaged over middle rows of the numerically inverted matrix.
    """
    if n is None:
        n = params.n
    z1, z2 = factor_pentadiagonal(params)
    psi_1, psi_2 = z1.psi, z2.psi
    if psi_1 is None or psi_2 is None:
        raise DomainError("decay rate requires pi_i > 2*lam_p for both factors")
    dense = build_pentadiagonal(
        PentaParams(eps=params.eps, theta=params.theta, lam_p=params.lam_p, n=n)
    )
    inv = np.linalg.inv(dense)
    row_lo, row_hi = n // 3, 2 * n // 3
    lags = np.arange(1, min(n_lags, n - row_hi) + 1)
    log_mags = []
    for r in range(row_lo, row_hi):
        vals = np.abs(inv[r, r + lags])
        if np.all(vals > 0):
            log_mags.append(np.log(vals))
    mean_log = np.mean(log_mags, axis=0)
    slope = np.polyfit(lags, mean_log, 1)[0]
    return DecayDiagnostics(
        psi_1=psi_1,
        psi_2=psi_2,
        psi_min=min(psi_1, psi_2),
        empirical_rate=-float(slope),
        n_lags=len(lags),
    )


def cov_quadratic_forms(problem: QuadFormProblem) -> float:
    """Covariance of the quadratic forms x'Ax and y'By.

    Each quartic expectation splits into pair-partitions; the two partitions
    that mix the x and y blocks both contribute, and each is the total of the
    Hadamard product (J ox A) o vec(S_xy) vec(S_xy)' o (B ox J). For symmetric
    A and B the two contributions are equal, giving twice the single sum.
    """
    A, B, sxy = problem.A, problem.B, problem.sigma_xy
    v = np.ravel(sxy, order="F")
    u = (
        np.kron(np.ones((problem.d_y, problem.d_y)), A)
        * np.outer(v, v)
        * np.kron(B, np.ones((problem.d_x, problem.d_x)))
    )
    return 2.0 * float(u.sum())


def _psd_sqrt(mat: np.ndarray, label: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() < -1e-8 * max(vals.max(), 1.0):
        raise ParameterError(f"{label} must be positive semidefinite")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frobenius_form(problem: QuadFormProblem) -> float:
    """Same covariance as 2 * ||A^(1/2) S_xy B^(1/2)||_F^2 (PSD A, B only)."""
    half_a = _psd_sqrt(problem.A, "A")
    half_b = _psd_sqrt(problem.B, "B")
    core = half_a @ problem.sigma_xy @ half_b
    return 2.0 * float(np.sum(core * core))
