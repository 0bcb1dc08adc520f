"""B-spline bases on a shared uniform knot grid.

Both data strata are expanded on the same basis, so the knot grid, the
knot-defined test regions and the difference penalty all live here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

__all__ = [
    "BasisSpec",
    "DesignMatrix",
    "PenaltyMatrix",
    "make_basis",
    "eval_basis",
    "design_matrix",
    "difference_penalty",
]


@dataclass(frozen=True)
class BasisSpec:
    """A degree-`degree` B-spline basis of dimension `m` on `[z_lo, z_hi]`.

    `knots` follows the open-uniform convention: length m + degree + 1 with
    the boundary knot repeated degree + 1 times on each side, so the basis
    sums to one everywhere on the domain.
    """

    degree: int
    z_lo: float
    z_hi: float
    m: int
    knots: np.ndarray

    @property
    def n_regions(self) -> int:
        """Number of knot-defined test regions (windows of degree+1 coefficients)."""
        return self.m - self.degree

    @property
    def breakpoints(self) -> np.ndarray:
        """The n_regions + 1 distinct knot values partitioning the domain."""
        return self.knots[self.degree : self.m + 1]

    def region(self, k: int) -> tuple[float, float]:
        """Covariate interval whose fitted values depend on coefficients k..k+degree."""
        if not 0 <= k < self.n_regions:
            raise ParameterError(f"region index {k} outside [0, {self.n_regions})")
        return float(self.knots[self.degree + k]), float(self.knots[self.degree + k + 1])

    def basis_support(self, j: int) -> tuple[float, float]:
        """Support interval of basis function j."""
        if not 0 <= j < self.m:
            raise ParameterError(f"basis index {j} outside [0, {self.m})")
        return float(self.knots[j]), float(self.knots[j + self.degree + 1])

    def basis_support_cells(self, j: int) -> tuple[int, int]:
        """Half-open range of elementary knot cells covered by basis function j."""
        lo = max(j - self.degree, 0)
        hi = min(j + 1, self.n_regions)
        return lo, hi

    def cells_to_intervals(self, cells: np.ndarray) -> list[tuple[float, float]]:
        """Merge a boolean mask over elementary cells into disjoint covariate intervals."""
        cells = np.asarray(cells, dtype=bool)
        if cells.shape != (self.n_regions,):
            raise ParameterError("cell mask length must equal the number of regions")
        bp = self.breakpoints
        out: list[tuple[float, float]] = []
        start = None
        for i, on in enumerate(cells):
            if on and start is None:
                start = i
            elif not on and start is not None:
                out.append((float(bp[start]), float(bp[i])))
                start = None
        if start is not None:
            out.append((float(bp[start]), float(bp[-1])))
        return out

    def cell_measure(self, cells: np.ndarray) -> float:
        """Total covariate length of the cells flagged in a boolean mask."""
        widths = np.diff(self.breakpoints)
        return float(widths[np.asarray(cells, dtype=bool)].sum())


@dataclass
class DesignMatrix:
    """Basis expansion of a covariate sample.

    Rows are stored compactly: row i has the degree+1 potentially non-zero
    values `values[i]` starting at column `start[i]`. `dense` materializes
    the full n x m matrix.
    """

    z: np.ndarray
    values: np.ndarray
    start: np.ndarray
    m: int
    _dense: np.ndarray | None = field(default=None, repr=False)
    _xtx: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def dense(self) -> np.ndarray:
        if self._dense is None:
            out = np.zeros((self.n, self.m))
            cols = self.start[:, None] + np.arange(self.width)[None, :]
            np.put_along_axis(out, cols, self.values, axis=1)
            self._dense = out
        return self._dense

    def crossprod(self, weights: np.ndarray | None = None) -> np.ndarray:
        """Z' diag(w) Z as a dense m x m matrix, built from the compact rows."""
        if weights is None and self._xtx is not None:
            return self._xtx
        w, m = self.width, self.m
        flat = np.zeros(m * m)
        for a in range(w):
            rows = (self.start + a) * m
            for b in range(a, w):
                contrib = self.values[:, a] * self.values[:, b]
                if weights is not None:
                    contrib = contrib * weights
                flat += np.bincount(rows + self.start + b, weights=contrib, minlength=m * m)
        out = flat.reshape(m, m)
        iu = np.triu_indices(m, 1)
        out[(iu[1], iu[0])] = out[iu]
        if weights is None:
            self._xtx = out
        return out

    def rhs(self, y: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        """Z' diag(w) y."""
        out = np.zeros(self.m)
        wy = y if weights is None else weights * y
        for a in range(self.width):
            out += np.bincount(self.start + a, weights=self.values[:, a] * wy, minlength=self.m)
        return out

    def cross_with(self, x: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        """Z' diag(w) X for a dense n x p matrix X."""
        out = np.zeros((self.m, x.shape[1]))
        wx = x if weights is None else weights[:, None] * x
        for a in range(self.width):
            for j in range(x.shape[1]):
                out[:, j] += np.bincount(
                    self.start + a, weights=self.values[:, a] * wx[:, j], minlength=self.m
                )
        return out

    def predict(self, coef: np.ndarray) -> np.ndarray:
        """Z @ coef via the compact rows."""
        cols = self.start[:, None] + np.arange(self.width)[None, :]
        return np.einsum("ij,ij->i", self.values, coef[cols])


@dataclass(frozen=True)
class PenaltyMatrix:
    """q-th order difference penalty: D stacks the difference stencils, S = D'D."""

    order: int
    D: np.ndarray
    S: np.ndarray


def make_basis(z_lo: float, z_hi: float, m: int, degree: int) -> BasisSpec:
    """Build a uniform B-spline basis of dimension m and the given degree.

    Interior knots are equally spaced over the domain and the boundary knots
    are repeated degree+1 times, giving m - degree knot-defined regions.
    """
    if not (np.isfinite(z_lo) and np.isfinite(z_hi)) or z_lo >= z_hi:
        raise ParameterError(f"degenerate domain [{z_lo}, {z_hi}]")
    if degree < 0:
        raise ParameterError("degree must be non-negative")
    if m < degree + 2:
        raise ParameterError(f"basis dimension m={m} must be at least degree+2={degree + 2}")
    breakpoints = np.linspace(z_lo, z_hi, m - degree + 1)
    knots = np.concatenate(
        [np.full(degree, z_lo), breakpoints, np.full(degree, z_hi)]
    )
    return BasisSpec(degree=degree, z_lo=float(z_lo), z_hi=float(z_hi), m=m, knots=knots)


def _find_spans(spec: BasisSpec, z: np.ndarray) -> np.ndarray:
    """Knot span index mu per point: knots[mu] <= z < knots[mu+1], clamped to valid spans."""
    mu = np.searchsorted(spec.knots, z, side="right") - 1
    return np.clip(mu, spec.degree, spec.m - 1)


def _nonzero_basis(spec: BasisSpec, z: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Values of the degree+1 basis functions mu-degree..mu at each z (de Boor's scheme)."""
    d = spec.degree
    n = z.shape[0]
    vals = np.zeros((n, d + 1))
    vals[:, 0] = 1.0
    left = np.zeros((n, d + 1))
    right = np.zeros((n, d + 1))
    for j in range(1, d + 1):
        left[:, j] = z - spec.knots[mu + 1 - j]
        right[:, j] = spec.knots[mu + j] - z
        saved = np.zeros(n)
        for r in range(j):
            term = vals[:, r] / (right[:, r + 1] + left[:, j - r])
            vals[:, r] = saved + right[:, r + 1] * term
            saved = left[:, j - r] * term
        vals[:, j] = saved
    return vals


def eval_basis(spec: BasisSpec, z: float) -> np.ndarray:
    """All m basis functions at a single point; zeros outside the domain."""
    if not np.isfinite(z):
        raise ParameterError(f"non-finite evaluation point {z!r}")
    out = np.zeros(spec.m)
    if z < spec.z_lo or z > spec.z_hi:
        return out
    za = np.asarray([float(z)])
    mu = _find_spans(spec, za)
    out[mu[0] - spec.degree : mu[0] + 1] = _nonzero_basis(spec, za, mu)[0]
    return out


def design_matrix(spec: BasisSpec, z: np.ndarray) -> DesignMatrix:
    """Basis expansion of a covariate vector; rows match eval_basis per sample."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.size == 0:
        raise ParameterError("covariate vector must be one-dimensional and non-empty")
    if not np.all(np.isfinite(z)):
        raise ParameterError("covariate vector contains non-finite values")
    mu = _find_spans(spec, z)
    vals = _nonzero_basis(spec, z, mu)
    outside = (z < spec.z_lo) | (z > spec.z_hi)
    if outside.any():
        vals = vals.copy()
        vals[outside] = 0.0
    return DesignMatrix(z=z, values=vals, start=mu - spec.degree, m=spec.m)


def difference_penalty(m: int, order: int = 2) -> PenaltyMatrix:
    """Difference penalty of the given order: D is (m-order) x m, S = D'D."""
    if order < 1:
        raise ParameterError("penalty order must be at least 1")
    if m <= order:
        raise ParameterError(f"basis dimension m={m} must exceed penalty order {order}")
    D = np.diff(np.eye(m), n=order, axis=0)
    return PenaltyMatrix(order=order, D=D, S=D.T @ D)
