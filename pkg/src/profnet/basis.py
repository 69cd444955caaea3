"""Basis systems on the curve domain and quadrature-backed inner products.

All Hilbert-space operations on curves reduce to weighted sums over a shared
evaluation grid.  Trapezoid weights make the quadrature exact for piecewise
linear integrands on the grid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from . import kernels as K
from .errors import ConfigError, ContractError, NumericalError

DEFAULT_BASIS_KIND = "bspline"
DEFAULT_D = 15

# condition-number threshold above which the projection normal equations get
# a deterministic ridge
_COND_LIMIT = 1e12
_RIDGE = 1e-8


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    """Trapezoid quadrature weights for an increasing point set."""
    h = np.diff(points)
    w = np.zeros_like(points)
    w[:-1] += h / 2.0
    w[1:] += h / 2.0
    return w


@dataclass(frozen=True)
class Grid:
    """Evaluation grid: strictly increasing points with quadrature weights.

    ``normalized`` maps the points affinely onto [0, 1]; basis functions are
    evaluated there for conditioning, while ``points`` keeps raw units for
    reporting and integration.
    """

    points: np.ndarray
    weights: np.ndarray
    normalized: np.ndarray = field(init=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        wts = np.asarray(self.weights, dtype=np.float64)
        if pts.ndim != 1 or pts.size < 2:
            raise ConfigError("grid needs at least two points")
        if np.any(np.diff(pts) <= 0):
            raise ConfigError("grid points must be strictly increasing")
        if np.any(wts <= 0):
            raise ConfigError("quadrature weights must be positive")
        span = pts[-1] - pts[0]
        if abs(wts.sum() - span) > 1e-9:
            raise ConfigError(
                f"quadrature weights sum to {wts.sum()}, expected span {span}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)
        object.__setattr__(self, "normalized", (pts - pts[0]) / span)

    @classmethod
    def from_points(cls, points) -> "Grid":
        points = np.asarray(points, dtype=np.float64)
        return cls(points, trapezoid_weights(points))

    @classmethod
    def regular(cls, u_min: float, u_max: float, m: int) -> "Grid":
        return cls.from_points(np.linspace(u_min, u_max, m))

    @property
    def m(self) -> int:
        return self.points.size

    def same_as(self, other: "Grid") -> bool:
        return self.m == other.m and np.array_equal(self.points, other.points)


@dataclass(frozen=True)
class Curve:
    """A single discretized curve: values observed at every grid point."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.grid.m,):
            raise ContractError(
                f"curve has {v.shape} values for a {self.grid.m}-point grid")
        if not np.all(np.isfinite(v)):
            raise ContractError("curve values must be finite")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class BasisSystem:
    """D basis functions evaluated on a grid (column d holds phi_d)."""

    kind: str
    d: int
    eval: np.ndarray  # M x D
    grid: Grid

    @property
    def weighted_eval(self) -> np.ndarray:
        """Rows of ``eval`` scaled by quadrature weights: used so that
        curve @ weighted_eval gives all D basis inner products at once."""
        return self.eval * self.grid.weights[:, None]


def _bspline_eval(x: np.ndarray, d: int) -> np.ndarray:
    # clamped cubic B-splines with d-4 equally spaced interior knots on [0,1]
    interior = np.linspace(0.0, 1.0, d - 2)[1:-1]
    knots = np.concatenate([np.zeros(4), interior, np.ones(4)])
    return BSpline.design_matrix(x, knots, 3, extrapolate=False).toarray()


def _fourier_eval(x: np.ndarray, d: int) -> np.ndarray:
    cols = [np.ones_like(x)]
    j = 1
    while len(cols) < d:
        cols.append(np.sin(2.0 * np.pi * j * x))
        if len(cols) < d:
            cols.append(np.cos(2.0 * np.pi * j * x))
        j += 1
    return np.column_stack(cols)


def make_basis(kind: str, d: int, grid: Grid) -> BasisSystem:
    """Build a basis system by direct evaluation at the (normalized) grid."""
    if d < 4:
        raise ConfigError(f"basis size D={d} is below the minimum of 4")
    if d > grid.m:
        warnings.warn(
            f"basis size D={d} exceeds grid size M={grid.m}; "
            "projection is underdetermined and will be ridge-regularized",
            stacklevel=2)
    if kind == "bspline":
        mat = _bspline_eval(grid.normalized, d)
    elif kind == "fourier":
        mat = _fourier_eval(grid.normalized, d)
    else:
        raise ConfigError(f"unknown basis kind {kind!r}")
    return BasisSystem(kind=kind, d=d, eval=mat, grid=grid)


def inner_product(f: Curve, g: Curve) -> float:
    """Quadrature approximation of the L2 inner product of two curves."""
    if not f.grid.same_as(g.grid):
        raise ContractError("inner_product: curves live on different grids")
    return K.wdot(f.grid.weights, f.values, g.values)


def project_curve(c: Curve, basis: BasisSystem) -> np.ndarray:
    """Weighted least-squares coefficients of a curve in the basis.

    Solves the normal equations of min_a sum_m w_m (y_m - (Phi a)_m)^2.
    Ill-conditioned systems (including D > M) get a deterministic 1e-8 ridge.
    """
    if not basis.grid.same_as(c.grid):
        raise ContractError("project_curve: basis grid does not match curve grid")
    phi = basis.eval
    wphi = basis.weighted_eval
    a = phi.T @ wphi
    rhs = wphi.T @ c.values
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        a = a + _RIDGE * np.eye(basis.d)
    try:
        return np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"projection normal equations are singular (cond~{cond:.3e})") from exc


def reconstruct(coeffs: np.ndarray, basis: BasisSystem) -> Curve:
    """Evaluate a coefficient vector back onto the basis grid."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (basis.d,):
        raise ContractError(
            f"expected {basis.d} coefficients, got shape {coeffs.shape}")
    return Curve(basis.grid, basis.eval @ coeffs)
