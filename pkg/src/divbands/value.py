"""Expected discounted dividends of band strategies and the optimality check.

Inside band ``k`` (surplus in ``[a_k, a_{k+1})``, band width ``h = b_k - a_k``)
the value is the barrier value of the shifted surplus ``x = u - a_k`` plus
the value collected after the surplus drops below ``a_k``::

    V(u) = V_h(x) + int_0^{a_k} V(z) fD(a_k - z, min(x, h), h) dz

where ``fD`` is the barrier deficit density. Bands are built bottom up, so the
integral only needs V on lower bands, which is already known.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate, signal

from divbands.deficit import Tables
from divbands.errors import DomainError, IntegrationError
from divbands.model import BandStrategy, ErlangComponent, as_strategy

HJB_TOL = 1e-4


@dataclass(frozen=True)
class QuadratureConfig:
    """Composite Gauss-Legendre rule for the band integrals.

    Panels are split at every lower level and graded from each split point:
    the first panel has length ``fine`` times the shortest claim length
    scale, and lengths double up to ``coarse`` times that scale.
    """

    order: int = 16
    fine: float = 1.0
    coarse: float = 8.0


def barrier_value(tables: Tables, u, b: float):
    """Value of paying everything above ``b``: ``W(u)/W'(b)`` below, linear above."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0) or b < 0:
        raise DomainError("barrier value needs u >= 0 and b >= 0")
    x = np.minimum(u, b)
    return (tables.W(x) / tables.W(b, 1) + (u - x))[()]


def _graded_edges(lo: float, hi: float, first: float, longest: float) -> list:
    """Panel edges on ``[lo, hi]`` refined towards both ends."""
    n = hi - lo
    if n <= 0:
        return []
    steps = []
    L, total = first, 0.0
    while total < n / 2:
        steps.append(L)
        total += L
        L = min(2 * L, longest)
    left = np.cumsum([0.0] + steps)
    left = left[left < n / 2]
    edges = np.concatenate([lo + left, hi - left[::-1], [hi]])
    edges = np.unique(np.concatenate([[lo], edges]))
    return list(edges)


def panel_nodes(a: float, breaks: Sequence[float], scale: float, cfg: QuadratureConfig):
    """Gauss-Legendre nodes and weights on ``[0, a]`` split at ``breaks``."""
    pts = sorted({0.0, a, *[x for x in breaks if 0 < x < a]})
    edges = []
    for lo, hi in zip(pts[:-1], pts[1:]):
        edges.extend(_graded_edges(lo, hi, cfg.fine * scale, cfg.coarse * scale))
    edges = np.unique(edges)
    t, w = leggauss(cfg.order)
    lo, hi = edges[:-1, None], edges[1:, None]
    z = (0.5 * (hi - lo) * t + 0.5 * (hi + lo)).ravel()
    wt = (0.5 * (hi - lo) * w).ravel()
    return z, wt


@dataclass
class _Band:
    a: float
    b: float
    w1h: float
    coef: dict = field(default_factory=dict)
    C: float = 0.0
    nodes: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    vz: Optional[np.ndarray] = None

    @property
    def h(self) -> float:
        return self.b - self.a


class ValueFunction:
    """Value of a band strategy, evaluable at any surplus in ``[0, inf)``."""

    def __init__(self, strategy: Union[BandStrategy, Sequence[float]], tables: Tables,
                 quad: QuadratureConfig = QuadratureConfig()):
        self.strategy = as_strategy(strategy)
        self.tables = tables
        self.quad = quad
        self._scale = tables.dist.length_scale()
        self.bands: list = []
        lv = self.strategy.levels
        for k, (a, b) in enumerate(zip(self.strategy.a, self.strategy.b)):
            band = _Band(a, b, float(tables.W(b - a, 1)))
            if k > 0:
                z, w = panel_nodes(a, lv[:2 * k - 1], self._scale, quad)
                band.nodes, band.weights = z, w
                band.vz = self(z)
                band.coef[0] = tables.deficit.coefficients(a - z, w * band.vz, 0)
                band.C = float(tables.deficit.moment(band.coef[0], band.h, 1))
            self.bands.append(band)

    @property
    def levels(self) -> tuple:
        return self.strategy.levels

    def band_coef(self, k: int, dy: int):
        """Deficit-moment coefficients of band ``k`` for the ``dy``-th y-derivative."""
        band = self.bands[k]
        if dy not in band.coef:
            band.coef[dy] = self.tables.deficit.coefficients(band.a - band.nodes, band.weights * band.vz, dy)
        return band.coef[dy]

    def _split(self, u):
        u = np.asarray(u, dtype=float)
        if np.any(u < 0):
            raise DomainError("the value function is defined for u >= 0")
        a = np.array([bd.a for bd in self.bands])
        return u, np.searchsorted(a, u, side="right") - 1

    def __call__(self, u):
        u, idx = self._split(u)
        out = np.empty(u.shape)
        W, D = self.tables.W, self.tables.deficit
        for k in np.unique(idx):
            bd = self.bands[k]
            sel = idx == k
            x = u[sel] - bd.a
            xc = np.minimum(x, bd.h)
            wx = W(xc)
            v = wx / bd.w1h + (x - xc)
            if k > 0:
                v = v + D.moment(bd.coef[0], xc, 0) - wx / bd.w1h * bd.C
            out[sel] = v
        return out[()]

    def derivative(self, u):
        """Right derivative of the value function in the surplus."""
        u, idx = self._split(u)
        out = np.ones(u.shape)
        W, D = self.tables.W, self.tables.deficit
        for k in np.unique(idx):
            bd = self.bands[k]
            sel = idx == k
            x = u[sel] - bd.a
            inside = x < bd.h
            xi = x[inside]
            d = W(xi, 1) / bd.w1h
            if k > 0:
                d = d * (1.0 - bd.C) + D.moment(bd.coef[0], xi, 1)
            vals = out[sel]
            vals[inside] = d
            out[sel] = vals
        return out[()]


def value_band(strategy, tables: Tables, u, quad: QuadratureConfig = QuadratureConfig()):
    """Value of a band strategy at ``u``."""
    return ValueFunction(strategy, tables, quad)(u)


def generator_residual(v: ValueFunction, x):
    """``p V'(x) - (lam + delta) V(x) + lam int_0^x V(x - y) f(y) dy`` by adaptive quadrature."""
    t = v.tables
    p, lam, delta = t.params.p, t.params.lam, t.params.delta
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs <= 0):
        raise DomainError("the generator is evaluated at x > 0")
    out = np.empty(xs.shape)
    for i, xi in enumerate(xs):
        pts = [xi - l for l in v.levels if 0 < l < xi]
        val, err = integrate.quad(lambda y: float(v(xi - y)) * float(t.dist.density(y)), 0.0, xi,
                                  points=pts or None, limit=400, epsabs=1e-12, epsrel=1e-10)
        if err > 1e-7 * max(1.0, abs(val)):
            raise IntegrationError("generator convolution did not converge")
        out[i] = p * float(v.derivative(xi)) - (lam + delta) * float(v(xi)) + lam * val
    return out.reshape(np.shape(x))[()]


def convolve_density(tables: Tables, grid: np.ndarray, v: np.ndarray, dv: np.ndarray,
                     nodes: int = 8) -> np.ndarray:
    """``int_0^{x_n} V(x_n - y) f(y) dy`` on a uniform grid.

    V is taken as the cubic Hermite interpolant of ``(v, dv)``; each cubic
    term is integrated exactly against the density with Gauss-Legendre cell
    kernels, and the sums over cells are FFT convolutions.
    """
    h = grid[1] - grid[0]
    n = len(grid)
    dv0, dv1 = dv[:-1], dv[1:]
    dvv = (v[1:] - v[:-1]) / h
    coeffs = [v[:-1], dv0, (3 * dvv - 2 * dv0 - dv1) / h, (dv0 + dv1 - 2 * dvv) / h ** 2]
    t, w = leggauss(nodes)
    tq = 0.5 * h * (t + 1)
    wq = 0.5 * h * w
    j = np.arange(1, n)[:, None]
    fvals = t_density(tables, j * h - tq[None, :])
    total = np.zeros(n)
    for k, c in enumerate(coeffs):
        K = np.concatenate([[0.0], (fvals * tq ** k) @ wq])
        total += signal.fftconvolve(c, K)[:n]
    return total


def t_density(tables: Tables, y):
    return tables.dist.density(np.maximum(y, 0.0))


@dataclass
class HjbReport:
    """Outcome of scanning the optimality conditions on a grid."""

    max_residual: float
    min_derivative: float
    is_optimal: bool
    tol: float
    x: np.ndarray
    residual: np.ndarray
    derivative: np.ndarray
    checked: np.ndarray

    def positive_region(self) -> tuple:
        """Smallest and largest checked x with residual above tolerance, or ``()``."""
        bad = self.checked & (self.residual > self.tol * np.maximum(1.0, np.abs(self._v)))
        if not bad.any():
            return ()
        xs = self.x[bad]
        return float(xs.min()), float(xs.max())

    def to_dict(self) -> dict:
        return {
            "max_residual": float(self.max_residual),
            "min_derivative": float(self.min_derivative),
            "is_optimal": bool(self.is_optimal),
        }


def hjb_check(v: ValueFunction, grid: Optional[np.ndarray] = None, tol: float = HJB_TOL) -> HjbReport:
    """Check ``L V <= 0`` and ``V' >= 1`` on a uniform grid over ``[0, u0]``.

    Grid points within one cell of a band level are skipped since V is only
    one-sided differentiable there. The residual tolerance scales with
    ``max(1, |V|)``.
    """
    t = v.tables
    if grid is None:
        grid = t.scale.grid
    grid = np.asarray(grid, dtype=float)
    h = grid[1] - grid[0]
    vals = np.asarray(v(grid), dtype=float)
    dv = np.asarray(v.derivative(grid), dtype=float)
    conv = convolve_density(t, grid, vals, dv)
    p, lam, delta = t.params.p, t.params.lam, t.params.delta
    res = p * dv - (lam + delta) * vals + lam * conv
    checked = grid > 0
    for l in v.levels:
        checked &= np.abs(grid - l) > h * (1 + 1e-9)
    scaled = res / np.maximum(1.0, np.abs(vals))
    max_res = float(scaled[checked].max()) if checked.any() else 0.0
    min_der = float(dv[checked].min()) if checked.any() else 1.0
    ok = max_res <= tol and min_der >= 1.0 - tol
    rep = HjbReport(max_res, min_der, ok, tol, grid, res, dv, checked)
    rep._v = vals
    return rep
