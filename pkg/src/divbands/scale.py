"""The discounted scale function W and its first two derivatives.

For Erlang mixtures the Laplace transform ``1/(p s - delta - lam + lam fhat(s))``
is rational and W is a finite sum of exponentials over the roots of the
Lundberg equation. Otherwise W is recovered by numerical inversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import interpolate, optimize

from divbands.errors import (ConvergenceError, DomainError, InversionError, MultiplicityError,
                             NumericalInstabilityError)
from divbands.laplace import InversionConfig, invert
from divbands.model import ClaimDistribution, ErlangComponent, ModelParams

ROOT_RESIDUAL_TOL = 1e-10
MULTIPLICITY_TOL = 1e-8
IMAG_TOL = 1e-8


@dataclass(frozen=True)
class LundbergRoots:
    """Roots ``s_i`` and coefficients ``c_i`` with ``W(x) = sum c_i exp(s_i x)``."""

    roots: np.ndarray
    coeffs: np.ndarray
    rho: float


def lundberg_function(params: ModelParams, dist: ClaimDistribution, s):
    """``p s - delta - lam + lam fhat(s)``, the reciprocal of the transform of W."""
    s = np.asarray(s, dtype=complex)
    return params.p * s - params.delta - params.lam + params.lam * dist.laplace(s)


def _erlang_groups(dist: ClaimDistribution) -> dict:
    groups: dict = {}
    for c in dist.components:
        groups.setdefault(c.rate, []).append(c)
    return groups


def _laplace_derivative(dist: ClaimDistribution, s):
    s = np.asarray(s, dtype=complex)
    out = np.zeros_like(s)
    for c in dist.components:
        out = out - c.weight * c.shape * c.rate ** c.shape / (c.rate + s) ** (c.shape + 1)
    return out


def lundberg_roots(params: ModelParams, dist: ClaimDistribution) -> LundbergRoots:
    """All roots of the Lundberg equation for an Erlang mixture.

    Clearing denominators gives ``P(s) = (p s - delta - lam) Q(s) + lam N(s)`` with
    ``Q(s) = prod (rate + s)**k``. Roots come from the companion matrix and are
    polished by Newton steps on the unreduced rational form.
    """
    if not dist.is_erlang_mixture:
        raise DomainError("Lundberg roots are only available for Erlang mixtures")
    groups = _erlang_groups(dist)
    kmax = {b: max(c.shape for c in cs) for b, cs in groups.items()}
    Q = np.array([1.0])
    for b, k in kmax.items():
        Q = P.polymul(Q, P.polypow([b, 1.0], k))
    N = np.zeros(1)
    for b, cs in groups.items():
        rest = np.array([1.0])
        for b2, k2 in kmax.items():
            if b2 != b:
                rest = P.polymul(rest, P.polypow([b2, 1.0], k2))
        for c in cs:
            term = c.weight * b ** c.shape * P.polymul(rest, P.polypow([b, 1.0], kmax[b] - c.shape))
            N = P.polyadd(N, term)
    poly = P.polyadd(P.polymul([-(params.delta + params.lam), params.p], Q), params.lam * N)
    roots = P.polyroots(poly).astype(complex)

    g = lambda s: lundberg_function(params, dist, s)
    dg = lambda s: params.p + params.lam * _laplace_derivative(dist, s)
    for _ in range(3):
        roots = roots - g(roots) / dg(roots)

    # make conjugate pairs exact so that sums over roots are real
    scale = np.maximum(1.0, np.abs(roots))
    real = np.abs(roots.imag) <= 1e-10 * scale
    roots[real] = roots[real].real
    cplx = np.nonzero(~real)[0]
    used = set()
    for i in cplx:
        if i in used:
            continue
        j = min((j for j in cplx if j != i and j not in used), key=lambda j: abs(roots[j] - np.conj(roots[i])))
        s = 0.5 * (roots[i] + np.conj(roots[j]))
        roots[i], roots[j] = s, np.conj(s)
        used.update((i, j))

    gaps = np.abs(roots[:, None] - roots[None, :])
    np.fill_diagonal(gaps, np.inf)
    if np.any(gaps < MULTIPLICITY_TOL * scale[:, None]):
        raise MultiplicityError("the Lundberg equation has a repeated root")
    resid = np.abs(g(roots))
    if np.any(resid > ROOT_RESIDUAL_TOL * np.maximum(1.0, params.p * np.abs(roots))):
        raise ConvergenceError(f"Lundberg root residual {resid.max():.2e} too large")
    pos = roots[roots.real > 0]
    if len(pos) != 1 or pos[0].imag != 0:
        raise ConvergenceError("expected exactly one positive real Lundberg root")
    coeffs = 1.0 / dg(roots)
    order = np.argsort(roots.real)
    return LundbergRoots(roots[order], coeffs[order], float(pos[0].real))


def scale_analytic(roots: LundbergRoots, x, order: int = 0):
    """``sum c_i s_i**order exp(s_i x)`` with the (vanishing) imaginary part checked."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("the scale function is evaluated for x >= 0")
    terms = roots.coeffs * roots.roots ** order * np.exp(np.multiply.outer(x, roots.roots))
    total = terms.sum(axis=-1)
    size = np.abs(terms).sum(axis=-1)
    if np.any(np.abs(total.imag) > IMAG_TOL * np.maximum(size, 1e-300)):
        raise NumericalInstabilityError("scale function sum has a non-negligible imaginary part")
    return total.real[()]


def positive_root(params: ModelParams, dist: ClaimDistribution) -> float:
    """The unique positive solution of the Lundberg equation, found on the real line."""
    g = lambda s: float(lundberg_function(params, dist, s).real)
    hi = (params.lam + params.delta) / params.p
    lo = hi * 1e-12
    return float(optimize.brentq(g, lo, hi, xtol=1e-15, rtol=1e-15))


def initial_values(params: ModelParams, dist: ClaimDistribution) -> tuple:
    """``(W(0), W'(0), W''(0))`` from the large-s expansion of the transform."""
    p, lam, d = params.p, params.lam, params.delta
    f0 = float(dist.density(0.0))
    return 1.0 / p, (lam + d) / p ** 2, ((lam + d) ** 2 - lam * p * f0) / p ** 3


def scale_inverted(params: ModelParams, dist: ClaimDistribution, x, order: int = 0,
                   rho: Optional[float] = None, config: InversionConfig = InversionConfig()):
    """W or one of its first two derivatives by Laplace inversion."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("the scale function is evaluated for x >= 0")
    if rho is None:
        rho = positive_root(params, dist)
    elif abs(lundberg_function(params, dist, rho)) > 1e-8 * (params.p * abs(rho) + params.lam + params.delta):
        # the transform has its rightmost pole at the positive root, nowhere else
        raise InversionError("contour abscissa must sit right of the positive Lundberg root")
    w0, w1, w2 = initial_values(params, dist)

    def F(s):
        base = 1.0 / lundberg_function(params, dist, s)
        if order == 0:
            return base
        if order == 1:
            return s * base - w0
        return s * s * base - s * w0 - w1

    out = np.empty(x.shape)
    zero = x == 0
    out[zero] = (w0, w1, w2)[order]
    if (~zero).any():
        out[~zero] = invert(F, x[~zero], rho, config)
    return out[()]


@dataclass(frozen=True)
class ScaleTable:
    """W, W' and W'' on a uniform grid over ``[0, upper]``.

    Between nodes W and W' use cubic Hermite interpolation with the next
    derivative as slope data, and W'' is linear. Tables built from Lundberg
    roots evaluate the exact sum instead.
    """

    grid: np.ndarray
    w: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    source: str
    params: ModelParams
    dist: ClaimDistribution
    rho: float
    roots: Optional[LundbergRoots] = None

    def __post_init__(self):
        if self.source == "inverted":
            object.__setattr__(self, "_h0", interpolate.CubicHermiteSpline(self.grid, self.w, self.w1))
            object.__setattr__(self, "_h1", interpolate.CubicHermiteSpline(self.grid, self.w1, self.w2))

    @property
    def upper(self) -> float:
        return float(self.grid[-1])

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def __call__(self, x, order: int = 0):
        return self.W(x, order)

    def W(self, x, order: int = 0):
        x = np.asarray(x, dtype=float)
        if self.roots is not None:
            return scale_analytic(self.roots, x, order)
        if np.any(x < 0):
            raise DomainError("the scale function is evaluated for x >= 0")
        out = np.empty(x.shape)
        inside = x <= self.upper
        xi = x[inside]
        if order == 0:
            out[inside] = self._h0(xi)
        elif order == 1:
            out[inside] = self._h1(xi)
        else:
            out[inside] = np.interp(xi, self.grid, self.w2)
        if (~inside).any():
            out[~inside] = scale_inverted(self.params, self.dist, x[~inside], order, rho=self.rho)
        return out[()]


def build_scale_table(params: ModelParams, dist: ClaimDistribution, n_grid: int = 10000,
                      upper: Optional[float] = None, backend: Optional[str] = None) -> ScaleTable:
    """Tabulate W, W', W'' on ``n_grid + 1`` equidistant points of ``[0, upper]``.

    ``upper`` defaults to the search horizon u0. ``backend`` forces "analytic"
    or "inverted"; by default Erlang mixtures use the roots.
    """
    if n_grid < 2:
        raise DomainError("n_grid must be at least 2")
    upper = params.u0 if upper is None else float(upper)
    grid = np.linspace(0.0, upper, n_grid + 1)
    if backend is None:
        backend = "analytic" if dist.is_erlang_mixture else "inverted"
    if backend == "analytic":
        roots = lundberg_roots(params, dist)
        w, w1, w2 = (scale_analytic(roots, grid, k) for k in range(3))
        return ScaleTable(grid, w, w1, w2, "analytic", params, dist, roots.rho, roots)
    rho = positive_root(params, dist)
    vals = []
    for k in range(3):
        try:
            vals.append(scale_inverted(params, dist, grid, k, rho=rho))
        except InversionError:
            if k == 0:
                raise
            vals.append(np.gradient(vals[-1], grid, edge_order=2))
    return ScaleTable(grid, *vals, "inverted", params, dist, rho)


def _refine_w2_root(table: ScaleTable, lo: float, hi: float) -> Optional[float]:
    f = lambda x: float(table.W(x, 2))
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if flo * fhi > 0:
        return None
    return float(optimize.brentq(f, lo, hi, xtol=1e-13, rtol=1e-14))


def find_b0(table: ScaleTable) -> float:
    """Largest point where W' attains its minimum (the optimal single barrier)."""
    # compare refined minima: near-equal wells can be misordered on the grid
    cands = wprime_local_minima(table)
    if table.w1[-1] <= table.w1[-2]:
        cands.append(table.upper)
    vals = np.array([float(table.W(x, 1)) for x in cands])
    lo = vals.min()
    tied = [x for x, v in zip(cands, vals) if v <= lo + 1e-9 * (1.0 + abs(lo))]
    return float(max(tied))


def wprime_local_minima(table: ScaleTable) -> list:
    """Local minima of W' on the table (refined where W'' changes sign)."""
    w1, g = table.w1, table.grid
    out = []
    if w1[0] < w1[1]:
        out.append(0.0)
    inner = np.nonzero((w1[1:-1] < w1[:-2]) & (w1[1:-1] <= w1[2:]))[0] + 1
    for i in inner:
        r = _refine_w2_root(table, g[i - 1], g[i + 1])
        out.append(float(g[i]) if r is None else r)
    return out
