"""Discounted density of the deficit at ruin, with and without a dividend barrier.

``fd0(y, u)`` is the discounted density of the deficit at ruin for the
uncontrolled surplus started at ``u``. Its transform in ``u`` is
``lam (w(y, rho) - w(y, s)) / (p s - delta - lam + lam fhat(s))`` with
``w(y, s) = int_0^inf exp(-s t) f(y + t) dt``. Under a barrier at ``b`` the
density is ``fd0(y, u) - W(u) / W'(b) * d/du fd0(y, b)``.

Two backends supply ``fd0`` and the partial derivatives used downstream:
an exact exponential sum for Erlang mixtures and an inverted table otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, special

from divbands._special import scaled_upper_gamma
from divbands.errors import DomainError, IntegrationError
from divbands.laplace import InversionConfig, invert
from divbands.model import ClaimDistribution, ErlangComponent, ModelParams, PARETO_LT_SWITCH
from divbands.scale import (LundbergRoots, ScaleTable, build_scale_table, initial_values,
                            lundberg_function, positive_root)

# derivative orders (in y, in u) that the backends provide
ORDERS = ((0, 0), (0, 1), (0, 2), (1, 0), (1, 1))


def w_hat(dist: ClaimDistribution, y, s):
    """``int_0^inf exp(-s t) f(y + t) dt`` broadcast over ``y`` and ``s``."""
    y = np.asarray(y, dtype=float)
    s = np.asarray(s, dtype=complex)
    if np.any(y < 0):
        raise DomainError("w_hat needs y >= 0")
    shape = np.broadcast_shapes(y.shape, s.shape)
    y, s = (np.atleast_1d(v) for v in np.broadcast_arrays(y, s))
    out = np.zeros(y.shape, dtype=complex)
    for c in dist.components:
        if isinstance(c, ErlangComponent):
            out += c.weight * _erlang_w_hat(c, y, s)
        else:
            out += c.weight * _pareto_w_hat(c, y, s)
    return out.reshape(shape)[()]


def _erlang_w_hat(c: ErlangComponent, y, s):
    k, b = c.shape, c.rate
    out = np.zeros(y.shape, dtype=complex)
    for j in range(k):
        # exp(-b y) y^j / j! b^k in log form keeps large y finite
        mag = np.exp(k * math.log(b) - b * y + special.xlogy(j, y) - special.gammaln(j + 1))
        out += mag * (b + s) ** (j - k)
    return out


def _pareto_w_hat(c, y, s):
    a, x0 = c.alpha, c.x0
    out = np.empty(y.shape, dtype=complex)
    z = s * (x0 + y)
    zero = s == 0
    if np.any((s.real <= 0) & ~zero):
        raise DomainError("the Pareto part needs Re(s) > 0")
    out[zero] = (x0 / (x0 + y[zero])) ** a
    near = (np.abs(z) < PARETO_LT_SWITCH) & ~zero
    far = ~near & ~zero
    if far.any():
        zf = z[far]
        out[far] = a * (x0 / (x0 + y[far])) ** a * np.exp(a * np.log(zf)) * scaled_upper_gamma(-a, zf)
    for idx in zip(*np.nonzero(near)):
        out[idx] = _pareto_w_hat_quad(c, float(y[idx]), complex(s[idx]))
    return out


def _pareto_w_hat_quad(c, y, s):
    def f(t, part):
        v = np.exp(-s * t) * c.alpha / c.x0 * (1.0 + (y + t) / c.x0) ** (-c.alpha - 1.0)
        return v.real if part == 0 else v.imag

    res = []
    for part in (0, 1):
        val, err = integrate.quad(f, 0, np.inf, args=(part,), epsabs=1e-14, epsrel=1e-12, limit=400)
        if not np.isfinite(val) or err > 1e-8 * max(1.0, abs(val)):
            raise IntegrationError("quadrature for the shifted-density transform did not converge")
        res.append(val)
    return complex(*res)


def _start_values(params: ModelParams, dist: ClaimDistribution, y, rho: float) -> dict:
    """Values of the ``fd0`` derivatives at ``u = 0`` from the convolution form."""
    lam = params.lam
    w0, w1, w2 = initial_values(params, dist)
    wr = w_hat(dist, y, rho).real
    f = dist.density(y)
    fp = dist.density_derivative(y)
    wy = rho * wr - f
    return {
        (0, 0): lam * w0 * wr,
        (0, 1): lam * (w1 * wr - w0 * f),
        (0, 2): lam * (w2 * wr - w1 * f - w0 * fp),
        (1, 0): lam * w0 * wy,
        (1, 1): lam * (w1 * wy - w0 * fp),
    }


def fd0_inverted(params: ModelParams, dist: ClaimDistribution, y, u, order=(0, 0),
                 rho: Optional[float] = None, config: InversionConfig = InversionConfig()):
    """``fd0`` or one of its partial derivatives by numerical inversion in ``u``.

    Returns an array of shape ``u.shape + y.shape`` (scalars drop their axis).
    """
    scalar_y = np.ndim(y) == 0
    y = np.atleast_1d(np.asarray(y, dtype=float))
    u = np.asarray(u, dtype=float)
    if rho is None:
        rho = positive_root(params, dist)
    out = _invert_surfaces(params, dist, y, u, rho, [order], config)[order]
    return (out[..., 0] if scalar_y else out)[()]


def _invert_surfaces(params, dist, y, u, rho, orders, config):
    lam = params.lam
    start = _start_values(params, dist, y, rho)
    wr = w_hat(dist, y, rho)

    def F(s):
        ws = w_hat(dist, y[None, :], s[:, None])
        inv = 1.0 / lundberg_function(params, dist, s)[:, None]
        s_ = s[:, None]
        base = lam * (wr - ws) * inv
        dy = lam * (rho * wr - s_ * ws) * inv
        parts = {
            (0, 0): base,
            (0, 1): s_ * base - start[(0, 0)],
            (0, 2): s_ * s_ * base - s_ * start[(0, 0)] - start[(0, 1)],
            (1, 0): dy,
            (1, 1): s_ * dy - start[(1, 0)],
        }
        return np.stack([parts[o] for o in orders], axis=1)

    out = np.empty(u.shape + (len(orders), len(y)))
    zero = u == 0
    for i, o in enumerate(orders):
        out[zero, i] = start[o]
    if (~zero).any():
        out[~zero] = invert(F, u[~zero], rho, config)
    return {o: out[..., i, :] for i, o in enumerate(orders)}


class AnalyticDeficit:
    """Exact ``fd0`` for Erlang mixtures as a sum over the non-positive Lundberg roots."""

    source = "analytic"

    def __init__(self, params: ModelParams, dist: ClaimDistribution, roots: LundbergRoots):
        self.params, self.dist, self.roots = params, dist, roots
        keep = np.abs(roots.roots - roots.rho) > 0
        self.s = roots.roots[keep]
        self.c = roots.coeffs[keep]
        self.rho = roots.rho

    def _numerators(self, y, dy):
        """``lam c_i N_i(y)`` with shape ``y.shape + (n_roots,)``."""
        y = np.asarray(y, dtype=float)
        wr = w_hat(self.dist, y, self.rho)[..., None]
        ws = w_hat(self.dist, y[..., None], self.s)
        if dy == 0:
            n = wr - ws
        else:
            n = self.rho * wr - self.s * ws
        return self.params.lam * self.c * n

    def surface(self, y, u, order=(0, 0)):
        """Partial derivative ``order = (dy, du)`` of ``fd0`` at broadcast ``(y, u)``."""
        y, u = np.broadcast_arrays(np.asarray(y, float), np.asarray(u, float))
        dy, du = order
        terms = self._numerators(y, dy) * self.s ** du * np.exp(u[..., None] * self.s)
        return terms.sum(axis=-1).real[()]

    def coefficients(self, y, g, dy):
        """Mixing coefficients ``sum_j g_j lam c_i N_i(y_j)`` for :meth:`moment`."""
        return np.asarray(g, float) @ self._numerators(y, dy)

    def moment(self, coef, x, du):
        """``sum_j g_j d^du/du^du d^dy/dy^dy fd0(y_j, x)`` from precomputed coefficients."""
        x = np.asarray(x, float)
        return (coef * self.s ** du * np.exp(x[..., None] * self.s)).sum(axis=-1).real[()]


@dataclass
class TabulatedDeficit:
    """``fd0`` and its derivatives inverted on a uniform ``(y, u)`` grid, bilinear between nodes."""

    y_grid: np.ndarray
    u_grid: np.ndarray
    tables: dict
    source: str = field(default="inverted", init=False)

    @property
    def hy(self):
        return self.y_grid[1] - self.y_grid[0]

    @property
    def hu(self):
        return self.u_grid[1] - self.u_grid[0]

    def _locate(self, v, grid, h):
        v = np.asarray(v, float)
        if np.any(v < 0) or np.any(v > grid[-1] * (1 + 1e-12)):
            raise DomainError(f"deficit table queried outside [0, {grid[-1]}]")
        i = np.minimum((v / h).astype(int), len(grid) - 2)
        return i, v / h - i

    def surface(self, y, u, order=(0, 0)):
        y, u = np.broadcast_arrays(np.asarray(y, float), np.asarray(u, float))
        T = self.tables[order]
        i, ty = self._locate(y, self.y_grid, self.hy)
        j, tu = self._locate(u, self.u_grid, self.hu)
        # tables are indexed [u, y]
        out = ((1 - tu) * ((1 - ty) * T[j, i] + ty * T[j, i + 1])
               + tu * ((1 - ty) * T[j + 1, i] + ty * T[j + 1, i + 1]))
        return out[()]

    def coefficients(self, y, g, dy):
        """Per-grid-column weights: the y-interpolation folded into a vector over the y-grid."""
        i, ty = self._locate(y, self.y_grid, self.hy)
        g = np.asarray(g, float)
        n = len(self.y_grid)
        row = np.bincount(i, g * (1 - ty), minlength=n) + np.bincount(i + 1, g * ty, minlength=n)
        return dy, row

    def moment(self, coef, x, du):
        dy, row = coef
        col = self.tables[(dy, du)] @ row
        return np.interp(np.asarray(x, float), self.u_grid, col)[()]


def build_deficit_table(params: ModelParams, dist: ClaimDistribution, upper: float, n: int = 1000,
                        rho: Optional[float] = None,
                        config: InversionConfig = InversionConfig()) -> TabulatedDeficit:
    """Invert ``fd0`` and its derivatives on ``(n + 1) x (n + 1)`` nodes of ``[0, upper]^2``."""
    if rho is None:
        rho = positive_root(params, dist)
    y = np.linspace(0.0, upper, n + 1)
    u = np.linspace(0.0, upper, n + 1)
    surf = _invert_surfaces(params, dist, y, u, rho, list(ORDERS), config)
    return TabulatedDeficit(y, u, surf)


@dataclass
class Tables:
    """Everything the value and gradient computations read: model, W and ``fd0``."""

    params: ModelParams
    dist: ClaimDistribution
    scale: ScaleTable
    deficit: object

    @property
    def u0(self) -> float:
        return self.params.u0

    def W(self, x, order=0):
        return self.scale.W(x, order)


def build_tables(params: ModelParams, dist: ClaimDistribution, n_grid: int = 10000,
                 n_deficit: int = 1000, upper: Optional[float] = None) -> Tables:
    scale = build_scale_table(params, dist, n_grid, upper=upper)
    if scale.roots is not None:
        deficit = AnalyticDeficit(params, dist, scale.roots)
    else:
        deficit = build_deficit_table(params, dist, scale.upper, n_deficit, rho=scale.rho)
    return Tables(params, dist, scale, deficit)


def fd0(tables: Tables, y, u, order=(0, 0)):
    """No-dividend deficit density (or a partial derivative) at broadcast ``(y, u)``."""
    if np.any(np.asarray(y) < 0) or np.any(np.asarray(u) < 0):
        raise DomainError("fd0 needs y >= 0 and u >= 0")
    return tables.deficit.surface(y, u, order)


def fd(tables: Tables, y, u, b, d: int = 0):
    """Deficit density under a barrier at ``b`` for initial surplus ``u <= b``.

    ``d`` selects the function itself (0) or its partial derivative in
    ``y`` (1), ``u`` (2) or ``b`` (3).
    """
    y, u, b = np.broadcast_arrays(*(np.asarray(v, float) for v in (y, u, b)))
    if np.any(u > b * (1 + 1e-12) + 1e-12):
        raise DomainError("the barrier deficit density needs u <= b")
    W, T = tables.W, tables.deficit.surface
    r = W(u) / W(b, 1)
    if d == 0:
        return T(y, u) - r * T(y, b, (0, 1))
    if d == 1:
        return T(y, u, (1, 0)) - r * T(y, b, (1, 1))
    if d == 2:
        return T(y, u, (0, 1)) - W(u, 1) / W(b, 1) * T(y, b, (0, 1))
    if d == 3:
        return r * W(b, 2) / W(b, 1) * T(y, b, (0, 1)) - r * T(y, b, (0, 2))
    raise ValueError("d must be 0, 1, 2 or 3")


def fd_direct(tables: Tables, y: float, u: float, b: float) -> float:
    """Barrier deficit density from the scale function alone, by quadrature.

    ``lam int_0^b (W(u) W'(b - z) / W'(b) - W(u - z)) f(y + z) dz`` plus the
    point mass ``lam W(u) W(0) f(y + b) / W'(b)`` that differentiating
    ``W(b - z)`` at ``z = b`` leaves behind.
    """
    if not 0 <= u <= b:
        raise DomainError("the barrier deficit density needs 0 <= u <= b")
    lam, W, f = tables.params.lam, tables.W, tables.dist.density
    wu, w1b = float(W(u)), float(W(b, 1))

    def integrand(z):
        v = wu * W(b - z, 1) / w1b
        if z < u:
            v -= W(u - z)
        return v * f(y + z)

    pts = [u] if 0 < u < b else None
    val, err = integrate.quad(integrand, 0.0, b, points=pts, epsabs=1e-13, epsrel=1e-11, limit=400)
    if err > 1e-9:
        raise IntegrationError(f"quadrature error estimate {err:.1e} too large")
    return lam * (val + wu * float(W(0.0)) * float(f(y + b)) / w1b)
