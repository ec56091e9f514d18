"""Gradient-based construction of optimal band strategies.

Bands are appended one at a time. With the lower levels fixed, the new top
band ``(a, b)`` must make the derivatives of the value in ``a`` and ``b``
vanish; for surplus above ``b`` these two conditions do not depend on the
surplus and reduce to a 2x2 nonlinear system. A band is added as long as the
optimality check fails.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from divbands.deficit import Tables
from divbands.errors import NoSolutionError, NonDifferentiableError
from divbands.model import BandStrategy, as_strategy
from divbands.scale import find_b0, wprime_local_minima
from divbands.value import HJB_TOL, HjbReport, QuadratureConfig, ValueFunction, hjb_check, panel_nodes


@dataclass(frozen=True)
class GradientSolverConfig:
    """Settings of the band-appending solver.

    Attributes
    ----------
    solve_tol : float
        Largest accepted residual of the stationarity system.
    max_bands : int
        Cap on the number of bands.
    seed_fractions : tuple
        Initial ``a`` guesses as fractions of the gap between the current top
        level and each ``b`` guess.
    flat_tol : float
        Residual below which a stalled solve is still accepted (flagged flat).
    flat_ratio : float
        A root is also flagged flat when the ratio of the smallest to the
        largest singular value of the system's Jacobian falls below this, i.e.
        the value barely reacts to moving the level along one direction.
    min_gap : float
        Smallest distance, in claim length scales, between a new ``b`` and the
        current top level.
    hjb_tol : float
        Tolerance of the optimality check, relative to ``max(1, |V|)``.
    """

    solve_tol: float = 1e-8
    max_bands: int = 6
    seed_fractions: tuple = (0.02, 0.25, 0.5, 0.75)
    flat_tol: float = 1e-5
    flat_ratio: float = 1e-2
    min_gap: float = 1e-3
    hjb_tol: float = HJB_TOL

    def __post_init__(self):
        if not self.solve_tol > 0:
            raise ValueError("solve_tol must be positive")
        if self.max_bands < 1:
            raise ValueError("max_bands must be at least 1")


@dataclass(frozen=True)
class StationaryPoint:
    a: float
    b: float
    residual: float
    flat: bool = False


@dataclass
class GradientResult:
    strategy: BandStrategy
    value: ValueFunction
    hjb: HjbReport
    value_at_u0: float
    flat_region: bool = False
    warning: Optional[str] = None
    history: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


# -- derivatives of the value in the levels ------------------------------------

class _Partials:
    """Derivatives of ``V(u)`` in every level, with per-band node caches."""

    def __init__(self, vf: ValueFunction):
        self.vf = vf
        self.t = vf.tables
        self.cache: dict = {}

    def band_terms(self, j: int, xc: np.ndarray) -> dict:
        """Integrals of V against ``fD`` and its derivatives for band ``j``."""
        bd = self.vf.bands[j]
        W, D = self.t.W, self.t.deficit
        h, w1h = bd.h, bd.w1h
        c0, c1 = self.vf.band_coef(j, 0), self.vf.band_coef(j, 1)
        wx, w1x, w2h = W(xc), W(xc, 1), float(W(h, 2))
        C, M02 = bd.C, float(D.moment(c0, h, 2))
        return {
            "d1": D.moment(c1, xc, 0) - wx / w1h * float(D.moment(c1, h, 1)),
            "d2": D.moment(c0, xc, 1) - w1x / w1h * C,
            "d3": wx * w2h / w1h ** 2 * C - wx / w1h * M02,
            "f0": D.surface(0.0, xc) - wx / w1h * float(D.surface(0.0, h, (0, 1))),
        }

    def below_value(self, j: int) -> float:
        """V just below ``a_j``, on the lump-sum stretch of band ``j - 1``."""
        lo = self.vf.bands[j - 1]
        x = self.vf.bands[j].a - lo.a
        if x >= lo.h:
            return float(self.vf(lo.b)) + x - lo.h
        return float(self.vf(self.vf.bands[j].a - 1e-12))

    def at(self, i: int, u: np.ndarray) -> np.ndarray:
        """Derivative of V in level ``i`` at the surplus values ``u``."""
        u = np.asarray(u, float)
        vf, W = self.vf, self.t.W
        li, is_a = (i + 1) // 2, i % 2 == 1
        a_arr = np.array([bd.a for bd in vf.bands])
        idx = np.searchsorted(a_arr, u, side="right") - 1
        out = np.zeros(u.shape)
        for j in np.unique(idx):
            if j < li:
                continue
            bd = vf.bands[j]
            sel = idx == j
            x = u[sel] - bd.a
            xc = np.minimum(x, bd.h)
            h, w1h = bd.h, bd.w1h
            wx = W(xc)
            curv = wx * float(W(h, 2)) / w1h ** 2
            if j == li:
                terms = self.band_terms(j, xc) if j > 0 else None
                if not is_a:
                    r = -curv + (terms["d3"] if j > 0 else 0.0)
                else:
                    lin = np.where(x < h, -W(xc, 1) / w1h, -1.0)
                    r = (lin + curv + self.below_value(j) * terms["f0"]
                         + terms["d1"] - terms["d2"] - terms["d3"])
            else:
                key = (i, j)
                if key not in self.cache:
                    g = bd.weights * self.at(i, bd.nodes)
                    self.cache[key] = self.t.deficit.coefficients(bd.a - bd.nodes, g, 0)
                coef = self.cache[key]
                D = self.t.deficit
                r = D.moment(coef, xc, 0) - wx / w1h * float(D.moment(coef, h, 1))
                if is_a:
                    # V jumps at a_li unless the levels are stationary; shifting the jump
                    # moves mass J across the integrand
                    jump = float(vf(vf.bands[li].a)) - self.below_value(li)
                    y = bd.a - vf.bands[li].a
                    fd_y = D.surface(y, xc) - wx / w1h * float(D.surface(y, h, (0, 1)))
                    r = r - jump * fd_y
            out[sel] = r
        return out


def partials(strategy, tables: Tables, u: float, quad: QuadratureConfig = QuadratureConfig()) -> np.ndarray:
    """Gradient of ``V(u)`` with respect to all ``2m - 1`` levels."""
    s = as_strategy(strategy)
    if any(abs(u - l) <= 1e-9 * (1.0 + abs(u)) for l in s.levels):
        raise NonDifferentiableError(f"u = {u} coincides with a level")
    if not u > 0:
        raise NonDifferentiableError("partials need u > 0")
    P = _Partials(ValueFunction(s, tables, quad))
    return np.array([float(P.at(i, np.array([u]))[0]) for i in range(len(s.levels))])


# -- the 2x2 system for a new top band ------------------------------------------

def stationarity_residuals(lower: ValueFunction, a: float, b: float,
                           quad: QuadratureConfig = QuadratureConfig()) -> np.ndarray:
    """Residuals of the two top-band conditions for lower value ``lower`` and band ``(a, b)``.

    The first entry is minus the derivative in ``b``; the second is the
    derivative in ``a``. Both are taken for surplus above ``b``.
    """
    t = lower.tables
    W, D = t.W, t.deficit
    h = b - a
    z, w = panel_nodes(a, lower.levels, t.dist.length_scale(), quad)
    g = w * lower(z)
    c0 = D.coefficients(a - z, g, 0)
    c1 = D.coefficients(a - z, g, 1)
    wh, w1h, w2h = float(W(h)), float(W(h, 1)), float(W(h, 2))
    curv = wh * w2h / w1h ** 2
    m01, m02 = float(D.moment(c0, h, 1)), float(D.moment(c0, h, 2))
    m10, m11 = float(D.moment(c1, h, 0)), float(D.moment(c1, h, 1))
    e13 = curv - (curv * m01 - wh / w1h * m02)
    f0 = float(D.surface(0.0, h)) - wh / w1h * float(D.surface(0.0, h, (0, 1)))
    e14 = f0 * float(lower(a)) + m10 - wh / w1h * m11 - 1.0
    return np.array([e13, e14])


def solve_stationarity(fixed_levels: Sequence[float], tables: Tables, guesses: Sequence[tuple],
                       config: GradientSolverConfig = GradientSolverConfig(),
                       quad: QuadratureConfig = QuadratureConfig()) -> list:
    """Solve the top-band system from each ``(a, b)`` guess; keep admissible distinct roots."""
    lower = ValueFunction(tuple(fixed_levels), tables, quad)
    top = float(fixed_levels[-1])
    upper = tables.scale.upper
    scale = tables.dist.length_scale()

    def fun(v):
        a, b = v
        ac = min(max(a, top), upper)
        bc = min(max(b, ac), upper)
        # penalise leaving the admissible set so the map stays continuous
        return stationarity_residuals(lower, ac, bc, quad) + np.array([bc - b, ac - a])

    found: list = []
    for a0, b0 in guesses:
        try:
            sol = optimize.root(fun, [a0, b0], method="hybr", options={"xtol": 1e-12})
        except (ArithmeticError, ValueError):
            continue
        a, b = map(float, sol.x)
        # a band squeezed onto the current top level is no new band
        if not (top <= a <= b <= upper) or b - top <= config.min_gap * scale:
            continue
        res = float(np.max(np.abs(stationarity_residuals(lower, a, b, quad))))
        if res > config.flat_tol:
            continue
        flat = res > config.solve_tol or _conditioning(lower, a, b, top, quad) < config.flat_ratio
        pt = StationaryPoint(a, b, res, flat)
        if not any(abs(pt.a - q.a) < 1e-6 and abs(pt.b - q.b) < 1e-6 for q in found):
            found.append(pt)
    return found


def _conditioning(lower: ValueFunction, a: float, b: float, top: float,
                  quad: QuadratureConfig) -> float:
    """Smallest over largest singular value of the system's Jacobian at ``(a, b)``."""
    eps = 1e-5 * max(1.0, b)
    eps = min(eps, 0.5 * (a - top) if a - top > 0 else eps, 0.5 * (b - a))
    J = np.empty((2, 2))
    for k, (da, db) in enumerate(((eps, 0.0), (0.0, eps))):
        lo_a = max(a - da, top)
        J[:, k] = (stationarity_residuals(lower, a + da, b + db, quad)
                   - stationarity_residuals(lower, lo_a, b - db, quad)) / (a + da - lo_a + 2 * db)
    sv = np.linalg.svd(J, compute_uv=False)
    return float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0


def select(solutions: Sequence[StationaryPoint], fixed_levels: Sequence[float], tables: Tables,
           quad: QuadratureConfig = QuadratureConfig()) -> StationaryPoint:
    """The candidate with the best extended value at the lowest candidate ``b``.

    Values are compared at one common surplus. Using the lowest ``b`` means a
    band that improves the value close to the current top wins over a band
    further up, which can still be appended later.
    """
    if not solutions:
        raise NoSolutionError("no admissible stationary point to select from")
    if len(solutions) == 1:
        return solutions[0]
    u = min(s.b for s in solutions)
    vals = np.array([float(ValueFunction(tuple(fixed_levels) + (s.a, s.b), tables, quad)(u))
                     for s in solutions])
    best = vals.max()
    tied = [s for s, v in zip(solutions, vals) if v >= best - 1e-12 * max(1.0, abs(best))]
    return min(tied, key=lambda s: s.b)


def make_guesses(top: float, tables: Tables, report: HjbReport, config: GradientSolverConfig) -> list:
    """Initial ``(a, b)`` pairs from local minima of W' above the current top level.

    Without such minima the right end of the region where the optimality
    check fails is used as the ``b`` guess.
    """
    bs = [x for x in wprime_local_minima(tables.scale) if x > top + 1e-9]
    if not bs:
        region = report.positive_region()
        if region:
            bs = [region[1]]
    out = []
    for b in bs:
        for f in config.seed_fractions:
            out.append((top + f * (b - top), b))
    return out


def solve_gradient(tables: Tables, config: GradientSolverConfig = GradientSolverConfig(),
                   quad: QuadratureConfig = QuadratureConfig()) -> GradientResult:
    """Append bands until the optimality check passes or ``max_bands`` is reached."""
    t0 = time.perf_counter()
    levels: tuple = (find_b0(tables.scale),)
    vf = ValueFunction(levels, tables, quad)
    rep = hjb_check(vf, tol=config.hjb_tol)
    flat = False
    warning = None
    history = [(levels, float(vf(tables.u0)))]
    while not rep.is_optimal:
        if len(levels) // 2 + 1 >= config.max_bands:
            warning = "max_bands reached without passing the optimality check"
            break
        guesses = make_guesses(levels[-1], tables, rep, config)
        sols = solve_stationarity(levels, tables, guesses, config, quad)
        if not sols:
            warning = "no admissible stationary point for an additional band"
            break
        pick = select(sols, levels, tables, quad)
        flat = flat or pick.flat
        levels = levels + (pick.a, pick.b)
        vf = ValueFunction(levels, tables, quad)
        rep = hjb_check(vf, tol=config.hjb_tol)
        history.append((levels, float(vf(tables.u0))))
    return GradientResult(vf.strategy, vf, rep, float(vf(tables.u0)), flat, warning, history,
                          {"solve_seconds": time.perf_counter() - t0})
