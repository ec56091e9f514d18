"""Monte Carlo estimates of discounted dividends under a band strategy.

Paths are simulated claim by claim. Between claims the surplus moves
deterministically (drift ``p`` in a no-pay region, pinned at a pay level, or
cut down by a lump sum), so dividends between claims are integrated in
closed form and there is no time-stepping error.

Once the discount factor falls below ``KILL_SWITCH`` the remaining
discounting is replaced by an independent exponential killing time with rate
``delta``: dividends after that point are counted undiscounted (times the
frozen discount factor) until the killing time. The expectation is the same,
paths that rarely ruin end far sooner, and the added variance is of order
``KILL_SWITCH ** 2``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from divbands.errors import DomainError
from divbands.model import BandStrategy, ClaimDistribution, ErlangComponent, ModelParams, as_strategy

TRUNCATION = 1e-12
KILL_SWITCH = 1e-3


@dataclass
class SimResult:
    """Summary of a batch of simulated paths.

    Attributes
    ----------
    mean_discounted_dividends : float
    std_error : float
        Sample standard deviation over ``sqrt(n_paths)``.
    n_paths : int
    ruin_fraction : float
        Share of paths ruined before truncation.
    deficit_samples : ndarray, optional
        ``(n_paths, 2)`` array of discount factor at ruin and deficit
        (zeros for truncated paths).
    """

    mean_discounted_dividends: float
    std_error: float
    n_paths: int
    ruin_fraction: float
    deficit_samples: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            "mean_discounted_dividends": self.mean_discounted_dividends,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "ruin_fraction": self.ruin_fraction,
        }


def _claim_arrays(dist: ClaimDistribution) -> tuple:
    """Flatten the mixture into arrays usable inside compiled code."""
    kind, cw, shape, par, x0 = [], [], [], [], []
    for c in dist.components:
        if isinstance(c, ErlangComponent):
            kind.append(0); shape.append(c.shape); par.append(c.rate); x0.append(0.0)
        else:
            kind.append(1); shape.append(0); par.append(c.alpha); x0.append(c.x0)
        cw.append(c.weight)
    cum = np.cumsum(cw)
    cum /= cum[-1]
    return (np.array(kind, np.int64), cum, np.array(shape, np.int64),
            np.array(par, float), np.array(x0, float))


@numba.njit(cache=True)
def _draw_erlang(gen, kind, cum, shape, par, x0):
    # component choice is inlined: passing the generator to a helper is several times slower
    j = 0
    if len(cum) > 1:
        v = gen.random()
        while j < len(cum) - 1 and v > cum[j]:
            j += 1
    e = 0.0
    for _ in range(shape[j]):
        e += gen.standard_exponential()
    return e / par[j]


@numba.njit(cache=True)
def _draw_any(gen, kind, cum, shape, par, x0):
    j = 0
    if len(cum) > 1:
        v = gen.random()
        while j < len(cum) - 1 and v > cum[j]:
            j += 1
    if kind[j] == 0:
        e = 0.0
        for _ in range(shape[j]):
            e += gen.standard_exponential()
        return e / par[j]
    # inverse cdf x0 ((1 - U)^(-1/alpha) - 1) with -log(1 - U) exponential
    return x0[j] * math.expm1(gen.standard_exponential() / par[j])


@numba.njit(cache=True)
def _band_of(a, x):
    k = 0
    while k + 1 < len(a) and a[k + 1] <= x:
        k += 1
    return k


@numba.njit(cache=True)
def _path(draw, gen, p, lam, delta, a, b, u, claims, trunc, switch):
    """One path: (discounted dividends, deficit, discount at ruin, ruined)."""
    kind, cum, shape, par, x0 = claims
    bound = p / delta + b[-1]
    x, disc, total = u, 1.0, 0.0
    left = -1.0
    while True:
        k = _band_of(a, x)
        if x > b[k]:
            total += disc * (x - b[k])
            x = b[k]
        dt = gen.standard_exponential() / lam
        reach = (b[k] - x) / p
        if left < 0.0:
            step = math.exp(-delta * dt)
            if dt > reach:
                # premium paid on [reach, dt] at rate p, discounted in closed form
                total += disc * p / delta * (math.exp(-delta * reach) - step)
            disc *= step
            if disc < switch:
                # the rest of the discounting becomes an independent exponential killing time
                left = gen.standard_exponential() / delta
        else:
            end = min(dt, left)
            if end > reach:
                total += disc * p * (end - reach)
            left -= dt
            if left <= 0.0:
                return total, 0.0, 0.0, False
        x = min(x + p * dt, b[k])
        x -= draw(gen, kind, cum, shape, par, x0)
        if x < 0:
            return total, -x, disc, True
        # past this point neither dividends nor a ruin discount can matter
        if disc * bound < trunc * total or disc < trunc:
            return total, 0.0, 0.0, False


@numba.njit(cache=True, nogil=True)
def _batch(draw, gen, n, p, lam, delta, a, b, u, claims, trunc, switch):
    out = np.empty((n, 3))
    ruined = 0
    for i in range(n):
        v, d, disc, r = _path(draw, gen, p, lam, delta, a, b, u, claims, trunc, switch)
        out[i, 0] = v
        out[i, 1] = disc
        out[i, 2] = d
        ruined += r
    return out, ruined


def _run(params: ModelParams, dist: ClaimDistribution, a, b, u: float, n: int, gen) -> tuple:
    draw = _draw_erlang if dist.is_erlang_mixture else _draw_any
    return _batch(draw, gen, n, params.p, params.lam, params.delta, a, b, float(u),
                  _claim_arrays(dist), TRUNCATION, KILL_SWITCH)


def _prepare(params: ModelParams, strategy) -> tuple:
    s = as_strategy(strategy)
    return np.array(s.a, float), np.array(s.b, float)


def simulate_path(params: ModelParams, dist: ClaimDistribution, strategy, u: float,
                  seed: int) -> tuple:
    """Discounted dividends, deficit at ruin and discount factor at ruin of one path."""
    if u < 0:
        raise DomainError("initial surplus must be nonnegative")
    a, b = _prepare(params, strategy)
    out, _ = _run(params, dist, a, b, u, 1, np.random.default_rng(seed))
    return float(out[0, 0]), float(out[0, 2]), float(out[0, 1])


def mc_estimate(params: ModelParams, dist: ClaimDistribution, strategy, u: float, n_paths: int,
                seed: int = 0, workers: int = 1, keep_deficits: bool = False) -> SimResult:
    """Average discounted dividends over ``n_paths`` independent paths.

    The paths are split into ``max(workers, 1)`` chunks with independent seeds
    derived from ``seed``, so results depend on ``workers`` but are
    reproducible for a fixed pair.
    """
    if n_paths < 1:
        raise DomainError("n_paths must be at least 1")
    if u < 0:
        raise DomainError("initial surplus must be nonnegative")
    a, b = _prepare(params, strategy)
    chunks = np.array_split(np.arange(n_paths), max(workers, 1))
    gens = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(chunks))]

    def run(args):
        gen, idx = args
        return _run(params, dist, a, b, u, len(idx), gen)

    jobs = [(g, idx) for g, idx in zip(gens, chunks) if len(idx)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    data = np.concatenate([o for o, _ in parts])
    ruined = sum(r for _, r in parts)
    v = data[:, 0]
    se = float(v.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else math.inf
    return SimResult(float(v.mean()), se, n_paths, ruined / n_paths,
                     data[:, 1:] if keep_deficits else None)
