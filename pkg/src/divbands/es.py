"""Self-adaptive (mu/mu + lambda) evolution strategy for band levels.

Each individual carries its levels and one mutation step size per level.
Offspring are sampled around the arithmetic mean of the whole parent
population; step sizes mutate log-normally, with one shared normal draw per
generation. Plus selection keeps the best ``mu`` of parents and offspring,
so the best fitness never decreases.

The lowest level is pinned to the optimal single barrier, and fitness is the
value at the search horizon ``u0``.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from divbands.deficit import Tables
from divbands.errors import InvariantError
from divbands.model import BandStrategy, collapsed_pairs, drop_collapsed
from divbands.scale import find_b0
from divbands.value import HJB_TOL, HjbReport, QuadratureConfig, ValueFunction, hjb_check


@dataclass(frozen=True)
class EsConfig:
    """Parameters of the evolution strategy.

    Attributes
    ----------
    mu, lam : int
        Parent and offspring counts.
    max_generations : int
        Hard cap on generations.
    var_bound : float
        Stop once every parent-mean step size is below this.
    rng_seed : int, optional
        Seed of the master generator.
    initial_sigma : float
        Starting step size of every level.
    collapse_tol : float
        Two adjacent levels closer than this count as collapsed.
    max_bands : int
        Upper limit on the band count during escalation.
    workers : int
        Threads used to evaluate offspring.
    """

    mu: int = 30
    lam: int = 60
    max_generations: int = 1000
    var_bound: float = 0.01
    rng_seed: Optional[int] = None
    initial_sigma: float = 1.0
    collapse_tol: float = 0.1
    max_bands: int = 5
    workers: int = 1

    def __post_init__(self):
        if self.mu < 1 or self.lam < 1:
            raise InvariantError("mu and lam must be at least 1")
        if not self.var_bound > 0:
            raise InvariantError("var_bound must be positive")
        if not self.initial_sigma > 0:
            raise InvariantError("initial_sigma must be positive")


@dataclass
class EsIndividual:
    levels: np.ndarray
    sigma: np.ndarray
    fitness: float = -math.inf


@dataclass
class EsResult:
    best: EsIndividual
    trace: list
    generations: int


@dataclass
class EsBandResult:
    """Outcome of an ES search for the best band strategy."""

    strategy: BandStrategy
    fitness: float
    generations: int
    trace: list
    small_level: bool = False
    collapse_detected: bool = False
    hjb: Optional[HjbReport] = None
    warning: Optional[str] = None
    history: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


# -- operators -----------------------------------------------------------------------

def recombine(population: Sequence[EsIndividual]) -> tuple:
    """Component-wise means of levels and step sizes over all parents."""
    if len(population) == 0:
        raise InvariantError("cannot recombine an empty population")
    levels = np.mean([ind.levels for ind in population], axis=0)
    sigma = np.mean([ind.sigma for ind in population], axis=0)
    return levels, sigma


def repair(levels: np.ndarray, sigma: np.ndarray) -> tuple:
    """Sort levels ascending and carry each step size along with its level."""
    order = np.argsort(levels, kind="stable")
    return levels[order], sigma[order]


def learning_rates(n: int) -> tuple:
    """Per-component and shared log-normal rates for ``n`` mutated coordinates."""
    return 1.0 / math.sqrt(2.0 * n), 1.0 / math.sqrt(2.0 * math.sqrt(2.0 * n))


def mutate(mean_levels: np.ndarray, mean_sigma: np.ndarray, rng: np.random.Generator,
           shared: float, lower: float = 0.0, upper: float = math.inf,
           draws: Optional[tuple] = None) -> EsIndividual:
    """Sample one offspring around the parent mean.

    ``shared`` is the generation's common normal draw. ``draws`` may supply
    the two per-component normal vectors instead of sampling them.
    """
    if np.any(mean_sigma <= 0):
        raise InvariantError("step sizes must be positive")
    n = len(mean_levels)
    tau, tau_shared = learning_rates(n)
    s_r, b_r = draws if draws is not None else (rng.standard_normal(n), rng.standard_normal(n))
    sigma = mean_sigma * np.exp(s_r * tau + shared * tau_shared)
    levels = np.clip(sigma * b_r + mean_levels, lower, upper)
    levels, sigma = repair(levels, sigma)
    return EsIndividual(levels, sigma)


def select_plus(parents: Sequence[EsIndividual], offspring: Sequence[EsIndividual], mu: int) -> list:
    """Best ``mu`` of parents and offspring, best first; ties favour offspring."""
    pool = list(offspring) + list(parents)
    order = sorted(range(len(pool)), key=lambda i: (-pool[i].fitness, i))
    return [pool[i] for i in order[:mu]]


def evolve(fitness: Callable[[np.ndarray], float], init: Callable[[np.random.Generator], np.ndarray],
           config: EsConfig, lower: float = 0.0, upper: float = math.inf,
           rng: Optional[np.random.Generator] = None) -> EsResult:
    """Generic plus-selection loop maximising ``fitness`` over real vectors."""
    rng = np.random.default_rng(config.rng_seed) if rng is None else rng

    def evaluate(inds):
        if config.workers > 1:
            with ThreadPoolExecutor(config.workers) as ex:
                vals = list(ex.map(lambda ind: fitness(ind.levels), inds))
        else:
            vals = [fitness(ind.levels) for ind in inds]
        for ind, v in zip(inds, vals):
            ind.fitness = float(v) if np.isfinite(v) else -math.inf

    parents = []
    for _ in range(config.mu):
        x = np.sort(np.clip(np.asarray(init(rng), dtype=float), lower, upper))
        parents.append(EsIndividual(x, np.full(len(x), config.initial_sigma)))
    evaluate(parents)
    parents = select_plus(parents, [], config.mu)
    trace = [parents[0].fitness]
    g = 0
    while g < config.max_generations:
        mean_levels, mean_sigma = recombine(parents)
        # an elite parent keeps the step size it was born with, so watch the mean
        if mean_sigma.max() < config.var_bound:
            break
        shared = rng.standard_normal()
        offspring = [mutate(mean_levels, mean_sigma, rng, shared, lower, upper)
                     for _ in range(config.lam)]
        evaluate(offspring)
        parents = select_plus(parents, offspring, config.mu)
        trace.append(parents[0].fitness)
        g += 1
    return EsResult(parents[0], trace, g)


def toy_fitness(x: np.ndarray) -> float:
    """A cone-shaped test function peaking at ``sqrt(10)`` in ``(10, 10)``."""
    return math.sqrt(max(10.0 - (x[0] - 10.0) ** 2 / 2 - (x[1] - 10.0) ** 2 / 2, 0.0))


# -- band strategies ----------------------------------------------------------------

def es_optimize(tables: Tables, m: int, config: EsConfig = EsConfig(),
                quad: QuadratureConfig = QuadratureConfig(),
                rng: Optional[np.random.Generator] = None) -> EsBandResult:
    """Best ``m``-band strategy by value at ``u0``, lowest level fixed at the best barrier."""
    t0 = time.perf_counter()
    if m < 1:
        raise InvariantError("m must be at least 1")
    b0 = find_b0(tables.scale)
    u0 = tables.u0

    def fitness(free):
        return float(ValueFunction((b0, *free), tables, quad)(u0))

    if m == 1:
        return EsBandResult(BandStrategy((b0,)), fitness(()), 0, [fitness(())],
                            small_level=_small(b0, u0),
                            timings={"solve_seconds": time.perf_counter() - t0})
    res = evolve(fitness, lambda r: r.uniform(b0, u0, 2 * m - 2), config, lower=b0, upper=u0, rng=rng)
    levels = (b0, *map(float, res.best.levels))
    return EsBandResult(BandStrategy(levels), res.best.fitness, res.generations, res.trace,
                        small_level=any(_small(x, u0) for x in levels[1:2]),
                        timings={"solve_seconds": time.perf_counter() - t0})


def _small(x: float, u0: float) -> bool:
    return 0.0 < x < 1e-2 * u0


def escalate_bands(tables: Tables, config: EsConfig = EsConfig(), quad: QuadratureConfig = QuadratureConfig(),
                   hjb_tol: float = HJB_TOL) -> EsBandResult:
    """Search 2, 3, ... bands until the best strategy collapses to fewer bands.

    The last non-collapsed strategy is verified with the optimality check.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.rng_seed)
    prev = es_optimize(tables, 1, config, quad)
    history = [prev]
    collapsed = False
    for m in range(2, config.max_bands + 1):
        cur = es_optimize(tables, m, config, quad, rng)
        history.append(cur)
        if collapsed_pairs(cur.strategy, config.collapse_tol):
            collapsed = True
            # keep the reduced strategy if the lower search missed it
            reduced = drop_collapsed(cur.strategy, config.collapse_tol)
            if reduced.m == prev.strategy.m and cur.fitness > prev.fitness + 1e-9 * abs(prev.fitness):
                val = float(ValueFunction(reduced, tables, quad)(tables.u0))
                if val > prev.fitness:
                    prev = EsBandResult(reduced, val, cur.generations, cur.trace, prev.small_level)
            break
        prev = cur
    best = prev
    rep = hjb_check(ValueFunction(best.strategy, tables, quad), tol=hjb_tol)
    warning = None
    if not collapsed:
        warning = "max_bands reached without collapse"
    elif not rep.is_optimal:
        region = rep.positive_region()
        warning = f"optimality check fails after collapse (positive region {region})"
    return EsBandResult(best.strategy, best.fitness, sum(h.generations for h in history), best.trace,
                        best.small_level, collapsed, rep, warning, history,
                        {"solve_seconds": time.perf_counter() - t0})
