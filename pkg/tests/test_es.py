import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divbands.errors import InvariantError
from divbands.es import (EsConfig, EsIndividual, es_optimize, escalate_bands, evolve, learning_rates, mutate,
                         recombine, repair, select_plus, toy_fitness)


def ind(levels, sigma=None, fitness=-math.inf):
    levels = np.asarray(levels, float)
    return EsIndividual(levels, np.ones_like(levels) if sigma is None else np.asarray(sigma, float), fitness)


class TestOperators:
    def test_recombine_means(self):
        lv, sg = recombine([ind([0, 2], [1, 3]), ind([2, 6], [3, 5])])
        np.testing.assert_array_equal(lv, [1, 4])
        np.testing.assert_array_equal(sg, [2, 4])

    def test_recombine_empty(self):
        with pytest.raises(InvariantError):
            recombine([])

    def test_repair_carries_sigma(self):
        lv, sg = repair(np.array([3.0, 1.0, 2.0]), np.array([0.3, 0.1, 0.2]))
        np.testing.assert_array_equal(lv, [1, 2, 3])
        np.testing.assert_array_equal(sg, [0.1, 0.2, 0.3])

    def test_learning_rates(self):
        tau, tau_shared = learning_rates(8)
        assert tau == pytest.approx(0.25)
        assert tau_shared == pytest.approx(1 / math.sqrt(8))

    def test_mutate_without_noise(self):
        rng = np.random.default_rng(0)
        z = np.zeros(3)
        child = mutate(np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.5, 0.5]), rng, 0.0, draws=(z, z))
        np.testing.assert_array_equal(child.levels, [1, 2, 3])
        np.testing.assert_array_equal(child.sigma, [0.5, 0.5, 0.5])

    def test_mutate_clamps(self):
        rng = np.random.default_rng(0)
        child = mutate(np.array([1.0, 2.0]), np.array([1.0, 1.0]), rng, 0.0, lower=0.5, upper=2.5,
                       draws=(np.zeros(2), np.array([-10.0, 10.0])))
        np.testing.assert_array_equal(child.levels, [0.5, 2.5])

    def test_mutate_rejects_zero_sigma(self):
        with pytest.raises(InvariantError):
            mutate(np.ones(2), np.array([1.0, 0.0]), np.random.default_rng(0), 0.0)

    def test_plus_selection(self):
        parents = [ind([0], fitness=5.0), ind([1], fitness=1.0)]
        kids = [ind([2], fitness=5.0), ind([3], fitness=3.0)]
        sel = select_plus(parents, kids, 2)
        # equal fitness goes to the offspring
        assert sel[0] is kids[0] and sel[1] is parents[0]
        assert select_plus(parents, [ind([4], fitness=0.0)], 2) == parents

    @pytest.mark.parametrize("kw", [{"mu": 0}, {"lam": 0}, {"var_bound": 0.0}, {"initial_sigma": -1.0}])
    def test_config_validation(self, kw):
        with pytest.raises(InvariantError):
            EsConfig(**kw)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=9), st.integers(0, 2 ** 32 - 1))
def test_mutation_keeps_sorted_bounded(levels, seed):
    rng = np.random.default_rng(seed)
    mean = np.sort(np.array(levels))
    child = mutate(mean, np.full(len(mean), 5.0), rng, rng.standard_normal(), lower=1.0, upper=90.0)
    assert np.all(np.diff(child.levels) >= 0)
    assert np.all((child.levels >= 1.0) & (child.levels <= 90.0))
    assert np.all(child.sigma > 0)


class TestToy:
    @pytest.mark.parametrize("seed", range(3))
    def test_reaches_peak(self, seed):
        cfg = EsConfig(max_generations=500, var_bound=1e-6, rng_seed=seed)
        res = evolve(toy_fitness, lambda r: r.uniform(0, 20, 2), cfg, upper=20.0)
        assert res.best.fitness >= math.sqrt(10) - 0.01
        assert all(b >= a for a, b in zip(res.trace, res.trace[1:]))

    def test_reproducible(self):
        cfg = EsConfig(max_generations=30, rng_seed=7)
        r1 = evolve(toy_fitness, lambda r: r.uniform(0, 20, 2), cfg)
        r2 = evolve(toy_fitness, lambda r: r.uniform(0, 20, 2), cfg)
        assert r1.trace == r2.trace
        np.testing.assert_array_equal(r1.best.levels, r2.best.levels)


class TestBands:
    def test_single_band_is_barrier(self, e21):
        res = es_optimize(e21, 1)
        assert res.strategy.levels == (0.0,)
        assert res.generations == 0

    def test_short_run_improves_and_pins_b0(self, e21):
        cfg = EsConfig(mu=6, lam=12, max_generations=40, rng_seed=1)
        res = es_optimize(e21, 2, cfg)
        assert res.strategy.levels[0] == 0.0
        assert res.fitness >= res.trace[0]
        assert all(b >= a for a, b in zip(res.trace, res.trace[1:]))
        assert res.strategy.levels[-1] <= e21.u0

    def test_seeded_runs_agree(self, e21):
        cfg = EsConfig(mu=4, lam=8, max_generations=10, rng_seed=5)
        assert es_optimize(e21, 2, cfg).strategy == es_optimize(e21, 2, cfg).strategy

    def test_escalation_stops_at_cap(self, e21):
        cfg = EsConfig(mu=4, lam=8, max_generations=5, rng_seed=0, max_bands=2, collapse_tol=1e-9)
        res = escalate_bands(e21, cfg)
        assert not res.collapse_detected
        assert res.warning == "max_bands reached without collapse"
        assert [h.strategy.m for h in res.history] == [1, 2]
