import numpy as np
import pytest

from divbands.errors import DomainError
from divbands.gradient import solve_gradient
from divbands.model import BandStrategy, normalize_strategy
from divbands.value import (QuadratureConfig, ValueFunction, barrier_value, generator_residual, hjb_check,
                            panel_nodes, value_band)


@pytest.fixture(scope="module")
def e21_opt(e21):
    return solve_gradient(e21)


class TestBarrier:
    def test_below_and_above(self, e21):
        b = 2.5
        assert barrier_value(e21, 1.0, b) == pytest.approx(float(e21.W(1.0) / e21.W(b, 1)), rel=1e-12)
        above = barrier_value(e21, [b, b + 3.0], b)
        assert above[1] - above[0] == pytest.approx(3.0, abs=1e-12)

    def test_rejects_negative(self, e21):
        with pytest.raises(DomainError):
            barrier_value(e21, -1.0, 1.0)

    def test_single_band_matches(self, e21):
        u = np.linspace(0, 20, 41)
        np.testing.assert_allclose(value_band((3.0,), e21, u), barrier_value(e21, u, 3.0), rtol=1e-12)

    def test_zero_barrier_pays_premium(self, e21):
        # at b = 0 every premium unit is paid out until the first claim
        p = e21.params
        assert barrier_value(e21, 0.0, 0.0) == pytest.approx(p.p / (p.lam + p.delta), rel=1e-8)


class TestShape:
    def test_continuous_at_levels(self, e21_opt):
        vf = e21_opt.value
        for l in vf.levels[1:]:
            assert float(vf(l - 1e-9)) == pytest.approx(float(vf(l)), abs=1e-6)

    def test_lump_region_slope_one(self, e21_opt):
        vf = e21_opt.value
        a1, b1 = vf.levels[1], vf.levels[2]
        b0 = vf.levels[0]
        x = np.linspace(b0 + 0.1, a1 - 0.1, 5)
        np.testing.assert_allclose(np.diff(vf(x)), np.diff(x), rtol=1e-10)
        x = np.linspace(b1 + 1, b1 + 10, 5)
        np.testing.assert_allclose(np.diff(vf(x)), np.diff(x), rtol=1e-10)
        np.testing.assert_allclose(vf.derivative(x), 1.0)

    def test_increasing(self, e21_opt):
        u = np.linspace(0, 40, 801)
        assert np.all(np.diff(e21_opt.value(u)) > 0)

    def test_derivative_matches_difference(self, e21):
        vf = ValueFunction((0.5, 2.0, 6.0), e21)
        for u in (0.3, 2.7, 5.1):
            h = 1e-5
            fd = (float(vf(u + h)) - float(vf(u - h))) / (2 * h)
            assert float(vf.derivative(u)) == pytest.approx(fd, rel=1e-5)

    def test_rejects_negative_surplus(self, e21):
        with pytest.raises(DomainError):
            ValueFunction((1.0,), e21)(-0.1)


class TestNormalization:
    @pytest.mark.parametrize("levels,reduced", [
        ((0.0, 1.8, 10.2, 10.2, 10.2), (0.0, 1.8, 10.2)),
        ((2.0, 2.0, 2.0), (2.0,)),
    ])
    def test_merged_bands_keep_value(self, e21, levels, reduced):
        assert normalize_strategy(BandStrategy(levels)).levels == reduced
        u = np.array([0.5, 1.9, 5.0, 10.2, 15.0])
        np.testing.assert_allclose(value_band(levels, e21, u), value_band(reduced, e21, u), atol=1e-8)


class TestGenerator:
    def test_zero_below_barrier(self, e21):
        vf = ValueFunction((10.0,), e21)
        np.testing.assert_allclose(generator_residual(vf, [0.5, 3.0, 9.0]), 0.0, atol=1e-8)

    def test_zero_inside_upper_band(self, e21_opt):
        vf = e21_opt.value
        a1, b1 = vf.levels[1:3]
        x = np.linspace(a1 + 0.2, b1 - 0.2, 4)
        np.testing.assert_allclose(generator_residual(vf, x), 0.0, atol=1e-6)

    def test_agrees_with_grid_check(self, e21):
        vf = ValueFunction((0.0, 2.5, 9.0), e21)
        rep = hjb_check(vf)
        idx = [1500, 4000, 7000]
        ref = generator_residual(vf, rep.x[idx])
        np.testing.assert_allclose(rep.residual[idx], ref, atol=1e-6)

    def test_rejects_zero(self, e21):
        with pytest.raises(DomainError):
            generator_residual(ValueFunction((1.0,), e21), 0.0)


class TestHjb:
    def test_optimum_passes(self, e21_opt):
        rep = e21_opt.hjb
        assert rep.is_optimal
        assert rep.positive_region() == ()
        assert rep.min_derivative >= 1 - 1e-4

    def test_barrier_fails_with_region(self, e21):
        rep = hjb_check(ValueFunction((0.0,), e21))
        assert not rep.is_optimal
        lo, hi = rep.positive_region()
        assert 0 < lo < hi

    def test_perturbed_optimum_fails(self, e21_opt, e21):
        lv = list(e21_opt.strategy.levels)
        lv[2] += 1.0
        assert not hjb_check(ValueFunction(lv, e21)).is_optimal

    def test_two_bands_beat_barrier(self, e21_opt, e21):
        u0 = e21.u0
        assert e21_opt.value_at_u0 > float(value_band((0.0,), e21, u0))

    def test_report_dict(self, e21_opt):
        d = e21_opt.hjb.to_dict()
        assert set(d) == {"max_residual", "min_derivative", "is_optimal"}
        assert d["is_optimal"] is True


class TestPanels:
    def test_integrates_polynomials(self):
        z, w = panel_nodes(7.0, (0.0, 2.0, 5.0), 1.0, QuadratureConfig())
        assert w.sum() == pytest.approx(7.0, rel=1e-13)
        assert np.dot(w, z ** 3) == pytest.approx(7.0 ** 4 / 4, rel=1e-12)
        assert np.all((z > 0) & (z < 7.0))
