import numpy as np
import pytest
from scipy import integrate

from divbands.deficit import fd, fd0, fd0_inverted, fd_direct, w_hat
from divbands.errors import DomainError
from divbands.mc import mc_estimate
from divbands.model import ModelParams

from conftest import ERLANG21, ERLANG_PARETO, MIX1, PARETO


class TestShiftedTransform:
    @pytest.mark.parametrize("dist", [ERLANG21, MIX1, PARETO, ERLANG_PARETO])
    def test_limits(self, dist):
        s = np.array([0.7, 2.0 + 1j])
        np.testing.assert_allclose(w_hat(dist, 0.0, s), dist.laplace(s), rtol=1e-10)
        y = np.array([0.0, 0.5, 3.0])
        np.testing.assert_allclose(np.real(w_hat(dist, y, 0.0)), dist.survival(y), rtol=1e-9)

    @pytest.mark.parametrize("dist", [ERLANG21, PARETO])
    def test_against_quadrature(self, dist):
        ref = integrate.quad(lambda t: np.exp(-t) * float(dist.density(1.0 + t)), 0, np.inf,
                             epsabs=1e-13, epsrel=1e-12)[0]
        assert complex(w_hat(dist, 1.0, 1.0)).real == pytest.approx(ref, abs=1e-8)


class TestNoDividendDensity:
    def test_defective_mass(self, e21):
        mass = integrate.quad(lambda y: float(fd0(e21, y, 1.0)), 0, np.inf, limit=200)[0]
        assert 0 < mass <= 1

    def test_analytic_matches_inversion(self, mix1):
        for order in [(0, 0), (0, 1), (1, 0)]:
            a = float(fd0(mix1, 0.5, 1.0, order))
            b = float(fd0_inverted(mix1.params, mix1.dist, 0.5, 1.0, order))
            assert a == pytest.approx(b, abs=1e-6)

    @pytest.mark.parametrize("name", ["e21", "pareto"])
    def test_nonnegative_and_bounded(self, name, request):
        t = request.getfixturevalue(name)
        y = np.linspace(0, 0.5 * t.u0, 201)
        for u in (0.1, 1.0, 5.0, 15.0):
            vals = fd0(t, y, u)
            assert vals.min() >= -1e-8
            assert np.trapezoid(vals, y) <= 1 + 1e-6

    @pytest.mark.parametrize("name", ["e21", "pareto"])
    def test_u_derivative(self, name, request):
        t = request.getfixturevalue(name)
        y, u, h = np.array([0.3, 1.0, 4.0]), 2.0, 1e-3
        num = (fd0(t, y, u + h) - fd0(t, y, u - h)) / (2 * h)
        np.testing.assert_allclose(fd0(t, y, u, (0, 1)), num, rtol=1e-3)

    def test_negative_arguments(self, e21):
        with pytest.raises(DomainError):
            fd0(e21, -1.0, 1.0)

    def test_monte_carlo_histogram(self, e21):
        # a barrier far beyond reach pays nothing, so ruin statistics are the no-dividend ones
        res = mc_estimate(e21.params, e21.dist, (1e6,), 1.0, 1_000_000, seed=11, keep_deficits=True)
        disc, deficit = res.deficit_samples[:, 0], res.deficit_samples[:, 1]
        edges = np.linspace(0, 6, 21)
        for lo, hi in zip(edges[:-1], edges[1:]):
            w = disc * ((deficit >= lo) & (deficit < hi) & (disc > 0))
            ref = integrate.quad(lambda y: float(fd0(e21, y, 1.0)), lo, hi)[0]
            se = w.std(ddof=1) / np.sqrt(len(w))
            assert abs(w.mean() - ref) <= 3 * se + 1e-12


class TestBarrierDensity:
    def test_defective_mass(self, e21):
        mass = integrate.quad(lambda y: float(fd(e21, y, 1.0, 5.0)), 0, np.inf, limit=200)[0]
        assert 0 < mass <= 1

    def test_dividends_penalty_identity(self, e21):
        assert float(fd(e21, 0.5, 1.0, 3.0)) == pytest.approx(fd_direct(e21, 0.5, 1.0, 3.0), abs=1e-5)

    def test_u_above_barrier(self, e21):
        with pytest.raises(DomainError):
            fd(e21, 0.5, 4.0, 3.0)

    @pytest.mark.parametrize("name", ["e21", "mix1", "pareto"])
    def test_partials_match_differences(self, name, request):
        t = request.getfixturevalue(name)
        y, u, b, h = 0.8, 1.5, 4.0, 1e-4
        base = lambda yy, uu, bb: float(fd(t, yy, uu, bb))
        num = [(base(y + h, u, b) - base(y - h, u, b)) / (2 * h),
               (base(y, u + h, b) - base(y, u - h, b)) / (2 * h),
               (base(y, u, b + h) - base(y, u, b - h)) / (2 * h)]
        for d, ref in zip((1, 2, 3), num):
            assert float(fd(t, y, u, b, d)) == pytest.approx(ref, rel=1e-3, abs=1e-7)

    def test_nonnegative(self, e21, pareto):
        y = np.linspace(0, 20, 41)
        for t in (e21, pareto):
            for u, b in [(0.5, 1.0), (1.0, 3.0), (2.0, 10.0)]:
                assert fd(t, y, u, b).min() >= -1e-6

    def test_monte_carlo_histogram(self, e21):
        res = mc_estimate(e21.params, e21.dist, (3.0,), 1.0, 1_000_000, seed=5, keep_deficits=True)
        disc, deficit = res.deficit_samples[:, 0], res.deficit_samples[:, 1]
        edges = np.linspace(0, 6, 13)
        for lo, hi in zip(edges[:-1], edges[1:]):
            w = disc * ((deficit >= lo) & (deficit < hi) & (disc > 0))
            ref = integrate.quad(lambda y: float(fd(e21, y, 1.0, 3.0)), lo, hi)[0]
            se = w.std(ddof=1) / np.sqrt(len(w))
            assert abs(w.mean() - ref) <= 3 * se + 1e-12
