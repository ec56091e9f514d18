import numpy as np
import pytest

from divbands.errors import DomainError, InversionError, MultiplicityError
from divbands.model import ClaimDistribution, ErlangComponent, ModelParams
from divbands.scale import (build_scale_table, find_b0, initial_values, lundberg_function, lundberg_roots,
                            positive_root, scale_analytic, scale_inverted, wprime_local_minima)
from divbands.value import barrier_value

from conftest import ERLANG21, MIX1, PARETO

PRINTED_MIX = ClaimDistribution((ErlangComponent(0.025, 2, 10.0), ErlangComponent(0.225, 3, 1.0),
                                 ErlangComponent(0.75, 4, 0.1)))


@pytest.fixture(scope="module")
def e21_roots(e21_params):
    return lundberg_roots(e21_params, ERLANG21)


class TestRoots:
    def test_cubic(self, e21_params, e21_roots):
        assert len(e21_roots.roots) == 3
        poly = np.polynomial.Polynomial([-0.1, 1.2, 32.7, 21.4])  # 21.4 s (1+s)^2 - 10.1 (1+s)^2 + 10
        ref = np.sort_complex(poly.roots())
        np.testing.assert_allclose(np.sort_complex(e21_roots.roots), ref, rtol=1e-10)
        pos = [r for r in e21_roots.roots if r.real > 0]
        assert len(pos) == 1 and pos[0].imag == 0

    def test_printed_mixture_has_ten_roots(self):
        params = ModelParams.for_claims(1.0, 0.1, 0.405, PRINTED_MIX)
        assert len(lundberg_roots(params, PRINTED_MIX).roots) == 10

    @pytest.mark.parametrize("dist,lam,eta", [(ERLANG21, 10.0, 0.07), (MIX1, 1.0, 0.405)])
    def test_residuals(self, dist, lam, eta):
        params = ModelParams.for_claims(lam, 0.1, eta, dist)
        r = lundberg_roots(params, dist)
        assert np.all(np.abs(lundberg_function(params, dist, r.roots)) < 1e-10)
        assert r.rho == pytest.approx(positive_root(params, dist), rel=1e-12)

    def test_pareto_rejected(self):
        with pytest.raises(DomainError):
            lundberg_roots(ModelParams.for_claims(1.0, 0.1, 0.1, PARETO), PARETO)

    def test_repeated_root_detected(self, monkeypatch):
        import divbands.scale as sc
        monkeypatch.setattr(sc.P, "polyroots", lambda c: np.array([-0.5, -0.5, 0.1]))
        with pytest.raises((MultiplicityError, ArithmeticError)):
            lundberg_roots(ModelParams.for_claims(10.0, 0.1, 0.07, ERLANG21), ERLANG21)


class TestAnalytic:
    def test_initial_values(self, e21_params, e21_roots):
        w0, w1, w2 = initial_values(e21_params, ERLANG21)
        assert scale_analytic(e21_roots, 0.0) == pytest.approx(1 / 21.4, abs=1e-8)
        assert scale_analytic(e21_roots, 0.0, 1) == pytest.approx(w1, rel=1e-10)
        assert scale_analytic(e21_roots, 0.0, 2) == pytest.approx(w2, rel=1e-10)

    def test_dominant_root(self, e21_params, e21_roots):
        u0 = e21_params.u0
        ratio = scale_analytic(e21_roots, u0, 1) / scale_analytic(e21_roots, u0)
        assert ratio == pytest.approx(e21_roots.rho, abs=1e-4)

    def test_negative_argument(self, e21_roots):
        with pytest.raises(DomainError):
            scale_analytic(e21_roots, -1.0)


class TestInverted:
    @pytest.mark.parametrize("order", [0, 1, 2])
    def test_matches_analytic(self, e21_params, e21_roots, order):
        x = np.array([0.5, 2.0, 10.0])
        np.testing.assert_allclose(scale_inverted(e21_params, ERLANG21, x, order),
                                   scale_analytic(e21_roots, x, order), rtol=1e-6)

    def test_random_points_mixture(self):
        params = ModelParams.for_claims(1.0, 0.1, 0.405, MIX1)
        x = np.random.default_rng(0).uniform(0, params.u0, 100)
        r = lundberg_roots(params, MIX1)
        np.testing.assert_allclose(scale_inverted(params, MIX1, x), scale_analytic(r, x), rtol=1e-6)

    def test_pareto_initial_value_and_barrier(self):
        params = ModelParams.for_claims(10.0, 0.1, 0.1, PARETO)
        assert params.p == pytest.approx(22.0)
        assert scale_inverted(params, PARETO, 0.0) == pytest.approx(1 / 22)
        assert scale_inverted(params, PARETO, 1e-6) == pytest.approx(1 / 22, rel=1e-5)

    def test_wrong_abscissa_rejected(self, e21_params, e21_roots):
        with pytest.raises(InversionError):
            scale_inverted(e21_params, ERLANG21, 1.0, rho=0.5 * e21_roots.rho)


class TestTable:
    def test_grid_and_nodes(self, e21):
        sc = e21.scale
        assert len(sc.grid) == 10001 and sc.grid[-1] == pytest.approx(e21.u0)
        assert sc.w[0] == pytest.approx(1 / e21.params.p, abs=1e-8)
        assert np.all(np.diff(sc.w) > 0) and np.all(sc.w1 > 0)

    def test_inverted_table_interpolates_nodes(self, pareto):
        sc = pareto.scale
        assert sc.source == "inverted"
        np.testing.assert_array_equal(sc.W(sc.grid[::97]), sc.w[::97])
        mid = 0.5 * (sc.grid[100:110] + sc.grid[101:111])
        ref = scale_inverted(pareto.params, pareto.dist, mid)
        np.testing.assert_allclose(sc.W(mid), ref, rtol=1e-8)

    @pytest.mark.parametrize("name", ["e21", "pareto"])
    def test_derivative_consistent(self, name, request):
        sc = request.getfixturevalue(name).scale
        fd = (sc.w[2:] - sc.w[:-2]) / (2 * sc.step)
        np.testing.assert_allclose(sc.w1[1:-1], fd, rtol=1e-4)

    def test_beyond_table(self, pareto):
        x = pareto.scale.upper * 1.1
        assert pareto.scale.W(x) == pytest.approx(float(scale_inverted(pareto.params, pareto.dist, x)))

    def test_small_n_grid(self, e21_params):
        with pytest.raises(DomainError):
            build_scale_table(e21_params, ERLANG21, n_grid=1)


class TestB0:
    def test_erlang21(self, e21):
        assert find_b0(e21.scale) == 0.0

    def test_mixture(self, mix1):
        assert find_b0(mix1.scale) == pytest.approx(0.2615, abs=0.005)
        mins = wprime_local_minima(mix1.scale)
        assert min(abs(np.array(mins) - 3.5246)) < 1e-3

    def test_pareto(self, pareto):
        b0 = find_b0(pareto.scale)
        assert b0 == pytest.approx(2.71036, abs=0.01)
        # it is the maximiser of W(u)/W'(b) over the grid
        bs = pareto.scale.grid[:3000]
        assert bs[np.argmax(1.0 / pareto.scale.w1[:3000])] == pytest.approx(b0, abs=2 * pareto.scale.step)

    def test_plateau_picks_right_end(self, e21):
        from dataclasses import replace
        w1 = e21.scale.w1.copy()
        w1[:] = 1.0
        flat = replace(e21.scale, roots=None, source="inverted", w1=w1)
        assert find_b0(flat) == pytest.approx(e21.scale.upper)

    def test_grid_refinement_stable(self, e21_params, e21):
        from divbands.deficit import build_tables
        from divbands.value import ValueFunction
        fine = build_tables(e21_params, ERLANG21, n_grid=20000)
        s = (0.0, 1.803018552152441, 10.216107350575095)
        v1 = float(ValueFunction(s, e21)(e21.u0))
        v2 = float(ValueFunction(s, fine)(e21.u0))
        assert abs(v1 - v2) < 1e-4 * v1
