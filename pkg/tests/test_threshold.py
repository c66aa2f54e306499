import numpy as np
import pytest

from anoflow.fields import random_direction, suspension_field
from anoflow.splitting import SinkReport, verify_sink
from anoflow.threshold import (
    ContractionConstant,
    contraction_c,
    div_sup,
    growth_inf,
    growth_sup,
    lambda_max,
    minimal_strength,
    uniform_strength,
)
from anoflow.torus import Cone, cat_monodromy, chart_grid

MONO = cat_monodromy()
X0 = suspension_field(MONO)
BETA = np.log(MONO.lam_u)
F_U = np.array([MONO.v_s[0], MONO.v_s[1], 0.0])
F_S = np.array([MONO.v_u[0], MONO.v_u[1], 0.0])


def _sink_report():
    g = chart_grid(2)
    cone = Cone(g, np.tile(F_U, (len(g), 1)), 0.3)
    return verify_sink(MONO, X0, cone, horizon=8.0)


class TestLambdaMax:
    def test_suspension_zero(self):
        assert lambda_max(X0) == 0.0

    def test_linear_in_eps(self):
        V = random_direction(MONO, np.random.default_rng(1))
        l1 = lambda_max(X0.add_scaled(V, 1e-3))
        l2 = lambda_max(X0.add_scaled(V, 2e-3))
        assert l2 == pytest.approx(2 * l1, rel=1e-9)
        assert l1 <= 1e-3 + 1e-15

    def test_grid_monotone(self):
        V = random_direction(MONO, np.random.default_rng(2))
        X = X0.add_scaled(V, 1e-2)
        assert lambda_max(X, 24) >= lambda_max(X, 8) - 1e-15


class TestGrowthSup:
    def test_suspension_rate(self):
        g = growth_sup(MONO, X0, n_samples=512, extra_dirs=F_U[None, :])
        assert g == pytest.approx(BETA, abs=1e-2)

    def test_bounded(self):
        V = random_direction(MONO, np.random.default_rng(3))
        X = X0.add_scaled(V, 1e-2)
        g = growth_sup(MONO, X, n_samples=256)
        assert g <= BETA + 1e-2 + 0.1

    def test_time_reversal_negates_min_rate(self):
        gmin = growth_inf(MONO, X0, n_samples=256, extra_dirs=F_S[None, :])
        grev = growth_sup(MONO, X0.scaled(-1.0), n_samples=256, extra_dirs=F_S[None, :])
        assert grev == pytest.approx(-gmin, abs=1e-9)


class TestContraction:
    def test_formula_examples(self):
        assert contraction_c(1.0, 1.0, 1.0).c == pytest.approx(0.5, abs=1e-12)
        assert contraction_c(2.0, 1.0, 1.0).c == pytest.approx(0.5, abs=1e-12)

    def test_monotone_in_c_prime(self):
        c_hi = contraction_c(1.0, 1.0, 1.0).c
        c_lo = contraction_c(1.0, 0.5, 1.0).c
        assert c_lo < c_hi

    def test_degenerate_uses_integral(self):
        sink = _sink_report()
        cc = contraction_c(0.0, sink.C_prime, sink.beta_prime, mono=MONO, X=X0)
        assert cc.route == "integral"
        # the growth staircase bounds the orbit integral between T1 and
        # T1 * lam_u, so c lies between their reciprocals
        T1 = cc.T1
        assert 1.0 / (T1 * MONO.lam_u) - 1e-6 <= cc.c <= 1.0 / T1 + 1e-6

    def test_requires_flow_for_degenerate(self):
        with pytest.raises(ValueError):
            contraction_c(0.0, 1.0, 1.0)

    def test_formula_route_rejects_degenerate(self):
        with pytest.raises(ValueError):
            contraction_c(0.0, 1.0, 1.0, route="formula")


class TestMinimalStrength:
    def test_formula_evaluation(self):
        # all constants 1, div = 0, growth = 1, Re s = 0 -> r = 2
        rep = ThresholdStub = None
        from anoflow.threshold import ThresholdReport

        rep = ThresholdReport(Lam=1.0, div_sup=0.0, growth_sup=1.0, C_prime=1.0,
                              beta_prime=1.0, c=0.5, T1=np.log(2.0), c_route="formula",
                              prefactor=2.0, k_shift=0)
        assert rep.r_at(0.0) == pytest.approx(2.0, abs=1e-12)

    def test_affine_slope(self):
        sink = _sink_report()
        rep = minimal_strength(MONO, X0, sink, sink_dirs=F_U[None, :])
        r0 = rep.r_at(0.0)
        r1 = rep.r_at(-1.0)
        assert r1 - r0 == pytest.approx(4.0 * rep.prefactor, rel=1e-12)
        assert rep.slope == -4.0 * rep.prefactor
        # strictly decreasing in Re s
        s = np.linspace(-1, 1, 11)
        r = rep.r_at(s)
        assert np.all(np.diff(r) < 0)

    def test_k_shift_adds_exactly(self):
        sink = _sink_report()
        rep0 = minimal_strength(MONO, X0, sink)
        rep2 = minimal_strength(MONO, X0, sink, k_shift=2)
        assert rep2.r_at(0.3) - rep0.r_at(0.3) == pytest.approx(2.0, abs=1e-12)

    def test_doubling_time_verified(self):
        sink = _sink_report()
        rep = minimal_strength(MONO, X0, sink, sink_dirs=F_U[None, :])
        assert rep.doubling_min > 2.0


class TestUniformStrength:
    @pytest.fixture(scope="class")
    def family(self):
        rng = np.random.default_rng(11)
        V = random_direction(MONO, rng)
        g = chart_grid(2)
        cone = Cone(g, np.tile(F_U, (len(g), 1)), 0.3)
        fields = []
        for eps in np.linspace(-0.02, 0.02, 5):
            X = X0.add_scaled(V, float(eps))
            fields.append((float(eps), X, verify_sink(MONO, X, cone, horizon=8.0)))
        s_grid = np.linspace(-1.0, 0.0, 9)
        return uniform_strength(MONO, fields, s_grid, sink_dirs=F_U[None, :])

    def test_sup_dominates_members(self, family):
        assert np.all(family.r_uniform >= family.r_table - 1e-12)

    def test_nonincreasing(self, family):
        assert np.all(np.diff(family.r_uniform) <= 1e-12)

    def test_constant_family_equals_base(self):
        sink = _sink_report()
        s_grid = np.linspace(-1.0, 1.0, 5)
        fam = uniform_strength(MONO, [(0.0, X0, sink)], s_grid)
        rep = minimal_strength(MONO, X0, sink)
        assert np.allclose(fam.r_uniform, rep.r_at(s_grid), atol=1e-9)

    def test_uniform_close_to_base(self, family):
        base = family.r_table[2]  # eps = 0 row
        rel = np.max(np.abs(family.r_uniform - base) / np.abs(base))
        assert rel < 0.10
