import numpy as np
import pytest

from anoflow.errors import NotUniformlyHyperbolicError, VerificationError
from anoflow.fields import random_direction, suspension_field
from anoflow.flow import flow_sphere
from anoflow.splitting import (
    HyperbolicConstants,
    compute_splitting,
    decompose_covector,
    dual_splitting,
    estimate_constants,
    trapped_cone,
    verify_sink,
)
from anoflow.torus import Cone, cat_monodromy, chart_grid, line_angle

MONO = cat_monodromy()
X0 = suspension_field(MONO)
BETA = np.log(MONO.lam_u)

F_U = np.array([MONO.v_s[0], MONO.v_s[1], 0.0])  # expanding dual line
F_S = np.array([MONO.v_u[0], MONO.v_u[1], 0.0])  # contracting dual line


@pytest.fixture(scope="module")
def split():
    return compute_splitting(MONO, X0, grid=6)


@pytest.fixture(scope="module")
def dual(split):
    return dual_splitting(split)


class TestComputeSplitting:
    def test_eu_matches_analytic(self, split):
        target = np.array([MONO.v_u[0], MONO.v_u[1], 0.0])
        ang = line_angle(split.eu, target)
        assert np.max(ang) < 1e-8

    def test_es_matches_analytic(self, split):
        target = np.array([MONO.v_s[0], MONO.v_s[1], 0.0])
        ang = line_angle(split.es, target)
        assert np.max(ang) < 1e-8

    def test_e0_is_roof(self, split):
        assert np.allclose(split.e0, np.tile([0.0, 0.0, 1.0], (len(split.grid), 1)), atol=1e-14)

    def test_invariance_residual(self, split):
        assert split.invariance_residual < 1e-8

    def test_perturbed_field_still_converges(self):
        rng = np.random.default_rng(20)
        V = random_direction(MONO, rng)
        X = X0.add_scaled(V, 5e-3)
        S = compute_splitting(MONO, X, grid=3, T_iter=16.0)
        # frames tilt by O(eps) but stay near the unperturbed ones
        target = np.array([MONO.v_u[0], MONO.v_u[1], 0.0])
        ang = np.arccos(np.clip(np.abs(S.eu @ target), -1, 1))
        assert np.max(ang) < 0.1


class TestDualSplitting:
    def test_annihilation(self, split, dual):
        X_vals = X0(split.grid)
        for f, killed in ((dual.f_u, (X_vals, split.eu)), (dual.f_s, (X_vals, split.es))):
            for v in killed:
                assert np.max(np.abs(np.sum(f * v, axis=-1))) < 1e-10
        for v in (split.eu, split.es):
            assert np.max(np.abs(np.sum(dual.f_0 * v, axis=-1))) < 1e-10

    def test_roof_dual_is_dt(self, dual):
        # limited by the power-iteration horizon (e^{-beta T} ~ 2e-9)
        assert np.max(np.abs(dual.f_0 - np.array([0.0, 0.0, 1.0]))) < 1e-8

    def test_pairing_matrix_identity(self, split, dual):
        # dual-basis companions: scale unit frames by the pairing inverse
        M = np.stack([dual.f_u, dual.f_s, dual.f_0], axis=-1)
        P = np.stack([split.es, split.eu, split.e0], axis=-1)
        # <f_u, es>, <f_s, eu>, <f_0, e0> are the only nonzero pairings
        G = np.einsum("nij,nik->njk", M, P)
        scale = np.einsum("njj->nj", G)
        Gn = G / scale[:, :, None]
        assert np.max(np.abs(Gn - np.eye(3))) < 1e-10

    def test_expanding_dual_grows(self, dual):
        idx = [0, len(dual.grid) // 2]
        coords = dual.grid[idx]
        _, d_out, logs = flow_sphere(MONO, X0, coords, dual.f_u[idx], 1.0)
        assert np.allclose(logs, BETA, atol=1e-9)
        # direction preserved up to sign
        assert np.max(1.0 - np.abs(np.sum(d_out * dual.f_u[idx], axis=-1))) < 1e-9

    def test_flow_invariance_of_dual_frames(self, dual):
        idx = np.arange(0, len(dual.grid), 7)
        coords = dual.grid[idx]
        for f in (dual.f_u, dual.f_s, dual.f_0):
            y, d, _ = flow_sphere(MONO, X0, coords, f[idx], 1.0)
            f_at = f[dual.nearest(y)]
            ang = np.arccos(np.clip(np.abs(np.sum(d * f_at, axis=-1)), -1, 1))
            assert np.max(ang) < 1e-6

    def test_theta_min_cat(self, dual):
        assert dual.theta_min == pytest.approx(np.pi / 2, abs=1e-7)


class TestDecompose:
    def test_pure_component(self, dual):
        coords = dual.grid[:1]
        xi_s, xi_u, xi_0 = decompose_covector(coords, dual.f_u[:1], dual)
        assert np.allclose(xi_u, dual.f_u[:1], atol=1e-12)
        assert np.max(np.abs(xi_s)) < 1e-12 and np.max(np.abs(xi_0)) < 1e-12

    def test_roof_covector_component_bounds(self, dual):
        # |xi(X)| controls the flow component within the angle constant
        coords = dual.grid[:1]
        dt = np.array([[0.0, 0.0, 1.0]])
        xi_s, xi_u, xi_0 = decompose_covector(coords, dt, dual)
        pairing = 1.0  # <dt, X0> = 1
        C = 1.0 / np.sin(dual.theta_min)
        n0 = np.linalg.norm(xi_0)
        assert pairing / C <= n0 + 1e-12 and n0 <= C * pairing + 1e-12

    def test_reconstruction_random(self, dual):
        rng = np.random.default_rng(14)
        coords = dual.grid[rng.integers(0, len(dual.grid), 1000)]
        xi = rng.normal(size=(1000, 3))
        xi_s, xi_u, xi_0 = decompose_covector(coords, xi, dual)
        assert np.max(np.abs(xi_s + xi_u + xi_0 - xi)) < 1e-12


class TestConstants:
    def test_cat_rate_and_prefactor(self, split):
        hc = estimate_constants(MONO, X0, split)
        assert hc.beta == pytest.approx(BETA, abs=1e-3)
        assert hc.C == pytest.approx(1.0, abs=1e-6)
        assert hc.Lam == 0.0
        assert hc.theta_min == pytest.approx(np.pi / 2, abs=1e-7)
        # continuous-time staircase prefactor stays below the expansion factor
        assert 1.0 < hc.C_cont <= MONO.lam_u + 1e-9

    def test_perturbed_lambda_bound(self):
        rng = np.random.default_rng(3)
        V = random_direction(MONO, rng)
        eps = 1e-3
        X = X0.add_scaled(V, eps)
        Lam = float(np.max(np.linalg.norm(X.jacobian(chart_grid(16)), ord=2, axis=(-2, -1))))
        assert Lam <= eps + 1e-12


def _line_cone(direction, half_angle, grid_n=2):
    g = chart_grid(grid_n)
    centers = np.tile(direction, (len(g), 1))
    return Cone(g, centers, half_angle)


class TestVerifySink:
    def test_expanding_cone_is_sink(self):
        U = _line_cone(F_U, 0.3)
        rep = verify_sink(MONO, X0, U, horizon=8.0)
        assert rep.is_sink and rep.converges
        assert rep.beta_prime == pytest.approx(BETA, abs=0.05)
        assert rep.C_prime < 1.6

    def test_contracting_cone_rejected_forward(self):
        U = _line_cone(F_S, 0.3)
        rep = verify_sink(MONO, X0, U, horizon=6.0)
        assert not rep.is_sink
        assert rep.beta_prime < 0

    def test_source_is_sink_backward(self):
        # time reversal swaps roles: the contracting dual cone attracts
        Xrev = X0.scaled(-1.0, name="reversed")
        U = _line_cone(F_S, 0.3)
        rep = verify_sink(MONO, Xrev, U, horizon=8.0)
        assert rep.is_sink and rep.converges

    def test_perturbed_keeps_half_constants(self):
        rng = np.random.default_rng(77)
        V = random_direction(MONO, rng)
        X = X0.add_scaled(V, 2e-3)
        U = _line_cone(F_U, 0.3)
        rep = verify_sink(MONO, X, U, horizon=8.0)
        # C' > C/2 and beta' > beta/2 with C = 1, beta = log lam_u
        assert rep.is_sink
        assert rep.beta_prime > BETA / 2
        assert rep.C_prime > 0.5


class TestTrappedCone:
    def test_collapse_onto_attractor(self):
        V2 = _line_cone(F_U, 0.3)
        V1 = _line_cone(F_U, 0.15)
        cone, rep = trapped_cone(MONO, X0, V2, V1, horizon=1.0, n_steps=20)
        assert cone.half_angle <= 1e-6
        assert rep.growth_ok  # |Phi_1 xi| > 2 on the cone
        ang = np.arccos(np.clip(np.abs(cone.centers @ F_U), -1, 1))
        assert np.max(ang) < 1e-6

    def test_one_step_contraction(self):
        V2 = _line_cone(F_U, 0.3)
        V1 = _line_cone(F_U, 0.15)
        cone, rep = trapped_cone(MONO, X0, V2, V1, horizon=1.0, n_steps=1)
        assert rep.radii[0] < 0.15

    def test_containment_violation_detected(self):
        # a cone around the repelling line is expelled immediately
        V2 = _line_cone(F_S, 0.2)
        V1 = _line_cone(F_S, 0.1)
        with pytest.raises(VerificationError):
            trapped_cone(MONO, X0, V2, V1, horizon=1.0, n_steps=3)
