import numpy as np
import pytest

from anoflow.fields import (
    PerturbationFamily,
    c1_distance,
    c1_norm,
    random_direction,
    roof_profile_direction,
    suspension_field,
    time_rescale_direction,
    volume_preserving_direction,
)
from anoflow.flow import (
    cotangent_lift,
    covector_orbit,
    evolve,
    flow_points,
    flow_sphere,
    generator_gap,
    projective_flow,
    sphere_generator,
    suspension_frame_orbit,
)
from anoflow.torus import Covector, SphereCovector, TorusPoint, cat_monodromy

MONO = cat_monodromy()
X0 = suspension_field(MONO)
LOG_LAM = np.log(MONO.lam_u)

# orthonormal dual frame of the suspension: expanding, contracting, roof
F_U = np.array([MONO.v_s[0], MONO.v_s[1], 0.0])
F_S = np.array([MONO.v_u[0], MONO.v_u[1], 0.0])
F_0 = np.array([0.0, 0.0, 1.0])


def mk_point(x1=0.37, x2=0.61, t=0.2):
    return TorusPoint(np.array([x1, x2]), t)


class TestEvolve:
    def test_below_roof(self):
        jet = evolve(MONO, X0, mk_point(t=0.2), 0.3)
        assert np.allclose(jet.endpoint.x, [0.37, 0.61], atol=1e-12)
        assert jet.endpoint.t == pytest.approx(0.5, abs=1e-12)
        assert np.allclose(jet.jacobian, np.eye(3), atol=1e-12)

    def test_one_crossing(self):
        jet = evolve(MONO, X0, mk_point(t=0.5), 1.0)
        expect = (MONO.A @ np.array([0.37, 0.61])) % 1.0
        assert np.allclose(jet.endpoint.x, expect, atol=1e-10)
        assert jet.endpoint.t == pytest.approx(0.5, abs=1e-10)
        G = np.eye(3)
        G[:2, :2] = MONO.A
        assert np.allclose(jet.jacobian, G, atol=1e-10)

    def test_group_law_random_points(self):
        rng = np.random.default_rng(11)
        V = random_direction(MONO, rng)
        X = X0.add_scaled(V, 0.01)
        pts = np.column_stack([rng.uniform(0, 1, (100, 2)), rng.uniform(0, 1, 100)])
        one = flow_points(MONO, X, pts, 1.0, step=2e-3)
        two = flow_points(MONO, X, flow_points(MONO, X, pts, 0.3, step=2e-3), 0.7, step=2e-3)
        d = np.abs(one - two)
        d[:, :2] = np.minimum(d[:, :2], 1.0 - d[:, :2])
        assert np.max(d) < 1e-9

    def test_backward_inverts_forward(self):
        rng = np.random.default_rng(4)
        V = random_direction(MONO, rng)
        X = X0.add_scaled(V, 0.02)
        pts = np.column_stack([rng.uniform(0, 1, (50, 2)), rng.uniform(0, 1, 50)])
        back = flow_points(MONO, X, flow_points(MONO, X, pts, 1.7, step=2e-3), -1.7, step=2e-3)
        d = np.abs(back - pts)
        d[:, :2] = np.minimum(d[:, :2], 1.0 - d[:, :2])
        assert np.max(d) < 1e-9


class TestCotangentLift:
    def test_time_zero_identity(self):
        xi = Covector(mk_point(), np.array([0.3, -0.2, 0.9]))
        out = cotangent_lift(MONO, X0, xi, 0.0)
        assert np.allclose(out.components, xi.components)

    def test_roof_covector_preserved(self):
        xi = Covector(mk_point(t=0.4), np.array([0.0, 0.0, 1.0]))
        out = cotangent_lift(MONO, X0, xi, 2.0)
        assert np.allclose(out.components, [0.0, 0.0, 1.0], atol=1e-10)

    def test_homogeneity(self):
        xi = Covector(mk_point(), np.array([0.5, 0.1, -0.3]))
        out1 = cotangent_lift(MONO, X0, xi, 1.3)
        out2 = cotangent_lift(MONO, X0, Covector(xi.base, 2.0 * xi.components), 1.3)
        assert np.allclose(out2.components, 2.0 * out1.components, atol=1e-12)

    def test_symbol_conservation(self):
        rng = np.random.default_rng(9)
        V = random_direction(MONO, rng)
        X = X0.add_scaled(V, 0.02)
        for _ in range(10):
            p = TorusPoint(rng.uniform(0, 1, 2), float(rng.uniform(0, 1)))
            comps = rng.normal(size=3)
            xi = Covector(p, comps)
            before = float(np.dot(comps, X(p.coords())))
            for T in (1.0, 3.0, 5.0, -5.0):
                out = cotangent_lift(MONO, X, xi, T, step=2e-3)
                after = float(np.dot(out.components, X(out.base.coords())))
                assert after == pytest.approx(before, abs=1e-9)

    def test_pullback_duality(self):
        rng = np.random.default_rng(2)
        V = random_direction(MONO, rng)
        X = X0.add_scaled(V, 0.015)
        p = mk_point(0.1, 0.9, 0.7)
        comps = np.array([0.4, -0.8, 0.45])
        v0 = np.array([1.1, 0.2, -0.5])
        jet = evolve(MONO, X, p, 2.5, step=2e-3)
        xi_t = cotangent_lift(MONO, X, Covector(p, comps), 2.5, step=2e-3)
        assert np.dot(xi_t.components, jet.jacobian @ v0) == pytest.approx(np.dot(comps, v0), abs=1e-9)


class TestProjectiveFlow:
    def test_expanding_dual_direction_growth(self):
        xi = SphereCovector(mk_point(t=0.0), F_U)
        out, growth = projective_flow(MONO, X0, xi, 1.0)
        assert growth == pytest.approx(LOG_LAM, abs=1e-10)
        assert min(np.linalg.norm(out.components - F_U), np.linalg.norm(out.components + F_U)) < 1e-10

    def test_roof_direction_neutral(self):
        xi = SphereCovector(mk_point(), F_0)
        for T in (0.7, 2.0, -3.0):
            _, growth = projective_flow(MONO, X0, xi, T)
            assert growth == pytest.approx(0.0, abs=1e-10)

    def test_time_zero(self):
        xi = SphereCovector(mk_point(), F_S)
        out, growth = projective_flow(MONO, X0, xi, 0.0)
        assert growth == 0.0
        assert np.allclose(out.components, F_S)

    def test_growth_cocycle(self):
        rng = np.random.default_rng(21)
        V = random_direction(MONO, rng)
        X = X0.add_scaled(V, 0.02)
        coords = np.column_stack([rng.uniform(0, 1, (40, 2)), rng.uniform(0, 1, 40)])
        dirs = rng.normal(size=(40, 3))
        dirs /= np.linalg.norm(dirs, axis=-1)[:, None]
        _, _, g_direct = flow_sphere(MONO, X, coords, dirs, 2.3, step=2e-3)
        y1, d1, g1 = flow_sphere(MONO, X, coords, dirs, 1.1, step=2e-3)
        _, _, g2 = flow_sphere(MONO, X, y1, d1, 1.2, step=2e-3)
        assert np.max(np.abs(g_direct - (g1 + g2))) < 1e-8

    def test_matches_closed_form_suspension(self):
        # generic start against the closed-form frame orbit
        tau = np.array([0.35])
        comps = np.array([[0.5, 0.4, np.sqrt(1 - 0.41)]])
        nodes = np.array([2.4])
        oracle = suspension_frame_orbit(MONO, tau, comps, nodes)[0, 0]
        chart_dir = comps[0, 0] * F_U + comps[0, 1] * F_S + comps[0, 2] * F_0
        xi = SphereCovector(TorusPoint(np.array([0.2, 0.8]), 0.35), chart_dir)
        out, _ = projective_flow(MONO, X0, xi, 2.4)
        got = np.array([out.components @ F_U, out.components @ F_S, out.components @ F_0])
        assert np.allclose(got, oracle, atol=1e-9)


class TestSphereGenerator:
    def test_invariant_function_annihilated(self):
        # u = alpha*sigma/gamma^2 in dual-frame components is constant along
        # the lifted suspension flow (scaling cancels); its generator
        # derivative must vanish
        rng = np.random.default_rng(6)
        pts = np.column_stack([rng.uniform(0, 1, (30, 2)), rng.uniform(0.2, 0.8, 30)])
        dirs = rng.normal(size=(30, 3))
        dirs /= np.linalg.norm(dirs, axis=-1)[:, None]
        keep = np.abs(dirs @ F_0) > 0.4
        pts, dirs = pts[keep], dirs[keep]

        def u(coords, d):
            a, s, g = d @ F_U, d @ F_S, d @ F_0
            return a * s / g**2

        h = 1e-4
        yp, dp, _ = flow_sphere(MONO, X0, pts, dirs, h)
        ym, dm, _ = flow_sphere(MONO, X0, pts, dirs, -h)
        du = (u(yp, dp) - u(ym, dm)) / (2 * h)
        assert np.max(np.abs(du)) < 1e-6

    def test_generator_gap_linear_in_eps(self):
        rng = np.random.default_rng(17)
        V = random_direction(MONO, rng)
        pts = np.column_stack([rng.uniform(0, 1, (60, 2)), rng.uniform(0, 1, 60)])
        dirs = rng.normal(size=(60, 3))
        dirs /= np.linalg.norm(dirs, axis=-1)[:, None]
        Ks = []
        for eps in (1e-2, 1e-3, 1e-4):
            X = X0.add_scaled(V, eps)
            Ks.append(generator_gap(MONO, X, X0, pts, dirs) / eps)
        Ks = np.array(Ks)
        assert np.max(np.abs(Ks - Ks.mean())) / Ks.mean() < 0.2

    def test_unstable_dual_direction_tangent(self):
        # the expanding dual line is invariant: the fiber component of the
        # generator along it is zero
        pts = np.array([[0.3, 0.4, 0.5]])
        _, ddir = sphere_generator(MONO, X0, pts, F_U[None, :])
        assert np.max(np.abs(ddir)) < 1e-6


class TestC1Distance:
    def test_zero_for_same(self):
        assert c1_distance(X0, X0) == 0.0

    def test_linear_homogeneity(self):
        V = volume_preserving_direction(MONO)
        d1 = c1_distance(X0.add_scaled(V, 0.01), X0)
        d2 = c1_distance(X0.add_scaled(V, 0.02), X0)
        assert d2 == pytest.approx(2 * d1, rel=1e-12)
        assert d1 <= 0.01 + 1e-12

    def test_family_respects_budget(self):
        rng = np.random.default_rng(123)
        for _ in range(5):
            V = random_direction(MONO, rng)
            assert c1_norm(V) == pytest.approx(1.0, abs=1e-9)
            fam = PerturbationFamily(X0, V)
            assert c1_distance(fam.field(0.003), X0) <= 0.003 + 1e-12


class TestDirections:
    def test_time_rescale_unit_c1(self):
        V = time_rescale_direction(MONO)
        assert c1_norm(V) == pytest.approx(1.0, abs=1e-14)
        assert np.max(np.abs(V.divergence(np.random.default_rng(0).uniform(0, 1, (20, 3))))) == 0.0

    def test_volume_preserving_divergence_free(self):
        V = volume_preserving_direction(MONO)
        g = np.random.default_rng(1).uniform(0, 1, (200, 3))
        assert np.max(np.abs(V.divergence(g))) < 1e-14

    def test_roof_profile_divergence(self):
        V = roof_profile_direction(MONO, modes=((1, 1.0, 0.0),))
        g = np.random.default_rng(2).uniform(0, 1, (50, 3))
        assert np.max(np.abs(V.divergence(g))) > 1e-3


class TestCovectorOrbit:
    def test_grid_consistency(self):
        rng = np.random.default_rng(8)
        coords = np.column_stack([rng.uniform(0, 1, (10, 2)), rng.uniform(0, 1, 10)])
        dirs = rng.normal(size=(10, 3))
        dirs /= np.linalg.norm(dirs, axis=-1)[:, None]
        grid = np.array([0.5, 1.0, 2.0])
        ys, ds, ls = covector_orbit(MONO, X0, coords, dirs, grid)
        y2, d2, l2 = flow_sphere(MONO, X0, coords, dirs, 2.0)
        assert np.allclose(ds[-1], d2, atol=1e-10)
        assert np.allclose(ls[-1], l2, atol=1e-10)
