import numpy as np
import pytest

from anoflow.basis import assemble_basis, cheb_lobatto, clenshaw_curtis
from anoflow.errors import NumericalError
from anoflow.fields import RoofTerm, VectorField, suspension_field, time_rescale_direction
from anoflow.spectra import (
    OperatorSet,
    assemble_generator,
    attach_mollifier,
    attach_weight,
    bound_check_inverse,
    build_operator_set,
    det_eps_deriv,
    det_log,
    det_logderiv,
    det_value,
    determinant_grid,
    eigen_in_box,
    eps_deriv_trace_norm,
    find_resonances,
    find_zeros,
    resolvent_norm,
    weight_multiplier,
    winding_number,
)
from anoflow.torus import cat_monodromy

MONO = cat_monodromy()
X0 = suspension_field(MONO)
TWO_PI_I = 2j * np.pi


@pytest.fixture(scope="module")
def basis():
    return assemble_basis(MONO, 8, 25)


@pytest.fixture(scope="module")
def op0(basis):
    blocks = assemble_generator(basis, X0)
    attach_mollifier(basis, blocks, 4.0, scope="zero_fiber")
    return OperatorSet(basis=basis, blocks=blocks, h=0.1)


class ConstantWeight:
    """Stub weight: the symbol is identically +1 (pure multiplier test)."""

    def cutoff_weight(self, coords, dirs):
        return np.ones(len(np.atleast_2d(dirs)))


class TestBasis:
    def test_chebyshev_quadrature_exact(self):
        t, D = cheb_lobatto(12)
        w = clenshaw_curtis(t)
        # exact on polynomials up to the space dimension
        for p in range(10):
            assert w @ t**p == pytest.approx(1.0 / (p + 1), abs=1e-13)
        # derivative matrix exact on polynomials
        assert np.max(np.abs(D @ t**3 - 3 * t**2)) < 1e-10

    def test_k0_only(self):
        b = assemble_basis(MONO, 0.5, 9)
        assert len(b.chains) == 0
        assert b.dim == b.n_fourier

    def test_orbit_chain_structure(self, basis):
        B = MONO.A.T
        found = None
        for chain in basis.chains:
            if (1, 0) in chain.sites:
                found = chain
        assert found is not None
        # consecutive sites follow the inverse-transpose orbit
        for a, b in zip(found.sites, found.sites[1:]):
            assert tuple(np.round(np.linalg.inv(B) @ np.array(a)).astype(int)) == b
        # (2,1) is the predecessor of (1,0), retained in the same chain
        sites = found.sites
        i = sites.index((1, 0))
        assert sites[i - 1] == (2, 1)
        assert (5, 3) in sites  # still within |k| <= 8

    def test_sites_partition_ball(self, basis):
        seen = [s for c in basis.chains for s in c.sites]
        assert len(seen) == len(set(seen))
        r = basis.K_max
        expect = sum(
            1
            for k1 in range(-int(r), int(r) + 1)
            for k2 in range(-int(r), int(r) + 1)
            if (k1, k2) != (0, 0) and k1 * k1 + k2 * k2 <= r * r
        )
        assert len(seen) == expect

    def test_truncation_boundary_recorded(self, basis):
        assert len(basis.truncation_boundary) == 2 * len(basis.chains)


class TestGenerator:
    def test_constants_annihilated(self, op0):
        b = op0.blocks[0]
        e = np.zeros(b.dim, dtype=complex)
        e[op0.basis.n_half] = 1.0
        assert np.linalg.norm(b.X @ e) == 0.0

    def test_k0_eigenvalues_exact(self, op0):
        ev = np.sort_complex(np.linalg.eigvals(op0.blocks[0].X))
        expect = np.sort_complex(TWO_PI_I * np.arange(-op0.basis.n_half, op0.basis.n_half + 1))
        assert np.max(np.abs(ev - expect)) < 1e-8

    def test_k0_skew_adjoint_divergence_free(self, basis):
        X = X0.add_scaled(time_rescale_direction(MONO), 0.07)
        blocks = assemble_generator(basis, X)
        M = blocks[0].X
        assert np.linalg.norm(M + M.conj().T, 2) < 1e-12

    def test_chain_spectrum_right_of_box(self, op0):
        ev = np.concatenate([np.linalg.eigvals(b.X) for b in op0.blocks[1:]])
        assert np.min(ev.real) > 2.0

    def test_dense_matches_blocks_for_uncoupled(self, basis):
        from anoflow.spectra import _assemble_dense

        Xg = X0.add_scaled(VectorField(MONO, (RoofTerm(0.0, ((1, 0.3, 0.1),)),), "g"), 0.05)
        blocks = assemble_generator(basis, Xg)
        dense = _assemble_dense(basis, Xg)
        off = 0
        for b in blocks:
            d = b.dim
            assert np.array_equal(dense.X[off:off + d, off:off + d], b.X)
            off += d
        assert np.count_nonzero(dense.X) == sum(np.count_nonzero(b.X) for b in blocks)


class TestMollifier:
    def test_zero_mode_preserved(self, op0):
        Q = op0.blocks[0].Q
        assert Q[op0.basis.n_half, op0.basis.n_half] == 1.0

    def test_high_modes_annihilated(self, op0):
        Q = op0.blocks[0].Q
        modes = op0.basis.fourier_modes
        far = np.abs(modes) > 8.0
        assert np.max(np.abs(np.diag(Q)[far])) == 0.0

    def test_self_adjoint_unit_interval(self, basis):
        blocks = assemble_generator(basis, X0)
        attach_mollifier(basis, blocks, 1.0, scope="ball", freq_scale=0.25)
        for b in blocks:
            if b.Q is None:
                continue
            assert np.max(np.abs(b.Q - b.Q.T)) < 1e-12
            lam = np.linalg.eigvalsh(b.Q)
            assert lam.min() > -1e-12
            assert lam.max() < 1.0 + 1e-6

    def test_two_profiles_same_resonances(self, basis):
        vals = {}
        for profile in ("smoothstep", "cosine"):
            blocks = assemble_generator(basis, X0)
            attach_mollifier(basis, blocks, 4.0, scope="zero_fiber", profile=profile)
            op = OperatorSet(basis=basis, blocks=blocks, h=0.1)
            zs = find_zeros(op, (-0.5, 0.2, -1.0, 1.0))
            vals[profile] = zs[0].s
        assert abs(vals["smoothstep"] - vals["cosine"]) < 1e-9


class TestWeight:
    def test_r_zero_identity(self, basis, tiny_weight):
        blocks = assemble_generator(basis, X0)
        attach_weight(basis, blocks, tiny_weight, r=0.0, k_shift=0)
        for b in blocks:
            assert np.max(np.abs(b.W - np.eye(b.dim))) < 1e-12

    def test_constant_symbol_diagonal(self, basis):
        blocks = assemble_generator(basis, X0)
        attach_weight(basis, blocks, ConstantWeight(), r=2.0, k_shift=0)
        W = blocks[0].W
        off = W - np.diag(np.diag(W))
        assert np.max(np.abs(off)) < 1e-12
        modes = basis.fourier_modes
        expect = (1.0 + np.abs(modes)) ** (-2.0)
        expect[modes == 0] = 1.0
        assert np.allclose(np.diag(W).real, expect, atol=1e-12)

    def test_multiplier_formula_value(self):
        # symbol +1 at |xi| = 10 with r = 2: (1 + 10)^{-2}
        out = weight_multiplier(ConstantWeight(), 2.0, 0, np.array([0.0]), (6.0, 0.0),
                                np.array([8.0]))
        assert out[0, 0] == pytest.approx(np.exp(-2 * np.log(11.0)), rel=1e-12)

    def test_condition_abort(self, basis, tiny_weight):
        blocks = assemble_generator(basis, X0)
        with pytest.raises(NumericalError):
            attach_weight(basis, blocks, tiny_weight, r=40.0, k_shift=0, cond_limit=1e12)


@pytest.fixture(scope="module")
def tiny_weight():
    from anoflow.splitting import compute_splitting, dual_splitting, estimate_constants
    from anoflow.weight import (build_weight, gap_constants, neighborhood_time,
                                staircase_envelope)

    S = compute_splitting(MONO, X0, grid=2)
    D = dual_splitting(S)
    hc = estimate_constants(MONO, X0, S, subsample=8)
    T = neighborhood_time(0.1, staircase_envelope(hc), hc.beta)
    W, _ = gap_constants(build_weight(MONO, D, 0.1, T), n_dense=20_000)
    return W


class TestResolvent:
    def test_identity_residual(self, op0):
        s = 0.3 + 0.5j
        for b in op0.blocks[:3]:
            A = op0.h * b.X - (b.Q if b.Q is not None else 0.0) - s * np.eye(b.dim)
            rhs = np.arange(1, b.dim + 1) / b.dim
            x = np.linalg.solve(A, rhs.astype(complex))
            assert np.linalg.norm(A @ x - rhs) / np.linalg.norm(rhs) < 1e-10

    def test_norm_decays_far_right(self, op0):
        # dominant -s term: decay like 1/Re(s) once s clears the numerical
        # range of the non-normal truncation blocks
        n2 = resolvent_norm(op0, 50.0 + 0.0j, scaled=True)
        n3 = resolvent_norm(op0, 500.0 + 0.0j, scaled=True)
        n4 = resolvent_norm(op0, 5000.0 + 0.0j, scaled=True)
        assert n3 < n2 / 5.0
        assert 5.0 < n3 / n4 < 20.0
        assert n4 == pytest.approx(1.0 / 5000.0, rel=0.05)

    def test_weighted_norm_with_weight(self, basis, tiny_weight):
        blocks = assemble_generator(basis, X0)
        attach_mollifier(basis, blocks, 4.0, scope="zero_fiber")
        attach_weight(basis, blocks, tiny_weight, r=4.0, k_shift=0)
        op = OperatorSet(basis=basis, blocks=blocks, h=0.1)
        val = resolvent_norm(op, 0.1 * (-0.1 + 0.5j), scaled=True)
        assert np.isfinite(val) and val > 0


class TestDeterminant:
    def test_zero_at_origin(self, op0):
        zs = find_zeros(op0, (-0.3, 0.15, -1.0, 1.0))
        assert len(zs) == 1
        assert abs(zs[0].s) < 1e-6
        assert zs[0].multiplicity == 1

    def test_no_zeros_small_box(self, op0):
        assert winding_number(op0, -0.45, 0.18, 1.0, 5.0) == 0

    def test_far_right_tends_to_one(self, op0):
        assert abs(det_value(op0, 1e4 + 0j) - 1.0) < 2e-2
        assert abs(det_value(op0, 1e5 + 0j) - 1.0) < 2e-3

    def test_similarity_invariance(self, op0):
        # conjugating generator and mollifier by any invertible matrix
        # leaves the determinant unchanged: the anisotropic weight cannot
        # move resonances, only renorm them
        rng = np.random.default_rng(0)
        s = -0.05 + 0.4j
        base = det_log(op0, s)
        total = 0.0 + 0.0j
        for b in op0.blocks:
            if b.Q is None:
                continue
            d = np.exp(rng.uniform(-1.5, 1.5, b.dim))
            Xc = (b.X * d[:, None]) / d[None, :]
            Qc = (b.Q * d[:, None]) / d[None, :]
            A = Xc - Qc / op0.h - s * np.eye(b.dim)
            Dm = (Qc / op0.h) @ np.linalg.solve(A, np.eye(b.dim, dtype=complex))
            sign, logabs = np.linalg.slogdet(np.eye(b.dim) + Dm)
            total += logabs + np.log(sign)
        assert abs(total - base) < 1e-8

    def test_holomorphy_grid(self, op0):
        grid = determinant_grid(op0, (-0.4, 0.15, 0.5, 5.5), n_re=4, n_im=5)
        assert grid.cr_residual < 1e-6


class TestEpsDerivative:
    def test_zero_direction(self, basis, op0):
        zero_dir = VectorField(MONO, (), name="null")
        dblocks = assemble_generator(basis, zero_dir)
        val = det_eps_deriv(op0, dblocks, -0.1 + 0.4j)
        assert val == 0.0

    def test_fd_match(self, basis):
        V = time_rescale_direction(MONO)

        def make(eps):
            blocks = assemble_generator(basis, X0.add_scaled(V, eps) if eps else X0)
            attach_mollifier(basis, blocks, 4.0, scope="zero_fiber")
            return OperatorSet(basis=basis, blocks=blocks, h=0.1)

        dblocks = assemble_generator(basis, V)
        s = -0.1 + 0.0j
        eps = 0.01
        formula = det_eps_deriv(make(eps), dblocks, s)
        d = 1e-5
        fd = (det_value(make(eps + d), s) - det_value(make(eps - d), s)) / (2 * d)
        assert abs(formula - fd) / abs(fd) < 1e-4

    def test_bound_check(self, op0):
        norm, bound = bound_check_inverse(op0, -0.1 + 0.7j)
        assert norm <= bound

    def test_trace_norm_positive(self, basis, op0):
        V = time_rescale_direction(MONO)
        dblocks = assemble_generator(basis, V)
        val = eps_deriv_trace_norm(op0, dblocks, -0.1 + 1.5j, weighted=False)
        assert val > 0


class TestFindResonances:
    def test_certified_set_small_box(self, basis):
        def make(name):
            K, Nt, h = 8, 25, 0.1
            if name == "K+4":
                K += 4
            elif name == "Nt+8":
                Nt += 8
            elif name == "h/2":
                h /= 2
            return build_operator_set(MONO, X0, K, Nt, h=h, k0=4.0, scope="zero_fiber")

        out = find_resonances(make, (-0.4, 0.15, -1.0, 1.0),
                              variations={"K+4": None, "Nt+8": None, "h/2": None})
        vals = out.values()
        assert len(vals) == 1
        assert abs(vals[0]) < 1e-6
        assert out.resonances[0].stable
        assert out.crosscheck_ok
