"""Discretized spectral theory: generator, anisotropic weight, mollifier,
resolvent control, mollified Fredholm determinant and resonance search.

Key structural facts used throughout:

* the generator is block-diagonal over the k = 0 Fourier block and the
  lattice chains whenever the field's coefficients do not depend on the
  base point (all default studies); base-dependent terms couple lattice
  modes and force the dense assembly;
* similarity invariance: the determinant of 1 + h^{-1} Q (X - h^{-1} Q - s)^{-1}
  is unchanged by conjugation with the (invertible) weight, so resonance
  location never needs the weight matrix -- only norm estimates do;
* mollifier scope: the ``zero_fiber`` scope keeps the mollifier on the
  k = 0 block, so chain blocks contribute the factor det(1 + 0) = 1 and
  truncation artifacts can neither shift zeros nor poles into the studied
  region; the ``ball`` scope covers the full frequency ball, which is what
  the semiclassical trace-norm scaling study requires.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from anoflow.basis import TWO_PI, Chain, GalerkinBasis
from anoflow.errors import DiscretizationError, NumericalError
from anoflow.fields import HorizontalTerm, RoofTerm, VectorField, VerticalTerm
from anoflow.profiles import bump01, mollifier_symbol
from anoflow.weight import EscapeWeight

_PSD_CLIP = 1e-13


# ---------------------------------------------------------------------------
# block containers


@dataclass
class Block:
    """One decoupled sector of the discretized operator."""

    label: str
    kind: str                      # "fourier0" | "chain" | "dense"
    X: np.ndarray                  # complex (d, d)
    Q: np.ndarray | None = None    # PSD symmetric, or None when absent
    W: np.ndarray | None = None
    Winv: np.ndarray | None = None
    q_eig: tuple[np.ndarray, np.ndarray] | None = None  # (U, lam), lam > 0
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.X.shape[0]

    def mollified(self, h: float) -> np.ndarray:
        if self.Q is None:
            return self.X
        return self.X - self.Q / h

    def q_rank(self) -> int:
        return 0 if self.q_eig is None else len(self.q_eig[1])


@dataclass
class OperatorSet:
    """Generator + mollifier (+ optional weight) over aligned blocks."""

    basis: GalerkinBasis
    blocks: list[Block]
    h: float
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return sum(b.dim for b in self.blocks)

    def eigenvalues(self) -> np.ndarray:
        """All generator eigenvalues (blockwise)."""
        return np.concatenate([sla.eigvals(b.X) for b in self.blocks])


# ---------------------------------------------------------------------------
# generator assembly


def _roof_profile(terms: tuple, nodes: np.ndarray):
    """Collect t-only roof coefficient g(t) (and its Fourier data) from the
    x-independent terms of a field; returns (g at nodes, fourier pairs)."""
    g_nodes = np.zeros_like(nodes)
    fourier: dict[int, complex] = {}

    def add_mode(m: int, coef: complex):
        fourier[m] = fourier.get(m, 0.0) + coef

    for term in terms:
        if isinstance(term, RoofTerm):
            g_nodes += term.g(nodes)
            add_mode(0, term.c0)
            for m, a, b in term.modes:
                add_mode(m, (a - 1j * b) / 2.0)
                add_mode(-m, (a + 1j * b) / 2.0)
        elif isinstance(term, VerticalTerm) and term.kvec == (0, 0):
            amp = term.amp * np.cos(term.phase)
            g_nodes += amp * bump01(nodes)
            # sin^4(pi t) = 3/8 - cos(2 pi t)/2 + cos(4 pi t)/8
            add_mode(0, 3.0 * amp / 8.0)
            add_mode(1, -amp / 4.0)
            add_mode(-1, -amp / 4.0)
            add_mode(2, amp / 16.0)
            add_mode(-2, amp / 16.0)
    return g_nodes, fourier


def _site_multiplier(term, site: tuple[int, int], nodes: np.ndarray) -> np.ndarray | None:
    """Zero-order multiplier a term contributes at a fixed lattice site."""
    if isinstance(term, HorizontalTerm) and term.kvec == (0, 0):
        kdotc = site[0] * term.c[0] + site[1] * term.c[1]
        return TWO_PI * 1j * kdotc * np.cos(term.phase) * bump01(nodes)
    return None


def _chain_value_extractor(basis: GalerkinBasis, chain: Chain, j: int) -> np.ndarray:
    """Matrix giving site-j node values from the chain dofs (absorbing zero
    at the truncated inflow)."""
    Nt = basis.N_t
    d = basis.chain_dim(chain)
    S = np.zeros((Nt, d))
    off = j * (Nt - 1)
    for i in range(1, Nt):
        S[i, off + i - 1] = 1.0
    if j > 0:
        S[0, off - 1] = 1.0  # junction: previous site's last node
    return S


def _assemble_chain_X(basis: GalerkinBasis, chain: Chain, X_field: VectorField) -> np.ndarray:
    """Chain generator in the quadrature-scaled nodal frame."""
    Nt = basis.N_t
    d = basis.chain_dim(chain)
    g_nodes, _ = _roof_profile(X_field.terms, basis.nodes)
    X = np.zeros((d, d), dtype=complex)
    for j, site in enumerate(chain.sites):
        S = _chain_value_extractor(basis, chain, j)
        rows = slice(j * (Nt - 1), (j + 1) * (Nt - 1))
        X[rows, :] += (g_nodes[1:, None] * (basis.D @ S)[1:, :])
        for term in X_field.terms:
            mult = _site_multiplier(term, site, basis.nodes)
            if mult is not None:
                X[rows, :] += mult[1:, None] * S[1:, :]
    w = basis.chain_node_weights(chain)
    sq = np.sqrt(w)
    return sq[:, None] * X / sq[None, :]


def _fourier_mult_matrix(basis: GalerkinBasis, fourier: dict[int, complex]) -> np.ndarray:
    """Multiplication by a trigonometric polynomial on the Fourier block
    (Toeplitz in the mode index, modes outside the window truncated)."""
    modes = basis.fourier_modes
    N = basis.n_fourier
    M = np.zeros((N, N), dtype=complex)
    for i, m_out in enumerate(modes):
        for jj, m_in in enumerate(modes):
            c = fourier.get(m_out - m_in)
            if c is not None:
                M[i, jj] = c
    return M


def _assemble_fourier_X(basis: GalerkinBasis, X_field: VectorField) -> np.ndarray:
    _, fourier = _roof_profile(X_field.terms, basis.nodes)
    D = np.diag(TWO_PI * 1j * basis.fourier_modes.astype(float))
    return _fourier_mult_matrix(basis, fourier) @ D


def _has_coupling_terms(X_field: VectorField) -> bool:
    for term in X_field.terms:
        if isinstance(term, RoofTerm):
            continue
        if term.kvec != (0, 0):
            return True
    return False


def assemble_generator(basis: GalerkinBasis, X_field: VectorField) -> list[Block]:
    """Matrix of u -> X.u on the glued basis.

    Base-independent fields stay block-diagonal (one Fourier block plus one
    block per chain); fields with base-dependent terms are assembled as a
    single dense block with the lattice couplings filled in.
    """
    if _has_coupling_terms(X_field):
        return [_assemble_dense(basis, X_field)]
    blocks = [Block(label="k0", kind="fourier0", X=_assemble_fourier_X(basis, X_field),
                    meta={"freqs": basis.fourier_freq()})]
    for ci, chain in enumerate(basis.chains):
        blocks.append(Block(
            label=f"chain{ci}", kind="chain",
            X=_assemble_chain_X(basis, chain, X_field),
            meta={"chain": chain},
        ))
    return blocks


def _dense_layout(basis: GalerkinBasis):
    """Global dof layout: Fourier block first, then chains in order."""
    offsets = {"k0": 0}
    off = basis.n_fourier
    site_of = {}
    for ci, chain in enumerate(basis.chains):
        offsets[f"chain{ci}"] = off
        for j, site in enumerate(chain.sites):
            site_of[site] = (ci, j)
        off += basis.chain_dim(chain)
    return offsets, site_of, off


def _assemble_dense(basis: GalerkinBasis, X_field: VectorField) -> Block:
    offsets, site_of, dim = _dense_layout(basis)
    X = np.zeros((dim, dim), dtype=complex)
    Nt = basis.N_t
    # block-diagonal part: the x-independent terms
    diag_terms = tuple(t for t in X_field.terms
                       if isinstance(t, RoofTerm) or t.kvec == (0, 0))
    base = VectorField(X_field.mono, diag_terms, name="diag-part")
    X[:basis.n_fourier, :basis.n_fourier] = _assemble_fourier_X(basis, base)
    for ci, chain in enumerate(basis.chains):
        o = offsets[f"chain{ci}"]
        d = basis.chain_dim(chain)
        X[o:o + d, o:o + d] = _assemble_chain_X(basis, chain, base)

    # scaled frames for nodal placement
    sqw = {ci: np.sqrt(basis.chain_node_weights(chain))
           for ci, chain in enumerate(basis.chains)}
    t_four = np.arange(basis.n_fourier) / basis.n_fourier
    E = np.exp(TWO_PI * 1j * np.outer(t_four, basis.fourier_modes))          # coeffs -> values
    P = np.exp(-TWO_PI * 1j * np.outer(basis.fourier_modes, basis.nodes))    # nodal -> coeffs
    P = P * basis.cc_weights[None, :]

    def source_values_matrix(site):
        """Columns: map global dofs to the site's Nt node values."""
        if site == (0, 0):
            # evaluate the Fourier block at the collocation nodes
            M = np.exp(TWO_PI * 1j * np.outer(basis.nodes, basis.fourier_modes))
            out = np.zeros((Nt, dim), dtype=complex)
            out[:, :basis.n_fourier] = M
            return out
        ci, j = site_of[site]
        chain = basis.chains[ci]
        S = _chain_value_extractor(basis, chain, j).astype(complex)
        S = S / sqw[ci][None, :]  # undo the scaled frame on the source side
        out = np.zeros((Nt, dim), dtype=complex)
        o = offsets[f"chain{ci}"]
        out[:, o:o + basis.chain_dim(chain)] = S
        return out

    def add_to_target(site, rows_nodal):
        """Scatter nodal rows (Nt x dim) into the target site's equations."""
        if site == (0, 0):
            X[:basis.n_fourier, :] += P @ rows_nodal
            return
        ci, j = site_of[site]
        o = offsets[f"chain{ci}"] + j * (Nt - 1)
        X[o:o + Nt - 1, :] += sqw[ci][j * (Nt - 1):(j + 1) * (Nt - 1), None] * rows_nodal[1:, :]

    all_sites = [(0, 0)] + [s for chain in basis.chains for s in chain.sites]
    site_set = set(all_sites)
    for term in X_field.terms:
        if isinstance(term, RoofTerm) or term.kvec == (0, 0):
            continue
        kappa = term.kvec
        for src in all_sites:
            if isinstance(term, HorizontalTerm):
                kdotc = src[0] * term.c[0] + src[1] * term.c[1]
                if kdotc == 0.0:
                    continue
                base_vals = None
                coefs = {+1: np.pi * 1j * kdotc * np.exp(1j * term.phase) * bump01(basis.nodes),
                         -1: np.pi * 1j * kdotc * np.exp(-1j * term.phase) * bump01(basis.nodes)}
                deriv = False
            else:  # VerticalTerm
                coefs = {+1: 0.5 * term.amp * np.exp(1j * term.phase) * bump01(basis.nodes),
                         -1: 0.5 * term.amp * np.exp(-1j * term.phase) * bump01(basis.nodes)}
                deriv = True
            src_vals = source_values_matrix(src)
            if deriv:
                src_vals = basis.D.astype(complex) @ src_vals
            for sgn in (+1, -1):
                tgt = (src[0] + sgn * kappa[0], src[1] + sgn * kappa[1])
                if tgt not in site_set:
                    continue  # truncated coupling: absorbed
                add_to_target(tgt, coefs[sgn][:, None] * src_vals)
    freqs = np.concatenate([basis.fourier_freq()] +
                           [np.hypot(np.hypot(s[0], s[1]), 0.0) * np.ones(Nt - 1)
                            for chain in basis.chains for s in chain.sites])
    return Block(label="dense", kind="dense", X=X, meta={"freqs": freqs})


# ---------------------------------------------------------------------------
# mollifier and weight


def _psd_part(M: np.ndarray) -> np.ndarray:
    Ms = 0.5 * (M + M.T)
    lam, U = np.linalg.eigh(Ms)
    lam = np.clip(lam, 0.0, None)
    return (U * lam) @ U.T


def attach_mollifier(basis: GalerkinBasis, blocks: list[Block], k0: float,
                     scope: str = "zero_fiber", profile: str = "smoothstep",
                     freq_scale: float = 1.0) -> None:
    """Attach a positive self-adjoint low-pass mollifier to the blocks.

    The symbol is q(freq_scale |xi| / k0): identically 1 below k0 and 0
    beyond 2 k0 (in scaled frequency).  ``zero_fiber`` restricts the
    microsupport to the k = 0 fiber; ``ball`` covers the full frequency
    ball (chain sites get the site-wise quantized, symmetrized positive
    part).  Eigendata of every attached mollifier is precomputed for the
    rank-compressed determinant.
    """
    if scope not in ("zero_fiber", "ball"):
        raise ValueError(f"unknown mollifier scope {scope!r}")
    Vc = basis.vander
    Cinv = np.linalg.inv(Vc)
    for b in blocks:
        if b.kind == "fourier0":
            q = mollifier_symbol(freq_scale * basis.fourier_freq() / k0, profile)
            b.Q = np.diag(q)
        elif b.kind == "chain":
            if scope == "zero_fiber":
                b.Q = None
            else:
                chain: Chain = b.meta["chain"]
                d = basis.chain_dim(chain)
                Q = np.zeros((d, d))
                sq = np.sqrt(basis.chain_node_weights(chain))
                sqs = np.sqrt(basis.cc_weights)
                # partition of unity across shared junction nodes
                part = np.ones(basis.N_t)
                for j, site in enumerate(chain.sites):
                    qp = mollifier_symbol(freq_scale * basis.site_freq(site) / k0, profile)
                    if np.max(qp) <= 0.0:
                        continue
                    Qn = Vc @ (qp[:, None] * Cinv)
                    Qn = sqs[:, None] * Qn / sqs[None, :]
                    Qn = _psd_part(Qn)
                    pj = part.copy()
                    if j > 0:
                        pj[0] = 0.5
                    if j < chain.length - 1:
                        pj[-1] = 0.5
                    root = np.sqrt(pj)
                    Qn = root[:, None] * Qn * root[None, :]
                    S = _chain_value_extractor(basis, chain, j)
                    Ss = (sqs[:, None] * S) / sq[None, :]
                    Q += Ss.T @ Qn @ Ss
                if np.max(np.abs(Q)) > 0:
                    # keep the symbol bound: eigenvalues must stay in [0, 1]
                    top = float(np.linalg.eigvalsh(Q).max())
                    if top > 1.0:
                        Q /= top
                    b.Q = Q
                else:
                    b.Q = None
        else:  # dense
            freqs = b.meta["freqs"]
            if scope == "zero_fiber":
                q = np.zeros(b.dim)
                q[:basis.n_fourier] = mollifier_symbol(
                    freq_scale * basis.fourier_freq() / k0, profile)
                b.Q = np.diag(q)
            else:
                raise NotImplementedError("ball mollifier on the dense layout")
        if b.Q is not None:
            lam, U = np.linalg.eigh(b.Q)
            keep = lam > _PSD_CLIP
            b.q_eig = (U[:, keep], lam[keep]) if np.any(keep) else None
            if b.q_eig is None:
                b.Q = None


def weight_multiplier(weight: EscapeWeight, r: float, k_shift: int,
                      t: np.ndarray, kvec: tuple[float, float], nu: np.ndarray,
                      freq_scale: float = 1.0) -> np.ndarray:
    """Left-quantized symbol value (1 + scale |xi|)^(-r m(xi) - k) at
    frequency xi = (kvec, nu), broadcasting t against nu."""
    t = np.asarray(t, dtype=float)
    nu = np.asarray(nu, dtype=float)
    mod = np.hypot(np.hypot(kvec[0], kvec[1]), nu)
    out = np.ones(np.broadcast_shapes(t.shape + (1,), (len(nu),)) if t.ndim else mod.shape)
    tt = np.repeat(t[:, None], len(nu), axis=1) if t.ndim else t
    nz = mod > 0
    if np.any(nz):
        dirs = np.stack([np.broadcast_to(kvec[0], mod.shape),
                         np.broadcast_to(kvec[1], mod.shape),
                         nu * np.ones_like(mod)], axis=-1)
        dirs = dirs / mod[..., None]
        if t.ndim:
            coords = np.zeros((len(t), 3))
            coords[:, 2] = t
            mvals = np.empty((len(t), len(nu)))
            for i in range(len(t)):
                cc = np.tile(coords[i], (int(np.sum(nz)), 1))
                mvals[i, nz] = weight.cutoff_weight(cc, dirs[nz])
                mvals[i, ~nz] = 0.0
            expo = -r * mvals - k_shift
            out = (1.0 + freq_scale * mod[None, :]) ** expo
            out[:, ~nz] = 1.0
            return out
        cc = np.tile([0.0, 0.0, float(tt)], (int(np.sum(nz)), 1))
        mv = np.zeros(mod.shape)
        mv[nz] = weight.cutoff_weight(cc, dirs[nz])
        out = (1.0 + freq_scale * mod) ** (-r * mv - k_shift)
        out[~nz] = 1.0
    return out


def attach_weight(basis: GalerkinBasis, blocks: list[Block], weight: EscapeWeight,
                  r: float, k_shift: int = 0, freq_scale: float = 1.0,
                  cond_limit: float = 1e12) -> float:
    """Attach the left-quantized anisotropic weight to every block.

    Returns the worst block condition number; beyond ``cond_limit`` the
    weighted norms are meaningless and assembly aborts.
    """
    t_four = np.arange(basis.n_fourier) / basis.n_fourier
    worst = 1.0
    for b in blocks:
        if b.kind == "fourier0":
            nu = basis.fourier_modes.astype(float)
            wv = weight_multiplier(weight, r, k_shift, t_four, (0.0, 0.0), nu, freq_scale)
            E = np.exp(TWO_PI * 1j * np.outer(t_four, nu))
            F = E.conj().T / basis.n_fourier
            W = F @ (wv * E)
        elif b.kind == "chain":
            # site-averaged quantization: the roof variation of the symbol
            # is bounded, and averaging it per (site, degree) keeps the
            # weight a coefficient-space multiplier, which is decisive for
            # its conditioning at useful strengths
            chain: Chain = b.meta["chain"]
            d = basis.chain_dim(chain)
            W = np.zeros((d, d), dtype=complex)
            Vc = basis.vander
            Cinv = np.linalg.inv(Vc)
            sqs = np.sqrt(basis.cc_weights)
            Nt = basis.N_t
            t_avg = np.linspace(0.05, 0.95, 7)
            for j, site in enumerate(chain.sites):
                nu = np.arange(Nt) / 2.0
                wv = weight_multiplier(weight, r, k_shift, t_avg, site, nu, freq_scale)
                wbar = np.exp(np.mean(np.log(wv), axis=0))  # geometric mean in t
                Wn = (Vc * wbar[None, :]) @ Cinv
                Wn = sqs[:, None] * Wn / sqs[None, :]
                rows = slice(j * (Nt - 1), (j + 1) * (Nt - 1))
                W[rows, rows] = Wn[1:, 1:]
        else:
            raise NotImplementedError("weight on the dense layout")
        cond = np.linalg.cond(W)
        worst = max(worst, float(cond))
        if cond > cond_limit:
            raise NumericalError(
                f"weight condition number {cond:.2e} exceeds {cond_limit:.0e} on {b.label}")
        b.W = W
        b.Winv = np.linalg.inv(W)
    return worst


# ---------------------------------------------------------------------------
# determinant and derivatives


def det_log(op: OperatorSet, s: complex) -> complex:
    """log det(1 + D(s)) with D = h^{-1} Q (X - h^{-1} Q - s)^{-1}.

    Rank-compressed through the mollifier eigenbasis; blocks without a
    mollifier contribute exactly zero.
    """
    total = 0.0 + 0.0j
    for b in op.blocks:
        if b.q_eig is None:
            continue
        U, lam = b.q_eig
        A = b.mollified(op.h) - s * np.eye(b.dim)
        RU = np.linalg.solve(A, U.astype(complex))
        G = np.eye(len(lam), dtype=complex) + (lam[:, None] / op.h) * (U.T @ RU)
        sign, logabs = np.linalg.slogdet(G)
        total += logabs + np.log(sign)
    return total


def det_value(op: OperatorSet, s: complex) -> complex:
    return np.exp(det_log(op, s))


def det_logderiv(op: OperatorSet, s: complex) -> complex:
    """d/ds log det(1 + D(s)) via the resolvent identity (exact, no FD)."""
    total = 0.0 + 0.0j
    for b in op.blocks:
        if b.q_eig is None:
            continue
        U, lam = b.q_eig
        A = b.mollified(op.h) - s * np.eye(b.dim)
        lu, piv = sla.lu_factor(A)
        RU = sla.lu_solve((lu, piv), U.astype(complex))
        R2U = sla.lu_solve((lu, piv), RU)
        M = U.T @ RU
        M2 = U.T @ R2U
        G = np.eye(len(lam), dtype=complex) + (lam[:, None] / op.h) * M
        total += np.trace(np.linalg.solve(G, (lam[:, None] / op.h) * M2))
    return total


def det_eps_deriv(op: OperatorSet, dX_blocks: list[Block], s: complex) -> complex:
    """Family derivative of the determinant via the trace formula.

    dF/d(eps) = F(s) Tr[(1 + D)^{-1} dD] with dD = -h^{-1} Q R (dX) R
    (the resolvent differentiates to -R (dX) R); evaluated per block
    through the rank compression, stable through resonances (the product
    F (1+D)^{-1} stays bounded).
    """
    logF = det_log(op, s)
    total = 0.0 + 0.0j
    for b, db in zip(op.blocks, dX_blocks):
        if b.q_eig is None:
            continue
        U, lam = b.q_eig
        A = b.mollified(op.h) - s * np.eye(b.dim)
        lu, piv = sla.lu_factor(A)
        RU = sla.lu_solve((lu, piv), U.astype(complex))
        VRU = db.X @ RU
        RVRU = sla.lu_solve((lu, piv), VRU)
        M = U.T @ RU
        N = U.T @ RVRU
        G = np.eye(len(lam), dtype=complex) + (lam[:, None] / op.h) * M
        inner = N @ (np.eye(len(lam)) - np.linalg.solve(G, (lam[:, None] / op.h) * M))
        total -= np.trace((lam[:, None] / op.h) * inner)
    return np.exp(logF) * total


def eps_deriv_trace_norm(op: OperatorSet, dX_blocks: list[Block], s: complex,
                         weighted: bool = True) -> float:
    """Trace norm of the family derivative of D (optionally in the weighted
    geometry).

    d(eps) D = (U lam / h) (U^T R V R) has rank at most rank(Q); the trace
    norm is the singular-value sum of the compressed product.
    """
    total = 0.0
    for b, db in zip(op.blocks, dX_blocks):
        if b.q_eig is None:
            continue
        U, lam = b.q_eig
        A = b.mollified(op.h) - s * np.eye(b.dim)
        lu, piv = sla.lu_factor(A)
        Rfull = sla.lu_solve((lu, piv), np.eye(b.dim, dtype=complex))
        rows = (lam[:, None] / op.h) * (U.T @ (Rfull @ (db.X @ Rfull)))
        left = U.astype(complex)
        if weighted and b.W is not None:
            rows = rows @ b.W
            left = b.Winv @ left
        _, Rl = np.linalg.qr(left)
        sv = np.linalg.svd(Rl @ rows, compute_uv=False)
        total += float(np.sum(sv))
    return total


def bound_check_inverse(op: OperatorSet, s: complex) -> tuple[float, float]:
    """Norm of F (1+D)^{-1} against its trace-norm bound exp(2||D||_Tr) + 1."""
    norm = 1.0
    tr = 0.0
    logF = det_log(op, s)
    for b in op.blocks:
        if b.q_eig is None:
            continue
        U, lam = b.q_eig
        A = b.mollified(op.h) - s * np.eye(b.dim)
        Rfull = np.linalg.solve(A, np.eye(b.dim, dtype=complex))
        rows = (lam[:, None] / op.h) * (U.T @ Rfull)
        sv = np.linalg.svd(rows, compute_uv=False)  # U has orthonormal columns
        tr += float(np.sum(sv))
        G = np.eye(len(lam), dtype=complex) + rows @ U
        corr = U @ np.linalg.solve(G, rows)
        norm = max(norm, float(np.linalg.norm(np.eye(b.dim) - corr, 2)))
    Fnorm = float(np.abs(np.exp(logF)))
    return Fnorm * norm, float(np.exp(2.0 * tr) + 1.0)


# ---------------------------------------------------------------------------
# resolvent control


def resolvent_norm(op: OperatorSet, s: complex, scaled: bool = True,
                   n_iter: int = 40, seed: int = 0) -> float:
    """Operator norm of the resolvent in the weighted geometry.

    ``scaled=True`` measures (h X - Q - s)^{-1} (control-bound form);
    otherwise (X - h^{-1} Q - s)^{-1}.  Power iteration on the inverse
    normal equations, blockwise (the norm of a block-diagonal operator is
    the blockwise maximum).
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for b in op.blocks:
        if scaled:
            A = op.h * b.X - (b.Q if b.Q is not None else 0.0) - s * np.eye(b.dim)
        else:
            A = b.mollified(op.h) - s * np.eye(b.dim)
        if b.W is not None:
            A = b.Winv @ A @ b.W
        try:
            lu, piv = sla.lu_factor(A)
        except np.linalg.LinAlgError as exc:
            raise DiscretizationError(f"singular operator at s={s} on {b.label}") from exc
        z = rng.normal(size=b.dim) + 1j * rng.normal(size=b.dim)
        z /= np.linalg.norm(z)
        lam_est = 0.0
        for _ in range(n_iter):
            y = sla.lu_solve((lu, piv), z, trans=2)  # A^H y = z
            y = sla.lu_solve((lu, piv), y)           # A x = y
            lam_est = np.linalg.norm(y)
            z = y / lam_est
        worst = max(worst, float(np.sqrt(lam_est)))
    return worst


# ---------------------------------------------------------------------------
# zero finding


def _rect_contour(re_lo, re_hi, im_lo, im_hi, n_per_side: int) -> np.ndarray:
    bottom = np.linspace(re_lo, re_hi, n_per_side, endpoint=False) + 1j * im_lo
    right = re_hi + 1j * np.linspace(im_lo, im_hi, n_per_side, endpoint=False)
    top = np.linspace(re_hi, re_lo, n_per_side, endpoint=False) + 1j * im_hi
    left = re_lo + 1j * np.linspace(im_hi, im_lo, n_per_side, endpoint=False)
    return np.concatenate([bottom, right, top, left])


def winding_number(op: OperatorSet, re_lo, re_hi, im_lo, im_hi,
                   n_start: int = 16, tol: float = 0.05, max_double: int = 6) -> int:
    """Zero count (with multiplicity) inside a rectangle.

    Trapezoid quadrature of the exact logarithmic derivative along the
    contour, with node doubling until the estimate is within ``tol`` of an
    integer and stable.
    """
    n = n_start
    prev = None
    while True:
        nodes = _rect_contour(re_lo, re_hi, im_lo, im_hi, n)
        vals = np.array([det_logderiv(op, s) for s in nodes])
        ds = np.roll(nodes, -1) - nodes
        integral = np.sum(vals * ds) / (2j * np.pi)
        est = integral.real
        if abs(est - round(est)) < tol and abs(integral.imag) < tol:
            if prev is not None and round(prev) == round(est):
                return int(round(est))
            prev = est
        n *= 2
        if n > n_start * 2 ** max_double:
            raise NumericalError(
                f"winding number did not stabilize on [{re_lo},{re_hi}]x[{im_lo},{im_hi}]i "
                f"(last estimate {est:.3f}); a zero may sit on the contour")


def _newton_zero(op: OperatorSet, s0: complex, tol: float = 1e-12,
                 max_iter: int = 60) -> complex | None:
    s = s0
    for _ in range(max_iter):
        try:
            ld = det_logderiv(op, s)
        except np.linalg.LinAlgError:
            # the rank block is singular exactly at a determinant zero
            return s
        if ld == 0:
            return None
        step = -1.0 / ld
        s = s + step
        if abs(step) < tol:
            return s
    return None


_SPLIT = 0.5 - 1.0 / (2.0 * np.pi ** 2)  # irrational-ish split ratio


@dataclass(frozen=True)
class Resonance:
    s: complex
    multiplicity: int
    stable: bool = True
    meta: dict = field(default_factory=dict, compare=False)


def find_zeros(op: OperatorSet, box: tuple[float, float, float, float],
               min_cell: float = 5e-3, candidates: np.ndarray | None = None) -> list[Resonance]:
    """All determinant zeros in an open box (re_lo, re_hi, im_lo, im_hi).

    Subdivides until each cell holds at most two zeros, refines with the
    log-derivative Newton iteration (seeded with the cell center or any
    supplied candidates), and certifies each zero's multiplicity with a
    small winding circle.
    """
    re_lo, re_hi, im_lo, im_hi = box
    zeros: list[Resonance] = []
    stack = [(re_lo, re_hi, im_lo, im_hi)]
    while stack:
        a, bb, c, d = stack.pop()
        count = winding_number(op, a, bb, c, d)
        if count == 0:
            continue
        if count <= 2 or max(bb - a, d - c) < min_cell:
            seeds = []
            if candidates is not None:
                inside = candidates[
                    (candidates.real > a) & (candidates.real < bb)
                    & (candidates.imag > c) & (candidates.imag < d)
                ]
                seeds.extend(inside.tolist())
            seeds.append(0.5 * (a + bb) + 0.5j * (c + d))
            found = []
            for seed in seeds:
                z = _newton_zero(op, seed)
                if z is None:
                    continue
                if not (a - 1e-9 <= z.real <= bb + 1e-9 and c - 1e-9 <= z.imag <= d + 1e-9):
                    continue
                if all(abs(z - f) > 1e-8 for f in found):
                    found.append(z)
                if len(found) >= count:
                    break
            mult_total = 0
            for z in found:
                rad = max(1e-6, min(1e-3, 0.25 * min(abs(z - f) for f in found if f != z)
                                    if len(found) > 1 else 1e-3))
                m = winding_number(op, z.real - rad, z.real + rad,
                                   z.imag - rad, z.imag + rad)
                zeros.append(Resonance(s=z, multiplicity=m))
                mult_total += m
            if mult_total != count:
                # unresolved cluster: subdivide further if possible
                if max(bb - a, d - c) >= min_cell:
                    mid_r, mid_i = a + _SPLIT * (bb - a), c + _SPLIT * (d - c)
                    for z in found:
                        zeros.pop()
                    stack.extend([
                        (a, mid_r, c, mid_i), (mid_r, bb, c, mid_i),
                        (a, mid_r, mid_i, d), (mid_r, bb, mid_i, d),
                    ])
                else:
                    raise NumericalError(
                        f"unresolved zero cluster near {0.5 * (a + bb):.4f}+{0.5 * (c + d):.4f}i")
            continue
        # irrational split ratio keeps structured zeros off the cut lines
        mid_r, mid_i = a + _SPLIT * (bb - a), c + _SPLIT * (d - c)
        stack.extend([
            (a, mid_r, c, mid_i), (mid_r, bb, c, mid_i),
            (a, mid_r, mid_i, d), (mid_r, bb, mid_i, d),
        ])
    zeros.sort(key=lambda z: (round(z.s.imag, 6), z.s.real))
    return zeros


def eigen_in_box(op: OperatorSet, box: tuple[float, float, float, float]) -> np.ndarray:
    re_lo, re_hi, im_lo, im_hi = box
    ev = op.eigenvalues()
    keep = (ev.real > re_lo) & (ev.real <= re_hi) & (ev.imag >= im_lo) & (ev.imag <= im_hi)
    return ev[keep]


def match_sets(a: np.ndarray, b: np.ndarray, tol: float) -> bool:
    """Every point of a has a partner in b within tol, and vice versa."""
    if len(a) != len(b):
        return False
    if len(a) == 0:
        return True
    d = np.abs(a[:, None] - b[None, :])
    return bool(np.all(np.min(d, axis=1) <= tol) and np.all(np.min(d, axis=0) <= tol))


@dataclass(frozen=True)
class ResonanceSearch:
    resonances: tuple[Resonance, ...]
    eigen_crosscheck: np.ndarray
    crosscheck_ok: bool
    variations: dict
    box: tuple[float, float, float, float]

    def values(self) -> np.ndarray:
        return np.array([r.s for r in self.resonances])


def find_resonances(make_opset, box: tuple[float, float, float, float],
                    stability_tol: float = 1e-5, crosscheck_tol: float = 1e-6,
                    variations: dict | None = None) -> ResonanceSearch:
    """Determinant zeros in the box, certified against truncation changes.

    ``make_opset`` maps a variation name ("base", "K+4", "Nt+8", "h/2",
    "rk+1") to an OperatorSet; zeros of the base run are kept only when
    every variation reproduces them within ``stability_tol``.  The base
    zero set is cross-validated against the direct block eigensolve.
    """
    base = make_opset("base")
    cands = eigen_in_box(base, box)
    zeros = find_zeros(base, box, candidates=cands)
    base_vals = np.array([z.s for z in zeros])
    var_results = {}
    names = ("K+4", "Nt+8", "h/2", "rk+1") if variations is None else tuple(variations)
    stable_mask = np.ones(len(zeros), dtype=bool)
    for name in names:
        op_v = make_opset(name)
        cand_v = eigen_in_box(op_v, box)
        zv = find_zeros(op_v, box, candidates=cand_v)
        vals = np.array([z.s for z in zv])
        var_results[name] = vals
        for i, z in enumerate(base_vals):
            if len(vals) == 0 or np.min(np.abs(vals - z)) > stability_tol:
                stable_mask[i] = False
    certified = tuple(
        Resonance(s=z.s, multiplicity=z.multiplicity, stable=bool(stable_mask[i]))
        for i, z in enumerate(zeros)
    )
    ok = match_sets(base_vals[stable_mask],
                    _dedupe(cands, crosscheck_tol), crosscheck_tol * 10)
    return ResonanceSearch(resonances=certified, eigen_crosscheck=cands,
                           crosscheck_ok=ok, variations=var_results, box=box)


def _dedupe(vals: np.ndarray, tol: float) -> np.ndarray:
    out: list[complex] = []
    for v in vals:
        if all(abs(v - u) > tol for u in out):
            out.append(v)
    return np.array(out)


# ---------------------------------------------------------------------------
# determinant grid diagnostics


@dataclass(frozen=True)
class DeterminantGrid:
    s_values: np.ndarray
    F_values: np.ndarray
    cr_residual: float
    h: float
    meta: dict = field(default_factory=dict)


def determinant_grid(op: OperatorSet, box: tuple[float, float, float, float],
                     n_re: int = 7, n_im: int = 9, cr_step: float = 5e-4) -> DeterminantGrid:
    """Tabulate the determinant on a grid and verify holomorphy.

    The discrete Cauchy-Riemann residual uses a dedicated tight stencil at
    every grid point, normalized by the local derivative magnitude.
    """
    re_lo, re_hi, im_lo, im_hi = box
    re = np.linspace(re_lo + 1e-3, re_hi - 1e-3, n_re)
    im = np.linspace(im_lo + 1e-3, im_hi - 1e-3, n_im)
    S = (re[:, None] + 1j * im[None, :]).ravel()
    F = np.array([det_value(op, s) for s in S])
    worst = 0.0
    for s in S[:: max(1, len(S) // 24)]:
        fr = (det_value(op, s + cr_step) - det_value(op, s - cr_step)) / (2 * cr_step)
        fi = (det_value(op, s + 1j * cr_step) - det_value(op, s - 1j * cr_step)) / (2 * cr_step)
        # holomorphy: d/d(Re s) F + i d/d(Im s) F ... = 0 reads fi = i fr
        denom = abs(fr) + abs(fi) + 1e-300
        worst = max(worst, abs(fi - 1j * fr) / denom)
    return DeterminantGrid(s_values=S, F_values=F, cr_residual=float(worst), h=op.h)


# ---------------------------------------------------------------------------
# convenience builder


def build_operator_set(mono, X_field: VectorField, K_max: float, N_t: int,
                       h: float, k0: float, scope: str = "zero_fiber",
                       profile: str = "smoothstep", weight: EscapeWeight | None = None,
                       r: float = 0.0, k_shift: int = 0, freq_scale: float = 1.0,
                       basis: GalerkinBasis | None = None) -> OperatorSet:
    """Assemble basis, generator, mollifier and (optionally) weight."""
    from anoflow.basis import assemble_basis

    if basis is None:
        basis = assemble_basis(mono, K_max, N_t)
    blocks = assemble_generator(basis, X_field)
    attach_mollifier(basis, blocks, k0, scope=scope, profile=profile, freq_scale=freq_scale)
    if weight is not None and r != 0.0:
        attach_weight(basis, blocks, weight, r, k_shift, freq_scale=freq_scale)
    return OperatorSet(basis=basis, blocks=blocks, h=h,
                       meta={"K_max": K_max, "N_t": N_t, "k0": k0, "scope": scope,
                             "profile": profile, "r": r, "k_shift": k_shift,
                             "freq_scale": freq_scale, "field": X_field.name})
