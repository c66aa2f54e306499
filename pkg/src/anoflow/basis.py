"""Galerkin basis on the mapping torus.

Functions on the torus expand as sum_k c_k(t) e^{2 pi i k.x} with the roof
identification tying c_k at the top of the cell to c_{B^{-1}k} at the
bottom, B the transpose of the gluing matrix.  The k = 0 coefficient is
1-periodic and carries a Fourier basis in t.  Nonzero lattice modes move
along infinite B-orbits; inside a truncation ball the orbits decompose
into finite chains discretized site by site with Chebyshev-Lobatto
collocation, junction nodes shared between consecutive sites, and the
truncated inflow closed with an absorbing zero (orbits escaping the ball
are recorded, never silently dropped).

Chain blocks are expressed in the quadrature-scaled nodal frame, so plain
transposition is the L^2 adjoint throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from anoflow.torus import Monodromy

TWO_PI = 2.0 * np.pi


def cheb_lobatto(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Chebyshev-Lobatto nodes on [0, 1] (increasing) and d/dt matrix."""
    if n < 4:
        raise ValueError("need at least 4 collocation nodes")
    j = np.arange(n)
    xc = np.cos(np.pi * j / (n - 1))
    c = np.ones(n)
    c[0] = c[-1] = 2.0
    c = c * (-1.0) ** j
    Xm = np.tile(xc, (n, 1)).T
    dX = Xm - Xm.T + np.eye(n)
    D = np.outer(c, 1.0 / c) / dX
    D -= np.diag(D.sum(axis=1))
    t = (1.0 - xc) / 2.0
    Dt = -2.0 * D
    order = np.argsort(t)
    return t[order], Dt[np.ix_(order, order)]


def cheb_vandermonde(t: np.ndarray) -> np.ndarray:
    """V[i, p] = T_p(2 t_i - 1): values of the Chebyshev modes at nodes."""
    x = 2.0 * np.asarray(t) - 1.0
    n = len(t)
    V = np.empty((n, n))
    V[:, 0] = 1.0
    V[:, 1] = x
    for p in range(2, n):
        V[:, p] = 2.0 * x * V[:, p - 1] - V[:, p - 2]
    return V


def clenshaw_curtis(t: np.ndarray) -> np.ndarray:
    """Quadrature weights on the Lobatto nodes, exact for the spanned space."""
    n = len(t)
    V = cheb_vandermonde(t)
    p = np.arange(n).astype(float)
    denom = np.where(p == 1.0, 1.0, 1.0 - p * p)
    moments = np.where(p % 2 == 0, 1.0 / denom, 0.0)
    return np.linalg.solve(V.T, moments)


@dataclass(frozen=True)
class Chain:
    """Maximal in-ball orbit segment, time-ordered along the content flow."""

    sites: tuple[tuple[int, int], ...]
    inflow_truncated: bool
    outflow_truncated: bool

    @property
    def length(self) -> int:
        return len(self.sites)


@dataclass(frozen=True)
class GalerkinBasis:
    """Orbit-closed lattice plus per-site collocation data."""

    mono: Monodromy
    K_max: float
    N_t: int
    n_half: int
    chains: tuple[Chain, ...]
    nodes: np.ndarray          # (N_t,) Lobatto nodes on [0,1]
    D: np.ndarray              # (N_t, N_t) d/dt at the nodes
    cc_weights: np.ndarray     # (N_t,) quadrature weights
    vander: np.ndarray         # (N_t, N_t) Chebyshev values at the nodes
    truncation_boundary: tuple[tuple[int, int], ...] = field(default=())

    @property
    def fourier_modes(self) -> np.ndarray:
        return np.arange(-self.n_half, self.n_half + 1)

    @property
    def n_fourier(self) -> int:
        return 2 * self.n_half + 1

    def chain_dim(self, chain: Chain) -> int:
        return chain.length * (self.N_t - 1)

    @property
    def dim(self) -> int:
        return self.n_fourier + sum(self.chain_dim(c) for c in self.chains)

    def chain_node_weights(self, chain: Chain) -> np.ndarray:
        """Global quadrature weights of the retained chain nodes.

        Retained nodes are, per site, the local nodes 1..N_t-1; a junction
        node (last node of a site with a successor) also carries the first
        quadrature weight of the next site.
        """
        w = np.tile(self.cc_weights[1:], chain.length).astype(float)
        for j in range(chain.length - 1):
            w[(j + 1) * (self.N_t - 1) - 1] += self.cc_weights[0]
        return w

    def site_freq(self, site: tuple[int, int]) -> np.ndarray:
        """|xi| per Chebyshev degree at a lattice site (pseudo-frequency
        p/2 in the roof direction: degree p oscillates p/2 times)."""
        p = np.arange(self.N_t)
        return np.hypot(np.hypot(site[0], site[1]), p / 2.0)

    def fourier_freq(self) -> np.ndarray:
        return np.abs(self.fourier_modes).astype(float)


def assemble_basis(mono: Monodromy, K_max: float, N_t: int) -> GalerkinBasis:
    """Orbit-closed lattice ball with per-site collocation.

    Chains are time-ordered: content flows from a site to its image under
    the inverse transposed monodromy; heads are sites whose predecessor
    already left the ball.  Ordering is lexicographic in the head site, so
    the basis layout is reproducible.
    """
    B = np.round(mono.A).astype(int).T
    Binv = np.round(np.linalg.inv(B)).astype(int)
    if not np.allclose(Binv @ B, np.eye(2)):
        raise ValueError("monodromy transpose is not unimodular")
    r = int(np.floor(K_max))
    in_ball = {}
    for k1 in range(-r, r + 1):
        for k2 in range(-r, r + 1):
            if k1 == k2 == 0:
                continue
            if k1 * k1 + k2 * k2 <= K_max * K_max:
                in_ball[(k1, k2)] = True
    heads = []
    for k in in_ball:
        pred = tuple(B @ np.array(k))
        if pred not in in_ball:
            heads.append(k)
    heads.sort()
    chains = []
    boundary = []
    seen = set()
    for head in heads:
        sites = [head]
        seen.add(head)
        cur = head
        while True:
            nxt = tuple(Binv @ np.array(cur))
            if nxt not in in_ball:
                break
            sites.append(nxt)
            seen.add(nxt)
            cur = nxt
        boundary.append(head)
        boundary.append(cur)
        chains.append(Chain(sites=tuple(sites), inflow_truncated=True, outflow_truncated=True))
    if len(seen) != len(in_ball):
        raise ValueError("lattice orbit decomposition incomplete (cycle in the ball?)")
    nodes, D = cheb_lobatto(N_t)
    w = clenshaw_curtis(nodes)
    V = cheb_vandermonde(nodes)
    n_half = (N_t - 1) // 2
    return GalerkinBasis(
        mono=mono, K_max=float(K_max), N_t=N_t, n_half=n_half, chains=tuple(chains),
        nodes=nodes, D=D, cc_weights=w, vander=V,
        truncation_boundary=tuple(boundary),
    )
