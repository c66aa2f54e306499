"""Resonance continuation along perturbation families and spectral
projectors by contour quadrature.

Tracking relies on constancy of the winding number on contours where the
determinant stays bounded away from zero; projectors integrate the plain
(unmollified) resolvent of the generator, which exists off the spectrum at
the truncated level.  Projector identities (idempotency, rank, derivative
splitting) are similarity-invariant, so they are evaluated on the working
basis; the weighted-space statements follow by conjugation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from anoflow.errors import ContourCrossingError, NumericalError, VerificationError
from anoflow.spectra import Block, OperatorSet, det_log, det_logderiv, _newton_zero


@dataclass(frozen=True)
class ContourSpec:
    """Closed circular contour with trapezoid quadrature nodes."""

    center: complex
    radius: float
    n_nodes: int = 64

    def nodes(self, n: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes and d(s) weights for (1/2 pi i) int f(s) ds."""
        m = n or self.n_nodes
        theta = 2.0 * np.pi * np.arange(m) / m
        s = self.center + self.radius * np.exp(1j * theta)
        ds = 1j * self.radius * np.exp(1j * theta) * (2.0 * np.pi / m)
        return s, ds


def count_zeros(op: OperatorSet, contour: ContourSpec, floor: float = 1e-12,
                tol: float = 0.05, max_double: int = 6) -> tuple[int, float]:
    """Winding number of the determinant along the contour.

    Returns (count, min |F| on the nodes); a determinant magnitude below
    ``floor`` rejects the contour (the caller must move it).
    """
    n = contour.n_nodes
    prev = None
    while True:
        s, ds = contour.nodes(n)
        min_abs = float(np.min(np.abs(np.exp([det_log(op, si) for si in s]))))
        if min_abs < floor:
            raise VerificationError(
                f"determinant magnitude {min_abs:.2e} below floor on the contour; move it")
        vals = np.array([det_logderiv(op, si) for si in s])
        integral = np.sum(vals * ds) / (2j * np.pi)
        est = integral.real
        if abs(est - round(est)) < tol and abs(integral.imag) < tol:
            if prev is not None and round(prev) == round(est):
                return int(round(est)), min_abs
            prev = est
        n *= 2
        if n > contour.n_nodes * 2 ** max_double:
            raise NumericalError("contour winding did not stabilize")


@dataclass
class ResonancePath:
    """Continued resonance positions over a parameter grid."""

    eps_grid: np.ndarray
    positions: np.ndarray          # (n_eps, n_res) complex
    multiplicities: tuple[int, ...]
    det_floor: float               # certified min |F| on all contours
    second_difference: float       # smoothness diagnostic
    meta: dict = field(default_factory=dict)


def track(make_opset, eps_grid: np.ndarray, initial: np.ndarray, delta: float,
          det_floor_frac: float = 0.5, max_halvings: int = 8) -> ResonancePath:
    """Continue determinant zeros along a family.

    ``make_opset(eps)`` builds the operator set at a parameter value.  Each
    resonance is enclosed in a disk of radius ``delta``; at every step the
    winding count on each disk must match the starting multiplicity and
    the determinant must stay above ``det_floor_frac`` times its starting
    floor on the contour.  On a count change the step is halved (up to
    ``max_halvings``) before reporting a contour crossing.
    """
    eps_grid = np.asarray(eps_grid, dtype=float)
    initial = np.atleast_1d(np.asarray(initial, dtype=complex))
    op0 = make_opset(float(eps_grid[0]))
    mult0 = []
    floor0 = np.inf
    for z in initial:
        cnt, mn = count_zeros(op0, ContourSpec(z, delta))
        mult0.append(cnt)
        floor0 = min(floor0, mn)
    if any(m == 0 for m in mult0):
        raise VerificationError("an initial disk contains no resonance")
    positions = np.empty((len(eps_grid), len(initial)), dtype=complex)
    current = initial.copy()
    for i, eps in enumerate(eps_grid):
        op = make_opset(float(eps))
        step_ok = False
        trial = current.copy()
        for z_i, z in enumerate(current):
            cnt, mn = count_zeros(op, ContourSpec(z, delta))
            if cnt != mult0[z_i] or mn < det_floor_frac * floor0:
                # halve towards the previous parameter value
                prev_eps = eps_grid[i - 1] if i > 0 else eps_grid[0]
                lo, hi = prev_eps, eps
                ok = False
                for _ in range(max_halvings):
                    mid = 0.5 * (lo + hi)
                    op_mid = make_opset(float(mid))
                    cnt_m, _ = count_zeros(op_mid, ContourSpec(z, delta))
                    if cnt_m == mult0[z_i]:
                        z_mid = _newton_zero(op_mid, z)
                        if z_mid is not None:
                            z = z_mid
                        lo = mid
                    else:
                        hi = mid
                cnt, mn = count_zeros(op, ContourSpec(z, delta))
                if cnt != mult0[z_i]:
                    raise ContourCrossingError(
                        f"resonance count changed near eps={eps:g} around {z:.4f}")
            zn = _newton_zero(op, z)
            if zn is None or abs(zn - z) > delta:
                raise ContourCrossingError(
                    f"refinement left the tracking disk at eps={eps:g}")
            trial[z_i] = zn
        # nearest-neighbor matching guard: keep labels if separation allows
        if len(initial) > 1:
            gaps = np.abs(current[:, None] - current[None, :]) + np.eye(len(initial)) * 1e9
            min_gap = float(np.min(gaps))
            move = np.abs(trial - current)
            if np.any(move > 0.5 * min_gap):
                raise ContourCrossingError("step larger than half the minimal gap; refine eps grid")
        current = trial
        positions[i] = current
        step_ok = True
        del step_ok
    if len(eps_grid) >= 3:
        d2 = np.abs(np.diff(positions, n=2, axis=0))
        second_difference = float(np.max(d2))
    else:
        second_difference = 0.0
    return ResonancePath(
        eps_grid=eps_grid, positions=positions, multiplicities=tuple(mult0),
        det_floor=float(floor0), second_difference=second_difference,
    )


# ---------------------------------------------------------------------------
# spectral projectors


def _block_resolvent_sum(b: Block, contour: ContourSpec, n: int,
                         direction: Block | None = None) -> np.ndarray:
    """(1/2 pi i) sum_j w_j (s_j - X)^{-1} [dX (s_j - X)^{-1}] over nodes."""
    s, ds = contour.nodes(n)
    out = np.zeros((b.dim, b.dim), dtype=complex)
    eye = np.eye(b.dim, dtype=complex)
    for sj, dsj in zip(s, ds):
        A = sj * eye - b.X
        try:
            lu, piv = sla.lu_factor(A)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"resolvent solve failed at contour node {sj}") from exc
        R = sla.lu_solve((lu, piv), eye)
        term = R if direction is None else R @ (direction.X @ R)
        out += (dsj / (2j * np.pi)) * term
    return out


@dataclass(frozen=True)
class ProjectorReport:
    projector: list[np.ndarray]
    rank: int
    idempotency_defect: float
    trace: complex
    nodes_used: int
    contour: ContourSpec

    def apply(self, vec_blocks: list[np.ndarray]) -> list[np.ndarray]:
        return [P @ v for P, v in zip(self.projector, vec_blocks)]


def projector(op: OperatorSet, contour: ContourSpec, tol: float = 1e-8,
              max_double: int = 4) -> ProjectorReport:
    """Contour projector of the generator (no mollifier), blockwise.

    Trapezoid nodes are doubled until the projector stabilizes to ``tol``;
    rank is the count of near-unit eigenvalues, cross-checkable against the
    contour winding count.
    """
    n = contour.n_nodes
    P = [_block_resolvent_sum(b, contour, n) for b in op.blocks]
    for _ in range(max_double):
        P2 = [_block_resolvent_sum(b, contour, 2 * n) for b in op.blocks]
        diff = max(float(np.linalg.norm(a - bb, 2)) for a, bb in zip(P, P2))
        P = P2
        n *= 2
        if diff <= tol:
            break
    rank = 0
    trace = 0.0 + 0.0j
    defect = 0.0
    for Pb in P:
        ev = np.linalg.eigvals(Pb)
        rank += int(np.sum(np.abs(ev - 1.0) < 0.5))
        trace += np.trace(Pb)
        defect = max(defect, float(np.linalg.norm(Pb @ Pb - Pb, 2)))
    return ProjectorReport(projector=P, rank=rank, idempotency_defect=defect,
                           trace=trace, nodes_used=n, contour=contour)


@dataclass(frozen=True)
class ProjectorDerivativeReport:
    formula_vs_fd: float
    identity_defect: float
    numerical_rank: int
    third_singular_ratio: float
    fd_consistency: tuple[float, float]


def projector_derivative_check(make_blocks, eps: float, contour: ContourSpec,
                               h_eps: float = 1e-3, tol_nodes: float = 1e-8) -> ProjectorDerivativeReport:
    """Compare the contour formula for the parameter derivative of the
    projector against central differences, and verify the splitting
    identity dP = P dP + dP P.

    ``make_blocks(eps)`` returns (generator blocks, direction blocks).
    """
    blocks0, dirs0 = make_blocks(eps)
    op0 = OperatorSet(basis=None, blocks=blocks0, h=1.0)
    rep0 = projector(op0, contour, tol=tol_nodes)
    n = rep0.nodes_used
    D1 = [
        _block_resolvent_sum(b, contour, n, direction=db)
        for b, db in zip(blocks0, dirs0)
    ]
    scale = max(max(float(np.linalg.norm(d, 2)) for d in D1), 1e-30)

    def proj_at(e):
        bl, _ = make_blocks(e)
        return projector(OperatorSet(basis=None, blocks=bl, h=1.0), contour, tol=tol_nodes)

    fd_errs = []
    for h in (h_eps, h_eps / 10.0):
        Pp = proj_at(eps + h)
        Pm = proj_at(eps - h)
        D2 = [(a - bb) / (2.0 * h) for a, bb in zip(Pp.projector, Pm.projector)]
        fd_errs.append(max(float(np.linalg.norm(a - bb, 2)) for a, bb in zip(D1, D2)) / scale)
    identity = 0.0
    sv_all = []
    for Pb, Db in zip(rep0.projector, D1):
        identity = max(identity, float(np.linalg.norm(Db - Pb @ Db - Db @ Pb, 2)))
        sv_all.append(np.linalg.svd(Db, compute_uv=False))
    sv = np.sort(np.concatenate(sv_all))[::-1]
    num_rank = int(np.sum(sv > 1e-8 * sv[0])) if sv[0] > 0 else 0
    third_ratio = float(sv[2] / sv[0]) if len(sv) > 2 and sv[0] > 0 else 0.0
    return ProjectorDerivativeReport(
        formula_vs_fd=fd_errs[0], identity_defect=identity / scale,
        numerical_rank=num_rank, third_singular_ratio=third_ratio,
        fd_consistency=(fd_errs[0], fd_errs[1]),
    )
