"""Numerical flows on the mapping torus.

Fixed-step classical Runge-Kutta (4th order) on the chart, with roof
crossings located by bisection to 1e-12 and the gluing transport applied
at the seam.  Variational (Jacobian) and cotangent states are propagated
alongside the base point; the projective flow renormalizes the covector in
short legs and accumulates the logarithmic growth stably.

Batched kernels operate on arrays of shape (N, 3); the dataclass wrappers
mirror single-point use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from anoflow.errors import NumericalError
from anoflow.fields import VectorField
from anoflow.torus import Covector, Monodromy, SphereCovector, TangentVector, TorusPoint, normalize

DEFAULT_STEP = 1e-3
FD_STEP = 1e-5
_BISECT_TOL = 1e-12
_LEG_MAX = 0.5


@dataclass(frozen=True)
class FlowJet:
    """Flow endpoint with the accumulated derivative of the flow map."""

    endpoint: TorusPoint
    jacobian: np.ndarray
    elapsed: float


def _rk4(field: VectorField, rhs, state: tuple[np.ndarray, ...], h: np.ndarray):
    """One vectorized RK4 step; ``h`` broadcasts over the batch."""
    k1 = rhs(field, *state)
    s2 = tuple(s + 0.5 * h_ * k for s, k, h_ in zip(state, k1, _hs(h, k1)))
    k2 = rhs(field, *s2)
    s3 = tuple(s + 0.5 * h_ * k for s, k, h_ in zip(state, k2, _hs(h, k2)))
    k3 = rhs(field, *s3)
    s4 = tuple(s + h_ * k for s, k, h_ in zip(state, k3, _hs(h, k3)))
    k4 = rhs(field, *s4)
    return tuple(
        s + (h_ / 6.0) * (a + 2.0 * b + 2.0 * c + d)
        for s, a, b, c, d, h_ in zip(state, k1, k2, k3, k4, _hs(h, k1))
    )


def _hs(h: np.ndarray, ks: tuple[np.ndarray, ...]):
    """Broadcast step sizes against each state component."""
    out = []
    for k in ks:
        h_ = np.asarray(h, dtype=float)
        while h_.ndim < k.ndim:
            h_ = h_[..., None]
        out.append(h_)
    return out


def _rhs_point(field: VectorField, y: np.ndarray):
    return (field(y),)


def _rhs_jet(field: VectorField, y: np.ndarray, J: np.ndarray):
    return field(y), np.einsum("...ij,...jk->...ik", field.jacobian(y), J)


def _rhs_cov(field: VectorField, y: np.ndarray, xi: np.ndarray):
    return field(y), -np.einsum("...ji,...j->...i", field.jacobian(y), xi)


def _rhs_vec(field: VectorField, y: np.ndarray, w: np.ndarray):
    return field(y), np.einsum("...ij,...j->...i", field.jacobian(y), w)


def _seam_apply(mono: Monodromy, kind: str, up: np.ndarray, state: list[np.ndarray]) -> None:
    """Apply the gluing transport in place; ``up`` marks upward crossings."""
    y = state[0]
    A, Ai = mono.A, mono.A_inv
    y[up, :2] = (y[up, :2] @ A.T) % 1.0
    y[up, 2] = 0.0
    dn = ~up
    y[dn, :2] = (y[dn, :2] @ Ai.T) % 1.0
    y[dn, 2] = 1.0
    if kind == "jet":
        J = state[1]
        G_up = mono.glue3(1)
        G_dn = mono.glue3(-1)
        J[up] = np.einsum("ij,njk->nik", G_up, J[up])
        J[dn] = np.einsum("ij,njk->nik", G_dn, J[dn])
    elif kind == "cov":
        xi = state[1]
        G_up = mono.glue3_cot(1)
        G_dn = mono.glue3_cot(-1)
        xi[up] = xi[up] @ G_up.T
        xi[dn] = xi[dn] @ G_dn.T
    elif kind == "vec":
        w = state[1]
        w[up] = w[up] @ mono.glue3(1).T
        w[dn] = w[dn] @ mono.glue3(-1).T


def _advance(mono: Monodromy, field: VectorField, kind: str, state: list[np.ndarray],
             T: float, step: float) -> list[np.ndarray]:
    """Integrate the batch for signed time T with seam handling."""
    if T == 0.0:
        return state
    rhs = {"point": _rhs_point, "jet": _rhs_jet, "cov": _rhs_cov, "vec": _rhs_vec}[kind]
    nsteps = max(1, int(np.ceil(abs(T) / step)))
    h = T / nsteps
    n = state[0].shape[0]
    for _ in range(nsteps):
        rem = np.full(n, h)
        guard = 0
        while True:
            active = np.abs(rem) > 1e-15
            if not np.any(active):
                break
            guard += 1
            if guard > 64:
                raise NumericalError("seam-crossing iteration did not terminate (step too large?)")
            idx = np.flatnonzero(active)
            sub = [s[idx] for s in state]
            trial = _rk4(field, rhs, tuple(sub), rem[idx])
            t_new = trial[0][:, 2]
            inside = (t_new >= 0.0) & (t_new < 1.0)
            ok = idx[inside]
            for s, tr in zip(state, trial):
                s[ok] = tr[inside]
            rem[ok] = 0.0
            cross = idx[~inside]
            if cross.size == 0:
                continue
            # bisect the step fraction at which t hits the boundary
            up_mask = t_new[~inside] >= 1.0
            target = np.where(up_mask, 1.0, 0.0)
            lo = np.zeros(cross.size)
            hi = np.ones(cross.size)
            base = [s[cross] for s in state]
            for _ in range(48):
                mid = 0.5 * (lo + hi)
                t_mid = _rk4(field, rhs, tuple(base), rem[cross] * mid)[0][:, 2]
                over = np.where(up_mask, t_mid >= target, t_mid <= target)
                hi = np.where(over, mid, hi)
                lo = np.where(over, lo, mid)
                if np.max(hi - lo) * np.max(np.abs(rem[cross])) < _BISECT_TOL:
                    break
            frac = 0.5 * (lo + hi)
            partial = _rk4(field, rhs, tuple(base), rem[cross] * frac)
            moved = [np.array(p) for p in partial]
            _seam_apply(mono, kind, up_mask, moved)
            for s, mv in zip(state, moved):
                s[cross] = mv
            rem[cross] = rem[cross] * (1.0 - frac)
        if np.any(~np.isfinite(state[0])):
            raise NumericalError("non-finite flow state")
    return state


def flow_points(mono: Monodromy, field: VectorField, coords: np.ndarray, T: float,
                step: float = DEFAULT_STEP) -> np.ndarray:
    """Flow a batch of chart points for time T."""
    y = np.array(np.atleast_2d(coords), dtype=float)
    (y,) = _advance(mono, field, "point", [y], T, step)
    return y


def flow_jets(mono: Monodromy, field: VectorField, coords: np.ndarray, T: float,
              step: float = DEFAULT_STEP) -> tuple[np.ndarray, np.ndarray]:
    """Flow a batch of points together with d(flow) (3x3 per point)."""
    y = np.array(np.atleast_2d(coords), dtype=float)
    J = np.broadcast_to(np.eye(3), (y.shape[0], 3, 3)).copy()
    y, J = _advance(mono, field, "jet", [y, J], T, step)
    return y, J


def flow_covectors(mono: Monodromy, field: VectorField, coords: np.ndarray, xis: np.ndarray,
                   T: float, step: float = DEFAULT_STEP) -> tuple[np.ndarray, np.ndarray]:
    """Transport covectors by the lifted flow (no renormalization)."""
    y = np.array(np.atleast_2d(coords), dtype=float)
    xi = np.array(np.atleast_2d(xis), dtype=float)
    y, xi = _advance(mono, field, "cov", [y, xi], T, step)
    return y, xi


def flow_sphere(mono: Monodromy, field: VectorField, coords: np.ndarray, dirs: np.ndarray,
                T: float, step: float = DEFAULT_STEP) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Projective lifted flow: unit directions plus accumulated log-growth.

    The covector is renormalized after every leg (length <= 0.5) so the
    growth accumulates without overflow over long horizons.
    """
    y = np.array(np.atleast_2d(coords), dtype=float)
    xi = np.array(np.atleast_2d(dirs), dtype=float)
    norms = np.linalg.norm(xi, axis=-1)
    logs = np.zeros_like(norms)  # growth is 1-homogeneous: start from the direction
    xi /= norms[:, None]
    remaining = T
    sgn = 1.0 if T >= 0 else -1.0
    while abs(remaining) > 1e-15:
        leg = sgn * min(abs(remaining), _LEG_MAX)
        y, xi = _advance(mono, field, "cov", [y, xi], leg, step)
        norms = np.linalg.norm(xi, axis=-1)
        logs += np.log(norms)
        xi /= norms[:, None]
        remaining -= leg
    return y, xi, logs


def flow_tangent_sphere(mono: Monodromy, field: VectorField, coords: np.ndarray, vecs: np.ndarray,
                        T: float, step: float = DEFAULT_STEP) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Projectivized tangent transport: unit vectors plus log-growth."""
    y = np.array(np.atleast_2d(coords), dtype=float)
    w = np.array(np.atleast_2d(vecs), dtype=float)
    norms = np.linalg.norm(w, axis=-1)
    logs = np.zeros_like(norms)
    w /= norms[:, None]
    remaining = T
    sgn = 1.0 if T >= 0 else -1.0
    while abs(remaining) > 1e-15:
        leg = sgn * min(abs(remaining), _LEG_MAX)
        y, w = _advance(mono, field, "vec", [y, w], leg, step)
        norms = np.linalg.norm(w, axis=-1)
        logs += np.log(norms)
        w /= norms[:, None]
        remaining -= leg
    return y, w, logs


def covector_orbit(mono: Monodromy, field: VectorField, coords: np.ndarray, dirs: np.ndarray,
                   t_grid: np.ndarray, step: float = DEFAULT_STEP):
    """Evaluate the projective flow at each time of an increasing (or
    decreasing) grid; returns (coords, dirs, logs) arrays of shape
    (len(t_grid), N, ...).  The grid must be monotone and start anywhere."""
    t_grid = np.asarray(t_grid, dtype=float)
    y = np.array(np.atleast_2d(coords), dtype=float)
    xi = np.array(np.atleast_2d(dirs), dtype=float)
    xi /= np.linalg.norm(xi, axis=-1)[:, None]
    logs = np.zeros(y.shape[0])
    out_y = np.empty((len(t_grid),) + y.shape)
    out_xi = np.empty((len(t_grid),) + xi.shape)
    out_logs = np.empty((len(t_grid), y.shape[0]))
    t_prev = 0.0
    for i, t in enumerate(t_grid):
        dt = t - t_prev
        if dt != 0.0:
            y, xi, dlog = flow_sphere(mono, field, y, xi, dt, step)
            logs = logs + dlog
        out_y[i], out_xi[i], out_logs[i] = y, xi, logs
        t_prev = t
    return out_y, out_xi, out_logs


def evolve(mono: Monodromy, field: VectorField, p: TorusPoint, T: float,
           step: float = DEFAULT_STEP) -> FlowJet:
    """Flow a single point, returning the endpoint and flow derivative."""
    y, J = flow_jets(mono, field, p.coords()[None, :], T, step)
    end = normalize(mono, y[0, :2], float(y[0, 2]))
    det = float(np.linalg.det(J[0]))
    if det <= 0.0:
        raise NumericalError("flow derivative lost orientation (non-orientable gluing?)")
    return FlowJet(endpoint=end, jacobian=J[0], elapsed=T)


def cotangent_lift(mono: Monodromy, field: VectorField, xi: Covector, T: float,
                   step: float = DEFAULT_STEP) -> Covector:
    """Transport a covector by the lifted flow (inverse-transpose law)."""
    y, comp = flow_covectors(mono, field, xi.base.coords()[None, :], xi.components[None, :], T, step)
    end = normalize(mono, y[0, :2], float(y[0, 2]))
    return Covector(end, comp[0])


def projective_flow(mono: Monodromy, field: VectorField, xi: SphereCovector, T: float,
                    step: float = DEFAULT_STEP) -> tuple[SphereCovector, float]:
    """Projective lifted flow of a sphere covector; returns log-growth too."""
    y, d, logs = flow_sphere(mono, field, xi.base.coords()[None, :], xi.components[None, :], T, step)
    end = normalize(mono, y[0, :2], float(y[0, 2]))
    return SphereCovector(end, d[0]), float(logs[0])


def sphere_generator(mono: Monodromy, field: VectorField, coords: np.ndarray, dirs: np.ndarray,
                     h_fd: float = FD_STEP, step: float = DEFAULT_STEP):
    """Generator of the projective lifted flow by central differences.

    Returns (dbase, ddir) arrays; ``ddir`` is tangent to the fiber sphere.
    """
    coords = np.atleast_2d(coords)
    dirs = np.atleast_2d(dirs)
    sub = min(step, h_fd / 4.0)
    yp, xp, _ = flow_sphere(mono, field, coords, dirs, h_fd, sub)
    ym, xm, _ = flow_sphere(mono, field, coords, dirs, -h_fd, sub)
    # base difference needs unwrapping through the seam/torus wrap
    dbase = yp - ym
    dbase[:, :2] -= np.round(dbase[:, :2])
    wrapped = np.abs(dbase[:, 2]) > 0.5
    if np.any(wrapped):
        # crossing within the FD window: fall back to the field value
        dbase[wrapped] = 2.0 * h_fd * field(coords[wrapped])
    dbase /= 2.0 * h_fd
    ddir = (xp - xm) / (2.0 * h_fd)
    ddir -= np.sum(ddir * dirs, axis=-1)[:, None] * dirs
    return dbase, ddir


def generator_gap(mono: Monodromy, field: VectorField, base_field: VectorField,
                  coords: np.ndarray, dirs: np.ndarray, h_fd: float = FD_STEP) -> float:
    """Sup distance between the projective generators of two fields."""
    b1, d1 = sphere_generator(mono, field, coords, dirs, h_fd)
    b0, d0 = sphere_generator(mono, base_field, coords, dirs, h_fd)
    diff = np.sqrt(np.sum((b1 - b0) ** 2, axis=-1) + np.sum((d1 - d0) ** 2, axis=-1))
    return float(np.max(diff))


def suspension_frame_orbit(mono: Monodromy, tau: np.ndarray, comps: np.ndarray,
                           t_nodes: np.ndarray) -> np.ndarray:
    """Closed-form lifted orbit of the pure suspension in the dual frame.

    ``comps`` holds (alpha, sigma, gamma) components with respect to the
    orthonormal dual frame (expanding, contracting, roof); the transport
    over n roof crossings scales them by (lam^n, lam^-n, 1).  Returns an
    array of shape (N, M, 3) of unit frame components at each node of
    ``t_nodes`` (shape (M,)), vectorized without time stepping.

    Only valid for the exact suspension field; used as the fast path for
    escape-function quadrature and as an oracle for integrator tests.
    """
    if mono.lam_u <= 0:
        raise NumericalError("closed-form orbit requires a positive expanding eigenvalue")
    tau = np.asarray(tau, dtype=float)[:, None]
    t_nodes = np.asarray(t_nodes, dtype=float)[None, :]
    n_cross = np.floor(tau + t_nodes)  # tau in [0,1): floor(tau) = 0
    loglam = np.log(abs(mono.lam_u))
    a = comps[:, 0][:, None] * np.exp(n_cross * loglam)
    s = comps[:, 1][:, None] * np.exp(-n_cross * loglam)
    g = np.broadcast_to(comps[:, 2][:, None], a.shape)
    out = np.stack([a, s, g], axis=-1)
    out /= np.linalg.norm(out, axis=-1)[..., None]
    return out
