"""Invariant splitting, dual covector frames, hyperbolicity constants,
sink/source verification and trapped-cone construction.

Frame conventions
-----------------
The tangent splitting is span{e0} + span{eu} + span{es} with e0 = X/|X|,
``eu`` expanding and ``es`` contracting under the flow derivative.  The dual
frames are assigned by their pairing:

* ``f_u`` annihilates span{X, eu} (pairs with ``es``); it expands under the
  lifted flow and its line field is the projective attractor (the sink).
* ``f_s`` annihilates span{X, es} (pairs with ``eu``); it contracts and is
  the projective repeller (the source).
* ``f_0`` annihilates span{eu, es}, normalized with <f_0, X> > 0.

All angles and norms use the flat chart metric; reported constants record
that convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from anoflow.errors import DegenerateFrameError, NotUniformlyHyperbolicError, VerificationError
from anoflow.fields import VectorField
from anoflow.flow import (
    DEFAULT_STEP,
    covector_orbit,
    flow_points,
    flow_sphere,
    flow_tangent_sphere,
)
from anoflow.torus import Cone, Monodromy, base_distance, chart_grid, dist_to_line, line_angle

SPLIT_STEP = 5e-3  # integrator step for power iteration (fields are smooth)
ANGLE_FLOOR = 1e-3


@dataclass(frozen=True)
class Splitting:
    """Unit frames of the invariant splitting over a chart grid."""

    grid: np.ndarray
    e0: np.ndarray
    eu: np.ndarray
    es: np.ndarray
    invariance_residual: float

    def nearest(self, coords: np.ndarray) -> np.ndarray:
        coords = np.atleast_2d(coords)
        d = base_distance(coords[:, None, :2], coords[:, None, 2],
                          self.grid[None, :, :2], self.grid[None, :, 2])
        return np.argmin(d, axis=1)


@dataclass(frozen=True)
class DualSplitting:
    """Unit dual frames and the dual-basis companion for decompositions."""

    grid: np.ndarray
    f_u: np.ndarray
    f_s: np.ndarray
    f_0: np.ndarray
    primal: Splitting
    theta_min: float

    def nearest(self, coords: np.ndarray) -> np.ndarray:
        return self.primal.nearest(coords)

    def frames_at(self, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = self.nearest(coords)
        return self.f_u[idx], self.f_s[idx], self.f_0[idx]


@dataclass(frozen=True)
class HyperbolicConstants:
    """Contraction data of the splitting.

    ``C`` is the prefactor on integer horizons (conformal systems give 1);
    ``C_cont`` is the continuous-time prefactor, which for suspension flows
    carries the staircase factor from seam-concentrated contraction and is
    the constant that downstream neighborhood-time estimates must use.
    """

    C: float
    beta: float
    C_prime: float
    beta_prime: float
    theta_min: float
    Lam: float
    C_cont: float = 1.0
    metric: str = "flat-chart"
    beta_table: tuple[tuple[float, float], ...] = ()

    def as_dict(self) -> dict:
        return {
            "C": self.C,
            "beta": self.beta,
            "C_prime": self.C_prime,
            "beta_prime": self.beta_prime,
            "theta_min": self.theta_min,
            "Lam": self.Lam,
            "C_cont": self.C_cont,
            "metric": self.metric,
            "beta_table": [list(row) for row in self.beta_table],
        }


def compute_splitting(mono: Monodromy, X: VectorField, grid: int | np.ndarray = 12,
                      T_iter: float | None = None, step: float = SPLIT_STEP,
                      osc_tol: float = 1e-6) -> Splitting:
    """Power iteration for the expanding/contracting frames.

    The expanding direction at p is the pushed-forward limit of a generic
    tangent vector seeded at the backward point phi_{-T}(p); the contracting
    direction is obtained the same way in reversed time.  Directions are
    renormalized leg by leg.  Oscillation between the final two horizon
    values beyond ``osc_tol`` raises :class:`NotUniformlyHyperbolicError`.
    """
    coords = chart_grid(grid) if isinstance(grid, int) else np.atleast_2d(np.asarray(grid, dtype=float))
    if T_iter is None:
        T_iter = 20.0 / np.log(abs(mono.lam_u))
    n = coords.shape[0]
    vals = X(coords)
    speeds = np.linalg.norm(vals, axis=-1)
    if np.min(speeds) <= 0:
        raise NotUniformlyHyperbolicError("vector field vanishes on the grid")
    e0 = vals / speeds[:, None]

    probe = np.tile(np.array([0.618, 0.786, 0.414]) / np.linalg.norm([0.618, 0.786, 0.414]), (n, 1))

    def forward_limit(sign: float) -> np.ndarray:
        # seed at phi_{-sign*T}(p), push to p, with a shorter check horizon
        seed = flow_points(mono, X, coords, -sign * T_iter, step)
        out = {}
        for frac in (1.0 - 1.5 / T_iter, 1.0):
            _, w, _ = flow_tangent_sphere(mono, X, seed, probe, sign * T_iter * frac, step)
            if frac != 1.0:
                # re-anchor: continue from the intermediate point to p
                y_mid = flow_points(mono, X, seed, sign * T_iter * frac, step)
                _, w_end, _ = flow_tangent_sphere(mono, X, y_mid, w, sign * T_iter * (1.0 - frac), step)
                out["prev"] = w_end
            else:
                out["final"] = w
        osc = np.max(line_angle(out["prev"], out["final"]))
        if osc > osc_tol:
            raise NotUniformlyHyperbolicError(
                f"direction oscillation {osc:.2e} between successive horizons; "
                "not uniformly hyperbolic at this resolution")
        return out["final"]

    eu = forward_limit(+1.0)
    es = forward_limit(-1.0)

    # orientation convention: positive pairing with the monodromy eigenvectors
    for frame, ref in ((eu, mono.v_u), (es, mono.v_s)):
        s = np.sign(frame[:, :2] @ ref)
        s[s == 0] = 1.0
        frame *= s[:, None]

    # frame volume floor
    vol = np.abs(np.einsum("ni,ni->n", e0, np.cross(eu, es)))
    if np.min(vol) < np.sin(ANGLE_FLOOR) ** 2:
        raise DegenerateFrameError("splitting frame is numerically degenerate")

    # push-forward invariance residual over one time unit
    y1, w1, _ = flow_tangent_sphere(mono, X, coords, eu, 1.0, step)
    idx = _nearest_index(coords, y1)
    resid = np.max(line_angle(w1, eu[idx]))
    return Splitting(grid=coords, e0=e0, eu=eu, es=es, invariance_residual=float(resid))


def _nearest_index(grid: np.ndarray, coords: np.ndarray) -> np.ndarray:
    d = base_distance(coords[:, None, :2], coords[:, None, 2],
                      grid[None, :, :2], grid[None, :, 2])
    return np.argmin(d, axis=1)


def dual_splitting(S: Splitting) -> DualSplitting:
    """Solve the annihilator conditions for the dual frames.

    Each dual frame is the unit normal of the plane spanned by the two
    primal directions it must annihilate; orientation follows the primal
    pairing (see module docstring).
    """
    f_u = np.cross(S.e0, S.eu)
    f_s = np.cross(S.e0, S.es)
    f_0 = np.cross(S.eu, S.es)
    frames = []
    for f in (f_u, f_s, f_0):
        norms = np.linalg.norm(f, axis=-1)
        if np.min(norms) < np.sin(ANGLE_FLOOR):
            raise DegenerateFrameError("dual frame degenerate: primal angles below floor")
        frames.append(f / norms[:, None])
    f_u, f_s, f_0 = frames
    # sign conventions: <f_0, e0> > 0, <f_u, es> > 0, <f_s, eu> > 0
    for f, ref in ((f_0, S.e0), (f_u, S.es), (f_s, S.eu)):
        s = np.sign(np.sum(f * ref, axis=-1))
        s[s == 0] = 1.0
        f *= s[:, None]
    theta = _min_angle(f_u, f_s, f_0)
    theta = min(theta, _min_angle(S.e0, S.eu, S.es))
    if theta < ANGLE_FLOOR:
        raise DegenerateFrameError(f"frame angle {theta:.2e} below floor {ANGLE_FLOOR:.0e}")
    return DualSplitting(grid=S.grid, f_u=f_u, f_s=f_s, f_0=f_0, primal=S, theta_min=float(theta))


def _min_angle(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    out = np.inf
    for u, v in ((a, b), (a, c), (b, c)):
        ang = np.arccos(np.clip(np.abs(np.sum(u * v, axis=-1)), -1, 1))
        out = min(out, float(np.min(ang)))
    return out


def decompose_covector(coords: np.ndarray, xi: np.ndarray, D: DualSplitting):
    """Split covectors into their (source, sink, flow) dual components.

    Returns (xi_s, xi_u, xi_0) with exact reconstruction xi_s + xi_u + xi_0
    = xi; frames are looked up at the nearest grid point.
    """
    coords = np.atleast_2d(coords)
    xi = np.atleast_2d(xi)
    f_u, f_s, f_0 = D.frames_at(coords)
    M = np.stack([f_u, f_s, f_0], axis=-1)  # columns are the frame
    coef = np.linalg.solve(M, xi[..., None])[..., 0]
    xi_u = coef[:, 0:1] * f_u
    xi_s = coef[:, 1:2] * f_s
    xi_0 = coef[:, 2:3] * f_0
    return xi_s, xi_u, xi_0


def estimate_constants(mono: Monodromy, X: VectorField, S: Splitting,
                       horizons: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0),
                       step: float = SPLIT_STEP, grid_n_jac: int = 16,
                       subsample: int = 64) -> HyperbolicConstants:
    """Contraction rate and prefactor of the splitting, plus frame data.

    beta is the backward contraction rate of the expanding frame (and the
    forward contraction of the contracting frame, whichever is worse),
    extrapolated from the largest horizon; C is the smallest prefactor
    making the exponential bound hold on a quarter-unit time grid.
    """
    idx = np.linspace(0, len(S.grid) - 1, min(subsample, len(S.grid))).astype(int)
    coords = S.grid[idx]
    rates = []
    for T in horizons:
        _, _, logs_u = flow_tangent_sphere(mono, X, coords, S.eu[idx], -T, step)
        _, _, logs_s = flow_tangent_sphere(mono, X, coords, S.es[idx], T, step)
        worst = max(float(np.max(logs_u)), float(np.max(logs_s)))
        rates.append((T, worst / T))
    beta = -rates[-1][1]
    if beta <= 0:
        raise NotUniformlyHyperbolicError(f"non-positive contraction rate {beta:.3e}")
    # prefactors: integer horizons (seam contraction completes each period)
    # and a quarter-unit grid for the continuous-time staircase constant
    tgrid = np.arange(1, int(horizons[-1] * 4) + 1) * 0.25
    C = 1.0
    C_cont = 1.0
    y_u, w_u = coords.copy(), S.eu[idx].copy()
    y_s, w_s = coords.copy(), S.es[idx].copy()
    acc_u = np.zeros(len(coords))
    acc_s = np.zeros(len(coords))
    t_prev = 0.0
    for t in tgrid:
        dt = t - t_prev
        y_u, w_u, dl = flow_tangent_sphere(mono, X, y_u, w_u, -dt, step)
        acc_u += dl
        y_s, w_s, dl = flow_tangent_sphere(mono, X, y_s, w_s, dt, step)
        acc_s += dl
        worst = max(float(np.max(np.exp(beta * t + acc_u))), float(np.max(np.exp(beta * t + acc_s))))
        C_cont = max(C_cont, worst)
        if abs(t - round(t)) < 1e-12:
            C = max(C, worst)
        t_prev = t
    Lam = float(np.max(np.linalg.norm(X.jacobian(chart_grid(grid_n_jac)), ord=2, axis=(-2, -1))))
    theta = _min_angle(S.e0, S.eu, S.es)
    return HyperbolicConstants(
        C=float(C), beta=float(beta), C_prime=float("nan"), beta_prime=float("nan"),
        theta_min=float(theta), Lam=Lam, C_cont=float(C_cont), beta_table=tuple(rates),
    )


@dataclass(frozen=True)
class SinkReport:
    C_prime: float
    beta_prime: float
    converges: bool
    is_sink: bool
    final_distance: float
    n_samples: int
    horizon: float


def _cone_samples(rng: np.random.Generator, cone: Cone, per_point: int,
                  include_axis: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Random unit covectors inside a cone (both signs of the axis).

    With ``include_axis`` the first sample at every grid point is the cone
    axis itself, so certificates cannot miss the invariant line.
    """
    coords = np.repeat(cone.base_points, per_point, axis=0)
    ctr = np.repeat(cone.centers, per_point, axis=0)
    m = len(ctr)
    # random tangent direction at each center
    raw = rng.normal(size=(m, 3))
    raw -= np.sum(raw * ctr, axis=-1)[:, None] * ctr
    raw /= np.maximum(np.linalg.norm(raw, axis=-1)[:, None], 1e-300)
    ang = cone.half_angle * np.sqrt(rng.uniform(0.0, 1.0, size=m))
    if include_axis:
        ang[::per_point] = 0.0
    dirs = np.cos(ang)[:, None] * ctr + np.sin(ang)[:, None] * raw
    sign = np.where(rng.uniform(size=m) < 0.5, 1.0, -1.0)
    return coords, dirs * sign[:, None]


def verify_sink(mono: Monodromy, X: VectorField, U: Cone, horizon: float = 8.0,
                per_point: int = 8, step: float = SPLIT_STEP, seed: int = 2024,
                conv_tol: float = 1e-3, n_times: int = 8) -> SinkReport:
    """Fit the worst-case exponential growth over a cone and test attraction.

    Growth constants certify |Phi_t xi| >= (1/C') e^{beta' t} |xi| on the
    sampled set; convergence means the projective distance to the cone axis
    drops below ``conv_tol`` by the horizon.  A non-positive fitted rate
    reports ``is_sink=False`` (the cone is rejected).
    """
    rng = np.random.default_rng(seed)
    coords, dirs = _cone_samples(rng, U, per_point, include_axis=True)
    t_grid = np.linspace(horizon / n_times, horizon, n_times)
    ys, ds, logs = covector_orbit(mono, X, coords, dirs, t_grid, step)
    # per-sample least-squares slope of log growth
    tbar = t_grid - t_grid.mean()
    slopes = (tbar[:, None] * (logs - logs.mean(axis=0))).sum(axis=0) / (tbar @ tbar)
    beta_p = float(np.min(slopes))
    is_sink = beta_p > 0
    if is_sink:
        C_p = float(np.max(np.exp(beta_p * t_grid)[:, None] / np.exp(logs)))
        C_p = max(C_p, 1.0)
    else:
        C_p = float("inf")
    # projective attraction toward the cone axis
    ctr = U.nearest_center(ys[-1].reshape(-1, 3)).reshape(ds[-1].shape)
    ang_T = dist_to_line(ds[-1], ctr)
    final = float(np.max(ang_T))
    return SinkReport(
        C_prime=C_p, beta_prime=beta_p, converges=bool(is_sink and final <= conv_tol),
        is_sink=is_sink, final_distance=final, n_samples=len(coords), horizon=horizon,
    )


@dataclass(frozen=True)
class TrappedReport:
    radii: tuple[float, ...]
    growth_min: float
    growth_ok: bool
    n_steps: int


def trapped_cone(mono: Monodromy, X: VectorField, V2: Cone, V1: Cone,
                 horizon: float = 1.0, n_steps: int = 20, per_point: int = 10,
                 step: float = SPLIT_STEP, seed: int = 55,
                 require_growth: float = 2.0) -> tuple[Cone, TrappedReport]:
    """Shrink an invariant cone onto the attracting covector line bundle.

    Iterates the lifted flow over ``n_steps`` legs of length ``horizon``;
    at each leg the cone axis field is updated from the transported axis
    and the radius from the worst transported boundary sample.  Containment
    failures raise :class:`VerificationError` carrying the violation locus;
    sampled norm growth below ``require_growth`` per leg is reported.
    """
    if not np.all(V1.half_angle < V2.half_angle):
        raise ValueError("V1 must be strictly inside V2")
    rng = np.random.default_rng(seed)
    centers = V2.centers.copy()
    bases = V2.base_points.copy()
    radius = V2.half_angle
    radii = []
    growth_min = np.inf
    for it in range(n_steps):
        cone_it = Cone(bases, centers, radius)
        coords, dirs = _cone_samples(rng, cone_it, per_point)
        # boundary samples stress containment hardest
        ctr = cone_it.nearest_center(coords)
        tang = dirs - np.sum(dirs * ctr, axis=-1)[:, None] * ctr
        nrm = np.linalg.norm(tang, axis=-1)
        ok = nrm > 1e-12
        bnd = dirs.copy()
        bnd[ok] = np.cos(radius) * np.sign(np.sum(dirs * ctr, axis=-1))[ok, None] * ctr[ok] \
            + np.sin(radius) * (tang[ok] / nrm[ok, None])
        y2, d2, logs = flow_sphere(mono, X, coords, bnd, horizon, step)
        growth_min = min(growth_min, float(np.min(np.exp(logs))))
        # transported axis field
        yc, dc, _ = flow_sphere(mono, X, bases, centers, horizon, step)
        idx = _nearest_index(bases, yc)
        new_centers = centers.copy()
        new_centers[idx] = np.sign(np.sum(dc * centers[idx], axis=-1))[:, None] * dc
        new_centers /= np.linalg.norm(new_centers, axis=-1)[:, None]
        ctr2 = new_centers[_nearest_index(bases, y2)]
        ang = dist_to_line(d2, ctr2)
        new_radius = float(np.max(ang)) * 1.02 + 1e-9
        if new_radius > V2.half_angle:
            bad = ang > V2.half_angle
            raise VerificationError(
                f"cone containment violated at step {it}: radius {new_radius:.3f} "
                f"exceeds {V2.half_angle:.3f} at {int(np.sum(bad))} samples "
                f"(first at {y2[bad][0] if np.any(bad) else None})")
        centers = new_centers
        radius = min(new_radius, radius)
        radii.append(radius)
    report = TrappedReport(
        radii=tuple(radii), growth_min=growth_min,
        growth_ok=bool(growth_min > require_growth ** horizon),
        n_steps=n_steps,
    )
    return Cone(bases, centers, radius), report
