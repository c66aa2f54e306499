"""Geometry of the mapping torus of a hyperbolic toral automorphism.

The manifold is the quotient of T^2 x [0, 1] by the identification
(x, 1) ~ (A x mod 1, 0) for an integer matrix A with |det A| = 1 and no
eigenvalue on the unit circle.  All charts use coordinates (x1, x2, t) in
the fundamental domain [0,1)^2 x [0,1); crossing the roof applies A to the
base point, A to tangent components and A^{-T} to cotangent components.

The metric is the flat chart metric: Euclidean on fibers, Euclidean with
torus wrap-around on the base.  Distances between sphere covectors at
different bases are the sum of base and angular distance.  Constants
derived elsewhere are always reported together with this convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_EIG_TOL = 1e-12


@dataclass(frozen=True)
class Monodromy:
    """Gluing matrix of the mapping torus with its eigen-decomposition.

    Attributes
    ----------
    A : (2, 2) integer ndarray
        Base automorphism; must satisfy det A = +-1 and |trace| > 2.
    lam_u, lam_s : float
        Expanding / contracting eigenvalues, |lam_u| > 1 > |lam_s|.
    v_u, v_s : (2,) ndarray
        Unit eigenvectors for lam_u, lam_s.
    """

    A: np.ndarray
    lam_u: float = field(init=False)
    lam_s: float = field(init=False)
    v_u: np.ndarray = field(init=False)
    v_s: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        A = np.asarray(self.A, dtype=float)
        if A.shape != (2, 2):
            raise ValueError("monodromy matrix must be 2x2")
        if not np.allclose(A, np.round(A)):
            raise ValueError("monodromy matrix must have integer entries")
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        if abs(abs(det) - 1.0) > _EIG_TOL:
            raise ValueError("monodromy matrix must have det = +-1")
        w, V = np.linalg.eig(A)
        if np.max(np.abs(np.imag(w))) > 0 or np.max(np.abs(np.abs(w) - 1.0)) < 1e-9:
            raise ValueError("monodromy matrix must be hyperbolic (real spectrum off the unit circle)")
        w = np.real(w)
        V = np.real(V)
        iu = int(np.argmax(np.abs(w)))
        object.__setattr__(self, "A", np.round(A).astype(float))
        object.__setattr__(self, "lam_u", float(w[iu]))
        object.__setattr__(self, "lam_s", float(w[1 - iu]))
        object.__setattr__(self, "v_u", V[:, iu] / np.linalg.norm(V[:, iu]))
        object.__setattr__(self, "v_s", V[:, 1 - iu] / np.linalg.norm(V[:, 1 - iu]))
        for lam, v in ((self.lam_u, self.v_u), (self.lam_s, self.v_s)):
            if np.max(np.abs(self.A @ v - lam * v)) > _EIG_TOL * 10 * max(1.0, abs(lam)):
                raise ValueError("eigen-decomposition failed validation")

    @property
    def A_inv(self) -> np.ndarray:
        a, b, c, d = self.A.ravel()
        det = a * d - b * c
        return np.array([[d, -b], [-c, a]]) / det

    def glue3(self, crossing: int = 1) -> np.ndarray:
        """3x3 tangent transport for one roof crossing (+1 up, -1 down)."""
        M = np.eye(3)
        M[:2, :2] = self.A if crossing == 1 else self.A_inv
        return M

    def glue3_cot(self, crossing: int = 1) -> np.ndarray:
        """3x3 cotangent transport for one roof crossing."""
        M = np.eye(3)
        B = self.A_inv.T if crossing == 1 else self.A.T
        M[:2, :2] = B
        return M


def cat_monodromy() -> Monodromy:
    """Default system: A = [[2, 1], [1, 1]]."""
    return Monodromy(np.array([[2, 1], [1, 1]]))


@dataclass(frozen=True)
class TorusPoint:
    """Point of the mapping torus in fundamental-domain coordinates."""

    x: np.ndarray
    t: float

    def coords(self) -> np.ndarray:
        return np.array([self.x[0], self.x[1], self.t])


@dataclass(frozen=True)
class TangentVector:
    base: TorusPoint
    components: np.ndarray


@dataclass(frozen=True)
class Covector:
    base: TorusPoint
    components: np.ndarray

    def pair(self, v: TangentVector) -> float:
        return float(np.dot(self.components, v.components))


@dataclass(frozen=True)
class SphereCovector:
    """Unit covector (chart metric); a point of the cosphere bundle."""

    base: TorusPoint
    components: np.ndarray

    def __post_init__(self) -> None:
        n = float(np.linalg.norm(self.components))
        if abs(n - 1.0) > 1e-12:
            object.__setattr__(self, "components", np.asarray(self.components, dtype=float) / n)


def normalize_coords(mono: Monodromy, x: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduce raw chart coordinates into the fundamental domain.

    Vectorized over leading axes; ``x`` has shape (..., 2) and ``t``
    shape (...).  Roof crossings apply A (upward) or A^{-1} (downward)
    to the base coordinates, once per unit of t outside [0, 1).
    """
    x = np.array(x, dtype=float)
    t = np.array(t, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t))):
        raise ValueError("non-finite coordinates")
    n = np.floor(t).astype(int)
    t = t - n
    # apply A^n to the base; n may differ per element
    if np.any(n != 0):
        nmax = int(np.max(np.abs(n)))
        for _ in range(nmax):
            up = n > 0
            dn = n < 0
            if np.any(up):
                x[up] = x[up] @ mono.A.T
                n = n - up.astype(int)
            if np.any(dn):
                x[dn] = x[dn] @ mono.A_inv.T
                n = n + dn.astype(int)
    # t - floor(t) can round up to exactly 1.0 for tiny negative t
    top = t >= 1.0
    if np.any(top):
        x[top] = x[top] @ mono.A.T
        t = np.where(top, t - 1.0, t)
    x = x - np.floor(x)
    x[x >= 1.0] = 0.0  # same rounding guard on the torus coordinates
    return x, t


def normalize(mono: Monodromy, x, t: float) -> TorusPoint:
    """Reduce a raw point into the fundamental domain."""
    xr, tr = normalize_coords(mono, np.asarray(x, dtype=float)[None, :], np.asarray([t], dtype=float))
    return TorusPoint(xr[0], float(tr[0]))


def glue_transport(mono: Monodromy, v: TangentVector | Covector, crossing: int) -> TangentVector | Covector:
    """Transport a (co)tangent vector across the roof gluing.

    Tangent components map by diag(A^crossing, 1); cotangent components by
    diag(A^{-T crossing}, 1).  The duality pairing is preserved exactly.
    """
    if crossing not in (1, -1):
        raise ValueError("crossing must be +1 or -1")
    base = v.base
    if crossing == 1:
        # from the t = 1 representation of the seam to the t = 0 one
        new_base = TorusPoint((mono.A @ base.x) % 1.0, 0.0)
        M = mono.glue3(1) if isinstance(v, TangentVector) else mono.glue3_cot(1)
    else:
        new_base = TorusPoint((mono.A_inv @ base.x) % 1.0, 1.0)
        M = mono.glue3(-1) if isinstance(v, TangentVector) else mono.glue3_cot(-1)
    comps = M @ v.components
    if isinstance(v, TangentVector):
        return TangentVector(new_base, comps)
    return Covector(new_base, comps)


def base_distance(x1: np.ndarray, t1, x2: np.ndarray, t2) -> np.ndarray:
    """Chart distance between base points: torus wrap in x plus |dt|."""
    dx = np.abs(np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float))
    dx = np.minimum(dx, 1.0 - dx)
    return np.sqrt(np.sum(dx * dx, axis=-1)) + np.abs(np.asarray(t1) - np.asarray(t2))


def angle_between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Angle between unit vectors, broadcast over leading axes."""
    c = np.clip(np.sum(u * v, axis=-1), -1.0, 1.0)
    return np.arccos(c)


def sphere_distance(a: SphereCovector, b: SphereCovector) -> float:
    """Metric on the cosphere bundle: base distance plus fiber angle."""
    d_base = float(base_distance(a.base.x, a.base.t, b.base.x, b.base.t))
    d_ang = float(angle_between(a.components, b.components))
    return d_base + d_ang


def dist_to_line(xi: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Great-circle distance from unit covectors to a line {+-direction}.

    ``xi`` has shape (..., d); ``direction`` is a unit vector of matching
    trailing dimension.
    """
    c = np.abs(np.sum(xi * direction, axis=-1))
    return np.arccos(np.clip(c, -1.0, 1.0))


def dist_to_plane(xi: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Great-circle distance from unit covectors to the plane with unit normal."""
    s = np.abs(np.sum(xi * normal, axis=-1))
    return np.arcsin(np.clip(s, -1.0, 1.0))


def line_angle(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Angle between the lines spanned by unit vectors, stable near zero.

    Uses the cross product (sin-based), so tiny angles do not saturate at
    the arccos rounding floor of ~1.5e-8.
    """
    s = np.linalg.norm(np.cross(u, v), axis=-1)
    return np.arcsin(np.clip(s, -1.0, 1.0))


@dataclass(frozen=True)
class Cone:
    """Conical neighborhood of a covector line field over a base grid.

    ``centers`` holds one unit covector per grid point (shape (npts, 3));
    membership is angular distance to the center line at the nearest grid
    point.  The set is invariant under scaling and sign, matching the
    conical sets used in the sink/source analysis.
    """

    base_points: np.ndarray  # (npts, 3) chart coordinates
    centers: np.ndarray      # (npts, 3) unit covectors
    half_angle: float

    def __post_init__(self) -> None:
        if not 0.0 < self.half_angle < np.pi / 2:
            raise ValueError("half_angle must lie in (0, pi/2)")

    def nearest_center(self, coords: np.ndarray) -> np.ndarray:
        """Center direction at the grid point nearest to each coordinate row."""
        coords = np.atleast_2d(coords)
        if len(self.base_points) == 1:
            return np.broadcast_to(self.centers[0], (len(coords), 3))
        d = base_distance(coords[:, None, :2], coords[:, None, 2],
                          self.base_points[None, :, :2], self.base_points[None, :, 2])
        idx = np.argmin(d, axis=1)
        return self.centers[idx]

    def contains(self, coords: np.ndarray, xi: np.ndarray, slack: float = 0.0) -> np.ndarray:
        """Membership test for unit covectors ``xi`` at chart points ``coords``."""
        ctr = self.nearest_center(coords)
        return dist_to_line(np.atleast_2d(xi), ctr) <= self.half_angle + slack

    def angles(self, coords: np.ndarray, xi: np.ndarray) -> np.ndarray:
        ctr = self.nearest_center(coords)
        return dist_to_line(np.atleast_2d(xi), ctr)


def chart_grid(n: int) -> np.ndarray:
    """Uniform n^3 grid of chart coordinates, cell-centered in [0,1)^3."""
    u = (np.arange(n) + 0.5) / n
    X1, X2, T = np.meshgrid(u, u, u, indexing="ij")
    return np.stack([X1.ravel(), X2.ravel(), T.ravel()], axis=-1)


def fibonacci_sphere(n: int) -> np.ndarray:
    """n approximately uniform directions on S^2 (golden-angle lattice)."""
    i = np.arange(n, dtype=float) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + np.sqrt(5.0)) * i
    return np.stack(
        [np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=-1
    )
