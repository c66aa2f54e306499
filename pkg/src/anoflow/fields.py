"""Vector fields on the mapping torus.

Fields are finite sums of structured terms so that closed-form values,
Jacobians and divergences are available everywhere and the spectral
assembler can consume the same description.  All terms are compatible with
the roof gluing: roof terms are 1-periodic in t, x-dependent terms carry a
bump factor vanishing (to third order) at the seam.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from anoflow.profiles import bump01, bump01_deriv
from anoflow.torus import Monodromy, chart_grid

_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class RoofTerm:
    """g(t) d/dt with g(t) = c0 + sum_m a_m cos(2 pi m t) + b_m sin(2 pi m t)."""

    c0: float = 0.0
    modes: tuple[tuple[int, float, float], ...] = ()

    def g(self, t: np.ndarray) -> np.ndarray:
        out = np.full_like(np.asarray(t, dtype=float), self.c0)
        for m, a, b in self.modes:
            w = _TWO_PI * m * t
            out = out + a * np.cos(w) + b * np.sin(w)
        return out

    def gprime(self, t: np.ndarray) -> np.ndarray:
        out = np.zeros_like(np.asarray(t, dtype=float))
        for m, a, b in self.modes:
            w = _TWO_PI * m * t
            out = out + _TWO_PI * m * (-a * np.sin(w) + b * np.cos(w))
        return out

    def scaled(self, s: float) -> RoofTerm:
        return RoofTerm(self.c0 * s, tuple((m, a * s, b * s) for m, a, b in self.modes))


@dataclass(frozen=True)
class HorizontalTerm:
    """bump(t) cos(2 pi k.x + phase) (c1, c2, 0)."""

    kvec: tuple[int, int]
    c: tuple[float, float]
    phase: float = 0.0

    def scaled(self, s: float) -> HorizontalTerm:
        return replace(self, c=(self.c[0] * s, self.c[1] * s))


@dataclass(frozen=True)
class VerticalTerm:
    """amp bump(t) cos(2 pi k.x + phase) d/dt, k != 0."""

    kvec: tuple[int, int]
    amp: float
    phase: float = 0.0

    def scaled(self, s: float) -> VerticalTerm:
        return replace(self, amp=self.amp * s)


Term = RoofTerm | HorizontalTerm | VerticalTerm


def _kdotx(kvec: tuple[int, int], x: np.ndarray, phase: float) -> np.ndarray:
    return _TWO_PI * (kvec[0] * x[..., 0] + kvec[1] * x[..., 1]) + phase


@dataclass(frozen=True)
class VectorField:
    """Finite-term vector field on the mapping torus.

    The field never vanishes for the families used here (the roof component
    stays positive); :meth:`min_speed` checks this on a grid.
    """

    mono: Monodromy
    terms: tuple[Term, ...]
    name: str = "field"

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        x, t = coords[..., :2], coords[..., 2]
        out = np.zeros_like(coords)
        for term in self.terms:
            if isinstance(term, RoofTerm):
                out[..., 2] += term.g(t)
            elif isinstance(term, HorizontalTerm):
                f = bump01(t) * np.cos(_kdotx(term.kvec, x, term.phase))
                out[..., 0] += f * term.c[0]
                out[..., 1] += f * term.c[1]
            else:
                out[..., 2] += term.amp * bump01(t) * np.cos(_kdotx(term.kvec, x, term.phase))
        return out

    def jacobian(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        x, t = coords[..., :2], coords[..., 2]
        J = np.zeros(coords.shape[:-1] + (3, 3))
        for term in self.terms:
            if isinstance(term, RoofTerm):
                J[..., 2, 2] += term.gprime(t)
            elif isinstance(term, HorizontalTerm):
                w = _kdotx(term.kvec, x, term.phase)
                cosw, sinw = np.cos(w), np.sin(w)
                b, db = bump01(t), bump01_deriv(t)
                for i, ci in enumerate(term.c):
                    J[..., i, 0] += -_TWO_PI * term.kvec[0] * b * sinw * ci
                    J[..., i, 1] += -_TWO_PI * term.kvec[1] * b * sinw * ci
                    J[..., i, 2] += db * cosw * ci
            else:
                w = _kdotx(term.kvec, x, term.phase)
                cosw, sinw = np.cos(w), np.sin(w)
                b, db = bump01(t), bump01_deriv(t)
                J[..., 2, 0] += -_TWO_PI * term.kvec[0] * term.amp * b * sinw
                J[..., 2, 1] += -_TWO_PI * term.kvec[1] * term.amp * b * sinw
                J[..., 2, 2] += term.amp * db * cosw
        return J

    def divergence(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        x, t = coords[..., :2], coords[..., 2]
        out = np.zeros(coords.shape[:-1])
        for term in self.terms:
            if isinstance(term, RoofTerm):
                out += term.gprime(t)
            elif isinstance(term, HorizontalTerm):
                w = _kdotx(term.kvec, x, term.phase)
                kdotc = term.kvec[0] * term.c[0] + term.kvec[1] * term.c[1]
                out += -_TWO_PI * kdotc * bump01(t) * np.sin(w)
            else:
                out += term.amp * bump01_deriv(t) * np.cos(_kdotx(term.kvec, x, term.phase))
        return out

    def add_scaled(self, other: VectorField, s: float, name: str | None = None) -> VectorField:
        """Return self + s * other (term-wise)."""
        extra = tuple(term.scaled(s) for term in other.terms)
        return VectorField(self.mono, self.terms + extra, name or f"{self.name}+{s:g}*{other.name}")

    def scaled(self, s: float, name: str | None = None) -> VectorField:
        return VectorField(self.mono, tuple(t.scaled(s) for t in self.terms), name or self.name)

    @property
    def is_suspension(self) -> bool:
        """True when the field is exactly the roof translation d/dt."""
        return (
            len(self.terms) == 1
            and isinstance(self.terms[0], RoofTerm)
            and self.terms[0].c0 == 1.0
            and not self.terms[0].modes
        )

    def min_speed(self, grid_n: int = 12) -> float:
        g = chart_grid(grid_n)
        return float(np.min(np.linalg.norm(self(g), axis=-1)))


def c1_norm(V: VectorField, grid_n: int = 24) -> float:
    """Grid sup of |V| plus the spectral norm of dV."""
    g = chart_grid(grid_n)
    sup_v = float(np.max(np.linalg.norm(V(g), axis=-1)))
    sup_dv = float(np.max(np.linalg.norm(V.jacobian(g), ord=2, axis=(-2, -1))))
    return sup_v + sup_dv


def c1_distance(X: VectorField, X0: VectorField, grid_n: int = 24) -> float:
    """sup |X - X0| + sup ||dX - dX0|| over a deterministic grid."""
    g = chart_grid(grid_n)
    dv = X(g) - X0(g)
    dj = X.jacobian(g) - X0.jacobian(g)
    return float(np.max(np.linalg.norm(dv, axis=-1)) + np.max(np.linalg.norm(dj, ord=2, axis=(-2, -1))))


def suspension_field(mono: Monodromy) -> VectorField:
    """The roof translation d/dt (suspension of the base automorphism)."""
    return VectorField(mono, (RoofTerm(c0=1.0),), name="suspension")


def time_rescale_direction(mono: Monodromy) -> VectorField:
    """Direction V = d/dt; C^1 norm exactly 1, divergence-free."""
    return VectorField(mono, (RoofTerm(c0=1.0),), name="time-rescale")


def roof_profile_direction(mono: Monodromy, modes: tuple[tuple[int, float, float], ...],
                           c0: float = 0.0, normalize: bool = True) -> VectorField:
    """Direction g(t) d/dt with Fourier profile g."""
    V = VectorField(mono, (RoofTerm(c0=c0, modes=modes),), name="roof-profile")
    if normalize:
        V = V.scaled(1.0 / c1_norm(V), name=V.name)
    return V

def volume_preserving_direction(mono: Monodromy, kvec: tuple[int, int] = (1, 0),
                                normalize: bool = True) -> VectorField:
    """Horizontal direction with k . c = 0, hence divergence-free."""
    c = (-float(kvec[1]), float(kvec[0]))
    n = float(np.hypot(*c))
    V = VectorField(mono, (HorizontalTerm(kvec=kvec, c=(c[0] / n, c[1] / n)),), name="volume-preserving")
    if normalize:
        V = V.scaled(1.0 / c1_norm(V), name=V.name)
    return V


def random_direction(mono: Monodromy, rng: np.random.Generator, n_terms: int = 3,
                     max_mode: int = 3) -> VectorField:
    """Random smooth direction with C^1 norm 1 (Fourier data up to |k| <= max_mode)."""
    terms: list[Term] = []
    for _ in range(n_terms):
        kind = rng.integers(0, 3)
        kvec = (int(rng.integers(-max_mode, max_mode + 1)), int(rng.integers(-max_mode, max_mode + 1)))
        phase = float(rng.uniform(0.0, _TWO_PI))
        if kind == 0:
            m = int(rng.integers(1, max_mode + 1))
            terms.append(RoofTerm(c0=float(rng.normal()), modes=((m, float(rng.normal()), float(rng.normal())),)))
        elif kind == 1:
            c = rng.normal(size=2)
            terms.append(HorizontalTerm(kvec=kvec, c=(float(c[0]), float(c[1])), phase=phase))
        else:
            terms.append(VerticalTerm(kvec=kvec, amp=float(rng.normal()), phase=phase))
    V = VectorField(mono, tuple(terms), name="random-direction")
    return V.scaled(1.0 / c1_norm(V), name=V.name)


@dataclass(frozen=True)
class PerturbationFamily:
    """One-parameter family X_eps = X0 + eps V with ||V||_C1 <= 1."""

    base: VectorField
    direction: VectorField
    name: str = "family"
    _c1: float = field(default=0.0, compare=False)

    def __post_init__(self) -> None:
        n = c1_norm(self.direction)
        if n > 1.0 + 1e-6:
            raise ValueError(f"direction C^1 norm {n:.6f} exceeds 1")
        object.__setattr__(self, "_c1", n)

    def field(self, eps: float) -> VectorField:
        if eps == 0.0:
            return self.base
        return self.base.add_scaled(self.direction, eps, name=f"{self.name}[{eps:g}]")

    @property
    def direction_c1_norm(self) -> float:
        return self._c1
