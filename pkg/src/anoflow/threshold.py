"""Minimal weight-strength threshold for discreteness of the spectrum.

Chains the measured constants (derivative bound, divergence, covector
growth, sink constants) into the affine-in-Re(s) minimal strength

    r(s) = prefactor * (2 ||div X|| - 4 Re s + growth_sup) + |k_shift|,

with prefactor = (1/Lam) (2/C')^{Lam/beta'} when the derivative bound Lam
is positive, and the reciprocal of the direct orbit-integral constant when
Lam degenerates to zero (suspension charts concentrate the stretching in
the gluing, so the chart derivative bound can vanish).  Every intermediate
constant is exposed for audit.

Conventions recorded here: the covector growth supremum is measured over
unit-time windows (so gluing transport is included), and over the unit
cosphere (growth is 1-homogeneous).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from anoflow.errors import NumericalError, VerificationError
from anoflow.fields import VectorField
from anoflow.flow import covector_orbit, flow_sphere
from anoflow.splitting import SPLIT_STEP, SinkReport
from anoflow.torus import Monodromy, chart_grid

_LAM_DEGENERATE = 1e-9


def lambda_max(X: VectorField, grid_n: int = 16) -> float:
    """Grid supremum of the chart operator norm of dX."""
    return float(np.max(np.linalg.norm(X.jacobian(chart_grid(grid_n)), ord=2, axis=(-2, -1))))


def div_sup(X: VectorField, grid_n: int = 16) -> float:
    return float(np.max(np.abs(X.divergence(chart_grid(grid_n)))))


def _crossing_rates(mono: Monodromy, X: VectorField, coords: np.ndarray, dirs: np.ndarray,
                    n_crossings: int, step: float, leg: float = 0.05) -> np.ndarray:
    """Per-sample growth rates over windows closed at the n-th seam crossing.

    Samples start on the seam (roof coordinate 0), so every window spans an
    integer number of fundamental cells; this removes the ceil-quantization
    a fixed-time window would inflict on the supremum and keeps the rate
    continuous along field families.
    """
    y = np.array(np.atleast_2d(coords), dtype=float)
    xi = np.array(np.atleast_2d(dirs), dtype=float)
    xi /= np.linalg.norm(xi, axis=-1)[:, None]
    # seed just inside the cell on the inflow side of the roof motion
    forward = X(y)[:, 2] >= 0
    y[:, 2] = np.where(forward, 1e-6, 1.0 - 1e-6)
    n = len(y)
    logs = np.zeros(n)
    elapsed = np.zeros(n)
    wraps = np.zeros(n, dtype=int)
    rate = np.full(n, np.nan)
    active = np.ones(n, dtype=bool)
    t_guard = 4.0 * n_crossings
    while np.any(active) and np.max(elapsed[active]) < t_guard:
        idx = np.flatnonzero(active)
        t_before = y[idx, 2].copy()
        logs_before = logs[idx].copy()
        y2, xi2, dlog = flow_sphere(mono, X, y[idx], xi[idx], leg, step)
        y[idx], xi[idx] = y2, xi2
        logs[idx] = logs_before + dlog
        elapsed[idx] += leg
        t_after = y[idx, 2]
        wrap_up = t_after < t_before - 0.5
        wrap_dn = t_after > t_before + 0.5
        wrapped = wrap_up | wrap_dn
        if np.any(wrapped):
            w_idx = idx[wrapped]
            wraps[w_idx] += 1
            done = wraps[w_idx] >= n_crossings
            if np.any(done):
                d_idx = w_idx[done]
                tb = t_before[wrapped][done]
                ta = t_after[wrapped][done]
                up = wrap_up[wrapped][done]
                # fraction of the leg spent before the seam
                frac = np.where(up,
                                (1.0 - tb) / np.maximum(ta + 1.0 - tb, 1e-12),
                                tb / np.maximum(tb + 1.0 - ta, 1e-12))
                t_hit = elapsed[d_idx] - leg * (1.0 - frac)
                rate[d_idx] = logs[d_idx] / t_hit
                active[d_idx] = False
    if np.any(active):
        raise NumericalError("crossing-window measurement did not terminate")
    return rate


def growth_sup(mono: Monodromy, X: VectorField, n_samples: int = 2048,
               n_crossings: int = 8, seed: int = 3, step: float = SPLIT_STEP,
               extra_dirs: np.ndarray | None = None) -> float:
    """Supremum of the lifted-flow growth rate over the cosphere.

    Measured over seam-closed windows (``n_crossings`` fundamental cells)
    so the gluing transport contributes; the instantaneous chart rate
    misses it entirely for suspension flows.
    """
    rng = np.random.default_rng(seed)
    coords = np.column_stack([rng.uniform(0, 1, (n_samples, 2)), np.zeros(n_samples)])
    dirs = rng.normal(size=(n_samples, 3))
    dirs /= np.linalg.norm(dirs, axis=-1)[:, None]
    if extra_dirs is not None:
        extra_dirs = np.atleast_2d(extra_dirs)
        coords = np.vstack([coords, np.tile([[0.5, 0.5, 0.0]], (len(extra_dirs), 1))])
        dirs = np.vstack([dirs, extra_dirs])
    rates = _crossing_rates(mono, X, coords, dirs, n_crossings, step)
    return float(np.max(rates))


def growth_inf(mono: Monodromy, X: VectorField, n_samples: int = 2048,
               n_crossings: int = 8, seed: int = 3, step: float = SPLIT_STEP,
               extra_dirs: np.ndarray | None = None) -> float:
    """Infimum counterpart of :func:`growth_sup` (time reversal negates it)."""
    rng = np.random.default_rng(seed)
    coords = np.column_stack([rng.uniform(0, 1, (n_samples, 2)), np.zeros(n_samples)])
    dirs = rng.normal(size=(n_samples, 3))
    dirs /= np.linalg.norm(dirs, axis=-1)[:, None]
    if extra_dirs is not None:
        extra_dirs = np.atleast_2d(extra_dirs)
        coords = np.vstack([coords, np.tile([[0.5, 0.5, 0.0]], (len(extra_dirs), 1))])
        dirs = np.vstack([dirs, extra_dirs])
    rates = _crossing_rates(mono, X, coords, dirs, n_crossings, step)
    return float(np.min(rates))


@dataclass(frozen=True)
class ContractionConstant:
    c: float
    T1: float
    route: str  # "formula" | "integral"
    growth_check_min: float = float("nan")  # min |Phi_{T1} xi| / |xi| on the sink cone


def contraction_c(Lam: float, C_prime: float, beta_prime: float,
                  mono: Monodromy | None = None, X: VectorField | None = None,
                  route: str = "auto", T1: float | None = None,
                  n_samples: int = 512, seed: int = 9,
                  step: float = SPLIT_STEP) -> ContractionConstant:
    """Contraction constant of the defining orbit integral.

    ``route='formula'`` uses the closed form Lam (C'/2)^{Lam/beta'}.  The
    closed form collapses to zero as Lam -> 0 (it drops the additive term
    of the integral), so at a degenerate derivative bound -- and for family
    studies, where members have arbitrarily small positive Lam -- the
    constant is measured from the defining integral
    int_0^T1 |Phi_t xi| dt <= |xi| / c instead (``route='integral'``).
    ``route='auto'`` selects the formula whenever Lam is non-degenerate.
    """
    if C_prime <= 0 or beta_prime <= 0:
        raise ValueError("sink constants must be positive")
    if T1 is None:
        T1 = np.log(2.0 * C_prime) / beta_prime
    if route == "auto":
        route = "formula" if Lam > _LAM_DEGENERATE else "integral"
    if route == "formula":
        if Lam <= _LAM_DEGENERATE:
            raise ValueError("formula route undefined at a degenerate derivative bound")
        c = Lam * (C_prime / 2.0) ** (Lam / beta_prime)
        return ContractionConstant(c=float(c), T1=float(T1), route="formula")
    if mono is None or X is None:
        raise ValueError("the orbit-integral route requires flow access")
    rng = np.random.default_rng(seed)
    coords = np.column_stack([rng.uniform(0, 1, (n_samples, 2)), rng.uniform(0, 1, n_samples)])
    dirs = rng.normal(size=(n_samples, 3))
    dirs /= np.linalg.norm(dirs, axis=-1)[:, None]
    n_t = 33
    t_grid = np.linspace(T1 / (n_t - 1), T1, n_t - 1)
    _, _, logs = covector_orbit(mono, X, coords, dirs, t_grid, step)
    vals = np.vstack([np.zeros((1, len(coords))), logs])  # include t = 0
    growth = np.exp(vals)
    h = T1 / (n_t - 1)
    w = np.full(n_t, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    integral = (w * (h / 3.0)) @ growth
    c = 1.0 / float(np.max(integral))
    return ContractionConstant(c=float(c), T1=float(T1), route="integral")


def verify_doubling_time(mono: Monodromy, X: VectorField, sink_dirs: np.ndarray,
                         T1: float, n_samples: int = 256, half_angle: float = 0.2,
                         seed: int = 17, step: float = SPLIT_STEP) -> float:
    """Minimum growth factor |Phi_{T1} xi| / |xi| over a cone around the sink."""
    rng = np.random.default_rng(seed)
    sink_dirs = np.atleast_2d(sink_dirs)
    ctr = sink_dirs[rng.integers(0, len(sink_dirs), n_samples)]
    tang = rng.normal(size=(n_samples, 3))
    tang -= np.sum(tang * ctr, axis=-1)[:, None] * ctr
    tang /= np.linalg.norm(tang, axis=-1)[:, None]
    ang = rng.uniform(0, half_angle, n_samples)
    dirs = np.cos(ang)[:, None] * ctr + np.sin(ang)[:, None] * tang
    coords = np.column_stack([rng.uniform(0, 1, (n_samples, 2)), rng.uniform(0, 1, n_samples)])
    _, _, logs = flow_sphere(mono, X, coords, dirs, T1, step)
    return float(np.exp(np.min(logs)))


@dataclass(frozen=True)
class ThresholdReport:
    """Audit trail from raw constants to the minimal strength."""

    Lam: float
    div_sup: float
    growth_sup: float
    C_prime: float
    beta_prime: float
    c: float
    T1: float
    c_route: str
    prefactor: float
    k_shift: int
    doubling_min: float = float("nan")

    def r_at(self, re_s: float | np.ndarray) -> np.ndarray:
        """Minimal strength r(s) + |k|; affine, decreasing in Re s."""
        re_s = np.asarray(re_s, dtype=float)
        return self.prefactor * (2.0 * self.div_sup - 4.0 * re_s + self.growth_sup) + abs(self.k_shift)

    @property
    def slope(self) -> float:
        return -4.0 * self.prefactor

    def as_dict(self) -> dict:
        return {
            "Lam": self.Lam, "div_sup": self.div_sup, "growth_sup": self.growth_sup,
            "C_prime": self.C_prime, "beta_prime": self.beta_prime, "c": self.c,
            "T1": self.T1, "c_route": self.c_route, "prefactor": self.prefactor,
            "k_shift": self.k_shift, "slope": self.slope, "doubling_min": self.doubling_min,
        }


def certified_doubling_time(mono: Monodromy, X: VectorField, sink_dirs: np.ndarray,
                            T1_guess: float,
                            ladder: tuple[float, ...] = (1.0, 1.5, 2.0, 3.0, 4.0)) -> tuple[float, float]:
    """Smallest ladder multiple of the formula horizon with verified doubling.

    Seam-concentrated growth means a sub-unit formula horizon may contain no
    crossing at all; escalation certifies the defining property directly.
    """
    for f in ladder:
        g = verify_doubling_time(mono, X, sink_dirs, f * T1_guess)
        if g > 2.0:
            return f * T1_guess, g
    raise VerificationError(
        f"no doubling time found up to {ladder[-1]:g} x formula horizon {T1_guess:g}")


def minimal_strength(mono: Monodromy, X: VectorField, sink: SinkReport,
                     k_shift: int = 0, grid_n: int = 16, sink_dirs: np.ndarray | None = None,
                     n_growth: int = 2048, seed: int = 3,
                     c_route: str = "auto") -> ThresholdReport:
    """Assemble the threshold report for one vector field.

    ``sink`` supplies the certified growth constants of the attracting cone;
    the contraction constant routes through the closed form or the orbit
    integral (see :func:`contraction_c`).  When sink directions are given,
    the doubling horizon is certified by escalation and the orbit-integral
    route uses the certified horizon.
    """
    Lam = lambda_max(X, grid_n)
    dv = div_sup(X, grid_n)
    gs = growth_sup(mono, X, n_growth, seed=seed, extra_dirs=sink_dirs)
    T1_cert = None
    doubling = float("nan")
    if sink_dirs is not None:
        T1_guess = np.log(2.0 * sink.C_prime) / sink.beta_prime
        T1_cert, doubling = certified_doubling_time(mono, X, sink_dirs, T1_guess)
    cc = contraction_c(Lam, sink.C_prime, sink.beta_prime, mono=mono, X=X,
                       route=c_route, T1=T1_cert if c_route != "formula" else None)
    return ThresholdReport(
        Lam=Lam, div_sup=dv, growth_sup=gs, C_prime=sink.C_prime,
        beta_prime=sink.beta_prime, c=cc.c, T1=cc.T1, c_route=cc.route,
        prefactor=1.0 / cc.c, k_shift=k_shift, doubling_min=doubling,
    )


@dataclass(frozen=True)
class FamilyThreshold:
    """Uniform threshold over a perturbation family."""

    eps_grid: tuple[float, ...]
    s_grid: np.ndarray
    r_table: np.ndarray          # (n_eps, n_s)
    r_uniform: np.ndarray        # (n_s,) pointwise supremum
    reports: tuple[ThresholdReport, ...]

    def r_at(self, re_s: float) -> float:
        """Uniform bound, non-increasing in Re s (step interpolation)."""
        idx = np.searchsorted(self.s_grid, re_s, side="right") - 1
        idx = int(np.clip(idx, 0, len(self.s_grid) - 1))
        return float(self.r_uniform[idx])


def uniform_strength(mono: Monodromy, fields: list[tuple[float, VectorField, SinkReport]],
                     s_grid: np.ndarray, k_shift: int = 0,
                     sink_dirs: np.ndarray | None = None) -> FamilyThreshold:
    """Pointwise supremum of the minimal strength over a field family.

    All members use the orbit-integral contraction route: the closed form
    degenerates like 1/Lam as the perturbation size shrinks, which would
    make the family supremum blow up along any family through the base
    field instead of converging to the base threshold.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    reports = []
    rows = []
    for eps, X, sink in fields:
        rep = minimal_strength(mono, X, sink, k_shift=k_shift, sink_dirs=sink_dirs,
                               c_route="integral")
        reports.append(rep)
        rows.append(rep.r_at(s_grid))
    table = np.array(rows)
    return FamilyThreshold(
        eps_grid=tuple(e for e, _, _ in fields), s_grid=s_grid, r_table=table,
        r_uniform=np.max(table, axis=0), reports=tuple(reports),
    )
