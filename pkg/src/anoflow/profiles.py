"""Scalar profile functions: smoothstep bumps, cutoffs, mollifier symbols.

All profiles are plain piecewise polynomials so that runs are reproducible
bit-for-bit and derivatives vanish identically outside the transition band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def smoothstep5(z: np.ndarray | float) -> np.ndarray:
    """Quintic smoothstep: 0 for z <= 0, 1 for z >= 1, C^2 across the ends."""
    z = np.clip(z, 0.0, 1.0)
    return z * z * z * (z * (6.0 * z - 15.0) + 10.0)


def smoothstep5_deriv(z: np.ndarray | float) -> np.ndarray:
    """Derivative of :func:`smoothstep5`; identically zero outside (0, 1)."""
    z = np.asarray(z, dtype=float)
    inside = (z > 0.0) & (z < 1.0)
    zc = np.clip(z, 0.0, 1.0)
    d = 30.0 * zc * zc * (zc - 1.0) * (zc - 1.0)
    return np.where(inside, d, 0.0)


@dataclass(frozen=True)
class ChiProfile:
    """Odd cutoff used to squash the averaged escape function.

    Equals -1 on (-inf, -width], +1 on [width, inf) and is strictly
    increasing in between (quintic smoothstep ramp).
    """

    width: float

    def __post_init__(self) -> None:
        if self.width <= 0.0:
            raise ValueError("cutoff width must be positive")

    def __call__(self, y: np.ndarray | float) -> np.ndarray:
        return 2.0 * smoothstep5((np.asarray(y, dtype=float) + self.width) / (2.0 * self.width)) - 1.0

    def deriv(self, y: np.ndarray | float) -> np.ndarray:
        return smoothstep5_deriv((np.asarray(y, dtype=float) + self.width) / (2.0 * self.width)) / self.width


def mollifier_symbol(rho: np.ndarray | float, profile: str = "smoothstep") -> np.ndarray:
    """Low-pass symbol q(rho): 1 for rho <= 1, 0 for rho >= 2.

    ``profile`` selects the ramp shape; both choices are smooth, monotone
    and supported on [0, 2], so they generate equally admissible mollifiers.
    """
    rho = np.asarray(rho, dtype=float)
    if profile == "smoothstep":
        return 1.0 - smoothstep5(rho - 1.0)
    if profile == "cosine":
        r = np.clip(rho - 1.0, 0.0, 1.0)
        return 0.5 * (1.0 + np.cos(np.pi * r))
    raise ValueError(f"unknown mollifier profile {profile!r}")


def bump01(t: np.ndarray | float) -> np.ndarray:
    """sin^4 bump on [0, 1]; vanishes to third order at both ends."""
    s = np.sin(np.pi * np.asarray(t, dtype=float))
    return s * s * s * s


def bump01_deriv(t: np.ndarray | float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    s = np.sin(np.pi * t)
    return 4.0 * np.pi * s * s * s * np.cos(np.pi * t)
