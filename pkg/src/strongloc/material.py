"""Constitutive laws: elasticity, cohesive softening and the yield check."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError

YieldField = Callable[[np.ndarray], np.ndarray]


def k_factor(N: int) -> float:
    """Dimension factor relating the deviatoric norm to uniaxial yield."""
    if N == 1:
        return 1.0
    if N in (2, 3):
        return math.sqrt(N - 1) / N
    raise ConfigError(f"spatial dimension must be 1, 2 or 3, got {N!r}", key="N")


@dataclass
class MaterialSpec:
    """Elastoplastic material with intrinsic (bandwidth-free) softening.

    ``sigma_p`` is either a number or a callable mapping an ``(n, N)`` array of
    points to ``n`` yield stresses.  ``H = h * Hbar`` is the bulk softening
    modulus seen by the regularized band.
    """

    E: float
    sigma_p: float | YieldField
    Hbar: float
    h: float
    N: int = 1
    nu: float = 0.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.E > 0:
            raise ConfigError("must be positive", key="material.E")
        if not -1.0 < self.nu < 0.5:
            raise ConfigError("must lie in (-1, 0.5)", key="material.nu")
        if not self.h > 0:
            raise ConfigError("must be positive", key="material.h")
        k_factor(self.N)

    @property
    def H(self) -> float:
        return self.h * self.Hbar

    @property
    def lam(self) -> float:
        return self.E * self.nu / ((1 + self.nu) * (1 - 2 * self.nu))

    @property
    def mu(self) -> float:
        return self.E / (2 * (1 + self.nu))

    def yield_stress(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        pts = x.reshape(-1, self.N) if self.N > 1 else x.reshape(-1)
        if callable(self.sigma_p):
            return np.asarray(self.sigma_p(pts), dtype=np.float64)
        return np.full(pts.shape[0], float(self.sigma_p))

    @property
    def sigma_p_min(self) -> float:
        """Smallest yield stress of the profile (the constant if uniform)."""
        if callable(self.sigma_p):
            return float(getattr(self.sigma_p, "minimum"))
        return float(self.sigma_p)


class ShearYieldProfile:
    """Parabolic yield stress over the unit square, lowest on ``y = 0.5``.

    ``sigma_p(y) = low + (high - low) * (2y - 1)^2``.
    """

    def __init__(self, low=0.75, high=1.0):
        self.minimum = float(low)
        self.maximum = float(high)

    def __call__(self, x):
        y = np.asarray(x, dtype=np.float64).reshape(-1, 2)[:, 1]
        return self.minimum + (self.maximum - self.minimum) * (2.0 * y - 1.0) ** 2

    def dy(self, x):
        y = np.asarray(x, dtype=np.float64).reshape(-1, 2)[:, 1]
        return 4.0 * (self.maximum - self.minimum) * (2.0 * y - 1.0)

    def __repr__(self):
        return f"ShearYieldProfile(low={self.minimum}, high={self.maximum})"


def bar_area(x, L=10.0, a_min=1.0, a_max=2.0):
    """Tapered cross-section: ``a_min`` at mid-length, ``a_max`` at both ends."""
    x = np.asarray(x, dtype=np.float64)
    half = 0.5 * L
    return a_min + (a_max - a_min) * ((x - half) / half) ** 2


def _as_tensor(eps, N):
    e = np.asarray(eps, dtype=np.float64)
    if N == 1:
        return e
    if e.shape[-2:] != (N, N):
        raise ConfigError(f"strain must have trailing shape ({N}, {N})")
    return e


def elastic_energy_density(eps_e, m: MaterialSpec):
    """Stored energy density; plane strain in 2D."""
    e = _as_tensor(eps_e, m.N)
    if m.N == 1:
        return 0.5 * m.E * e * e
    tr = np.trace(e, axis1=-2, axis2=-1)
    return 0.5 * m.lam * tr * tr + m.mu * np.sum(e * e, axis=(-2, -1))


def stress(eps_e, m: MaterialSpec):
    e = _as_tensor(eps_e, m.N)
    if m.N == 1:
        return m.E * e
    tr = np.trace(e, axis1=-2, axis2=-1)
    eye = np.eye(m.N)
    return m.lam * tr[..., None, None] * eye + 2.0 * m.mu * e


def _check_jump(j):
    j = np.asarray(j, dtype=np.float64)
    if np.any(j < 0):
        raise ValueError("jump magnitude must be nonnegative")
    return j


def cohesive_energy_density(j, m: MaterialSpec, sigma_p=None):
    """Surface energy ``Hbar j^2 / 2 + sigma_p j`` induced by the band."""
    j = _check_jump(j)
    sp = m.sigma_p_min if sigma_p is None else sigma_p
    return 0.5 * m.Hbar * j * j + sp * j


def cohesive_traction(j, m: MaterialSpec, sigma_p=None):
    j = _check_jump(j)
    sp = m.sigma_p_min if sigma_p is None else sigma_p
    return sp + m.Hbar * j


def deviatoric_norm(sigma, N):
    if N == 1:
        return np.abs(np.asarray(sigma, dtype=np.float64))
    s = np.asarray(sigma, dtype=np.float64)
    tr = np.trace(s, axis1=-2, axis2=-1)
    dev = s - tr[..., None, None] / N * np.eye(N)
    return np.sqrt(np.sum(dev * dev, axis=(-2, -1)))


def yield_diagnostic(sigma, p, m: MaterialSpec, sigma_p=None):
    """Yield function ``|dev sigma| - k_N (sigma_p + H p)``.

    Only used to inspect converged states; the energy minimization never
    calls it.  In 1D the deviatoric norm is taken as ``|sigma|``.
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("equivalent plastic strain must be nonnegative")
    sp = m.sigma_p_min if sigma_p is None else sigma_p
    return deviatoric_norm(sigma, m.N) - k_factor(m.N) * (sp + m.H * p)
