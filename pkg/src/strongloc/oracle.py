"""Closed-form reference solutions for the tapered bar and the sheared square.

Both oracles work in the sharp-band limit: the band carries a displacement
jump ``j`` with cohesive traction ``sigma_p + Hbar j`` and the bulk stays
elastic.  :func:`solve_bar_regularized` additionally evaluates the finite
band used by the trainer, which quantifies the regularization offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .material import MaterialSpec, bar_area

__all__ = [
    "BarSolution",
    "ShearSolution",
    "compliance_integral",
    "bar_compliance_exact",
    "solve_bar",
    "solve_bar_regularized",
    "solve_shear",
    "solve_shear_regularized",
    "shear_energy",
    "shear_grid_search",
]


@dataclass
class BarSolution:
    delta: float
    P: float
    j: float
    x_band: float
    C: float
    W: float
    elastic: float
    cohesive: float
    E: float
    L: float
    area: object

    @property
    def localized(self) -> bool:
        return self.j > 0.0

    def u(self, x):
        """Displacement of the sharp solution; the jump sits at ``x_band``."""
        x = np.asarray(x, dtype=np.float64)
        ue = self.P * np.array([_compliance(self.area, self.E, 0.0, xi) for xi in np.ravel(x)])
        ue = ue.reshape(x.shape)
        return ue + self.j * (x > self.x_band)

    def force(self, x):
        return np.full(np.shape(x), self.P)

    def stress(self, x):
        return self.P / self.area(np.asarray(x, dtype=np.float64))


@dataclass
class ShearSolution:
    delta: float
    tau: float
    gamma_e: float
    j: float
    W: float
    mu: float
    unique: bool = True

    @property
    def localized(self) -> bool:
        return self.j > 0.0


def _compliance(area, E, a, b):
    if b <= a:
        return 0.0
    val, _ = integrate.quad(lambda s: 1.0 / (E * area(s)), a, b, epsabs=1e-14, epsrel=1e-13, limit=200)
    return val


def compliance_integral(area=bar_area, E=1.0, L=10.0, n_quad=2001):
    """``int_0^L dx / (E A(x))`` by composite Simpson on ``n_quad`` points,
    refined with adaptive Gauss-Kronrod."""
    if n_quad < 1000:
        raise ValueError("n_quad must be at least 1000")
    if n_quad % 2 == 0:
        n_quad += 1
    x = np.linspace(0.0, L, n_quad)
    a = np.asarray(area(x), dtype=np.float64)
    if np.any(a <= 0):
        raise ValueError("cross-section must be positive")
    simpson = integrate.simpson(1.0 / (E * a), x=x)
    adaptive = _compliance(area, E, 0.0, L)
    # Simpson is only a consistency check on the adaptive value.
    if abs(simpson - adaptive) > 1e-6 * abs(adaptive):
        raise ArithmeticError("quadrature rules disagree; area profile too rough")
    return adaptive


def bar_compliance_exact(E=1.0, L=10.0, a_min=1.0, a_max=2.0):
    """Closed form of the compliance for the parabolic taper."""
    half = 0.5 * L
    k = math.sqrt((a_max - a_min) / a_min)
    return 2.0 * half / (E * a_min * k) * math.atan(k)


def solve_bar(delta, m: MaterialSpec, area=bar_area, L=10.0) -> BarSolution:
    """Sharp-band solution of the bar under end displacement ``delta``."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if not m.Hbar < 0:
        raise ValueError("bar oracle needs softening (Hbar < 0)")
    sp = m.sigma_p_min
    C = compliance_integral(area, m.E, L)
    xs = np.linspace(0.0, L, 10001)
    x_band = float(xs[np.argmin(area(xs))])
    a_min = float(area(x_band))
    delta_y = sp * a_min * C
    if delta <= delta_y:
        P, j = delta / C, 0.0
    else:
        # delta = P C + j,  P / a_min = sp + Hbar j
        M = np.array([[C, 1.0], [1.0 / a_min, -m.Hbar]])
        P, j = np.linalg.solve(M, [delta, sp])
        if P < 0:
            P, j = 0.0, -sp / m.Hbar
    elastic = 0.5 * P * P * C
    cohesive = a_min * (0.5 * m.Hbar * j * j + sp * j)
    return BarSolution(float(delta), float(P), float(j), x_band, C,
                       elastic + cohesive, elastic, cohesive, m.E, L, area)


def solve_bar_regularized(delta, m: MaterialSpec, c, beta=100.0, area=bar_area, L=10.0, x_band=None):
    """Jump and energy of the bar with a finite band of width ``c`` at ``x_band``.

    The band contributes ``K2 * Hbar j^2 / 2 + K1 * sigma_p j`` where
    ``K1 = int A Phi'`` and ``K2 = c int A Phi'^2``.  The bulk is exactly
    elastic, so the reduced energy is a quadratic in ``j``.
    """
    from .fields import band_profile  # local import keeps the oracle standalone

    x_band = 0.5 * L if x_band is None else x_band
    C = compliance_integral(area, m.E, L)
    lo, hi = x_band - 2 * c, x_band + 2 * c

    def dphi(s):
        return band_profile((s - x_band) / c, beta)[1] / c

    pts = [x_band - 0.5 * c, x_band + 0.5 * c]
    K1 = integrate.quad(lambda s: area(s) * dphi(s), lo, hi, points=pts, limit=400)[0]
    K2 = c * integrate.quad(lambda s: area(s) * dphi(s) ** 2, lo, hi, points=pts, limit=400)[0]
    sp = m.sigma_p_min

    def W(j):
        return 0.5 * (delta - j) ** 2 / C + 0.5 * K2 * m.Hbar * j * j + K1 * sp * j

    curv = 1.0 / C + K2 * m.Hbar
    j = max((delta / C - K1 * sp) / curv, 0.0) if curv > 0 else 0.0
    return {"j": j, "P": (delta - j) / C, "W": W(j), "K1": K1, "K2": K2, "C": C}


def shear_energy(j, delta, mu, Hbar, sigma_p_min):
    """Reduced energy of the sheared unit square with a horizontal band."""
    return 0.5 * mu * (delta - j) ** 2 + 0.5 * Hbar * j * j + sigma_p_min * j


def shear_grid_search(delta, mu, Hbar, sigma_p_min, step=1e-5):
    """Brute-force minimizer of :func:`shear_energy` over ``j`` in ``[0, delta]``."""
    js = np.arange(0.0, delta + 0.5 * step, step)
    js = js[js <= delta + 1e-15]
    W = shear_energy(js, delta, mu, Hbar, sigma_p_min)
    return float(js[int(np.argmin(W))])


def solve_shear(delta, m: MaterialSpec, band_row_sigma_p=None, verify=True) -> ShearSolution:
    """Uniform simple shear of the unit square with one horizontal band.

    Stationarity of ``mu (delta - j)^2 / 2 + Hbar j^2 / 2 + sigma_p j`` gives
    ``j = (mu delta - sigma_p) / (mu + Hbar)``.  The minimizer is unique when
    ``mu + Hbar > 0``; otherwise the energy is concave in ``j`` and the
    solution is reported with ``unique=False``.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    mu = m.mu
    sp = m.sigma_p_min if band_row_sigma_p is None else float(band_row_sigma_p)
    curv = mu + m.Hbar
    unique = curv > 0
    if unique:
        j = min(max((mu * delta - sp) / curv, 0.0), delta)
    else:
        ends = [0.0, delta]
        j = min(ends, key=lambda t: shear_energy(t, delta, mu, m.Hbar, sp))
    if verify and unique:
        jg = shear_grid_search(delta, mu, m.Hbar, sp)
        if abs(jg - j) > 1e-5 + 1e-12:
            raise ArithmeticError(f"closed form {j} disagrees with grid search {jg}")
    gamma_e = delta - j
    return ShearSolution(float(delta), float(mu * gamma_e), float(gamma_e), float(j),
                         float(shear_energy(j, delta, mu, m.Hbar, sp)), mu, unique)


def solve_shear_regularized(delta, m: MaterialSpec, c, beta=100.0, y_band=0.5):
    """Jump of the sheared square with a horizontal band of width ``c``.

    The band adds ``K2 * Hbar j^2 / 2 + K1 j`` with ``K1 = int sigma_p Phi'``
    and ``K2 = c int Phi'^2`` over the height; the bulk shear is uniform,
    so the minimizer follows from one linear equation.
    """
    from .fields import band_profile

    def dphi(y):
        return band_profile((y - y_band) / c, beta)[1] / c

    def sigma_p(y):
        return float(m.yield_stress(np.array([[0.5, y]]))[0])

    lo, hi = max(0.0, y_band - 2 * c), min(1.0, y_band + 2 * c)
    pts = [y_band - 0.5 * c, y_band + 0.5 * c]
    K1 = integrate.quad(lambda y: sigma_p(y) * dphi(y), lo, hi, points=pts, limit=400)[0]
    K2 = c * integrate.quad(lambda y: dphi(y) ** 2, lo, hi, points=pts, limit=400)[0]
    mu = m.mu
    curv = mu + m.Hbar * K2
    j = min(max((mu * delta - K1) / curv, 0.0), delta) if curv > 0 else 0.0
    W = 0.5 * mu * (delta - j) ** 2 + 0.5 * m.Hbar * K2 * j * j + K1 * j
    return {"j": j, "tau": mu * (delta - j), "W": W, "K1": K1, "K2": K2}
