"""Energy functional, boundary loss and the gated training loss.

The bulk energy is a Riemann sum over collocation points of

    Psi_e(grad_s u_R) + H p^2 / 2 + sigma_p(x) p,

with ``p = |w| |dPhi/dn|``.  Because the plastic strain is exactly the
symmetric gradient of the jump field, the elastic strain is the symmetric
gradient of the regular field alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, DivergenceError
from .fields import FieldModel, band_profile
from .material import MaterialSpec, bar_area, stress

__all__ = [
    "CollocationSet",
    "EnergyBreakdown",
    "Problem",
    "bar_collocation",
    "shear_collocation",
    "plastic_measures",
    "total_strain",
    "assemble_energy",
    "boundary_loss",
    "gated_loss",
    "postprocess",
    "element_forces",
]


@dataclass
class CollocationSet:
    """Quadrature points and Dirichlet data for one problem.

    ``weights`` already include the cell measure and, in 1D, the cross
    section.  Prescribed displacements scale with the load: the value at
    ``bc_points[i]`` is ``delta * bc_unit[i]``.  ``periodic_pairs`` couples
    left and right edge points in 2D.
    """

    points: np.ndarray
    weights: np.ndarray
    bc_points: np.ndarray
    bc_unit: np.ndarray
    delta: float = 0.0
    periodic_pairs: np.ndarray | None = None
    area: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bc_points = np.asarray(self.bc_points, dtype=np.float64)
        self.bc_unit = np.asarray(self.bc_unit, dtype=np.float64)
        if np.any(self.weights <= 0):
            raise ConfigError("quadrature weights must be positive", key="collocation")
        if len(self.bc_points) == 0:
            raise ConfigError("at least one boundary point is required", key="collocation")

    @property
    def dim(self):
        return 1 if self.points.ndim == 1 else self.points.shape[1]

    @property
    def bc_values(self):
        return self.delta * self.bc_unit

    def at(self, delta) -> "CollocationSet":
        out = CollocationSet.__new__(CollocationSet)
        out.__dict__.update(self.__dict__)
        out.delta = float(delta)
        return out


def _rule(n, trapezoid):
    w = np.ones(n)
    if trapezoid:
        w[0] = w[-1] = 0.5
    return w


def bar_collocation(L=10.0, n=1001, area=bar_area, trapezoid=False, delta=0.0):
    """Uniform points on ``[0, L]``; ``u(0) = 0`` and ``u(L) = delta``."""
    if n < 2:
        raise ConfigError("need at least two points", key="collocation.n")
    x = np.linspace(0.0, L, n)
    A = np.asarray(area(x), dtype=np.float64)
    w = L / (n - 1) * _rule(n, trapezoid) * A
    return CollocationSet(x, w, np.array([0.0, L]), np.array([0.0, 1.0]), delta, area=A,
                          meta={"L": L, "n": n, "trapezoid": trapezoid})


def shear_collocation(nx=101, ny=101, trapezoid=False, lateral="periodic", delta=0.0):
    """Grid on the unit square; bottom fixed, top displaced by ``(delta, 0)``.

    With ``lateral="periodic"`` the left and right edges are tied together,
    which makes homogeneous simple shear an exact elastic state.
    """
    if nx < 2 or ny < 2:
        raise ConfigError("grid needs at least 2x2 points", key="collocation.grid")
    if lateral not in ("periodic", "free"):
        raise ConfigError("must be 'periodic' or 'free'", key="geometry.lateral")
    xs = np.linspace(0.0, 1.0, nx)
    ys = np.linspace(0.0, 1.0, ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    w = np.outer(_rule(nx, trapezoid), _rule(ny, trapezoid)).ravel() / ((nx - 1) * (ny - 1))
    bottom = np.stack([xs, np.zeros(nx)], axis=1)
    top = np.stack([xs, np.ones(nx)], axis=1)
    bc_pts = np.concatenate([bottom, top])
    unit = np.concatenate([np.zeros((nx, 2)), np.tile([1.0, 0.0], (nx, 1))])
    pairs = None
    if lateral == "periodic":
        pairs = np.stack([np.stack([np.zeros(ny), ys], 1), np.stack([np.ones(ny), ys], 1)], 0)
    return CollocationSet(pts, w, bc_pts, unit, delta, periodic_pairs=pairs,
                          meta={"nx": nx, "ny": ny, "trapezoid": trapezoid, "lateral": lateral})


@dataclass
class EnergyBreakdown:
    elastic: float = 0.0
    plastic_quadratic: float = 0.0
    plastic_linear: float = 0.0
    bc_loss: float = 0.0

    @property
    def total(self) -> float:
        return self.elastic + self.plastic_quadratic + self.plastic_linear

    @property
    def dissipation(self) -> float:
        return self.plastic_quadratic + self.plastic_linear

    def as_dict(self):
        return {"elastic": self.elastic, "plastic_quadratic": self.plastic_quadratic,
                "plastic_linear": self.plastic_linear, "total": self.total, "bc_loss": self.bc_loss}

    def is_finite(self):
        return all(math.isfinite(v) for v in (self.elastic, self.plastic_quadratic,
                                               self.plastic_linear, self.bc_loss))


def _p_scale(dim, p_measure):
    if p_measure == "jump":
        return 1.0
    if p_measure == "tensor":
        return 1.0 if dim == 1 else 1.0 / math.sqrt(2.0)
    raise ConfigError("must be 'jump' or 'tensor'", key="protocol.p_measure")


def plastic_measures(model: FieldModel, x, p_measure="jump"):
    """Plastic strain and equivalent plastic strain at points ``x``.

    1D returns scalar ``eps_p``; 2D returns ``(n, 2, 2)`` tensors.
    """
    b = model.band
    _, dphi, _ = band_profile(b.coordinate(x), b.beta)
    g = dphi / b.c
    p = _p_scale(model.dim, p_measure) * abs(b.jump) * g
    if model.dim == 1:
        return b.jump * g, p
    t, n = b.tangent, b.normal
    sym = 0.5 * (np.outer(t, n) + np.outer(n, t))
    return (b.jump * g)[:, None, None] * sym[None], p


def elastic_strain(model: FieldModel, x):
    if model.dim == 1:
        return model.regular.strain(x)
    J = model.regular.jacobian(x)
    G = np.swapaxes(J, 1, 2)  # G[k, i, d] = du_i/dx_d
    return 0.5 * (G + np.swapaxes(G, 1, 2))


def total_strain(model: FieldModel, x):
    """Symmetric gradient of the full displacement ``u_R + u_J``."""
    eps_p, _ = plastic_measures(model, x)
    return elastic_strain(model, x) + eps_p


class Problem:
    """Loss and gradient evaluator over the flat parameter vector of a model.

    ``template`` fixes the structure (knots or layer widths, band width and
    sharpness); :meth:`model` rebuilds a :class:`FieldModel` from ``theta``.
    """

    def __init__(self, template: FieldModel, material: MaterialSpec, colloc: CollocationSet,
                 p_measure="jump"):
        if template.dim != material.N or template.dim != colloc.dim:
            raise ConfigError("model, material and collocation dimensions differ")
        self.template = template
        self.material = material
        self.colloc = colloc
        self.p_measure = p_measure
        self.p_scale = _p_scale(template.dim, p_measure)
        self.dim = template.dim
        pts = colloc.points
        self._X = pts.reshape(-1, 1) if self.dim == 1 else pts
        self._sigma_p = material.yield_stress(pts)
        self.n_params = template.n_params
        self.n_regular = template.n_regular
        if self.dim == 1:
            e, s, h = template.regular.element(pts)
            self._elem, self._h = e, h

    def model(self, theta) -> FieldModel:
        return self.template.with_theta(theta)

    # -- energy ---------------------------------------------------------
    def energy(self, theta, grad=True):
        theta = np.asarray(theta, dtype=np.float64)
        m = self.material
        k = self.n_regular
        g = np.zeros(self.n_params) if grad else None
        w = self.colloc.weights
        if self.dim == 1:
            v = theta[:k]
            e = self._elem
            eps = (v[e + 1] - v[e]) / self._h
            elastic = float(np.sum(w * 0.5 * m.E * eps * eps))
            if grad:
                s = w * m.E * eps / self._h
                g[:k] += np.bincount(e + 1, s, minlength=k) - np.bincount(e, s, minlength=k)
            normal, tangent = np.array([1.0]), np.array([0.0])
            y_p, jump = theta[k], theta[k + 1]
        else:
            elastic, ge = kernels.mlp_elastic(theta[:k], self.template.regular.widths,
                                              self._X, w, m.lam, m.mu)
            if grad:
                g[:k] += ge
            alpha, y_p, jump = theta[k], theta[k + 1], theta[k + 2]
            normal = np.array([math.cos(alpha), math.sin(alpha)])
            tangent = np.array([-math.sin(alpha), math.cos(alpha)])
        b = self.template.band
        quad, lin, g_yp, g_al, g_ga = kernels.band_dissipation(
            self._X, w, self._sigma_p, normal, tangent, y_p, b.c, b.beta, jump, m.H, self.p_scale)
        if grad:
            if self.dim == 1:
                g[k] += g_yp
                g[k + 1] += g_ga
            else:
                g[k] += g_al
                g[k + 1] += g_yp
                g[k + 2] += g_ga
        return EnergyBreakdown(elastic, quad, lin), g

    # -- displacement at sparse points -----------------------------------
    def _displacement(self, theta, X):
        """Displacement at points ``X`` and a pullback for its gradient."""
        k = self.n_regular
        b = self.template.band
        if self.dim == 1:
            x = X.reshape(-1)
            reg = self.template.regular
            e, s, _ = reg.element(x)
            v = theta[:k]
            y_p, jump = theta[k], theta[k + 1]
            z = (x - y_p) / b.c
            phi, dphi, _ = band_profile(z, b.beta)
            u = (1 - s) * v[e] + s * v[e + 1] + jump * phi

            def pullback(gu):
                gu = gu.reshape(-1)
                g = np.zeros(self.n_params)
                g[:k] += np.bincount(e, gu * (1 - s), minlength=k) + np.bincount(e + 1, gu * s, minlength=k)
                g[k] = float(np.sum(gu * jump * dphi)) * (-1.0 / b.c)
                g[k + 1] = float(np.sum(gu * phi))
                return g

            return u.reshape(-1, 1), pullback

        widths = self.template.regular.widths
        alpha, y_p, jump = theta[k], theta[k + 1], theta[k + 2]
        n = np.array([math.cos(alpha), math.sin(alpha)])
        t = np.array([-math.sin(alpha), math.cos(alpha)])
        z = (X @ n - y_p) / b.c
        phi, dphi, _ = band_profile(z, b.beta)
        u = kernels.mlp_forward(theta[:k], widths, X) + jump * phi[:, None] * t[None, :]

        def pullback(gu):
            g = np.zeros(self.n_params)
            g[:k] = kernels.mlp_value_vjp(theta[:k], widths, X, gu)
            gt = gu @ t
            g[k] = float(np.sum(jump * (phi * (gu @ -n) + gt * dphi * (X @ t) / b.c)))
            g[k + 1] = float(np.sum(jump * gt * dphi)) * (-1.0 / b.c)
            g[k + 2] = float(np.sum(gt * phi))
            return g

        return u, pullback

    def bc_loss(self, theta, grad=True):
        """Mean squared Dirichlet error, plus the mean squared mismatch across
        periodic edge pairs when the collocation set defines them."""
        theta = np.asarray(theta, dtype=np.float64)
        c = self.colloc
        Xb = c.bc_points.reshape(len(c.bc_points), -1)
        u, pull = self._displacement(theta, Xb)
        r = u - c.bc_values.reshape(u.shape)
        nb = r.shape[0]
        loss = float(np.sum(r * r)) / nb
        g = pull(2.0 * r / nb) if grad else None
        if c.periodic_pairs is not None:
            left, right = c.periodic_pairs
            ul, pl = self._displacement(theta, left)
            ur, pr = self._displacement(theta, right)
            d = ul - ur
            npair = d.shape[0]
            loss += float(np.sum(d * d)) / npair
            if grad:
                gd = 2.0 * d / npair
                g = g + pl(gd) - pr(gd)
        return loss, g

    def loss(self, theta, mode="gated", lam=1e-4, abs_energy_guard=False, bc_weight=1.0):
        """Training loss and gradient.

        ``mode="gated"`` returns only the boundary loss while it exceeds
        ``lam``; ``mode="sum"`` always returns energy plus weighted boundary
        loss; ``mode="bc"`` returns only the boundary loss.
        """
        bc, gbc = self.bc_loss(theta)
        if mode == "bc" or (mode == "gated" and bc > lam):
            br = EnergyBreakdown(bc_loss=bc)
            return bc, gbc, br, False
        br, ge = self.energy(theta)
        br.bc_loss = bc
        if not br.is_finite() or not np.all(np.isfinite(ge)):
            raise DivergenceError("non-finite energy", breakdown=br)
        E = br.total
        if abs_energy_guard:
            ge = ge * (1.0 if E >= 0 else -1.0)
            E = abs(E)
        return E + bc_weight * bc, ge + bc_weight * gbc, br, True


def assemble_energy(model: FieldModel, m: MaterialSpec, q: CollocationSet, p_measure="jump"):
    br, _ = Problem(model, m, q, p_measure).energy(model.theta(), grad=False)
    if not br.is_finite():
        raise DivergenceError("non-finite energy", breakdown=br)
    return br


def boundary_loss(model: FieldModel, q: CollocationSet, m: MaterialSpec | None = None):
    if m is None:
        m = MaterialSpec(E=1.0, sigma_p=1.0, Hbar=-1.0, h=1.0, N=model.dim)
    return Problem(model, m, q).bc_loss(model.theta(), grad=False)[0]


def gated_loss(model: FieldModel, m: MaterialSpec, q: CollocationSet, lam=1e-4,
               abs_energy_guard=False, bc_weight=1.0):
    if not lam > 0:
        raise ConfigError("must be positive", key="protocol.lambda")
    value, _, _, _ = Problem(model, m, q).loss(model.theta(), "gated", lam, abs_energy_guard, bc_weight)
    return value


def postprocess(model: FieldModel, m: MaterialSpec, q: CollocationSet, p_measure="jump"):
    """Sampled fields at the collocation points.

    1D keys: ``x, u, eps, eps_p, p, sigma, force``.  2D keys: ``x, y, u, v``
    and the ``11, 22, 12`` components of ``eps, eps_p, sigma`` plus ``p``.
    """
    pts = q.points
    u = model.displacement(pts)
    eps_p, p = plastic_measures(model, pts, p_measure)
    eps_e = elastic_strain(model, pts)
    sig = stress(eps_e, m)
    if model.dim == 1:
        A = q.area if q.area is not None else np.ones_like(pts)
        return {"x": pts, "u": u, "eps": eps_e + eps_p, "eps_p": eps_p, "p": p,
                "sigma": sig, "force": sig * A}
    eps = eps_e + eps_p
    out = {"x": pts[:, 0], "y": pts[:, 1], "u": u[:, 0], "v": u[:, 1]}
    for name, T in (("eps", eps), ("eps_p", eps_p), ("sigma", sig)):
        out[f"{name}_11"] = T[:, 0, 0]
        out[f"{name}_22"] = T[:, 1, 1]
        out[f"{name}_12"] = T[:, 0, 1]
    out["p"] = p
    return out


def element_forces(model: FieldModel, m: MaterialSpec, area=bar_area):
    """Axial force at the element midpoints of a 1D model.

    Linear elements carry one strain value each; the midpoint is where the
    recovered force ``E eps A`` is most accurate.
    """
    if model.dim != 1:
        raise ConfigError("element forces are defined for the 1D bar")
    k = model.regular.knots
    v = model.regular.nodal_values
    mid = 0.5 * (k[1:] + k[:-1])
    eps = np.diff(v) / np.diff(k)
    return mid, m.E * eps * np.asarray(area(mid), dtype=np.float64)
