"""Displacement ansatz: a regular part plus a band-activated jump.

``u*(x) = u_R(x) + w Phi(x)`` where ``Phi`` is a smooth ramp across a
straight band of width ``c`` built from two softplus terms.  The regular
part is a piecewise-linear field on fixed knots (1D) or a ReLU perceptron
(2D).  All trainable quantities of a :class:`FieldModel` are exposed as one
flat vector so the optimizers never need to know the structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "softplus",
    "sigmoid",
    "band_profile",
    "BandGeometry",
    "RegularField1D",
    "RegularField2D",
    "FieldModel",
    "band_activation",
    "band_activation_spatial_gradient",
    "eval_regular",
    "eval_total",
]

DEFAULT_BETA = 100.0


def softplus(z, beta=1.0):
    """``log(1 + exp(beta z)) / beta`` without overflow."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-beta * np.abs(z))) / beta


def sigmoid(z, beta=1.0):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-beta * np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def band_profile(z, beta=DEFAULT_BETA):
    """Return ``(Phi, dPhi/dz, d2Phi/dz2)`` at band coordinate ``z``."""
    z = np.asarray(z, dtype=np.float64)
    phi = softplus(z + 0.5, beta) - softplus(z - 0.5, beta)
    s1 = sigmoid(z + 0.5, beta)
    s2 = sigmoid(z - 0.5, beta)
    dphi = s1 - s2
    d2phi = beta * (s1 * (1.0 - s1) - s2 * (1.0 - s2))
    return phi, dphi, d2phi


@dataclass
class BandGeometry:
    """Straight band: normal angle, midpoint offset, width, sharpness, jump.

    In 1D the normal is fixed to ``+x`` and ``alpha`` is ignored.  In 2D the
    jump vector is ``jump * t`` with ``t = (-sin alpha, cos alpha)``, so it is
    tangential to the band by construction.
    """

    dim: int = 1
    alpha: float = 0.0
    y_p: float = 0.0
    c: float = 1.0
    beta: float = DEFAULT_BETA
    jump: float = 0.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError("band dimension must be 1 or 2", key="band.dim")
        if not self.c > 0:
            raise ConfigError("band width must be positive", key="band.c")
        if not self.beta > 0:
            raise ConfigError("sharpness must be positive", key="band.beta")

    @property
    def normal(self) -> np.ndarray:
        if self.dim == 1:
            return np.array([1.0])
        return np.array([math.cos(self.alpha), math.sin(self.alpha)])

    @property
    def tangent(self) -> np.ndarray:
        if self.dim == 1:
            return np.array([1.0])
        return np.array([-math.sin(self.alpha), math.cos(self.alpha)])

    @property
    def jump_vector(self) -> np.ndarray:
        return self.jump * self.tangent

    @property
    def n_trainable(self) -> int:
        return 2 if self.dim == 1 else 3

    def trainable(self) -> np.ndarray:
        if self.dim == 1:
            return np.array([self.y_p, self.jump])
        return np.array([self.alpha, self.y_p, self.jump])

    def with_trainable(self, v) -> "BandGeometry":
        v = [float(a) for a in v]
        if self.dim == 1:
            return replace(self, y_p=v[0], jump=v[1])
        return replace(self, alpha=v[0], y_p=v[1], jump=v[2])

    def coordinate(self, x) -> np.ndarray:
        """Band coordinate ``z = (x . n - y_p) / c`` for points ``(n, dim)``."""
        x = _points(x, self.dim)
        return (x @ self.normal - self.y_p) / self.c


def _points(x, dim):
    x = np.asarray(x, dtype=np.float64)
    if dim == 1:
        return x.reshape(-1, 1)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[-1] != dim:
        raise ConfigError(f"points must have {dim} coordinates")
    return x


def band_activation(x, g: BandGeometry) -> np.ndarray:
    phi, _, _ = band_profile(g.coordinate(x), g.beta)
    return phi


def band_activation_spatial_gradient(x, g: BandGeometry) -> np.ndarray:
    """``grad Phi = Phi_z / c * n``, shape ``(n, dim)``."""
    _, dphi, _ = band_profile(g.coordinate(x), g.beta)
    return (dphi / g.c)[:, None] * g.normal[None, :]


@dataclass
class RegularField1D:
    """Continuous piecewise-linear field on equally spaced knots."""

    knots: np.ndarray
    nodal_values: np.ndarray

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=np.float64)
        self.nodal_values = np.asarray(self.nodal_values, dtype=np.float64).copy()
        if self.knots.size < 2:
            raise ConfigError("need at least two knots", key="network.nodes")
        if np.any(np.diff(self.knots) <= 0):
            raise ConfigError("knots must be strictly increasing", key="network.nodes")
        if self.nodal_values.shape != self.knots.shape:
            raise ConfigError("one nodal value per knot required")

    @classmethod
    def uniform(cls, L, n_nodes, values=None):
        knots = np.linspace(0.0, L, n_nodes)
        return cls(knots, np.zeros(n_nodes) if values is None else values)

    @property
    def n_params(self):
        return self.knots.size

    @property
    def spacing(self):
        return float(self.knots[1] - self.knots[0])

    def params(self):
        return self.nodal_values.copy()

    def with_params(self, v):
        return RegularField1D(self.knots, np.asarray(v, dtype=np.float64))

    def element(self, x):
        """Element index and local coordinate; a point on an interior knot
        belongs to the element on its right, ``x = L`` to the last one."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        lo, hi = self.knots[0], self.knots[-1]
        tol = 1e-12 * max(1.0, abs(hi))
        if np.any(x < lo - tol) or np.any(x > hi + tol):
            raise DomainError(f"points outside [{lo}, {hi}]")
        e = np.searchsorted(self.knots, x, side="right") - 1
        e = np.clip(e, 0, self.knots.size - 2)
        h = self.knots[e + 1] - self.knots[e]
        return e, (x - self.knots[e]) / h, h

    def __call__(self, x):
        e, s, _ = self.element(x)
        v = self.nodal_values
        return (1.0 - s) * v[e] + s * v[e + 1]

    def strain(self, x):
        e, _, h = self.element(x)
        v = self.nodal_values
        return (v[e + 1] - v[e]) / h


@dataclass
class RegularField2D:
    """ReLU perceptron ``R^2 -> R^2``; the flat vector stacks ``(W, b)`` per layer."""

    widths: tuple = (2, 10, 10, 10, 10, 2)
    theta: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ConfigError("invalid layer widths", key="network.widths")
        if self.widths[0] != 2 or self.widths[-1] != 2:
            raise ConfigError("2D field maps 2 inputs to 2 outputs", key="network.widths")
        n = self.n_params
        if self.theta is None:
            self.theta = np.zeros(n)
        self.theta = np.asarray(self.theta, dtype=np.float64).copy()
        if self.theta.shape != (n,):
            raise ConfigError(f"expected {n} network parameters, got {self.theta.shape}")

    @property
    def n_params(self):
        w = self.widths
        return sum(w[i + 1] * w[i] + w[i + 1] for i in range(len(w) - 1))

    @classmethod
    def glorot(cls, widths=(2, 10, 10, 10, 10, 2), seed=0):
        """Glorot-uniform weights and zero biases from a seeded generator."""
        rng = np.random.default_rng(seed)
        parts = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            parts.append(rng.uniform(-lim, lim, size=fan_out * fan_in))
            parts.append(np.zeros(fan_out))
        return cls(tuple(widths), np.concatenate(parts))

    def layers(self):
        return unpack_mlp(self.theta, self.widths)

    def params(self):
        return self.theta.copy()

    def with_params(self, v):
        return RegularField2D(self.widths, v)

    def __call__(self, x):
        from . import kernels

        return kernels.mlp_forward(self.theta, self.widths, _points(x, 2))

    def jacobian(self, x):
        """``J[k, d, i] = d u_i / d x_d`` at each point."""
        from . import kernels

        return kernels.mlp_forward_jac(self.theta, self.widths, _points(x, 2))[1]


def unpack_mlp(theta, widths):
    Ws, bs = [], []
    k = 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        Ws.append(theta[k:k + fan_out * fan_in].reshape(fan_out, fan_in))
        k += fan_out * fan_in
        bs.append(theta[k:k + fan_out])
        k += fan_out
    return Ws, bs


@dataclass
class FieldModel:
    """Regular field plus band; the full trainable parameter set."""

    regular: RegularField1D | RegularField2D
    band: BandGeometry

    def __post_init__(self):
        want = 1 if isinstance(self.regular, RegularField1D) else 2
        if self.band.dim != want:
            raise ConfigError("band dimension does not match the regular field")

    @property
    def dim(self):
        return self.band.dim

    @property
    def n_regular(self):
        return self.regular.n_params

    @property
    def n_params(self):
        return self.regular.n_params + self.band.n_trainable

    def theta(self) -> np.ndarray:
        return np.concatenate([self.regular.params(), self.band.trainable()])

    def with_theta(self, theta) -> "FieldModel":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ConfigError(f"expected {self.n_params} parameters, got {theta.shape}")
        k = self.n_regular
        return FieldModel(self.regular.with_params(theta[:k]), self.band.with_trainable(theta[k:]))

    def band_mask(self) -> np.ndarray:
        """Boolean mask selecting band parameters in the flat vector."""
        m = np.zeros(self.n_params, dtype=bool)
        m[self.n_regular:] = True
        return m

    @property
    def band_slice(self):
        return slice(self.n_regular, self.n_params)

    def regular_displacement(self, x):
        u = self.regular(x)
        return np.asarray(u).reshape(-1) if self.dim == 1 else u

    def jump_displacement(self, x):
        phi = band_activation(x, self.band)
        if self.dim == 1:
            return self.band.jump * phi
        return phi[:, None] * self.band.jump_vector[None, :]

    def displacement(self, x):
        return self.regular_displacement(x) + self.jump_displacement(x)


def eval_regular(field, x):
    """Regular displacement at ``x``: interpolation (1D) or perceptron (2D)."""
    return field(x)


def eval_total(model: FieldModel, x):
    return model.displacement(x)
