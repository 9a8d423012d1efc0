"""Pure-numpy kernels; reference implementation and import-time fallback.

Layout conventions shared with the compiled kernels:

* ``theta`` stacks ``(W, b)`` for every layer, ``W`` row-major ``(out, in)``.
* ``J[k, d, i]`` is ``d u_i / d x_d`` at point ``k``.
* ``w`` are quadrature weights; energies are ``sum(w * density)``.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def _layers(theta, widths):
    Ws, bs = [], []
    k = 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        Ws.append(theta[k:k + fan_out * fan_in].reshape(fan_out, fan_in))
        k += fan_out * fan_in
        bs.append(theta[k:k + fan_out])
        k += fan_out
    return Ws, bs


def mlp_forward(theta, widths, X):
    Ws, bs = _layers(theta, widths)
    a = X
    for W, b in zip(Ws[:-1], bs[:-1]):
        a = np.maximum(a @ W.T + b, 0.0)
    return a @ Ws[-1].T + bs[-1]


def mlp_forward_jac(theta, widths, X):
    """Outputs and input Jacobians by forward tangent propagation."""
    Ws, bs = _layers(theta, widths)
    n, d = X.shape
    a = X
    T = np.broadcast_to(np.eye(d), (n, d, d))
    for W, b in zip(Ws[:-1], bs[:-1]):
        z = a @ W.T + b
        m = z > 0.0
        a = np.where(m, z, 0.0)
        T = (T @ W.T) * m[:, None, :]
    return a @ Ws[-1].T + bs[-1], T @ Ws[-1].T


def mlp_value_vjp(theta, widths, X, gu):
    """Gradient of ``sum(gu * u(X))`` with respect to ``theta``."""
    Ws, bs = _layers(theta, widths)
    acts = [X]
    masks = []
    a = X
    for W, b in zip(Ws[:-1], bs[:-1]):
        z = a @ W.T + b
        m = z > 0.0
        a = np.where(m, z, 0.0)
        acts.append(a)
        masks.append(m)
    grads = []
    g = gu
    for layer in range(len(Ws) - 1, -1, -1):
        grads.append(g.sum(axis=0))
        grads.append((g.T @ acts[layer]).ravel())
        if layer:
            g = (g @ Ws[layer]) * masks[layer - 1]
    return np.concatenate(grads[::-1])


def elastic_density_2d(J, lam, mu):
    e11 = J[:, 0, 0]
    e22 = J[:, 1, 1]
    e12 = 0.5 * (J[:, 1, 0] + J[:, 0, 1])
    tr = e11 + e22
    psi = 0.5 * lam * tr * tr + mu * (e11 * e11 + e22 * e22 + 2.0 * e12 * e12)
    return psi, lam * tr + 2.0 * mu * e11, lam * tr + 2.0 * mu * e22, 2.0 * mu * e12


def mlp_elastic(theta, widths, X, w, lam, mu):
    """Plane-strain elastic energy of the perceptron field and its gradient.

    Biases only enter through the ReLU masks, so their gradient is zero.
    """
    Ws, bs = _layers(theta, widths)
    n, d = X.shape
    a = X
    T = np.broadcast_to(np.eye(d), (n, d, d))
    Ts, masks = [], []
    for W, b in zip(Ws[:-1], bs[:-1]):
        z = a @ W.T + b
        m = z > 0.0
        a = np.where(m, z, 0.0)
        Ts.append(T)
        masks.append(m)
        T = (T @ W.T) * m[:, None, :]
    Ts.append(T)
    J = T @ Ws[-1].T
    psi, s11, s22, s12 = elastic_density_2d(J, lam, mu)
    energy = float(np.sum(w * psi))
    G = np.empty_like(J)
    G[:, 0, 0] = w * s11
    G[:, 1, 1] = w * s22
    G[:, 0, 1] = w * s12
    G[:, 1, 0] = w * s12
    grads = []
    for layer in range(len(Ws) - 1, -1, -1):
        Tin = Ts[layer]
        grads.append(np.zeros(Ws[layer].shape[0]))
        gw = G.reshape(n * d, -1).T @ Tin.reshape(n * d, -1)
        grads.append(gw.ravel())
        if layer:
            G = (G @ Ws[layer]) * masks[layer - 1][:, None, :]
    return energy, np.concatenate(grads[::-1])


def band_dissipation(X, w, sigma_p, normal, tangent, y_p, c, beta, gamma, H, p_scale):
    """Band dissipation ``sum w (H p^2 / 2 + sigma_p p)`` with ``p = s |gamma| Phi_z / c``.

    Returns ``(quadratic, linear, d/dy_p, d/dalpha, d/dgamma)``.
    """
    y = X @ normal
    z = (y - y_p) / c
    e1 = np.exp(-beta * np.abs(z + 0.5))
    e2 = np.exp(-beta * np.abs(z - 0.5))
    s1 = np.where(z + 0.5 >= 0, 1.0 / (1.0 + e1), e1 / (1.0 + e1))
    s2 = np.where(z - 0.5 >= 0, 1.0 / (1.0 + e2), e2 / (1.0 + e2))
    dphi = s1 - s2
    d2phi = beta * (s1 * (1.0 - s1) - s2 * (1.0 - s2))
    g = p_scale * abs(gamma) / c
    p = g * dphi
    quad = float(np.sum(w * (0.5 * H * p * p)))
    lin = float(np.sum(w * sigma_p * p))
    dedp = w * (H * p + sigma_p)
    dz = dedp * g * d2phi
    g_yp = -float(np.sum(dz)) / c
    g_alpha = float(np.sum(dz * (X @ tangent))) / c if X.shape[1] > 1 else 0.0
    g_gamma = float(np.sum(dedp * dphi)) * p_scale * np.sign(gamma) / c
    return quad, lin, g_yp, g_alpha, float(g_gamma)
