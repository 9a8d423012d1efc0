"""AdamW with cosine decay, and L-BFGS with a strong-Wolfe line search.

Both work on flat float64 vectors.  A boolean ``mask`` freezes entries:
masked-out parameters receive exactly zero update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DivergenceError

__all__ = ["cosine_lr", "AdamW", "adamw_step", "LbfgsResult", "lbfgs_minimize", "strong_wolfe"]


def cosine_lr(t, T, lr0):
    """Cosine decay from ``lr0`` at ``t = 0`` to zero at ``t = T``."""
    if T <= 0:
        raise ConfigError("decay horizon must be positive", key="protocol.adamw_epochs")
    if not 0 <= t <= T:
        raise ConfigError(f"step {t} outside [0, {T}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / T))


@dataclass
class AdamW:
    """Adam with decoupled weight decay and an optional cosine schedule.

    ``total_steps=None`` keeps the rate constant at ``lr0``.
    """

    n: int
    lr0: float = 1e-2
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    total_steps: int | None = None
    step_count: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError("betas must lie in [0, 1)", key="protocol.betas")
        if self.m is None:
            self.m = np.zeros(self.n)
        if self.v is None:
            self.v = np.zeros(self.n)

    def rate(self, t=None):
        t = self.step_count if t is None else t
        if self.total_steps is None:
            return self.lr0
        return cosine_lr(min(t, self.total_steps), self.total_steps, self.lr0)

    def step(self, params, grads, mask=None):
        """Return updated parameters; ``params`` is not modified."""
        params = np.asarray(params, dtype=np.float64)
        grads = np.asarray(grads, dtype=np.float64)
        if params.shape != (self.n,) or grads.shape != (self.n,):
            raise ConfigError("parameter and gradient shapes must match the optimizer")
        if not np.all(np.isfinite(grads)):
            raise DivergenceError("non-finite gradient in AdamW step")
        lr = self.rate()
        b1, b2 = self.betas
        self.step_count += 1
        t = self.step_count
        if mask is not None:
            grads = np.where(mask, grads, 0.0)
        self.m = b1 * self.m + (1.0 - b1) * grads
        self.v = b2 * self.v + (1.0 - b2) * grads * grads
        mhat = self.m / (1.0 - b1 ** t)
        vhat = self.v / (1.0 - b2 ** t)
        update = lr * (mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * params)
        if mask is not None:
            update = np.where(mask, update, 0.0)
        return params - update


def adamw_step(state: AdamW, params, grads, mask=None):
    return state.step(params, grads, mask)


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    iterations: int
    converged: bool
    line_search_failed: bool = False
    grad_norm: float = float("nan")
    history: list = field(default_factory=list)
    evaluations: int = 0


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic through two points with slopes, or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def strong_wolfe(phi, f0, d0, alpha0=1.0, c1=1e-4, c2=0.9, max_evals=25, alpha_max=1e10):
    """Step length satisfying the strong Wolfe conditions.

    ``phi(alpha)`` returns ``(f, slope, payload)``.  Returns
    ``(alpha, f, payload, ok)``; on failure the best sufficient-decrease
    point seen (or ``alpha = 0``) is returned with ``ok=False``.
    """
    best = (0.0, f0, None)
    evals = 0
    # values within rounding of f0 cannot certify decrease; fall back on the slope
    noise = 1e-14 * abs(f0)

    def decreased(a, f):
        return f <= f0 + c1 * a * d0 or f <= f0 + noise

    def probe(a):
        nonlocal evals, best
        evals += 1
        f, s, payload = phi(a)
        if not (math.isfinite(f) and math.isfinite(s)):
            return math.inf, math.nan, payload
        if f < best[1] and decreased(a, f):
            best = (a, f, payload)
        return f, s, payload

    def zoom(lo, flo, dlo, hi, fhi, dhi):
        while evals < max_evals:
            a = None
            if math.isfinite(fhi) and math.isfinite(dhi):
                a = _cubic_min(lo, flo, dlo, hi, fhi, dhi)
            width = abs(hi - lo)
            if a is None or not (min(lo, hi) + 0.1 * width <= a <= max(lo, hi) - 0.1 * width):
                a = 0.5 * (lo + hi)
            f, s, payload = probe(a)
            if not decreased(a, f) or f > flo:
                hi, fhi, dhi = a, f, s
            else:
                if abs(s) <= -c2 * d0:
                    return a, f, payload, True
                if s * (hi - lo) >= 0:
                    hi, fhi, dhi = lo, flo, dlo
                lo, flo, dlo = a, f, s
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
        return best[0], best[1], best[2], False

    a_prev, f_prev, d_prev = 0.0, f0, d0
    a = alpha0
    first = True
    while evals < max_evals:
        f, s, payload = probe(a)
        if not math.isfinite(f):
            a = 0.5 * (a_prev + a)
            continue
        if not decreased(a, f) or (not first and f > f_prev):
            return zoom(a_prev, f_prev, d_prev, a, f, s)
        if abs(s) <= -c2 * d0:
            return a, f, payload, True
        if s >= 0:
            return zoom(a, f, s, a_prev, f_prev, d_prev)
        a_prev, f_prev, d_prev = a, f, s
        a = min(2.0 * a, alpha_max)
        first = False
    return best[0], best[1], best[2], False


def lbfgs_minimize(fun: Callable, x0, memory=20, c1=1e-4, c2=0.9, max_iter=500, gtol=1e-9,
                   mask=None, callback=None) -> LbfgsResult:
    """Minimize ``fun(x) -> (f, g)`` with two-loop-recursion L-BFGS.

    Stops when ``||g||_2 <= gtol`` or after ``max_iter`` iterations.  Pairs
    with ``s . y <= 0`` are not stored.  A failed line search ends the run
    and returns the best point found with ``line_search_failed=True``.
    """
    x = np.array(x0, dtype=np.float64)
    keep = np.ones_like(x, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    f, g = fun(x)
    nev = 1
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        raise DivergenceError("non-finite loss at L-BFGS start")
    g = np.where(keep, g, 0.0)
    S, Y, R = [], [], []
    history = [float(f)]
    gnorm = float(np.linalg.norm(g))
    if gnorm <= gtol:
        return LbfgsResult(x, float(f), 0, True, grad_norm=gnorm, history=history, evaluations=nev)
    failed = False
    it = 0
    for it in range(1, max_iter + 1):
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(S), reversed(Y), reversed(R)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if S:
            q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
        else:
            q *= min(1.0, 1.0 / gnorm)
        for (s, y, rho), a in zip(zip(S, Y, R), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = np.where(keep, -q, 0.0)
        slope = float(g @ d)
        if slope >= 0:
            # not a descent direction; restart from steepest descent
            S.clear(), Y.clear(), R.clear()
            d = -g * min(1.0, 1.0 / gnorm)
            slope = float(g @ d)

        def phi(a):
            xa = x + a * d
            fa, ga = fun(xa)
            ga = np.where(keep, ga, 0.0)
            return float(fa), float(ga @ d), (xa, ga)

        alpha, f_new, payload, ok = strong_wolfe(phi, float(f), slope, 1.0, c1, c2)
        nev += 1
        if payload is None or alpha == 0.0:
            failed = True
            break
        x_new, g_new = payload
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-16 * float(y @ y):
            S.append(s)
            Y.append(y)
            R.append(1.0 / sy)
            if len(S) > memory:
                S.pop(0), Y.pop(0), R.pop(0)
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        history.append(float(f))
        if callback is not None:
            callback(it, x, f)
        if not ok:
            failed = True
            break
        if gnorm <= gtol:
            return LbfgsResult(x, float(f), it, True, grad_norm=gnorm, history=history, evaluations=nev)
    return LbfgsResult(x, float(f), it, False, line_search_failed=failed, grad_norm=gnorm,
                       history=history, evaluations=nev)
