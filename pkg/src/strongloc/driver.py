"""Quasi-static load stepping with warm starts between steps."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .energy import (CollocationSet, EnergyBreakdown, Problem, bar_collocation, postprocess,
                     shear_collocation)
from .errors import ConfigError, DivergenceError, NonConvergenceError
from .fields import BandGeometry, FieldModel, RegularField1D, RegularField2D
from .material import MaterialSpec, ShearYieldProfile, bar_area
from .optim import AdamW, lbfgs_minimize

__all__ = [
    "Protocol",
    "LoadProgram",
    "StepReport",
    "Setup",
    "bar_setup",
    "shear_setup",
    "elastic_presolve",
    "solve_load_step",
    "run_load_program",
]


@dataclass
class Protocol:
    """Training knobs for one load step.

    ``lbfgs_rounds`` runs of L-BFGS follow the AdamW phase when
    ``lbfgs_enabled``.  ``bc_weight`` scales the boundary term in the
    ungated L-BFGS objective.
    """

    adamw_epochs: int = 3000
    lbfgs_rounds: int = 1
    lbfgs_enabled: bool = True
    abs_energy_guard: bool = False
    lam: float = 1e-4
    lr0: float = 1e-3
    weight_decay: float = 1e-4
    bc_weight: float = 1e3
    lbfgs_max_iter: int = 500
    lbfgs_gtol: float = 1e-9
    presolve_epochs: int = 2000
    presolve_lbfgs_iter: int = 500
    retry_on_divergence: bool = True

    def __post_init__(self):
        if self.adamw_epochs < 0:
            raise ConfigError("must be nonnegative", key="protocol.adamw_epochs")
        if self.lbfgs_rounds < 0:
            raise ConfigError("must be nonnegative", key="protocol.lbfgs_rounds")
        if not self.lam > 0:
            raise ConfigError("must be positive", key="protocol.lambda")
        if not self.lr0 > 0:
            raise ConfigError("must be positive", key="protocol.lr0")
        if self.bc_weight < 0:
            raise ConfigError("must be nonnegative", key="protocol.bc_weight")


@dataclass
class LoadProgram:
    steps: list
    protocol: Protocol = field(default_factory=Protocol)

    def __post_init__(self):
        self.steps = [float(d) for d in self.steps]
        if any(b < a for a, b in zip(self.steps, self.steps[1:])):
            raise ConfigError("load steps must be nondecreasing", key="program.steps")
        if any(d < 0 for d in self.steps):
            raise ConfigError("load steps must be nonnegative", key="program.steps")


@dataclass
class StepReport:
    delta: float
    theta: np.ndarray = field(repr=False)
    band: dict
    breakdown: EnergyBreakdown
    history: list = field(repr=False)
    gate_epoch: int | None
    fields: dict = field(repr=False)
    wall_time: float
    converged: bool = True
    flags: list = field(default_factory=list)
    knobs: dict = field(default_factory=dict)
    lbfgs: list = field(default_factory=list)

    @property
    def jump(self) -> float:
        return abs(self.band["jump"])

    @property
    def y_p(self) -> float:
        return self.band["y_p"]

    def to_dict(self):
        return {
            "delta": self.delta,
            "band": dict(self.band),
            "energy": self.breakdown.as_dict(),
            "gate_epoch": self.gate_epoch,
            "converged": self.converged,
            "flags": list(self.flags),
            "knobs": dict(self.knobs),
            "lbfgs": [dict(r) for r in self.lbfgs],
            "wall_time": self.wall_time,
            "history": [float(v) for v in self.history],
            "theta": [float(v) for v in self.theta],
        }


@dataclass
class Setup:
    """Everything a load program needs besides the protocol."""

    material: MaterialSpec
    colloc: CollocationSet
    template: FieldModel
    p_measure: str = "jump"

    def problem(self, delta) -> Problem:
        return Problem(self.template, self.material, self.colloc.at(delta), self.p_measure)


def bar_setup(h=1.0, E=2.0, sigma_p=1.0, Hbar=-2.0 / 11.0, L=10.0, n_points=1001, n_nodes=11,
              y_p0=0.4, y_p0_mode="fraction", beta=100.0, c=None, trapezoid=False):
    """Tapered bar; the band starts at ``y_p0 * L`` (fraction) or ``y_p0``."""
    if y_p0_mode not in ("fraction", "absolute"):
        raise ConfigError("must be 'fraction' or 'absolute'", key="init.position_mode")
    m = MaterialSpec(E=E, sigma_p=sigma_p, Hbar=Hbar, h=h, N=1, name="bar")
    q = bar_collocation(L, n_points, lambda x: bar_area(x, L), trapezoid)
    start = y_p0 * L if y_p0_mode == "fraction" else y_p0
    band = BandGeometry(dim=1, y_p=start, c=h if c is None else c, beta=beta, jump=0.0)
    return Setup(m, q, FieldModel(RegularField1D.uniform(L, n_nodes), band))


def shear_setup(h=0.1, E=5.6, nu=0.4, Hbar=-1.0, n_grid=101, widths=(2, 10, 10, 10, 10, 2), seed=0,
                y_p0=0.25, alpha0=math.pi / 2, beta=100.0, c=None, trapezoid=False,
                lateral="periodic", p_measure="jump"):
    """Sheared unit square with the parabolic yield profile."""
    m = MaterialSpec(E=E, sigma_p=ShearYieldProfile(), Hbar=Hbar, h=h, N=2, nu=nu, name="shear")
    q = shear_collocation(n_grid, n_grid, trapezoid, lateral)
    band = BandGeometry(dim=2, alpha=alpha0, y_p=y_p0, c=h if c is None else c, beta=beta, jump=0.0)
    return Setup(m, q, FieldModel(RegularField2D.glorot(tuple(widths), seed), band), p_measure)


def _band_summary(model: FieldModel):
    b = model.band
    out = {"y_p": b.y_p, "jump": b.jump, "jump_norm": abs(b.jump)}
    if b.dim == 2:
        out["alpha"] = b.alpha
        out["alpha_deg"] = math.degrees(b.alpha)
    return out


def _adamw_phase(problem, theta, epochs, protocol, mask, history, gated=True):
    """AdamW over the gated loss; returns parameters and the gate epoch."""
    opt = AdamW(problem.n_params, lr0=protocol.lr0, weight_decay=protocol.weight_decay,
                total_steps=max(epochs, 1))
    gate = None
    mode = "gated" if gated else "sum"
    for ep in range(epochs):
        val, g, br, with_energy = problem.loss(theta, mode, protocol.lam, protocol.abs_energy_guard,
                                               protocol.bc_weight)
        if not math.isfinite(val):
            raise DivergenceError(f"non-finite loss at epoch {ep}", breakdown=br)
        history.append(val)
        if with_energy and gate is None:
            gate = ep
        theta = opt.step(theta, g, mask)
    return theta, gate


def _lbfgs_phase(problem, theta, protocol, mask, guard):
    def fun(t):
        val, g, _, _ = problem.loss(t, "sum", protocol.lam, guard, protocol.bc_weight)
        return val, g

    res = lbfgs_minimize(fun, theta, max_iter=protocol.lbfgs_max_iter, gtol=protocol.lbfgs_gtol,
                         mask=mask)
    if not np.all(np.isfinite(res.x)):
        raise DivergenceError("L-BFGS produced non-finite parameters")
    return res


def elastic_presolve(setup: Setup, delta, protocol: Protocol | None = None, theta0=None) -> FieldModel:
    """Fit the regular field to the elastic state at ``delta`` with the band frozen.

    The band keeps its initial position and orientation and a zero jump.
    """
    protocol = protocol or Protocol()
    problem = setup.problem(delta)
    theta = setup.template.theta() if theta0 is None else np.array(theta0, dtype=np.float64)
    theta[setup.template.band_slice][-1] = 0.0
    mask = ~setup.template.band_mask()
    history = []
    if delta == 0.0 and setup.template.dim == 1:
        theta[mask] = 0.0
        return setup.template.with_theta(theta)
    theta, _ = _adamw_phase(problem, theta, protocol.presolve_epochs, protocol, mask, history)
    if protocol.presolve_lbfgs_iter:
        sub = replace(protocol, lbfgs_max_iter=protocol.presolve_lbfgs_iter)
        theta = _lbfgs_phase(problem, theta, sub, mask, False).x
    bc, _ = problem.bc_loss(theta, grad=False)
    if bc > protocol.lam:
        raise NonConvergenceError(f"elastic pre-solve boundary loss {bc:.3g} above {protocol.lam:g}",
                                  history=history)
    return setup.template.with_theta(theta)


def solve_load_step(setup: Setup, model_prev: FieldModel, delta, protocol: Protocol | None = None,
                    keep_fields=True) -> StepReport:
    """Train one load step from the previous converged model."""
    protocol = protocol or Protocol()
    t0 = time.perf_counter()
    problem = setup.problem(delta)
    theta = model_prev.theta()
    history = []
    flags = []
    knobs = {"adamw_epochs": protocol.adamw_epochs, "lbfgs_rounds": protocol.lbfgs_rounds
             if protocol.lbfgs_enabled else 0, "abs_energy_guard": protocol.abs_energy_guard}
    converged = True
    theta, gate = _adamw_phase(problem, theta, protocol.adamw_epochs, protocol, None, history)
    if gate is None and protocol.adamw_epochs:
        flags.append("gate_not_reached")
    lbfgs_log = []
    if protocol.lbfgs_enabled:
        start = theta
        guard = protocol.abs_energy_guard
        for attempt in range(2):
            try:
                theta = start
                lbfgs_log = []
                for _ in range(protocol.lbfgs_rounds):
                    res = _lbfgs_phase(problem, theta, protocol, None, guard)
                    theta = res.x
                    history.extend(res.history[1:])
                    lbfgs_log.append({"iterations": res.iterations, "converged": res.converged,
                                      "line_search_failed": res.line_search_failed,
                                      "grad_norm": res.grad_norm, "loss": res.f})
                break
            except DivergenceError:
                if attempt == 0 and protocol.retry_on_divergence and not guard:
                    guard = True
                    flags.append("retried_with_abs_energy_guard")
                    knobs["abs_energy_guard"] = True
                    continue
                flags.append("diverged")
                converged = False
                theta = start
                break
        if lbfgs_log and not lbfgs_log[-1]["converged"]:
            flags.append("lbfgs_not_converged")
    br, _ = problem.energy(theta, grad=False)
    br.bc_loss = problem.bc_loss(theta, grad=False)[0]
    if not br.is_finite():
        converged = False
        flags.append("non_finite_energy")
    model = problem.model(theta)
    samples = postprocess(model, setup.material, problem.colloc, setup.p_measure) if keep_fields else {}
    return StepReport(float(delta), theta, _band_summary(model), br, history, gate, samples,
                      time.perf_counter() - t0, converged, flags, knobs, lbfgs_log)


def run_load_program(setup: Setup, program: LoadProgram, presolve_delta=None, model0=None,
                     continue_on_flag=True, keep_fields=True, callback=None):
    """Run every step in order, threading the trained model through.

    The elastic pre-solve runs at ``presolve_delta`` (default: the first
    step) unless ``model0`` is supplied.
    """
    if not program.steps:
        return []
    if model0 is None:
        d0 = program.steps[0] if presolve_delta is None else presolve_delta
        model0 = elastic_presolve(setup, d0, program.protocol)
    reports = []
    model = model0
    for delta in program.steps:
        rep = solve_load_step(setup, model, delta, program.protocol, keep_fields)
        reports.append(rep)
        if callback is not None:
            callback(rep)
        if not rep.converged and not continue_on_flag:
            break
        model = setup.template.with_theta(rep.theta)
    return reports
