"""Run configuration, result files and the ``strongloc`` command line.

Configs are YAML mappings.  Every section is optional; omitted keys take
the defaults of the chosen problem, and unknown keys are rejected with an
error naming the dotted key.  The resolved config is echoed as
``config.resolved.yaml`` in the output directory and loads back to an
identical :class:`RunConfig`.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import yaml

from . import diffcore, driver, oracle
from .errors import ConfigError, NonConvergenceError, StronglocError
from .material import MaterialSpec, cohesive_energy_density, cohesive_traction

OUTPUT_ENV = "STRONGLOC_OUTPUT_DIR"
SUMMARY_COLUMNS = ["delta", "jump", "position", "angle_deg", "cohesive_energy", "cohesive_force",
                   "total_energy", "bc_loss", "converged", "flags"]

_PROTOCOL_1D = {
    "adamw_epochs": 3000, "lbfgs_rounds": 1, "lbfgs_enabled": True, "abs_energy_guard": False,
    "lambda": 1e-4, "lr0": 1e-2, "weight_decay": 1e-4, "bc_weight": 1e3, "lbfgs_max_iter": 500,
    "lbfgs_gtol": 1e-9, "presolve_epochs": 2000, "presolve_lbfgs_iter": 500,
    "retry_on_divergence": True,
}
_PROTOCOL_2D = dict(_PROTOCOL_1D, adamw_epochs=5000, lbfgs_enabled=False, lbfgs_rounds=0, lr0=1e-3,
                    presolve_epochs=5000)

DEFAULTS = {
    "bar1d": {
        "seed": 0,
        "output_dir": "runs/bar1d",
        "material": {"E": 2.0, "nu": 0.0, "sigma_p": 1.0, "Hbar": -2.0 / 11.0, "h": 1.0},
        "geometry": {"L": 10.0, "area": "parabolic"},
        "collocation": {"points": 1001, "trapezoid": False},
        "network": {"nodes": 11},
        "band": {"position": 0.4, "position_mode": "fraction", "angle_deg": 0.0, "jump": 0.0,
                 "beta": 100.0, "c": None},
        "protocol": _PROTOCOL_1D,
        "program": {"steps": [4.25, 4.5, 4.75, 5.0, 5.25, 5.5], "presolve_delta": None},
    },
    "shear2d": {
        "seed": 0,
        "output_dir": "runs/shear2d",
        "material": {"E": 5.6, "nu": 0.4, "sigma_p": "parabolic", "Hbar": -1.0, "h": 0.1},
        "geometry": {"lateral": "periodic"},
        "collocation": {"grid": 101, "trapezoid": False},
        "network": {"widths": [2, 10, 10, 10, 10, 2]},
        "band": {"position": 0.25, "position_mode": "absolute", "angle_deg": 90.0, "jump": 0.0,
                 "beta": 100.0, "c": None},
        "protocol": _PROTOCOL_2D,
        "program": {"steps": [0.375, 0.4, 0.55, 0.7], "presolve_delta": 0.375},
    },
}
SECTIONS = ("material", "geometry", "collocation", "network", "band", "protocol", "program")


@dataclass
class RunConfig:
    problem: str
    seed: int
    output_dir: str
    material: dict
    geometry: dict
    collocation: dict
    network: dict
    band: dict
    protocol: dict
    program: dict

    def to_dict(self):
        return asdict(self)


def _merge(defaults, given, prefix):
    if not isinstance(given, dict):
        raise ConfigError("must be a mapping", key=prefix)
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        key = f"{prefix}.{k}"
        if k not in defaults:
            raise ConfigError("unknown key", key=key)
        out[k] = v
    return out


def _positive(sec, name, d, integer=False):
    v = d[name]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
        raise ConfigError(f"must be a positive number, got {v!r}", key=f"{sec}.{name}")
    if integer and int(v) != v:
        raise ConfigError(f"must be an integer, got {v!r}", key=f"{sec}.{name}")


def _validate(cfg: RunConfig):
    m = cfg.material
    for name in ("E", "h"):
        _positive("material", name, m)
    if not isinstance(m["Hbar"], (int, float)):
        raise ConfigError("must be a number", key="material.Hbar")
    if cfg.problem == "bar1d":
        _positive("material", "sigma_p", m)
        _positive("geometry", "L", cfg.geometry)
        if cfg.geometry["area"] != "parabolic":
            raise ConfigError("only 'parabolic' is available", key="geometry.area")
        _positive("collocation", "points", cfg.collocation, integer=True)
        _positive("network", "nodes", cfg.network, integer=True)
        if cfg.network["nodes"] < 2:
            raise ConfigError("need at least 2 nodes", key="network.nodes")
    else:
        if m["sigma_p"] != "parabolic":
            raise ConfigError("only 'parabolic' is available", key="material.sigma_p")
        if cfg.geometry["lateral"] not in ("periodic", "free"):
            raise ConfigError("must be 'periodic' or 'free'", key="geometry.lateral")
        _positive("collocation", "grid", cfg.collocation, integer=True)
        w = cfg.network["widths"]
        if (not isinstance(w, list) or len(w) < 2 or w[0] != 2 or w[-1] != 2
                or any(int(a) != a or a < 1 for a in w)):
            raise ConfigError("must be a list of positive integers from 2 to 2", key="network.widths")
    if not -1.0 < m["nu"] < 0.5:
        raise ConfigError("must lie in (-1, 0.5)", key="material.nu")
    b = cfg.band
    if b["position_mode"] not in ("fraction", "absolute"):
        raise ConfigError("must be 'fraction' or 'absolute'", key="band.position_mode")
    _positive("band", "beta", b)
    if b["c"] is not None:
        _positive("band", "c", b)
    p = cfg.protocol
    for name in ("lambda", "lr0", "lbfgs_gtol"):
        _positive("protocol", name, p)
    for name in ("adamw_epochs", "lbfgs_rounds", "lbfgs_max_iter", "presolve_epochs",
                 "presolve_lbfgs_iter"):
        v = p[name]
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            raise ConfigError(f"must be a nonnegative integer, got {v!r}", key=f"protocol.{name}")
    if p["bc_weight"] < 0 or p["weight_decay"] < 0:
        raise ConfigError("must be nonnegative", key="protocol.bc_weight")
    steps = cfg.program["steps"]
    if not isinstance(steps, list):
        raise ConfigError("must be a list", key="program.steps")
    if any(b < a for a, b in zip(steps, steps[1:])) or any(d < 0 for d in steps):
        raise ConfigError("must be nonnegative and nondecreasing", key="program.steps")
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError("must be an unsigned 64-bit integer", key="seed")


def parse_config(raw: dict) -> RunConfig:
    """Validate a config mapping and fill in problem defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    problem = raw.get("problem")
    if problem not in DEFAULTS:
        raise ConfigError(f"must be one of {sorted(DEFAULTS)}, got {problem!r}", key="problem")
    base = DEFAULTS[problem]
    allowed = {"problem", "seed", "output_dir", *SECTIONS}
    for k in raw:
        if k not in allowed:
            raise ConfigError("unknown key", key=str(k))
    values = {"problem": problem, "seed": raw.get("seed", base["seed"]),
              "output_dir": str(raw.get("output_dir", base["output_dir"]))}
    for sec in SECTIONS:
        values[sec] = _merge(base[sec], raw.get(sec, {}) or {}, sec)
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def load_config(path, echo=True) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", key="config")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}", key="config") from exc
    cfg = parse_config(raw or {})
    if echo:
        dump_config(cfg, Path(output_dir(cfg)) / "config.resolved.yaml")
    return cfg


def dump_config(cfg: RunConfig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
    return path


def output_dir(cfg: RunConfig) -> str:
    return os.environ.get(OUTPUT_ENV) or cfg.output_dir


def build_protocol(cfg: RunConfig) -> driver.Protocol:
    p = dict(cfg.protocol)
    p["lam"] = p.pop("lambda")
    return driver.Protocol(**p)


def build_setup(cfg: RunConfig) -> driver.Setup:
    m, b = cfg.material, cfg.band
    if cfg.problem == "bar1d":
        return driver.bar_setup(h=m["h"], E=m["E"], sigma_p=m["sigma_p"], Hbar=m["Hbar"],
                                L=cfg.geometry["L"], n_points=int(cfg.collocation["points"]),
                                n_nodes=int(cfg.network["nodes"]), y_p0=b["position"],
                                y_p0_mode=b["position_mode"], beta=b["beta"], c=b["c"],
                                trapezoid=cfg.collocation["trapezoid"])
    # the unit square makes both position readings coincide
    return driver.shear_setup(h=m["h"], E=m["E"], nu=m["nu"], Hbar=m["Hbar"],
                              n_grid=int(cfg.collocation["grid"]), widths=tuple(cfg.network["widths"]),
                              seed=cfg.seed, y_p0=b["position"], alpha0=math.radians(b["angle_deg"]),
                              beta=b["beta"], c=b["c"], trapezoid=cfg.collocation["trapezoid"],
                              lateral=cfg.geometry["lateral"])


def build_program(cfg: RunConfig) -> driver.LoadProgram:
    return driver.LoadProgram(list(cfg.program["steps"]), build_protocol(cfg))


# -- result files -------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _delta_tag(delta):
    return format(float(delta), "g")


def band_yield_stress(material: MaterialSpec, band: dict, dim: int) -> float:
    """Yield stress on the band midline, at the point closest to the domain centre."""
    if dim == 1:
        return float(material.yield_stress(np.array([band["y_p"]]))[0])
    a = band["alpha"]
    n = np.array([math.cos(a), math.sin(a)])
    centre = np.array([0.5, 0.5])
    pt = centre + (band["y_p"] - centre @ n) * n
    return float(material.yield_stress(pt.reshape(1, 2))[0])


def cohesive_response(report: driver.StepReport, material: MaterialSpec):
    """``(psi, t_c)`` of the learned jump at the band's yield stress."""
    dim = 1 if "alpha" not in report.band else 2
    sp = band_yield_stress(material, report.band, dim)
    j = report.jump
    return float(cohesive_energy_density(j, material, sp)), float(cohesive_traction(j, material, sp))


def summary_row(report: driver.StepReport, material: MaterialSpec):
    psi, tc = cohesive_response(report, material)
    return {
        "delta": report.delta,
        "jump": report.jump,
        "position": report.y_p,
        "angle_deg": report.band.get("alpha_deg", ""),
        "cohesive_energy": psi,
        "cohesive_force": tc,
        "total_energy": report.breakdown.total,
        "bc_loss": report.breakdown.bc_loss,
        "converged": report.converged,
        "flags": ";".join(report.flags),
    }


def write_fields(report: driver.StepReport, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"fields_{_delta_tag(report.delta)}.csv"
    cols = list(report.fields)
    data = np.column_stack([np.asarray(report.fields[c], dtype=np.float64).reshape(-1) for c in cols])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for row in data:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")
    return path


def write_step_report(report: driver.StepReport, directory, material: MaterialSpec | None = None):
    """Write ``fields_<delta>.csv`` and ``step_<delta>.json``; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    if report.fields:
        paths.append(write_fields(report, directory))
    payload = report.to_dict()
    if material is not None:
        psi, tc = cohesive_response(report, material)
        payload["cohesive"] = {"energy": psi, "force": tc}
    path = directory / f"step_{_delta_tag(report.delta)}.json"
    path.write_text(json.dumps(payload, indent=1, default=float))
    paths.append(path)
    return paths


def write_summary(reports, directory, material: MaterialSpec):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "summary.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for rep in reports:
            row = summary_row(rep, material)
            w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    return path


def read_summary(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- orchestration ------------------------------------------------------------

def run_config(cfg: RunConfig, out_dir=None, verbose=False):
    """Run a full load program and write every result file.

    Returns ``(reports, output directory)``.
    """
    out = Path(out_dir or output_dir(cfg))
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.resolved.yaml")
    setup = build_setup(cfg)
    program = build_program(cfg)

    def log(rep):
        write_step_report(rep, out, setup.material)
        if verbose:
            print(f"delta={rep.delta:g} jump={rep.jump:.6g} position={rep.y_p:.6g} "
                  f"energy={rep.breakdown.total:.6g} flags={','.join(rep.flags) or '-'}", flush=True)

    d0 = cfg.program["presolve_delta"]
    if d0 is None and cfg.problem == "bar1d":
        d0 = elastic_limit(cfg)
    reports = driver.run_load_program(setup, program, d0, callback=log)
    write_summary(reports, out, setup.material)
    return reports, out


def elastic_limit(cfg: RunConfig) -> float:
    """Largest end displacement of the bar without localization."""
    m = cfg.material
    C = oracle.compliance_integral(E=m["E"], L=cfg.geometry["L"])
    return float(m["sigma_p"] * C)


def sweep_configs(base: RunConfig, vary: str):
    """Named variants of ``base`` for the sensitivity studies."""
    out = []

    def variant(name, **sections):
        d = base.to_dict()
        for sec, upd in sections.items():
            d[sec] = dict(d[sec], **upd)
        d["output_dir"] = str(Path(base.output_dir) / name)
        out.append((name, parse_config(d)))

    if vary == "h":
        for h in (0.05, 0.1, 0.2):
            variant(f"h_{h:g}", material={"h": h})
    elif vary == "init":
        if base.problem != "shear2d":
            raise ConfigError("init sweep is defined for shear2d", key="problem")
        for pos in (0.2, 0.5, 0.8):
            for ang in (0, 15, 30, 45, 60, 75):
                variant(f"init_{pos:g}_{ang:d}", band={"position": pos, "position_mode": "absolute",
                                                       "angle_deg": float(ang)})
    elif vary == "collocation":
        if base.problem != "bar1d":
            raise ConfigError("collocation sweep is defined for bar1d", key="problem")
        for n in (901, 1101):
            variant(f"points_{n}", collocation={"points": n})
        for k in (6, 21):
            variant(f"nodes_{k}", network={"nodes": k})
    else:
        raise ConfigError(f"unknown sweep {vary!r}", key="vary")
    return out


def _run_one(cfg_dict):
    cfg = parse_config(cfg_dict)
    reports, _ = run_config(cfg, cfg.output_dir)
    return all(r.converged for r in reports)


def _exit_for(reports):
    return 0 if all(r.converged for r in reports) else 1


def _cmd_run(args):
    cfg = load_config(args.config, echo=False)
    out = args.output_dir or output_dir(cfg)
    reports, out = run_config(cfg, out, verbose=True)
    print(f"wrote {len(reports)} step(s) to {out}")
    return _exit_for(reports)


def _cmd_oracle(args):
    if args.problem == "bar1d":
        m = MaterialSpec(E=2.0, sigma_p=1.0, Hbar=-2.0 / 11.0, h=1.0)
        print("delta,P,j,W,x_band")
        for d in args.delta:
            s = oracle.solve_bar(d, m)
            print(",".join(_fmt(v) for v in (s.delta, s.P, s.j, s.W, s.x_band)))
    else:
        from .material import ShearYieldProfile
        m = MaterialSpec(E=5.6, sigma_p=ShearYieldProfile(), Hbar=-1.0, h=0.1, N=2, nu=0.4)
        print("delta,tau,j,W,unique")
        for d in args.delta:
            s = oracle.solve_shear(d, m)
            print(",".join(_fmt(v) for v in (s.delta, s.tau, s.j, s.W, s.unique)))
    return 0


def _cmd_sweep(args):
    if args.config:
        base = load_config(args.config, echo=False)
    else:
        base = parse_config({"problem": args.problem})
    if args.output_dir:
        base = parse_config(dict(base.to_dict(), output_dir=args.output_dir))
    elif os.environ.get(OUTPUT_ENV):
        base = parse_config(dict(base.to_dict(), output_dir=os.environ[OUTPUT_ENV]))
    runs = sweep_configs(base, args.vary)
    for name, cfg in runs:
        print(f"{name}\t{cfg.output_dir}")
    if args.dry_run:
        return 0
    dicts = [cfg.to_dict() for _, cfg in runs]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            ok = list(pool.map(_run_one, dicts))
    else:
        ok = [_run_one(d) for d in dicts]
    print(f"{sum(ok)}/{len(ok)} runs converged")
    return 0 if all(ok) else 1


def _cmd_gradcheck(args):
    errors = diffcore.standard_suite(args.eps)
    worst = 0.0
    for name, err in errors.items():
        print(f"{name:20s} {err:.3e}")
        worst = max(worst, err)
    ok = worst <= args.tol
    print(("PASS" if ok else "FAIL") + f" max relative error {worst:.3e} (tolerance {args.tol:g})")
    return 0 if ok else 1


def _cmd_report(args):
    d = Path(args.dir)
    path = d / "summary.csv"
    if not path.is_file():
        raise ConfigError(f"no summary.csv in {d}", key="dir")
    rows = read_summary(path)
    print(f"{'delta':>8} {'jump':>10} {'position':>10} {'angle':>8} {'psi':>10} {'t_c':>10} {'energy':>10}  status")
    flagged = 0
    for r in rows:
        ang = f"{float(r['angle_deg']):8.2f}" if r["angle_deg"] else f"{'-':>8}"
        status = "ok" if r["converged"] == "true" else "FLAGGED"
        flagged += status != "ok"
        extra = f" ({r['flags']})" if r["flags"] else ""
        print(f"{float(r['delta']):8.4g} {float(r['jump']):10.5f} {float(r['position']):10.5f} {ang} "
              f"{float(r['cohesive_energy']):10.5f} {float(r['cohesive_force']):10.5f} "
              f"{float(r['total_energy']):10.5f}  {status}{extra}")
    return 1 if flagged else 0


def make_parser():
    ap = argparse.ArgumentParser(prog="strongloc", description="Strain localization by energy minimization.")
    sub = ap.add_subparsers(dest="command")
    r = sub.add_parser("run", help="run a load program from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--output-dir")
    o = sub.add_parser("oracle", help="print analytical reference values")
    o.add_argument("--problem", choices=["bar1d", "shear2d"], default="bar1d")
    o.add_argument("--delta", type=float, nargs="+", required=True)
    s = sub.add_parser("sweep", help="run a sensitivity study")
    s.add_argument("--vary", choices=["h", "init", "collocation"], required=True)
    s.add_argument("--config")
    s.add_argument("--problem", choices=["bar1d", "shear2d"], default="shear2d")
    s.add_argument("--output-dir")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--dry-run", action="store_true", help="list the runs without executing them")
    g = sub.add_parser("gradcheck", help="check reverse-mode gradients against finite differences")
    g.add_argument("--eps", type=float, default=1e-6)
    g.add_argument("--tol", type=float, default=1e-5)
    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("--dir", required=True)
    return ap


def main(argv=None):
    ap = make_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    if args.command is None:
        ap.print_usage(sys.stderr)
        return 2
    handlers = {"run": _cmd_run, "oracle": _cmd_oracle, "sweep": _cmd_sweep,
                "gradcheck": _cmd_gradcheck, "report": _cmd_report}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NonConvergenceError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return 1
    except StronglocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
