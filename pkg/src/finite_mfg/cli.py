"""Batch command line front end.

    finite-mfg solve    --config run.ini [--task stationary|ergodic|discounted] [--out DIR]
    finite-mfg master   --config run.ini [--task master|ergodic-master]
    finite-mfg verify   --config run.ini [--seed N]
    finite-mfg simulate --config run.ini [--seed N]

The config is an INI file with a ``[model]`` section (ModelSpec fields,
``g`` as a comma separated list) and a ``[run]`` section holding the
numeric knobs. Exit status: 0 all checks passed, 1 some check failed,
2 malformed config, 3 solver failure (the report is still written).
"""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import SimplexError, as_simplex_point
from .markov import PolicyFlow, estimate_cost, simulate_paths, write_paths_csv
from .master import build_discounted_field, monotonicity_check, solve_ergodic_master
from .mfg_solver import (
    R_PROBE,
    ConvergenceError,
    solve_discounted,
    solve_ergodic,
    solve_stationary_discounted,
    write_report,
)
from .model import ModelSpec, rate_matrix
from . import verify as V

LGR = logging.getLogger("finite_mfg")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

TASKS = {
    "solve": ("stationary", "ergodic", "discounted"),
    "master": ("master", "ergodic-master"),
    "verify": ("verify",),
    "simulate": ("simulate",),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    spec: ModelSpec
    task: str
    r: float = 0.1
    r_probe: float = R_PROBE
    r0: float = 0.1
    T: float = 5.0
    dt: float | None = None
    tol: float | None = None
    n: int | None = None
    paths: int = 10_000
    seed: int = 0
    mu0: np.ndarray | None = None
    checks: tuple = ()
    out: Path = Path("out")
    raw: dict = field(default_factory=dict)

    def echo(self) -> dict:
        return {
            "model": self.spec.to_dict(),
            "task": self.task,
            "r": self.r,
            "r_probe": self.r_probe,
            "r0": self.r0,
            "T": self.T,
            "dt": self.dt,
            "tol": self.tol,
            "n": self.n,
            "paths": self.paths,
            "seed": self.seed,
            "mu0": None if self.mu0 is None else self.mu0.tolist(),
            "checks": list(self.checks),
        }


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def load_config(path, command: str, task=None, out=None, seed=None) -> RunConfig:
    """Parse and validate an INI run configuration; raises ConfigError."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        if path is not None:
            with open(path) as fh:
                cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    for sec in cp.sections():
        if sec not in ("model", "run"):
            raise ConfigError(f"unknown section [{sec}]")
    model = dict(cp["model"]) if cp.has_section("model") else {}
    run = dict(cp["run"]) if cp.has_section("run") else {}
    try:
        return _build(model, run, command, task, out, seed)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


_MODEL_KEYS = {"d": int, "a_l": float, "a_u": float, "kappa": float, "c": float, "beta": float}
_RUN_KEYS = {"task", "r", "r_probe", "r0", "t", "dt", "tol", "n", "paths", "seed", "mu0", "checks", "out"}


def _build(model, run, command, task, out, seed) -> RunConfig:
    unknown = set(model) - set(_MODEL_KEYS) - {"g"}
    unknown |= set(run) - _RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    kw = {k: conv(model[k]) for k, conv in _MODEL_KEYS.items() if k in model}
    if "g" in model:
        kw["g"] = tuple(_floats(model["g"]))
    spec = ModelSpec(**kw)

    if task is None:
        # a config task from another command family falls back to this command's default
        task = run.get("task") if run.get("task") in TASKS[command] else TASKS[command][0]
    if task not in TASKS[command]:
        raise ConfigError(f"task '{task}' is not valid for command '{command}' "
                          f"(expected one of {TASKS[command]})")
    cfg = RunConfig(spec, task, raw={"model": model, "run": run})
    cfg.r_probe = float(run.get("r_probe", R_PROBE))
    cfg.r = float(run.get("r", 0.1))
    cfg.r0 = float(run.get("r0", 0.1))
    cfg.T = float(run.get("t", 5.0))
    cfg.dt = float(run["dt"]) if run.get("dt") else None
    cfg.tol = float(run["tol"]) if run.get("tol") else None
    cfg.n = int(run["n"]) if run.get("n") else None
    cfg.paths = int(run.get("paths", 10_000))
    cfg.seed = int(run.get("seed", 0)) if seed is None else int(seed)
    cfg.checks = tuple(c.strip() for c in run.get("checks", "").split(",") if c.strip())
    cfg.out = Path(out or run.get("out", "out"))
    if "mu0" in run:
        mu0 = _floats(run["mu0"])
        if len(mu0) != spec.d:
            raise ConfigError(f"mu0 has {len(mu0)} entries, model has d={spec.d}")
        try:
            cfg.mu0 = as_simplex_point(mu0)
        except SimplexError as exc:
            raise ConfigError(f"mu0 is not on the simplex: {exc}") from exc

    if not 0 < cfg.r_probe <= 1:
        raise ConfigError("r_probe must lie in (0, 1]")
    if task in ("discounted", "master", "simulate", "stationary") and not 0 <= cfg.r <= cfg.r_probe:
        raise ConfigError(f"r={cfg.r} outside [0, r_probe={cfg.r_probe}]")
    if task in ("discounted", "master", "stationary") and cfg.r == 0:
        raise ConfigError(f"task '{task}' needs r > 0")
    if not 0 < cfg.r0 <= cfg.r_probe:
        raise ConfigError("r0 must lie in (0, r_probe]")
    if cfg.T <= 0:
        raise ConfigError("T must be positive")
    if cfg.dt is not None and not 0 < cfg.dt * spec.max_exit_rate <= 0.1:
        raise ConfigError("dt must satisfy 0 < dt (d-1) a_u <= 0.1")
    if cfg.tol is not None and cfg.tol <= 0:
        raise ConfigError("tol must be positive")
    if cfg.n is not None and cfg.n < (4 if task == "ergodic-master" else 1):
        raise ConfigError("lattice resolution too small")
    if cfg.paths < 1:
        raise ConfigError("paths must be at least 1")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    bad = set(cfg.checks) - set(V.SUITE)
    if bad:
        raise ConfigError(f"unknown checks: {sorted(bad)}")
    return cfg


# -- tasks -----------------------------------------------------------------


def _residual_check(name, measured, threshold) -> dict:
    return {"name": name, "verdict": "pass" if measured <= threshold else "fail",
            "margin": float(threshold - measured), "measured": float(measured),
            "threshold": float(threshold)}


def task_stationary(cfg, out):
    tol = cfg.tol or 1e-12
    sol = solve_stationary_discounted(cfg.spec, cfg.r, tol)
    sol.to_csv(out / "solution.csv")
    scale = max(1.0, float(np.abs(sol.value).max()))
    return sol.summary(), [_residual_check("stationary_residual", sol.residual, 10 * tol * scale)]


def task_ergodic(cfg, out):
    tol = cfg.tol or 1e-10
    sol = solve_ergodic(cfg.spec, tol)
    sol.to_csv(out / "solution.csv")
    checks = [_residual_check("ergodic_residual", sol.residual, tol)]
    checks.append({"name": "newton_polish", "verdict": "fail" if sol.flagged else "pass",
                   "margin": -1.0 if sol.flagged else 0.0})
    return sol.summary(), checks


def task_discounted(cfg, out):
    tol = cfg.tol or 1e-10
    mu0 = cfg.mu0 if cfg.mu0 is not None else V.default_mu0(cfg.spec.d)
    flow = solve_discounted(cfg.spec, cfg.r, mu0, tol, dt=cfg.dt, r_probe=cfg.r_probe)
    flow.to_csv(out / "flow.csv")
    res_u, res_mu = flow.residuals(cfg.spec)
    summary = flow.summary()
    summary.update(residual_u=res_u, residual_mu=res_mu)
    checks = [_residual_check("flow_residual", max(res_u, res_mu), max(tol, 1e-9))]
    return summary, checks


def task_master(cfg, out):
    n = cfg.n or V.default_n(cfg.spec)
    f = build_discounted_field(cfg.spec, cfg.r, n, dt=cfg.dt)
    return _field_outputs(f, cfg, out, 10 * (1e-10 + 5e-3))


def task_ergodic_master(cfg, out):
    n = cfg.n or V.default_n(cfg.spec)
    f = solve_ergodic_master(cfg.spec, n, cfg.tol or 1e-5, r0=cfg.r0, dt=cfg.dt)
    summary, checks = _field_outputs(f, cfg, out, 1e-3)
    checks.append(_residual_check("rho_matches_ergodic", abs(f.rho - f.info["rho_ergodic"]), 1e-4))
    return summary, checks


def _field_outputs(f, cfg, out, res_tol):
    f.to_csv(out / "master_field.csv")
    summary = f.summary(seed=cfg.seed)
    write_report(out / "master_summary.json", summary)
    res = np.abs(f.residuals())
    res = res[f.interior()] if f.r > 0 else res
    checks = [
        _residual_check("master_residual", res.max(), res_tol),
        _residual_check("monotonicity", -monotonicity_check(f, 200, cfg.seed), 1e-8),
    ]
    return summary, checks


def task_verify(cfg, out):
    results = V.run_suite(cfg.spec, cfg.checks or None, seed=cfg.seed, check_tol=cfg.tol)
    for chk in results:
        LGR.info(chk.line())
    summary = {"checks_run": [c.name for c in results]}
    return summary, [c.to_dict() for c in results]


def task_simulate(cfg, out):
    spec = cfg.spec
    if cfg.r > 0:
        mu0 = cfg.mu0 if cfg.mu0 is not None else V.default_mu0(spec.d)
        flow = solve_discounted(spec, cfg.r, mu0, cfg.tol or 1e-10, dt=cfg.dt, r_probe=cfg.r_probe)
        if cfg.T > flow.horizon:
            raise ConfigError(f"T={cfg.T} exceeds the solved horizon {flow.horizon}")
        policy = PolicyFlow(flow.rates(spec), flow.t)
        target = flow.measure_at(cfg.T)
        mu_flow = (flow.t, flow.mu)
        value = flow.u[0]
    else:
        erg = solve_ergodic(spec)
        mu0 = erg.measure if cfg.mu0 is None else cfg.mu0
        policy = PolicyFlow(rate_matrix(spec, erg.value))
        target = erg.measure
        mu_flow = erg.measure
        value = np.full(spec.d, erg.rho)
    paths = simulate_paths(policy, mu0, cfg.T, cfg.paths, seed=cfg.seed)
    write_paths_csv(paths, out / "paths.csv")
    emp = np.bincount([p.states[-1] for p in paths], minlength=spec.d) / cfg.paths
    se = np.sqrt(np.clip(target * (1 - target), 1e-300, None) / cfg.paths)
    z = float(np.max(np.abs(emp - target) / se))
    cost = estimate_cost(spec, policy, mu_flow, cfg.r, paths)
    summary = {"empirical": emp.tolist(), "model_law": target.tolist(), "max_z": z,
               "cost_mean": cost.mean, "cost_stderr": cost.stderr, "n_paths": cfg.paths}
    if cfg.r > 0:
        # running cost on [0, T] plus the discounted value at T reproduces the value at 0
        ends = np.array([p.states[-1] for p in paths])
        summary["value_estimate"] = cost.mean + np.exp(-cfg.r * cfg.T) * flow.value_at(cfg.T)[ends].mean()
        summary["value_model"] = float(mu0 @ value)
    return summary, [_residual_check("marginal_agreement", z, 3.0)]


DISPATCH = {
    "stationary": task_stationary,
    "ergodic": task_ergodic,
    "discounted": task_discounted,
    "master": task_master,
    "ergodic-master": task_ergodic_master,
    "verify": task_verify,
    "simulate": task_simulate,
}


def run(cfg: RunConfig) -> int:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    report = {"config": cfg.echo(), "task": cfg.task, "results": {}, "checks": [], "timings": {}}
    t0 = time.perf_counter()
    status = EXIT_OK
    try:
        summary, checks = DISPATCH[cfg.task](cfg, out)
        report["results"] = summary
        report["checks"] = checks
        if any(c["verdict"] == "fail" for c in checks):
            status = EXIT_CHECK
    except ConfigError as exc:
        report["error"] = f"config: {exc}"
        status = EXIT_CONFIG
    except (ConvergenceError, ValueError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        report["error"] = f"{type(exc).__name__}: {exc}"
        status = EXIT_SOLVER
    report["timings"]["total_seconds"] = time.perf_counter() - t0
    report["status"] = {EXIT_OK: "ok", EXIT_CHECK: "check failure", EXIT_CONFIG: "malformed config",
                        EXIT_SOLVER: "solver failure"}[status]
    report["exit_code"] = status
    write_report(out / "report.json", report)
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="finite-mfg", description="Finite-state mean field game solvers")
    p.add_argument("command", choices=sorted(TASKS))
    p.add_argument("--config", help="INI file with [model] and [run] sections")
    p.add_argument("--task", help="override the task named in the config")
    p.add_argument("--out", help="output directory (default: [run] out or ./out)")
    p.add_argument("--seed", type=int, help="Monte Carlo seed (unsigned 64-bit)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.command, args.task, args.out, args.seed)
    except (ConfigError, ValueError) as exc:
        print(f"malformed config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status = run(cfg)
    if cfg.task == "verify" or status != EXIT_OK:
        import json

        rep = json.loads((cfg.out / "report.json").read_text())
        for c in rep.get("checks", []):
            line = f"{c['verdict'].upper():4s} {c['name']} margin={c['margin']:.3e}"
            print(line)
        if "error" in rep:
            print(rep["error"], file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
