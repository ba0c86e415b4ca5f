"""Command-line harness for the simulation studies.

Every subcommand reads a JSON config and writes CSV files into ``--out``.
Outputs depend only on the config (and any data files it references);
wall-clock timings go to ``timing.log`` next to the CSVs.

Config keys (all optional unless noted)::

    model        {"name": "ungm" | "ct" | "linear", "params": {...}, "free": [...]}
    seed         integer, required unless --seed is given
    T            number of measurements (default 100)
    trajectories number of simulated trajectories (default 1)
    data         directory of traj_XXXX.csv files; simulated from seed otherwise
    rules        list of rule specs, "ekf" allowed (default ["sym3"])
    grid         {"param": name, "start": a, "stop": b, "num": n}
    pf           {"particles": N, "proposal": "optimal", "seed": s}
    sigmas       initial-uncertainty levels for the coordinated-turn sweep
    theta0       starting point of the estimators (default: true values)
    reference_rule  rule the mle summary compares against
    gradient_mode   "sensitivity" | "fisher" | "finite-difference"
    em_iterations   number of EM iterations (default 10)
    optimizer    OptimizerConfig fields
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import baselines, gauss
from .cubature import parse_scheme
from .estimate import (
    LineSearchFailure,
    OptimizerConfig,
    em_iterate,
    log_likelihood,
    maximize_likelihood,
    resolve_rule,
)
from .io import write_csv
from .models import (
    CTModel,
    LinearGaussianModel,
    SimOutput,
    ct_model,
    initial_uncertainty_sweep,
    load_sim,
    save_sim,
    simulate,
    ungm_model,
)

COMMANDS = ("simulate", "filter", "smooth", "likelihood-grid", "mle", "em", "track-rmse")


class ConfigError(ValueError):
    pass


# -- configuration ---------------------------------------------------------------------


def build_model(spec: dict):
    """Instantiate a model from its config entry."""
    name = spec.get("name", "ungm")
    params = dict(spec.get("params", {}))
    free = spec.get("free")
    if name == "ungm":
        return ungm_model(**params, free=tuple(free) if free is not None else ("a",))
    if name == "ct":
        return ct_model(**params, free=tuple(free) if free is not None else ("r1_std",))
    if name == "linear":
        mats = {k: params.pop(k) for k in ("A", "H", "Q", "R", "m0", "P0")}
        return LinearGaussianModel(**mats, free=tuple(free or ()), **params)
    raise ConfigError(f"unknown model {name!r}")


def load_config(path: Optional[str], overrides: argparse.Namespace) -> dict:
    cfg = json.loads(Path(path).read_text()) if path else {}
    if getattr(overrides, "seed", None) is not None:
        cfg["seed"] = overrides.seed
    if getattr(overrides, "rule", None):
        cfg["rules"] = [overrides.rule]
    if "seed" not in cfg:
        raise ConfigError("config must give an explicit seed (or pass --seed)")
    cfg.setdefault("rules", ["sym3"])
    for r in cfg["rules"]:
        if r.lower() != "ekf":
            parse_scheme(r)
    if cfg.get("reference_rule"):
        parse_scheme(cfg["reference_rule"])
    build_model(cfg.get("model", {}))
    return cfg


def _optimizer(cfg: dict) -> OptimizerConfig:
    return OptimizerConfig(**cfg.get("optimizer", {}))


def _datasets(cfg: dict, model) -> list:
    if cfg.get("data"):
        files = sorted(Path(cfg["data"]).glob("traj_*.csv"))
        if not files:
            raise ConfigError(f"no traj_*.csv files in {cfg['data']}")
        return [load_sim(f) for f in files]
    T = int(cfg.get("T", 100))
    n_traj = int(cfg.get("trajectories", 1))
    return [simulate(model, model.theta0, T, int(cfg["seed"]), trajectory=i) for i in range(n_traj)]


def _theta0(cfg: dict, model) -> np.ndarray:
    return np.asarray(cfg["theta0"], dtype=float) if "theta0" in cfg else model.theta0


def _sigmas(cfg: dict, model) -> list:
    if isinstance(model, CTModel):
        return [float(s) for s in cfg.get("sigmas", [0.5])]
    return [None]


def _model_at(model, sigma, sim: SimOutput):
    return model if sigma is None else initial_uncertainty_sweep(model, sigma, sim.states[0])


def _pmap(fn: Callable, tasks: Sequence, threads: int) -> list:
    """Map over tasks, preserving order; processes when ``threads > 1``."""
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


class _Timing:
    def __init__(self, out: Path, command: str):
        self.path = out / "timing.log"
        self.command = command
        self.start = time.perf_counter()

    def done(self, extra: str = ""):
        with open(self.path, "a") as fh:
            fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {self.command} {time.perf_counter() - self.start:.3f}s {extra}\n")


# -- workers (module level so they pickle) --------------------------------------------------


def _mle_task(args):
    cfg, sigma, i, sim, rule = args
    model = build_model(cfg.get("model", {}))
    m = _model_at(model, sigma, sim)
    mode = "finite-difference" if rule.lower() == "ekf" else cfg.get("gradient_mode", "sensitivity")
    t0 = time.perf_counter()
    try:
        res = maximize_likelihood(m, _theta0(cfg, model), sim.measurements, rule, _optimizer(cfg), mode)
        status = "converged" if res.converged else "max-iter"
        return dict(
            theta=res.theta, value=res.value, iterations=res.iterations, status=status,
            n_evals=res.n_evals, trace=res.trace, wall=time.perf_counter() - t0,
        )
    except (LineSearchFailure, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        theta = getattr(exc, "theta", np.full(len(model.free), np.nan))
        trace = getattr(exc, "trace", [])
        return dict(
            theta=theta, value=getattr(exc, "value", np.nan), iterations=len(trace) - 1 if trace else 0,
            status=f"failed: {type(exc).__name__}", n_evals=trace[-1].n_evals if trace else 0, trace=trace,
            wall=time.perf_counter() - t0,
        )


def _em_task(args):
    cfg, i, sim, rule = args
    model = build_model(cfg.get("model", {}))
    m = _model_at(model, _sigmas(cfg, model)[0], sim)
    trace = em_iterate(m, _theta0(cfg, model), sim.measurements, rule, int(cfg.get("em_iterations", 10)))
    try:
        theta = maximize_likelihood(
            m, _theta0(cfg, model), sim.measurements, rule, _optimizer(cfg), cfg.get("gradient_mode", "sensitivity")
        ).theta
    except LineSearchFailure as exc:
        theta = exc.theta
    return trace, theta


def _grid_cell(args):
    cfg, value, rule, sim = args
    model = build_model(cfg.get("model", {}))
    name = cfg["grid"]["param"]
    m = model.with_values(**{name: value})
    th = m.theta0
    try:
        if rule == "pf":
            pf = cfg.get("pf", {})
            return baselines.pf_loglik(
                m, th, sim.measurements, int(pf.get("particles", 1000)), int(pf.get("seed", cfg["seed"])),
                pf.get("proposal", "bootstrap"),
            )
        return log_likelihood(m, th, sim.measurements, rule)
    except baselines.WeightCollapse:
        return float("-inf")
    except (np.linalg.LinAlgError, FloatingPointError):
        return "breakdown"


# -- commands ------------------------------------------------------------------------------------


def cmd_simulate(cfg: dict, out: Path, threads: int = 1) -> list:
    model = build_model(cfg.get("model", {}))
    T = int(cfg.get("T", 100))
    n_traj = int(cfg.get("trajectories", 1))
    paths = []
    meta = {"model": model.describe(), "theta": list(map(float, model.theta0))}
    for i in range(n_traj):
        sim = simulate(model, model.theta0, T, int(cfg["seed"]), trajectory=i)
        p = out / f"traj_{i:04d}.csv"
        save_sim(sim, p, meta)
        paths.append(p)
    return paths


def _run_gauss(cfg: dict, out: Path, smooth: bool) -> list:
    model = build_model(cfg.get("model", {}))
    theta = model.theta0
    paths = []
    n = model.n
    for rule in cfg["rules"]:
        r = resolve_rule(rule, n)
        tag = str(rule).replace("(", "").replace(")", "").replace(",", "_")
        for i, sim in enumerate(_datasets(cfg, model)):
            if isinstance(r, str):
                filt = baselines.ekf_filter_pass(model, theta, sim.measurements)
            else:
                filt = gauss.filter_pass(model, theta, sim.measurements, r)
            header = ["step"] + [f"m{a + 1}" for a in range(n)] + [f"P{a + 1}{b + 1}" for a in range(n) for b in range(n)]
            rows = []
            if smooth:
                sm = baselines.ekf_rts_pass(filt, model, theta) if isinstance(r, str) else gauss.rts_pass(filt, model, theta, r)
                for k, st in enumerate(sm.steps):
                    rows.append([k] + list(st.smoothed.mean) + list(st.smoothed.cov.ravel()))
            else:
                header.append("loglik")
                rows.append([0] + list(filt.initial.mean) + list(filt.initial.cov.ravel()) + [0.0])
                for k, st in enumerate(filt.steps, start=1):
                    rows.append([k] + list(st.posterior.mean) + list(st.posterior.cov.ravel()) + [st.loglik])
            p = out / f"{'smooth' if smooth else 'filter'}_{tag}_{i:04d}.csv"
            write_csv(p, header, rows)
            paths.append(p)
    return paths


def cmd_filter(cfg: dict, out: Path, threads: int = 1) -> list:
    return _run_gauss(cfg, out, smooth=False)


def cmd_smooth(cfg: dict, out: Path, threads: int = 1) -> list:
    return _run_gauss(cfg, out, smooth=True)


def grid_values(grid: dict) -> np.ndarray:
    num = int(grid.get("num", 32))
    if num < 1:
        raise ConfigError("grid needs at least one point")
    if num == 1:
        return np.array([float(grid["start"])])
    return np.linspace(float(grid["start"]), float(grid["stop"]), num)


def cmd_likelihood_grid(cfg: dict, out: Path, threads: int = 1) -> Path:
    if "grid" not in cfg:
        raise ConfigError("likelihood-grid needs a 'grid' entry")
    model = build_model(cfg.get("model", {}))
    sim = _datasets(cfg, model)[0]
    values = grid_values(cfg["grid"])
    columns = list(cfg["rules"]) + (["pf"] if "pf" in cfg else [])
    tasks = [(cfg, float(v), c, sim) for v in values for c in columns]
    res = _pmap(_grid_cell, tasks, threads)
    rows = []
    for j, v in enumerate(values):
        rows.append([float(v)] + res[j * len(columns) : (j + 1) * len(columns)])
    p = out / "likelihood_grid.csv"
    write_csv(p, [cfg["grid"]["param"]] + columns, rows)
    return p


def _mle_runs(cfg: dict, threads: int):
    model = build_model(cfg.get("model", {}))
    sims = _datasets(cfg, model)
    rules = list(cfg["rules"])
    ref = cfg.get("reference_rule")
    if ref and ref not in rules:
        rules.append(ref)
    tasks = [(cfg, s, i, sim, r) for s in _sigmas(cfg, model) for i, sim in enumerate(sims) for r in rules]
    return model, sims, rules, tasks, _pmap(_mle_task, tasks, threads)


def cmd_mle(cfg: dict, out: Path, threads: int = 1) -> list:
    model, sims, rules, tasks, results = _mle_runs(cfg, threads)
    names = list(model.free)
    est_rows, trace_rows = [], []
    table = {}
    wall = 0.0
    for (_, s, i, _, r), res in zip(tasks, results):
        sig = "" if s is None else s
        est_rows.append([sig, i, r] + list(res["theta"]) + [res["value"], res["iterations"], res["n_evals"], res["status"]])
        for row in res["trace"]:
            trace_rows.append([sig, i, r, row.iteration] + list(row.theta) + [row.objective, row.grad_norm, row.n_evals])
        table[(s, i, r)] = res
        wall += res["wall"]
    write_csv(out / "mle_estimates.csv", ["sigma", "trajectory", "rule"] + names + ["loglik", "iterations", "n_evals", "status"], est_rows)
    write_csv(out / "mle_traces.csv", ["sigma", "trajectory", "rule", "iteration"] + names + ["objective", "grad_norm", "n_evals"], trace_rows)
    ref = cfg.get("reference_rule")
    summary = []
    if ref:
        for s in _sigmas(cfg, model):
            for r in rules:
                devs, failed, evals = [], 0, []
                for i in range(len(sims)):
                    a, b = table[(s, i, r)], table[(s, i, ref)]
                    if a["status"].startswith("failed") or b["status"].startswith("failed"):
                        failed += 1
                        continue
                    devs.append(np.max(np.abs(np.asarray(a["theta"]) - np.asarray(b["theta"]))))
                    evals.append(a["n_evals"])
                med = float(np.median(devs)) if devs else float("nan")
                mean_evals = float(np.mean(evals)) if evals else float("nan")
                summary.append(["" if s is None else s, r, med, failed, mean_evals])
        write_csv(out / "mle_summary.csv", ["sigma", "rule", "median_abs_dev", "n_failed", "mean_n_evals"], summary)
    with open(out / "timing.log", "a") as fh:
        fh.write(f"mle total optimizer wall time {wall:.3f}s\n")
    return [out / "mle_estimates.csv", out / "mle_traces.csv"]


def cmd_em(cfg: dict, out: Path, threads: int = 1) -> Path:
    model = build_model(cfg.get("model", {}))
    sims = _datasets(cfg, model)
    names = list(model.free)
    # EM needs smoothed sigma-point expectations; linearized rules are skipped
    rules = [r for r in cfg["rules"] if r.lower() != "ekf"]
    tasks = [(cfg, i, sim, r) for i, sim in enumerate(sims) for r in rules]
    results = _pmap(_em_task, tasks, threads)
    rows, mle_rows = [], []
    for (_, i, _, r), (trace, mle) in zip(tasks, results):
        for it, th in enumerate(trace.thetas):
            q = trace.q_values[it] if it < len(trace.q_values) else ""
            rows.append([i, r, it] + list(th) + [trace.logliks[it], q])
        mle_rows.append([i, r] + list(mle))
    write_csv(out / "em_trace.csv", ["trajectory", "rule", "iteration"] + names + ["loglik", "q_value"], rows)
    write_csv(out / "em_mle.csv", ["trajectory", "rule"] + names, mle_rows)
    return out / "em_trace.csv"


def _location_rmse(model, theta, sim: SimOutput, rule) -> float:
    r = resolve_rule(rule, model.n)
    if isinstance(r, str):
        filt = baselines.ekf_filter_pass(model, theta, sim.measurements)
        sm = baselines.ekf_rts_pass(filt, model, theta)
    else:
        filt = gauss.filter_pass(model, theta, sim.measurements, r)
        sm = gauss.rts_pass(filt, model, theta, r)
    err = sm.means[1:, :2] - sim.states[1:, :2]
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


def cmd_track_rmse(cfg: dict, out: Path, threads: int = 1) -> Path:
    model, sims, rules, tasks, results = _mle_runs(cfg, threads)
    per = {}
    for (_, s, i, sim, r), res in zip(tasks, results):
        if res["status"].startswith("failed"):
            continue
        m = _model_at(model, s, sim)
        per.setdefault((s, r), []).append(_location_rmse(m, res["theta"], sim, r))
    rows = []
    for s in _sigmas(cfg, model):
        for r in rules:
            vals = per.get((s, r), [])
            rows.append(["" if s is None else s, r, float(np.mean(vals)) if vals else float("nan"), len(vals)])
    p = out / "track_rmse.csv"
    write_csv(p, ["sigma", "rule", "mean_rmse", "n_trajectories"], rows)
    return p


_DISPATCH = {
    "simulate": cmd_simulate,
    "filter": cmd_filter,
    "smooth": cmd_smooth,
    "likelihood-grid": cmd_likelihood_grid,
    "mle": cmd_mle,
    "em": cmd_em,
    "track-rmse": cmd_track_rmse,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sigmaest", description="Sigma-point filtering and parameter estimation studies")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--rule", help="override the rule list with a single rule spec")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"sigmaest: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    timing = _Timing(out, args.command)
    _DISPATCH[args.command](cfg, out, max(1, args.threads))
    timing.done()
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
