"""Batch experiment runner for the three benchmarks.

``pdpi solve <lasso|transport|mfg> --config FILE --out DIR`` reads a
flat key-value config (one section, named after the benchmark), runs every
(method, seed) combination, and writes one trace CSV per run, a summary
CSV, plot-ready long-format data, and per-benchmark artifacts (final
solution dumps).  Runs are deterministic given the seed list; wall-time
columns are the only thing that varies between identical runs.

Exit codes: 0 on success, 2 on a configuration error, 3 if any run
diverged or failed.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import configparser
import csv
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lasso, mfg, transport
from .solver import StepSizes

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "run_experiment",
           "tune", "emit_plot_data", "main"]


class ConfigError(Exception):
    """Invalid experiment configuration."""


_BENCHMARKS = ("lasso", "transport", "mfg")

_COMMON_KEYS = {"methods", "tol", "max_iters", "seeds", "steps", "tune_grid"}
_PARAM_KEYS = {
    "lasso": {"n", "p", "m", "alpha"},
    "transport": {"network", "scenarios"},
    "mfg": {"n", "nu", "mu", "p"},
}
_METHODS = {
    "lasso": lasso.METHODS,
    "transport": ("direct", "subspace"),
    "mfg": mfg.METHODS,
}
_DEFAULT_TOL = {"lasso": 1e-6, "transport": 1e-10, "mfg": None}
_DEFAULT_MAX_ITERS = {"lasso": 200_000, "transport": 200_000, "mfg": 3000}


@dataclass
class ExperimentConfig:
    benchmark: str
    params: dict
    methods: tuple
    tol: float | None
    max_iters: int
    seeds: tuple
    steps: StepSizes | str = "auto"
    tune_grid: int = 10
    out_dir: Path = Path(".")
    jobs: int = 1


def _parse_int(section, key, default=None, minimum=None):
    if key not in section:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        val = int(section[key])
    except ValueError as exc:
        raise ConfigError(f"key {key!r} must be an integer") from exc
    if minimum is not None and val < minimum:
        raise ConfigError(f"key {key!r} must be >= {minimum}")
    return val


def _parse_float(section, key, default=None, positive=False):
    if key not in section:
        return default
    try:
        val = float(section[key])
    except ValueError as exc:
        raise ConfigError(f"key {key!r} must be a number") from exc
    if positive and val <= 0:
        raise ConfigError(f"key {key!r} must be positive")
    return val


def load_config(path, benchmark: str) -> ExperimentConfig:
    """Parse and validate a config file for the given benchmark.

    Unknown keys and unknown sections are errors, so typos fail fast.
    """
    if benchmark not in _BENCHMARKS:
        raise ConfigError(f"unknown benchmark {benchmark!r}")
    parser = configparser.ConfigParser()
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"unparsable config: {exc}") from exc
    if not read:
        raise ConfigError(f"config file {path} not found")
    if benchmark not in parser:
        raise ConfigError(f"config must contain a [{benchmark}] section")
    extra_sections = set(parser.sections()) - {benchmark}
    if extra_sections:
        raise ConfigError(f"unexpected sections: {sorted(extra_sections)}")
    section = parser[benchmark]
    allowed = _COMMON_KEYS | _PARAM_KEYS[benchmark]
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{benchmark}]: {sorted(unknown)}")

    params: dict = {}
    if benchmark == "lasso":
        params["n"] = _parse_int(section, "n", minimum=2)
        params["p"] = _parse_int(section, "p", minimum=1)
        params["m"] = _parse_int(section, "m", minimum=1)
        if params["m"] >= params["n"]:
            raise ConfigError("need m < n")
        params["alpha"] = _parse_float(section, "alpha", default=1.0, positive=True)
    elif benchmark == "transport":
        params["network"] = section.get("network", "network1")
        params["scenarios"] = _parse_int(section, "scenarios", default=3, minimum=1)
    else:
        params["n"] = _parse_int(section, "n", default=20, minimum=2)
        params["nu"] = _parse_float(section, "nu", default=0.5, positive=True)
        params["mu"] = _parse_float(section, "mu", default=10.0, positive=True)
        params["p"] = _parse_int(section, "p", default=1, minimum=1)

    methods = tuple(section.get("methods", " ".join(_METHODS[benchmark])).split())
    bad = [m for m in methods if m not in _METHODS[benchmark]]
    if bad:
        raise ConfigError(f"unknown methods {bad}; choose from {_METHODS[benchmark]}")

    tol = _parse_float(section, "tol", default=_DEFAULT_TOL[benchmark], positive=True)
    max_iters = _parse_int(section, "max_iters",
                           default=_DEFAULT_MAX_ITERS[benchmark], minimum=0)
    try:
        seeds = tuple(int(s) for s in section.get("seeds", "0").split())
    except ValueError as exc:
        raise ConfigError("seeds must be integers") from exc

    steps_raw = section.get("steps", "auto").strip()
    steps: StepSizes | str
    if steps_raw in ("auto", "tune"):
        steps = steps_raw
    else:
        try:
            tau, gamma = (float(v) for v in steps_raw.split())
        except ValueError as exc:
            raise ConfigError("steps must be 'auto', 'tune' or two numbers") from exc
        steps = StepSizes(tau=tau, gamma=gamma)

    tune_grid = _parse_int(section, "tune_grid", default=10, minimum=1)
    return ExperimentConfig(benchmark=benchmark, params=params, methods=methods,
                            tol=tol, max_iters=max_iters, seeds=seeds,
                            steps=steps, tune_grid=tune_grid)


# ---------------------------------------------------------------------------
# single runs
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    method: str
    seed: int
    iterations: int = 0
    wall_time_s: float = 0.0
    converged: bool = False
    diverged: bool = False
    objective: float = math.nan
    residual: float = math.nan
    trace_path: Path | None = None
    error: str | None = None


def _steps_for(config: ExperimentConfig, method: str):
    if isinstance(config.steps, StepSizes):
        return config.steps
    return None  # auto: let each solver pick its default


def _run_one(config: ExperimentConfig, method: str, seed: int) -> RunRecord:
    rec = RunRecord(method=method, seed=seed)
    out = config.out_dir
    t0 = time.perf_counter()
    try:
        if config.benchmark == "lasso":
            inst = lasso.generate_instance(config.params["n"], config.params["p"],
                                           config.params["m"], seed,
                                           alpha=config.params["alpha"])
            steps = _steps_for(config, method)
            kw = {}
            if steps is not None:
                if method == "fb_subspaces":
                    kw["steps"] = {"lam": steps.tau}
                elif method == "pd_generalized":
                    kw["steps"] = {"tau": steps.tau, "sigma1": steps.gamma,
                                   "sigma2": steps.gamma}
                else:
                    kw["steps"] = {"tau": steps.tau, "gamma": steps.gamma}
            res = lasso.solve_formulation(inst, method, tol=config.tol,
                                          max_iters=config.max_iters, **kw)
            rec.iterations = res.iterations
            rec.converged = res.converged
            rec.objective = res.objective
            rec.residual = lasso.kkt_residual(inst, res.x)
            trace = res.trace
        elif config.benchmark == "transport":
            network = transport.load_network(config.params["network"])
            scen = transport.sample_scenarios(network, config.params["scenarios"], seed)
            solver = transport.solve_direct if method == "direct" else transport.solve_subspace
            res = transport.solve_direct(network, scen, tol=config.tol,
                                         max_iters=config.max_iters,
                                         steps=_steps_for(config, method)) \
                if method == "direct" else \
                transport.solve_subspace(network, scen, tol=config.tol,
                                         max_iters=config.max_iters,
                                         steps=_steps_for(config, method))
            rec.iterations = res.iterations
            rec.converged = res.converged
            rec.objective = res.objective
            rec.residual = float(res.trace.rows[-1]["capacity_residual"]) if res.trace.rows else 0.0
            trace = res.trace
            np.savetxt(out / f"solution_x_{method}_seed{seed}.txt", res.x)
            np.savetxt(out / f"solution_f_{method}_seed{seed}.txt", res.f)
        else:
            grid = mfg.MfgGrid(n=config.params["n"], nu=config.params["nu"])
            kernel = mfg.build_kernel(grid, mu=config.params["mu"], p=config.params["p"])
            res = mfg.run_mfg_solver(grid, kernel, method,
                                     steps=_steps_for(config, method),
                                     tol=config.tol, max_iters=config.max_iters)
            rec.iterations = res.iterations
            rec.converged = res.converged
            rec.diverged = res.diverged
            rec.objective = res.objective
            resid = mfg.mfg_residuals(grid, kernel, res.m, res.w)
            rec.residual = resid.constraint
            trace = res.trace
            mfg.dump_grid(out / f"grid_{method}_seed{seed}.txt", grid, kernel, res.m)
        rec.wall_time_s = time.perf_counter() - t0
        if not math.isfinite(rec.objective):
            rec.diverged = True
        rec.trace_path = out / f"trace_{method}_seed{seed}.csv"
        trace.write_csv(rec.trace_path)
    except Exception as exc:  # per-run failure: recorded, run continues
        rec.error = str(exc)
        rec.diverged = True
        rec.wall_time_s = time.perf_counter() - t0
    return rec


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------

SUMMARY_COLUMNS = ("benchmark", "method", "runs", "mean_time_s", "mean_iters",
                   "mean_residual", "mean_objective", "converged", "diverged")


def run_experiment(config: ExperimentConfig) -> tuple[int, list[RunRecord]]:
    """Run all (method, seed) pairs; returns (exit_code, run records)."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.out_dir = out
    if config.steps == "tune":
        tuned = tune(config)
        records: list[RunRecord] = []
        per_method_steps = {m: tuned[m] for m in config.methods}
    else:
        per_method_steps = None

    tasks = [(method, seed) for method in config.methods for seed in config.seeds]

    def submit(method, seed):
        cfg = config
        if per_method_steps is not None:
            best = per_method_steps[method]
            if best is None:
                rec = RunRecord(method=method, seed=seed,
                                error="no tuned step sizes converged")
                rec.diverged = True
                return rec
            cfg = ExperimentConfig(**{**config.__dict__, "steps": best})
        return _run_one(cfg, method, seed)

    if config.jobs > 1 and len(tasks) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=config.jobs) as pool:
            records = list(pool.map(lambda t: submit(*t), tasks))
    else:
        records = [submit(*t) for t in tasks]

    _write_summary(out / "summary.csv", config, records)
    traces = [(f"{r.method}_seed{r.seed}", r.trace_path) for r in records
              if r.trace_path is not None]
    emit_plot_data(traces, out / "plot_data.csv")
    exit_code = 3 if any(r.diverged for r in records) else 0
    return exit_code, records


def _write_summary(path, config, records):
    by_method: dict[str, list[RunRecord]] = {}
    for rec in records:
        by_method.setdefault(rec.method, []).append(rec)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for method in config.methods:
            recs = by_method.get(method, [])
            if not recs:
                continue
            ok = [r for r in recs if r.error is None]
            writer.writerow([
                config.benchmark, method, len(recs),
                repr(float(np.mean([r.wall_time_s for r in recs]))),
                repr(float(np.mean([r.iterations for r in ok])) if ok else math.nan),
                repr(float(np.mean([r.residual for r in ok])) if ok else math.nan),
                repr(float(np.mean([r.objective for r in ok])) if ok else math.nan),
                sum(r.converged for r in recs),
                sum(r.diverged for r in recs),
            ])


def emit_plot_data(traces, out_path) -> None:
    """Merge trace CSVs into one long-format file for external plotting.

    Fields are copied verbatim (as strings), so values round-trip exactly
    from the per-run traces.
    """
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("series,iteration,wall_time_s,residual,primal_change\n")
        for label, path in traces:
            with open(path, "r", encoding="utf-8") as src:
                header = src.readline().strip().split(",")
                idx = {name: i for i, name in enumerate(header)}
                for line in src:
                    cells = line.rstrip("\n").split(",")
                    fh.write(",".join([
                        label,
                        cells[idx["iteration"]],
                        cells[idx["wall_time_s"]],
                        cells[idx.get("residual", idx["primal_change"])],
                        cells[idx["primal_change"]],
                    ]) + "\n")


# ---------------------------------------------------------------------------
# step-size tuning
# ---------------------------------------------------------------------------


def _step_grid(config: ExperimentConfig, method: str) -> list[StepSizes]:
    """Log-spaced grid inside each method's admissible region."""
    k = config.tune_grid
    fracs = np.logspace(-2, math.log10(0.95), k)
    grid = []
    if config.benchmark == "lasso":
        inst = lasso.generate_instance(config.params["n"], config.params["p"],
                                       config.params["m"], config.seeds[0]
                                       if config.seeds else 0,
                                       alpha=config.params["alpha"])
        nA, nR = lasso._norms(inst)
        if method == "fb_subspaces":
            return [StepSizes(tau=float(f * 2.0 / max(nA**2, 1e-12)), gamma=1.0)
                    for f in fracs]
        bound = nA**2 if method == "pd_subspaces" else 0.5 * (nA**2 + nR**2)
        for ft in fracs:
            for fg in fracs:
                tau = math.sqrt(ft / bound * fg / ft) if False else None
        for ft in fracs:
            tau = float(math.sqrt(ft) / math.sqrt(bound))
            for fg in fracs:
                gamma = float(fg / (tau * bound))
                grid.append(StepSizes(tau=tau, gamma=gamma))
        return grid
    if config.benchmark == "transport":
        network = transport.load_network(config.params["network"])
        scen = transport.sample_scenarios(network, config.params["scenarios"],
                                          config.seeds[0] if config.seeds else 0)
        beta = 1.0 / transport.gradient_lipschitz(network, scen)
        M = max(1.0, network.incidence_norm() ** 2)
        for ft in fracs:
            tau = float(ft * 2.0 * beta)
            cap = (1.0 - tau / (2.0 * beta)) / (tau * M)
            for fg in fracs:
                grid.append(StepSizes(tau=tau, gamma=float(fg * cap)))
        return grid
    grid_obj = mfg.MfgGrid(n=config.params["n"], nu=config.params["nu"])
    kernel = mfg.build_kernel(grid_obj, mu=config.params["mu"], p=config.params["p"])
    kn = kernel.norm
    if method == "fb_pi":
        return [StepSizes(tau=float(f * 2.0 / kn), gamma=1.0) for f in fracs]
    for ft in fracs:
        if method == "pd_feas":
            tau = float(ft * 2.0 / kn)
            cap = (1.0 / tau - kn / 2.0) / mfg.l1_norm(grid_obj) ** 2
        elif method == "pd_id":
            tau = float(ft * 2.0 / kn)
            cap = 1.0 / tau - kn / 2.0
        elif method == "cp_pi":
            tau = float(ft)
            cap = 1.0 / tau
        else:  # cp_pi_sqrt
            tau = float(ft / math.sqrt(kn))
            cap = 1.0 / (tau * kn)
        for fg in fracs:
            grid.append(StepSizes(tau=tau, gamma=float(fg * cap)))
    return grid


def tune(config: ExperimentConfig) -> dict:
    """Grid-search step sizes per method: fewest iterations to the target
    tolerance wins, ties broken by the larger primal step."""
    best: dict = {}
    for method in config.methods:
        candidates = []
        for steps in _step_grid(config, method):
            cfg = ExperimentConfig(**{**config.__dict__, "steps": steps,
                                      "seeds": config.seeds[:1] or (0,)})
            rec = _run_one(cfg, method, cfg.seeds[0])
            if rec.error is not None:
                print(f"tune[{method}]: skipping tau={steps.tau:.3g} "
                      f"gamma={steps.gamma:.3g} ({rec.error})", file=sys.stderr)
                continue
            if rec.converged and not rec.diverged:
                candidates.append((rec.iterations, -steps.tau, steps))
        if candidates:
            candidates.sort(key=lambda t: (t[0], t[1]))
            best[method] = candidates[0][2]
        else:
            print(f"tune[{method}]: no grid point converged", file=sys.stderr)
            best[method] = None
    return best


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pdpi",
                                     description="benchmark runner for the "
                                                 "partial-inverse splitting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("solve", help="run a benchmark experiment")
    sp.add_argument("benchmark", choices=_BENCHMARKS)
    sp.add_argument("--config", required=True, help="experiment config file")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--tol", type=float, default=None)
    sp.add_argument("--max-iters", type=int, default=None)
    sp.add_argument("--seed", type=int, action="append", default=None,
                    help="override the config seed list (repeatable)")
    sp.add_argument("--tune", action="store_true",
                    help="grid-search step sizes before running")
    sp.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config, args.benchmark)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.tol is not None:
        if args.tol <= 0:
            print("config error: --tol must be positive", file=sys.stderr)
            return 2
        config.tol = args.tol
    if args.max_iters is not None:
        config.max_iters = args.max_iters
    if args.seed is not None:
        config.seeds = tuple(args.seed)
    if args.tune:
        config.steps = "tune"
    config.jobs = max(1, args.jobs)
    config.out_dir = Path(args.out)

    code, records = run_experiment(config)
    for rec in records:
        status = "error: " + rec.error if rec.error else \
            ("diverged" if rec.diverged else
             ("converged" if rec.converged else "max-iters"))
        print(f"{rec.method} seed={rec.seed}: {rec.iterations} iters, "
              f"{rec.wall_time_s:.3f}s, objective={rec.objective:.6g} [{status}]")
    return code


if __name__ == "__main__":
    sys.exit(main())
