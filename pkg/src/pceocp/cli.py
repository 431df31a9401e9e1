"""Command-line front end: ``pceocp solve|mpc|sample|pdf --config <path> --out <dir>``.

Exit codes: 0 success, 2 configuration error, 3 build error, 4 solver did not
reach an optimal status, 5 input/output error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ProblemConfig, load_config
from .density import DensityError, GridSpec, pdf_from_pce, write_density_csv
from .mpc import Controller, Plant, default_workers, monte_carlo, write_summary_csv, write_traces_csv
from .pce import PCEVector, sample
from .solver import PCESolution, SolverError, solve
from .transcription import TranscriptionError, build

__all__ = ["main", "EXIT_OK", "EXIT_CONFIG", "EXIT_BUILD", "EXIT_SOLVE", "EXIT_IO"]

EXIT_OK, EXIT_CONFIG, EXIT_BUILD, EXIT_SOLVE, EXIT_IO = 0, 2, 3, 4, 5


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def header_line(cfg: ProblemConfig, seed: int | None) -> str:
    return f"pceocp {__version__} config {cfg.name} sha256 {cfg.sha256()} seed {seed if seed is not None else '-'}"


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")


def _build(cfg: ProblemConfig, mode: str):
    try:
        return build(cfg.problem(), mode=mode)
    except (TranscriptionError, ValueError) as exc:
        raise _Fail(EXIT_BUILD, f"build failed: {exc}") from exc


def _solve(cfg: ProblemConfig, mode: str | None = None):
    t0 = time.perf_counter()
    prog = _build(cfg, mode or cfg.mode)
    t_build = time.perf_counter() - t0
    try:
        sol = solve(prog, cfg.solver)
    except SolverError as exc:
        raise _Fail(EXIT_SOLVE, f"solver error: {exc}") from exc
    return prog, sol, t_build


def _require_optimal(sol: PCESolution) -> None:
    if not sol.optimal:
        raise _Fail(EXIT_SOLVE, f"solver finished with status {sol.status}")


def _write_coefficients(path: Path, sol: PCESolution, header: str) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# {header}\n")
        wr = csv.writer(f)
        wr.writerow(["variable", "step", "component", "term", "value"])
        for name, arr in (("x", sol.x), ("u", sol.u)):
            for k in range(arr.shape[0]):
                for i in range(arr.shape[1]):
                    for j in range(arr.shape[2]):
                        wr.writerow([name, k, i, j, repr(float(arr[k, i, j]))])


def cmd_solve(cfg: ProblemConfig, out: Path, seed: int | None = None) -> int:
    t0 = time.perf_counter()
    prog, sol, t_build = _solve(cfg)
    header = header_line(cfg, seed)
    _write_coefficients(out / "coefficients.csv", sol, header)
    summary = {
        "header": header,
        "status": sol.status,
        "objective": sol.objective,
        "iterations": sol.iterations,
        "variables": prog.n_variables,
        "coefficient_variables": prog.n_coefficient_variables,
        "equalities": prog.n_equalities,
        "cone_rows": prog.n_cone_rows,
        "terms": prog.hb.L,
        "mode": prog.mode,
        "build_seconds": t_build,
        "solve_seconds": sol.solve_time,
        "wall_seconds": time.perf_counter() - t0,
    }
    _write_json(out / "summary.json", summary)
    print(f"{sol.status}: objective {sol.objective:.10g}, {prog.n_variables} variables, {sol.iterations} iterations")
    _require_optimal(sol)
    return EXIT_OK


def cmd_mpc(cfg: ProblemConfig, out: Path, seed: int | None = None, workers: int | None = None) -> int:
    sim = cfg.simulation
    seed = sim.seed if seed is None else seed
    workers = workers or sim.workers or default_workers()
    prob = cfg.problem()
    try:
        ctrl = Controller(prob, mode=sim.mode, options=cfg.solver)
    except (TranscriptionError, ValueError) as exc:
        raise _Fail(EXIT_BUILD, f"build failed: {exc}") from exc
    ens = monte_carlo(ctrl, Plant.from_problem(prob), sim.n_paths, sim.T, seed, workers)
    header = header_line(cfg, seed)
    write_traces_csv(ens.traces, out / "traces.csv", header)
    write_summary_csv(ens, out / "ensemble_steps.csv", header)
    ms = [m for t in ens.traces for m in t.solve_ms]
    summary = {
        "header": header,
        "n_paths": sim.n_paths,
        "T": sim.T,
        "solves": len(ms),
        "failed_paths": ens.n_failed,
        "workers": workers,
        "wall_seconds": ens.wall_time,
        "mean_solve_ms": float(np.mean(ms)) if ms else None,
        "max_violation_frequency": ens.max_violation,
        "errors": [t.error for t in ens.traces if t.error],
    }
    _write_json(out / "ensemble.json", summary)
    print(f"{sim.n_paths} paths x {sim.T} steps, {ens.n_failed} failed, {ens.wall_time:.2f} s with {workers} worker(s)")
    if ens.n_failed:
        raise _Fail(EXIT_SOLVE, f"{ens.n_failed} path(s) aborted on solver failure")
    return EXIT_OK


def _joint_pce(prog, arr: np.ndarray) -> PCEVector:
    return PCEVector(prog.hb.basis, arr)


def cmd_sample(cfg: ProblemConfig, out: Path, seed: int | None = None) -> int:
    prog, sol, _ = _solve(cfg)
    _require_optimal(sol)
    seed = cfg.sample.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    basis = prog.hb.basis
    draws = basis.sample_germs(rng, cfg.sample.n_samples)
    n_x, n_u = sol.x.shape[1], sol.u.shape[1]
    with open(out / "samples.csv", "w", newline="") as f:
        f.write(f"# {header_line(cfg, seed)}\n")
        wr = csv.writer(f)
        wr.writerow(["sample", "step"] + [f"x{i}" for i in range(n_x)] + [f"u{i}" for i in range(n_u)])
        X = [sample(_joint_pce(prog, sol.x[k]), draws) for k in range(sol.x.shape[0])]
        U = [sample(_joint_pce(prog, sol.u[k]), draws) for k in range(sol.u.shape[0])]
        for s in range(draws.shape[0]):
            for k in range(len(X)):
                us = [repr(float(v)) for v in U[k][s]] if k < len(U) else [""] * n_u
                wr.writerow([s, k] + [repr(float(v)) for v in X[k][s]] + us)
    print(f"wrote {draws.shape[0]} sample trajectories")
    return EXIT_OK


def cmd_pdf(cfg: ProblemConfig, out: Path, component: int | None = None, times=None, seed: int | None = None) -> int:
    comp = cfg.pdf.component if component is None else component
    times = tuple(cfg.pdf.times if times is None else times)
    if not 0 <= comp < cfg.n_x:
        raise _Fail(EXIT_CONFIG, f"component {comp} out of range for n_x = {cfg.n_x}")
    bad = [k for k in times if not 0 <= k <= cfg.N]
    if bad:
        raise _Fail(EXIT_CONFIG, f"time steps {bad} outside 0..{cfg.N}")
    prog, sol, _ = _solve(cfg)
    _require_optimal(sol)
    grid = GridSpec(n_points=cfg.pdf.n_points, width=cfg.pdf.width)
    header = header_line(cfg, seed)
    for k in times:
        Z = _joint_pce(prog, sol.x[k, comp : comp + 1])
        try:
            g = pdf_from_pce(Z, grid)
        except DensityError as exc:
            raise _Fail(EXIT_BUILD, f"density of x{comp}({k}): {exc}") from exc
        write_density_csv(g, out / f"pdf_x{comp}_k{k}.csv", header)
    print(f"wrote {len(times)} density file(s) for x{comp}")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pceocp", description="PCE-based stochastic optimal control.")
    p.add_argument("--version", action="version", version=f"pceocp {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("solve", "solve the stochastic OCP and write coefficient trajectories"),
        ("mpc", "closed-loop Monte Carlo of the receding-horizon controller"),
        ("sample", "solve, then write sampled state/input trajectories"),
        ("pdf", "solve, then write densities of one state component"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="config file, or a bundled name (reactor, tank, non_iid)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--workers", type=int, default=None)
        if name == "pdf":
            sp.add_argument("--component", type=int, default=None)
            sp.add_argument("--times", type=int, nargs="+", default=None)
        if name == "mpc":
            sp.add_argument("--paths", type=int, default=None, help="override simulation.n_paths")
            sp.add_argument("--steps", type=int, default=None, help="override simulation.T")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            raise _Fail(EXIT_CONFIG, str(exc)) from exc
        except OSError as exc:
            raise _Fail(EXIT_IO, f"cannot read config: {exc}") from exc
        if args.workers is not None and args.workers < 1:
            raise _Fail(EXIT_CONFIG, f"--workers must be >= 1, got {args.workers}")
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise _Fail(EXIT_IO, f"cannot create output directory: {exc}") from exc
        try:
            if args.command == "solve":
                return cmd_solve(cfg, out, args.seed)
            if args.command == "mpc":
                sim = cfg.simulation
                if args.paths is not None or args.steps is not None:
                    sim = replace(
                        sim,
                        n_paths=sim.n_paths if args.paths is None else args.paths,
                        T=sim.T if args.steps is None else args.steps,
                    )
                    cfg = replace(cfg, simulation=sim)
                return cmd_mpc(cfg, out, args.seed, args.workers)
            if args.command == "sample":
                return cmd_sample(cfg, out, args.seed)
            return cmd_pdf(cfg, out, args.component, args.times, args.seed)
        except OSError as exc:
            raise _Fail(EXIT_IO, f"I/O error: {exc}") from exc
    except _Fail as exc:
        print(f"pceocp: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
