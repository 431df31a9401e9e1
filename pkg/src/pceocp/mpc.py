"""Receding-horizon control on top of the PCE transcription, plus a closed-loop
Monte Carlo harness with deterministic per-path random streams.

The controller builds its conic program once, with a deterministic (Dirac)
initial condition. Each step only swaps the initial-condition parameter and
re-solves, so the matrices, their equilibration and the KKT ordering are
shared by every solve.
"""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .measures import MeasureSpec
from .pce import PCEVector, gen_pce, sample
from .solver import PCESolution, Solver, SolverError, SolverOptions
from .transcription import ConicProgram, StochasticProblem, build

__all__ = [
    "Plant",
    "SolveStats",
    "Controller",
    "mpc_step",
    "DisturbanceSampler",
    "ClosedLoopTrace",
    "simulate_closed_loop",
    "Ensemble",
    "monte_carlo",
    "path_rng",
    "write_traces_csv",
    "write_summary_csv",
]

# stream slots inside one path
_SLOT_INITIAL = 0
_SLOT_DISTURBANCE = 1


def path_rng(seed: int, path: int, slot: int, index: int = 0) -> np.random.Generator:
    """Counter-based generator for ``(seed, path, slot, index)``.

    Draws depend only on these four integers, never on the order in which
    paths are simulated or on which process simulates them.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, path, slot, index])))


@dataclass(frozen=True)
class Plant:
    """True system ``x+ = A x + B u + E w`` used in closed-loop simulation."""

    A: np.ndarray
    B: np.ndarray
    E: np.ndarray

    @classmethod
    def from_problem(cls, prob: StochasticProblem) -> "Plant":
        return cls(prob.A, prob.B, prob.E)

    def step(self, x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        return self.A @ x + self.B @ u + self.E @ w


@dataclass
class SolveStats:
    """Running totals over controller solves."""

    solves: int = 0
    failures: int = 0
    iterations: int = 0
    seconds: float = 0.0

    def record(self, sol: PCESolution, seconds: float) -> None:
        self.solves += 1
        self.failures += 0 if sol.optimal else 1
        self.iterations += sol.iterations
        self.seconds += seconds

    @property
    def mean_ms(self) -> float:
        return 1e3 * self.seconds / self.solves if self.solves else float("nan")


def _dirac_initial(x: np.ndarray) -> PCEVector:
    return gen_pce([MeasureSpec.dirac(float(v)) for v in x])


class Controller:
    """Stochastic MPC: solve the PCE program from the measured state, apply the first input.

    Args:
        problem: the stochastic OCP. Its initial condition is replaced by a
            Dirac at the measured state; disturbances must be i.i.d.
        mode: ``"condensed"`` (default) or ``"sparse"`` transcription.
        options: solver options.
        on_failure: ``"raise"`` (default) raises :class:`SolverError`;
            ``"hold"`` applies the next input of the previous plan instead.
    """

    def __init__(
        self,
        problem: StochasticProblem,
        mode: str = "condensed",
        options: SolverOptions | None = None,
        on_failure: str = "raise",
    ):
        if not problem.iid:
            raise ValueError("receding-horizon control needs an i.i.d. disturbance model")
        if on_failure not in ("raise", "hold"):
            raise ValueError(f"on_failure must be 'raise' or 'hold', got {on_failure!r}")
        self.original_x_ini = problem.x_ini
        self.problem = replace(problem, x_ini=_dirac_initial(np.zeros(problem.n_x)))
        self.mode = mode
        self.options = options or SolverOptions()
        self.on_failure = on_failure
        self.program: ConicProgram = build(self.problem, mode=mode)
        self.hb = self.program.hb
        self.stats = SolveStats()
        self._init_solver()
        self.reset()

    def _init_solver(self) -> None:
        # The solver workspace is built at the reference parameter (zero state)
        # so that it is identical in every process.
        self.program.set_initial_param(np.zeros(self.problem.n_x))
        self.solver = Solver(self.program, self.options)
        self.solver.prepare()

    def reset(self) -> None:
        """Forget the previous plan (start of a new closed-loop path)."""
        self.warm_start: tuple[np.ndarray, np.ndarray] | None = None
        self.last_solution: PCESolution | None = None

    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop("solver", None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self.program = self.program.clone()
        self._init_solver()

    def clone(self) -> "Controller":
        new = object.__new__(Controller)
        new.__setstate__(self.__getstate__())
        new.stats = SolveStats()
        new.reset()
        return new

    def solve(self, measured_state) -> PCESolution:
        x = np.asarray(measured_state, dtype=float).ravel()
        if x.size != self.problem.n_x:
            raise ValueError(f"measured state must have {self.problem.n_x} entries, got {x.size}")
        self.program.set_initial_param(x)
        t0 = time.perf_counter()
        sol = self.solver.solve()
        self.stats.record(sol, time.perf_counter() - t0)
        return sol

    def step(self, measured_state) -> np.ndarray:
        """Applied input for the measured state (mean of ``u(0)``)."""
        sol = self.solve(measured_state)
        if not sol.optimal:
            if self.on_failure == "hold" and self.warm_start is not None:
                u_prev = self.warm_start[1]
                self.warm_start = _shift(*self.warm_start)
                return u_prev[0, :, 0].copy()
            raise SolverError(f"MPC solve failed with status {sol.status}", sol.status)
        self.last_solution = sol
        self.warm_start = _shift(sol.x, sol.u)
        return sol.u[0, :, 0].copy()


def _shift(x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Shift a coefficient plan one step forward, duplicating the last step."""
    xs = np.concatenate([x[1:], x[-1:]], axis=0)
    us = np.concatenate([u[1:], u[-1:]], axis=0)
    return xs, us


def mpc_step(ctrl: Controller, measured_state) -> np.ndarray:
    """Re-solve from ``measured_state`` and return the input to apply."""
    return ctrl.step(measured_state)


@dataclass(frozen=True)
class DisturbanceSampler:
    """Disturbance realizations ``w(t)`` for path ``p`` from the disturbance PCE."""

    w: PCEVector
    seed: int

    def draw(self, path: int, step: int) -> np.ndarray:
        rng = path_rng(self.seed, path, _SLOT_DISTURBANCE, step)
        return sample(self.w, self.w.basis.sample_germs(rng, 1))[0]


@dataclass
class ClosedLoopTrace:
    """One closed-loop path.

    Attributes:
        x: realized states, shape ``(steps + 1, n_x)``.
        u: applied inputs, shape ``(steps, n_u)``.
        w: disturbance realizations, shape ``(steps, n_w)``.
        status: solver status per step (one extra entry for the failing
            step of an aborted path).
        solve_ms: wall time per solve in milliseconds, aligned with ``status``.
        stream: ``(seed, path)`` identifying the random stream.
        error: message if the path was aborted.
    """

    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    status: list[str]
    solve_ms: list[float]
    stream: tuple[int, int]
    error: str | None = None

    @property
    def steps(self) -> int:
        return self.u.shape[0]

    @property
    def complete(self) -> bool:
        return self.error is None

    def __post_init__(self) -> None:
        n = self.u.shape[0]
        n_status = n + (0 if self.error is None else 1)
        if self.x.shape[0] != n + 1 or self.w.shape[0] != n or not len(self.status) == len(self.solve_ms) == n_status:
            raise ValueError("inconsistent trace lengths")

    def same_as(self, other: "ClosedLoopTrace") -> bool:
        """Bit-for-bit equality of the numerical content."""
        return (
            np.array_equal(self.x, other.x)
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.w, other.w)
            and self.status == other.status
            and self.stream == other.stream
            and self.error == other.error
        )


def simulate_closed_loop(
    ctrl: Controller, plant: Plant, sampler: DisturbanceSampler, T: int, x0, path: int = 0
) -> ClosedLoopTrace:
    """Run ``T`` steps of ``x(t+1) = A x + B u + E w`` with ``u = mpc_step(x)``.

    A solver failure ends the path; the partial trace records the failing status.
    """
    if T < 0:
        raise ValueError(f"T must be >= 0, got {T}")
    ctrl.reset()
    x = np.asarray(x0, dtype=float).ravel()
    xs, us, ws, status, ms = [x], [], [], [], []
    error = None
    for t in range(T):
        t0 = time.perf_counter()
        try:
            u = ctrl.step(x)
        except SolverError as exc:
            status.append(exc.status or "numerical_error")
            ms.append(1e3 * (time.perf_counter() - t0))
            error = f"step {t}: {exc}"
            break
        sol = ctrl.last_solution
        status.append(sol.status if sol is not None else "hold")
        ms.append(1e3 * (time.perf_counter() - t0))
        w = sampler.draw(path, t)
        x = plant.step(x, u, w)
        us.append(u)
        ws.append(w)
        xs.append(x)
    n_u, n_w = plant.B.shape[1], plant.E.shape[1]
    return ClosedLoopTrace(
        np.array(xs),
        np.array(us).reshape(-1, n_u),
        np.array(ws).reshape(-1, n_w),
        status,
        ms,
        (sampler.seed, path),
        error,
    )


@dataclass
class Ensemble:
    """Traces of a Monte Carlo run plus summary statistics.

    Attributes:
        traces: one trace per path, in path order.
        quantiles: probability levels of :attr:`state_quantiles`.
        state_quantiles: shape ``(len(quantiles), T + 1, n_x)`` over completed steps.
        violation: per chance constraint, the fraction of paths whose
            realization breaks the bound at each step ``0..T`` (NaN where the
            constraint does not apply), keyed like ``"x1_both"`` or ``"u0_upper"``.
        n_failed: number of aborted paths.
        wall_time: total wall time in seconds.
        workers: worker processes used.
    """

    traces: list[ClosedLoopTrace]
    quantiles: tuple[float, ...]
    state_quantiles: np.ndarray
    violation: dict[str, np.ndarray]
    n_failed: int
    wall_time: float
    workers: int

    def states(self) -> np.ndarray:
        """Realized states ``(n_paths, T + 1, n_x)``; NaN after an aborted step."""
        T = max(t.steps for t in self.traces) if self.traces else 0
        n_x = self.traces[0].x.shape[1]
        out = np.full((len(self.traces), T + 1, n_x), np.nan)
        for i, t in enumerate(self.traces):
            out[i, : t.x.shape[0]] = t.x
        return out

    def inputs(self) -> np.ndarray:
        T = max(t.steps for t in self.traces) if self.traces else 0
        n_u = self.traces[0].u.shape[1]
        out = np.full((len(self.traces), T, n_u), np.nan)
        for i, t in enumerate(self.traces):
            out[i, : t.u.shape[0]] = t.u
        return out

    def same_as(self, other: "Ensemble") -> bool:
        return len(self.traces) == len(other.traces) and all(
            a.same_as(b) for a, b in zip(self.traces, other.traces)
        )

    @property
    def max_violation(self) -> float:
        vals = [float(np.nanmax(v)) for v in self.violation.values() if v.size and np.isfinite(v).any()]
        return max(vals) if vals else 0.0


# -- parallel plumbing ------------------------------------------------------
_WORKER: dict = {}


def _init_worker(ctrl, plant, sampler, T, x0, x0_seed):
    _WORKER.update(ctrl=ctrl, plant=plant, sampler=sampler, T=T, x0=x0, x0_seed=x0_seed)


def _initial_state(x0, seed: int, path: int) -> np.ndarray:
    if isinstance(x0, PCEVector):
        rng = path_rng(seed, path, _SLOT_INITIAL)
        return sample(x0, x0.basis.sample_germs(rng, 1))[0]
    return np.asarray(x0, dtype=float).ravel()


def _run_path(path: int) -> ClosedLoopTrace:
    w = _WORKER
    x0 = _initial_state(w["x0"], w["x0_seed"], path)
    return simulate_closed_loop(w["ctrl"], w["plant"], w["sampler"], w["T"], x0, path)


def _summarize(ctrl: Controller, traces: list[ClosedLoopTrace], T: int, quantiles) -> tuple[np.ndarray, dict]:
    n_x, n_u = ctrl.problem.n_x, ctrl.problem.n_u
    X = np.full((len(traces), T + 1, n_x), np.nan)
    U = np.full((len(traces), T + 1, n_u), np.nan)
    for i, t in enumerate(traces):
        X[i, : t.x.shape[0]] = t.x
        U[i, : t.u.shape[0]] = t.u
    qs = np.full((len(quantiles), T + 1, n_x), np.nan)
    done = np.isfinite(X).all(axis=2).sum(axis=0) > 0
    if done.any():
        qs[:, done] = np.nanquantile(X[:, done], quantiles, axis=0)
    violation: dict[str, np.ndarray] = {}
    for spec in ctrl.problem.chance_specs():
        data = X[:, :, spec.component] if spec.target == "state" else U[:, :, spec.component]
        # closed-loop step t sees the constraint the controller imposes at horizon step
        # 1 for states and 0 for inputs (the measured state is not random)
        k_ref = 1 if spec.target == "state" else 0
        if spec.steps is not None and k_ref not in spec.steps:
            continue
        freq = np.full(T + 1, np.nan)
        valid = np.isfinite(data)
        count = valid.sum(axis=0)
        bad = ((data < spec.lower) | (data > spec.upper)) & valid
        rng = range(1, T + 1) if spec.target == "state" else range(T)
        for t in rng:
            if count[t]:
                freq[t] = bad[:, t].sum() / count[t]
        key = f"{'x' if spec.target == 'state' else 'u'}{spec.component}_{spec.side}"
        while key in violation:
            key += "'"
        violation[key] = freq
    return qs, violation


def default_workers() -> int:
    """Worker count from ``PCEOCP_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("PCEOCP_WORKERS", "1")))
    except ValueError:
        return 1


def monte_carlo(
    ctrl: Controller,
    plant: Plant,
    n_paths: int,
    T: int,
    seed: int,
    workers: int | None = None,
    x0: PCEVector | np.ndarray | None = None,
    w: PCEVector | None = None,
    quantiles: tuple[float, ...] = (0.05, 0.5, 0.95),
) -> Ensemble:
    """Closed-loop Monte Carlo over ``n_paths`` sample paths.

    Path ``p`` draws its initial state and disturbances from streams seeded by
    ``(seed, p)`` only, so the ensemble does not depend on ``workers``.

    Args:
        ctrl: controller (cloned into each worker process).
        plant: true system.
        n_paths: number of paths (>= 1).
        T: closed-loop steps per path.
        seed: master seed.
        workers: process count; defaults to ``PCEOCP_WORKERS`` or 1.
        x0: initial-state distribution or fixed vector; defaults to the
            initial condition of the problem the controller was built from.
        w: disturbance PCE; defaults to the problem's disturbance.
        quantiles: levels of the per-step state quantiles.
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    workers = default_workers() if workers is None else workers
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    if x0 is None:
        x0 = ctrl.original_x_ini
    sampler = DisturbanceSampler(w if w is not None else ctrl.problem.w, seed)
    t0 = time.perf_counter()
    if workers == 1:
        _init_worker(ctrl, plant, sampler, T, x0, seed)
        try:
            traces = [_run_path(p) for p in range(n_paths)]
        finally:
            _WORKER.clear()
    else:
        chunk = max(1, math.ceil(n_paths / (4 * workers)))
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(ctrl, plant, sampler, T, x0, seed)
        ) as pool:
            traces = list(pool.map(_run_path, range(n_paths), chunksize=chunk))
    wall = time.perf_counter() - t0
    qs, violation = _summarize(ctrl, traces, T, quantiles)
    n_failed = sum(not t.complete for t in traces)
    return Ensemble(traces, tuple(quantiles), qs, violation, n_failed, wall, workers)


# -- export -------------------------------------------------------------------
def _write_header(f, header: str | None) -> None:
    if header:
        f.write(f"# {header}\n")


def write_traces_csv(traces: list[ClosedLoopTrace], path, header: str | None = None) -> None:
    """One row per (path, step): path, step, x..., u..., status, solve_ms.

    The final state row of each path has empty input, status and timing fields.
    """
    n_x = traces[0].x.shape[1]
    n_u = traces[0].u.shape[1]
    with open(path, "w", newline="") as f:
        _write_header(f, header)
        wr = csv.writer(f)
        wr.writerow(["path", "step"] + [f"x{i}" for i in range(n_x)] + [f"u{i}" for i in range(n_u)] + ["status", "solve_ms"])
        for tr in traces:
            p = tr.stream[1]
            for k in range(tr.x.shape[0]):
                xs = [repr(float(v)) for v in tr.x[k]]
                if k < tr.steps:
                    us = [repr(float(v)) for v in tr.u[k]]
                    wr.writerow([p, k] + xs + us + [tr.status[k], f"{tr.solve_ms[k]:.3f}"])
                else:
                    wr.writerow([p, k] + xs + [""] * n_u + ["", ""])


def write_summary_csv(ens: Ensemble, path, header: str | None = None) -> None:
    """Per-step state quantiles and constraint-violation frequencies."""
    qs = ens.state_quantiles
    n_q, T1, n_x = qs.shape
    keys = sorted(ens.violation)
    with open(path, "w", newline="") as f:
        _write_header(f, header)
        wr = csv.writer(f)
        cols = ["step"] + [f"x{i}_q{q:g}" for i in range(n_x) for q in ens.quantiles] + [f"viol_{k}" for k in keys]
        wr.writerow(cols)
        for k in range(T1):
            row = [k] + [repr(float(qs[a, k, i])) for i in range(n_x) for a in range(n_q)]
            row += ["" if not np.isfinite(ens.violation[key][k]) else repr(float(ens.violation[key][k])) for key in keys]
            wr.writerow(row)
