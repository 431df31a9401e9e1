"""Solver front end: options, solutions, backend registry and a dense KKT oracle."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .ipm import IPMResult, IPMWorkspace, ipm_solve
from .transcription import ConicProgram, StandardForm

__all__ = [
    "SolverOptions",
    "SolverError",
    "PCESolution",
    "RawSolution",
    "solve",
    "Solver",
    "solve_standard",
    "solve_equality_qp",
    "register_backend",
    "available_backends",
]

STATUSES = ("optimal", "infeasible", "max_iter", "numerical_error")


class SolverError(RuntimeError):
    """Raised when a caller requires an optimal solve and did not get one."""

    def __init__(self, message: str, status: str | None = None):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class SolverOptions:
    """Interior-point settings.

    Attributes:
        max_iterations: iteration cap.
        eps_feas: relative primal/dual residual tolerance.
        eps_gap: relative duality-gap tolerance.
        eps_infeas: tolerance for infeasibility certificates.
        regularization: floor of the static KKT regularization.
        kkt: ``"auto"``, ``"sparse"`` (lifted LU) or ``"dense"``.
        backend: registered backend name.
        verbose: print one line per iteration.
    """

    max_iterations: int = 200
    eps_feas: float = 1e-8
    eps_gap: float = 1e-8
    eps_infeas: float = 1e-8
    regularization: float = 1e-10
    kkt: str = "auto"
    backend: str = "builtin"
    verbose: bool = False

    def __post_init__(self) -> None:
        for name in ("eps_feas", "eps_gap", "eps_infeas", "regularization"):
            if not getattr(self, name) > 0:
                raise ValueError(f"solver option {name} must be > 0, got {getattr(self, name)}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")


RawSolution = IPMResult


@dataclass
class PCESolution:
    """Solution of a transcribed program.

    Attributes:
        x: state coefficients, shape ``(N+1, n_x, L)``.
        u: input coefficients, shape ``(N, n_u, L)``.
        objective: program objective (expected cost for the built-in objective).
        status: one of optimal, infeasible, max_iter, numerical_error.
        iterations, primal_residual, dual_residual, gap, solve_time: diagnostics.
        raw: the standard-form solution.
    """

    x: np.ndarray
    u: np.ndarray
    objective: float
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float
    solve_time: float
    raw: RawSolution = field(repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def mean(self, which: str = "x") -> np.ndarray:
        return (self.x if which == "x" else self.u)[..., 0]

    def std(self, which: str = "x") -> np.ndarray:
        c = self.x if which == "x" else self.u
        return np.sqrt(np.sum(c[..., 1:] ** 2, axis=-1))


Backend = Callable[[StandardForm, SolverOptions], RawSolution]
_BACKENDS: dict[str, Backend] = {}


def register_backend(name: str, backend: Backend) -> None:
    """Register a backend ``(StandardForm, SolverOptions) -> RawSolution``.

    Select it with ``SolverOptions(backend=name)``; the built-in stays the default.
    """
    if not callable(backend):
        raise TypeError("backend must be callable")
    _BACKENDS[name] = backend


def available_backends() -> tuple[str, ...]:
    return tuple(_BACKENDS)


def solve_standard(sf: StandardForm, opts: SolverOptions | None = None) -> RawSolution:
    opts = opts or SolverOptions()
    try:
        backend = _BACKENDS[opts.backend]
    except KeyError:
        raise SolverError(f"unknown solver backend {opts.backend!r}; available: {sorted(_BACKENDS)}") from None
    return backend(sf, opts)


def _objective_value(prog: ConicProgram, x: np.ndarray, u: np.ndarray, raw: RawSolution) -> float:
    p = prog.problem
    if not p.has_objective:
        return float(raw.objective)
    cost = np.einsum("kil,ij,kjl->", x[:-1], p.Q, x[:-1])
    cost += np.einsum("il,ij,jl->", x[-1], p.QN, x[-1])
    cost += np.einsum("kil,ij,kjl->", u, p.R, u)
    return float(cost)


def _wrap(prog: ConicProgram, raw: RawSolution) -> PCESolution:
    if raw.status not in STATUSES:
        raise SolverError(f"backend returned unknown status {raw.status!r}")
    if raw.status == "infeasible":
        x = np.full((prog.problem.N + 1, prog.problem.n_x, prog.hb.L), np.nan)
        u = np.full((prog.problem.N, prog.problem.n_u, prog.hb.L), np.nan)
        obj = float("nan")
    else:
        x, u = prog.trajectories(raw.x)
        obj = _objective_value(prog, x, u, raw)
    return PCESolution(
        x, u, obj, raw.status, raw.iterations, raw.primal_residual, raw.dual_residual, raw.gap, raw.solve_time, raw
    )


def solve(prog: ConicProgram, opts: SolverOptions | None = None) -> PCESolution:
    """Solve a transcribed program and return coefficient trajectories."""
    opts = opts or SolverOptions()
    return _wrap(prog, solve_standard(prog.standard_form(), opts))


class Solver:
    """Solver bound to one program; repeated solves reuse structural work.

    Only ``q``, ``b`` and ``h`` may change between calls (for example through
    :meth:`ConicProgram.set_initial_param`). With the built-in backend the
    equilibration and KKT pattern are computed once.
    """

    def __init__(self, prog: ConicProgram, opts: SolverOptions | None = None):
        self.prog = prog
        self.opts = opts or SolverOptions()
        self._workspace: IPMWorkspace | None = None

    def prepare(self) -> None:
        """Build the structural workspace now, from the program's current data."""
        if self.opts.backend == "builtin":
            self._workspace = IPMWorkspace(self.prog.standard_form(), self.opts)

    def solve(self) -> PCESolution:
        sf = self.prog.standard_form()
        if self.opts.backend == "builtin" and _BACKENDS.get("builtin") is ipm_solve:
            if self._workspace is None or not self._workspace.matches(sf, self.opts):
                self._workspace = IPMWorkspace(sf, self.opts)
            raw = ipm_solve(sf, self.opts, self._workspace)
        else:
            raw = solve_standard(sf, self.opts)
        return _wrap(self.prog, raw)


def _equality_qp(sf: StandardForm, opts: SolverOptions | None = None) -> RawSolution:
    t0 = time.perf_counter()
    n, p = sf.n, sf.b.size
    P = sf.P.toarray()
    P = np.triu(P) + np.triu(P, 1).T
    A = sf.A.toarray()
    K = np.block([[P, A.T], [A, np.zeros((p, p))]])
    rhs = np.concatenate([-sf.q, sf.b])
    status = "optimal"
    try:
        sol = sla.solve(K, rhs, assume_a="sym")
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError("non-finite solution")
    except (np.linalg.LinAlgError, sla.LinAlgWarning, ValueError):
        sol, _, rank, _ = sla.lstsq(K, rhs)
        if np.abs(K @ sol - rhs).max(initial=0.0) > 1e-10 * (1.0 + np.abs(rhs).max(initial=0.0)):
            status = "numerical_error"
    x, y = sol[:n], sol[n:]
    pres = float(np.abs(A @ x - sf.b).max(initial=0.0))
    dres = float(np.abs(P @ x + sf.q + A.T @ y).max(initial=0.0))
    obj = float(0.5 * x @ P @ x + sf.q @ x)
    m = sf.h.size
    return IPMResult(x, y, np.zeros(m), np.zeros(m), status, 1, pres, dres, 0.0, obj, time.perf_counter() - t0)


def solve_equality_qp(prog: ConicProgram | StandardForm, opts: SolverOptions | None = None):
    """Dense KKT solution ignoring cone constraints (a test oracle).

    A singular KKT matrix falls back to the minimum-norm least-squares
    solution; the status is ``numerical_error`` unless that solution satisfies
    the KKT system.
    """
    import warnings

    sf = prog.standard_form() if isinstance(prog, ConicProgram) else prog
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        raw = _equality_qp(sf, opts)
    if isinstance(prog, StandardForm):
        return raw
    x, u = prog.trajectories(raw.x)
    return PCESolution(
        x, u, _objective_value(prog, x, u, raw), raw.status, raw.iterations,
        raw.primal_residual, raw.dual_residual, raw.gap, raw.solve_time, raw,
    )


def _clarabel_backend(sf: StandardForm, opts: SolverOptions) -> RawSolution:
    """Optional external backend (used as an independent oracle in tests)."""
    import clarabel
    import scipy.sparse as sp

    t0 = time.perf_counter()
    Araw = sp.vstack([sf.A, sf.G]).tocsc()
    bvec = np.concatenate([sf.b, sf.h])
    cones = []
    if sf.b.size:
        cones.append(clarabel.ZeroConeT(sf.b.size))
    if sf.cones.l:
        cones.append(clarabel.NonnegativeConeT(sf.cones.l))
    cones += [clarabel.SecondOrderConeT(d) for d in sf.cones.q]
    settings = clarabel.DefaultSettings()
    settings.verbose = opts.verbose
    settings.tol_feas = opts.eps_feas
    settings.tol_gap_abs = opts.eps_gap
    settings.tol_gap_rel = opts.eps_gap
    settings.max_iter = opts.max_iterations
    P = sp.triu(sp.csc_matrix(sf.P)).tocsc()
    sol = clarabel.DefaultSolver(P, sf.q, Araw, bvec, cones, settings).solve()
    st = str(sol.status)
    status = {"Solved": "optimal", "PrimalInfeasible": "infeasible", "DualInfeasible": "infeasible",
              "MaxIterations": "max_iter"}.get(st, "numerical_error")
    z = np.asarray(sol.z)
    p = sf.b.size
    return IPMResult(
        np.asarray(sol.x), z[:p], z[p:], np.asarray(sol.s)[p:], status, sol.iterations,
        np.nan, np.nan, np.nan, float(sol.obj_val), time.perf_counter() - t0,
    )


register_backend("builtin", ipm_solve)
register_backend("equality_qp", _equality_qp)
register_backend("clarabel", _clarabel_backend)
