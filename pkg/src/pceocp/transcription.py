"""Transcription of a stochastic LTI optimal control problem into a conic program.

Decision variables are the PCE coefficients of states and inputs in the joint
horizon basis. The program has the canonical form

    minimize    1/2 v' P v + q' v
    subject to  A_eq v = b,   G v + s = h,   s in K,

with ``K`` a product of a nonnegative orthant and second-order cones. The
initial-condition coefficients enter ``q``, ``b`` and ``h`` linearly, so an MPC
loop only updates those vectors (see :meth:`ConicProgram.set_initial_param`).

Two layouts are available:

``sparse``
    Every coefficient ``x^j(k)``, ``u^j(k)`` is a variable; dynamics, initial
    condition and causality are equality constraints.
``condensed``
    States are eliminated by forward substitution and causally-zero inputs are
    dropped, leaving only free input coefficients.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import ndtri

from .horizon import HorizonBasis, embed, joint_basis, non_i_i_d_extend
from .measures import Family
from .pce import PCEVector

__all__ = [
    "TranscriptionError",
    "ChanceSpec",
    "StochasticProblem",
    "ConeDims",
    "StandardForm",
    "ConicProgram",
    "gamma",
    "bounds_to_chance",
    "rollout_dynamics",
    "causality_constraints",
    "chance_cone",
    "build",
    "set_initial_param",
    "add_chance",
]


class TranscriptionError(ValueError):
    """Inconsistent problem data."""


def gamma(epsilon: float, sided: str = "one", gaussian: bool = False) -> float:
    """Back-off factor turning a chance constraint into ``mean +/- gamma * std``.

    Args:
        epsilon: admissible violation probability in (0, 1).
        sided: ``"one"`` or ``"two"``.
        gaussian: use standard normal quantiles instead of Cantelli's bound.
    """
    if not 0.0 < epsilon < 1.0:
        raise TranscriptionError(f"risk must lie in (0, 1), got {epsilon}")
    if sided not in ("one", "two"):
        raise TranscriptionError(f"sided must be 'one' or 'two', got {sided!r}")
    if gaussian:
        return float(ndtri(1.0 - epsilon if sided == "one" else 1.0 - epsilon / 2.0))
    if sided == "one":
        return math.sqrt((1.0 - epsilon) / epsilon)
    return math.sqrt((2.0 - epsilon) / epsilon)


@dataclass(frozen=True)
class ChanceSpec:
    """Component-wise chance constraint ``P[lower <= z_i(k) <= upper] >= 1 - risk``.

    ``steps`` defaults to the full range (0..N for states, 0..N-1 for inputs).
    Setting ``sided="one"`` with both bounds finite imposes each side with the
    one-sided factor (used when lower and upper carry different risks).
    """

    target: str
    component: int
    lower: float = -math.inf
    upper: float = math.inf
    risk: float = 0.1
    steps: tuple[int, ...] | None = None
    sided: str | None = None

    def __post_init__(self) -> None:
        if self.target not in ("state", "input"):
            raise TranscriptionError(f"chance target must be 'state' or 'input', got {self.target!r}")
        lo, hi = float(self.lower), float(self.upper)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if math.isfinite(lo) and math.isfinite(hi) and not lo < hi:
            raise TranscriptionError(f"lower bound {lo} must be below upper bound {hi}")
        if self.active and not 0.0 < self.risk < 1.0:
            raise TranscriptionError(f"risk must lie in (0, 1), got {self.risk}")
        if self.steps is not None:
            object.__setattr__(self, "steps", tuple(int(k) for k in self.steps))

    @property
    def active(self) -> bool:
        return math.isfinite(self.lower) or math.isfinite(self.upper)

    @property
    def side(self) -> str:
        lo, hi = math.isfinite(self.lower), math.isfinite(self.upper)
        return "both" if lo and hi else ("lower" if lo else "upper")

    def gamma(self, gaussian: bool) -> float:
        sided = self.sided or ("two" if self.side == "both" else "one")
        return gamma(self.risk, sided, gaussian)


def bounds_to_chance(target: str, lb, ub) -> list[ChanceSpec]:
    """Turn ``(bound, risk)`` tuples per component into chance specifications.

    A side whose bound is infinite is inactive (its risk is ignored). When both
    sides are finite with equal risk, the pair is one two-sided constraint;
    with different risks, each side is a separate one-sided constraint.
    """
    def unpack(pair, sign):
        if pair is None:
            return None, None
        b, r = (np.atleast_1d(np.asarray(p, dtype=float)) for p in pair)
        if b.shape != r.shape:
            raise TranscriptionError(f"{target} bound and risk vectors differ in length: {b.size} vs {r.size}")
        return b, r

    lb_b, lb_r = unpack(lb, -1)
    ub_b, ub_r = unpack(ub, 1)
    n = max(0 if lb_b is None else lb_b.size, 0 if ub_b is None else ub_b.size)
    if lb_b is not None and ub_b is not None and lb_b.size != ub_b.size:
        raise TranscriptionError(f"{target} lower/upper bound vectors differ in length: {lb_b.size} vs {ub_b.size}")
    specs = []
    for i in range(n):
        lo = -math.inf if lb_b is None else lb_b[i]
        hi = math.inf if ub_b is None else ub_b[i]
        if lo == math.inf or hi == -math.inf:
            raise TranscriptionError(f"{target} component {i}: lower bound +inf or upper bound -inf is infeasible")
        lo_on, hi_on = math.isfinite(lo), math.isfinite(hi)
        if lo_on and hi_on and lb_r[i] == ub_r[i]:
            specs.append(ChanceSpec(target, i, lo, hi, float(lb_r[i])))
        else:
            if lo_on:
                specs.append(ChanceSpec(target, i, lower=lo, risk=float(lb_r[i])))
            if hi_on:
                specs.append(ChanceSpec(target, i, upper=hi, risk=float(ub_r[i])))
    return specs


def _mat(name: str, M, shape: tuple[int | None, int | None]) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    for got, want in zip(M.shape, shape):
        if want is not None and got != want:
            raise TranscriptionError(f"{name} has shape {M.shape}, expected {tuple(s if s is not None else '*' for s in shape)}")
    if not np.all(np.isfinite(M)):
        raise TranscriptionError(f"{name} contains non-finite entries")
    return M


@dataclass(frozen=True, eq=False)
class StochasticProblem:
    """Stochastic LTI optimal control problem.

    Attributes:
        N: horizon.
        A, B, E: system matrices.
        x_ini: PCE of the initial state.
        w: PCE of one disturbance step (i.i.d.) or a list of N per-step PCEs.
        Q, R, QN: weights. All ``None`` gives a zero objective; QN defaults to Q.
        lbx, ubx, lbu, ubu: ``(bounds, risks)`` per component, or None.
        chance: extra chance constraints.
        gauss: use Gaussian quantiles (only for Gaussian/Dirac data).
    """

    N: int
    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    x_ini: PCEVector
    w: PCEVector | tuple[PCEVector, ...]
    Q: np.ndarray | None = None
    R: np.ndarray | None = None
    QN: np.ndarray | None = None
    lbx: tuple | None = None
    ubx: tuple | None = None
    lbu: tuple | None = None
    ubu: tuple | None = None
    chance: tuple[ChanceSpec, ...] = ()
    gauss: bool = False

    def __post_init__(self) -> None:
        if int(self.N) != self.N or self.N < 1:
            raise TranscriptionError(f"horizon N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        A = _mat("A", self.A, (None, None))
        n_x = A.shape[0]
        A = _mat("A", A, (n_x, n_x))
        B = _mat("B", self.B, (n_x, None))
        E = _mat("E", self.E, (n_x, None))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "E", E)
        if self.x_ini.dim != n_x:
            raise TranscriptionError(f"x_ini has dimension {self.x_ini.dim}, expected n_x = {n_x}")
        if isinstance(self.w, (list, tuple)):
            ws = tuple(self.w)
            if len(ws) != self.N:
                raise TranscriptionError(f"per-step disturbances: got {len(ws)}, expected N = {self.N}")
            object.__setattr__(self, "w", ws)
        else:
            ws = (self.w,)
        for k, wk in enumerate(ws):
            if wk.dim != E.shape[1]:
                raise TranscriptionError(f"disturbance {k} has dimension {wk.dim}, expected n_w = {E.shape[1]}")
        n_u = B.shape[1]
        weights = (self.Q, self.R, self.QN)
        if all(W is None for W in weights):
            pass
        elif self.Q is None or self.R is None:
            missing = "Q" if self.Q is None else "R"
            raise TranscriptionError(f"weight {missing} is missing (omit Q, R and QN together for a custom objective)")
        else:
            Q = _mat("Q", self.Q, (n_x, n_x))
            R = _mat("R", self.R, (n_u, n_u))
            QN = Q if self.QN is None else _mat("QN", self.QN, (n_x, n_x))
            for name, M, strict in (("Q", Q, False), ("QN", QN, False), ("R", R, True)):
                if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
                    raise TranscriptionError(f"{name} must be symmetric")
                ev = np.linalg.eigvalsh(M).min()
                tol = 1e-12 * max(1.0, np.abs(M).max())
                if (strict and ev <= 0) or ev < -tol:
                    raise TranscriptionError(
                        f"{name} must be positive {'definite' if strict else 'semidefinite'} (min eigenvalue {ev:.3g})"
                    )
            object.__setattr__(self, "Q", Q)
            object.__setattr__(self, "R", R)
            object.__setattr__(self, "QN", QN)
        if self.gauss:
            for name, Z in (("x_ini", self.x_ini), *((f"w[{k}]", wk) for k, wk in enumerate(ws))):
                for g in Z.basis.germs:
                    if g.measure.family is not Family.GAUSSIAN:
                        raise TranscriptionError(
                            f"gauss=true requires Gaussian/Dirac data, but {name} uses a {g.measure.family.value} germ"
                        )
                if Z.basis.max_total_degree > 1 and np.any(Z.coeffs[:, Z.basis.total_degrees > 1]):
                    raise TranscriptionError(f"gauss=true requires Gaussian data, but {name} is nonlinear in its germs")
        specs = list(self.chance)
        specs += bounds_to_chance("state", self.lbx, self.ubx)
        specs += bounds_to_chance("input", self.lbu, self.ubu)
        for s in specs:
            n = n_x if s.target == "state" else n_u
            if not 0 <= s.component < n:
                raise TranscriptionError(f"{s.target} chance component {s.component} out of range [0, {n - 1}]")
        object.__setattr__(self, "chance", tuple(self.chance))
        object.__setattr__(self, "_all_chance", tuple(specs))

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_w(self) -> int:
        return self.E.shape[1]

    @property
    def has_objective(self) -> bool:
        return self.Q is not None

    @property
    def iid(self) -> bool:
        return not isinstance(self.w, tuple)

    def chance_specs(self) -> tuple[ChanceSpec, ...]:
        return self._all_chance

    def horizon_basis(self) -> HorizonBasis:
        if self.iid:
            return joint_basis(self.x_ini, self.w, self.N)
        return non_i_i_d_extend(list(self.w), self.x_ini)

    def embedded(self, hb: HorizonBasis) -> tuple[np.ndarray, np.ndarray]:
        return embed(self.x_ini, self.w if self.iid else list(self.w), hb)


@dataclass(frozen=True)
class ConeDims:
    """Nonnegative-orthant size ``l`` followed by second-order cone sizes ``q``."""

    l: int = 0
    q: tuple[int, ...] = ()

    @property
    def total(self) -> int:
        return self.l + sum(self.q)

    @property
    def degree(self) -> int:
        return self.l + len(self.q)


@dataclass(frozen=True, eq=False)
class StandardForm:
    """``min 1/2 v'Pv + q'v  s.t.  A v = b,  G v + s = h,  s in K`` (P upper or full)."""

    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    G: sp.csc_matrix
    h: np.ndarray
    cones: ConeDims

    @property
    def n(self) -> int:
        return self.q.size

    def to_text(self) -> str:
        """Serialize to a sectioned Matrix Market text layout."""
        import io

        from scipy.io import mmwrite

        out = ["%% pceocp standard form v1", f"% n {self.n} p {self.b.size} m {self.h.size}",
               f"% cones l {self.cones.l} q {' '.join(map(str, self.cones.q))}"]
        for name, M in (("P", self.P), ("A", self.A), ("G", self.G)):
            buf = io.BytesIO()
            mmwrite(buf, sp.coo_matrix(M), precision=17)
            out.append(f"% section {name}")
            out.append(buf.getvalue().decode())
        for name, v in (("q", self.q), ("b", self.b), ("h", self.h)):
            out.append(f"% section {name}")
            out.append(" ".join(repr(float(x)) for x in v))
        return "\n".join(out) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "StandardForm":
        import io

        from scipy.io import mmread

        lines = text.splitlines()
        cone_line = next(l for l in lines if l.startswith("% cones"))
        parts = cone_line.split()
        l_dim = int(parts[3])
        q_dims = tuple(int(x) for x in parts[5:])
        sections: dict[str, list[str]] = {}
        current = None
        for line in lines:
            if line.startswith("% section "):
                current = line.split()[2]
                sections[current] = []
            elif current is not None:
                sections[current].append(line)
        mats = {k: sp.csc_matrix(mmread(io.BytesIO("\n".join(sections[k]).encode()))) for k in "PAG"}
        vecs = {k: np.array([float(x) for x in " ".join(sections[k]).split()]) for k in "qbh"}
        return cls(mats["P"], vecs["q"], mats["A"], vecs["b"], mats["G"], vecs["h"], ConeDims(l_dim, q_dims))


@dataclass
class _ConeBlock:
    spec: ChanceSpec
    k: int
    side: str
    gamma: float
    n_rows: int


@dataclass(eq=False)
class ConicProgram:
    """A transcribed program with a parametric initial condition.

    The vectors ``q``, ``b`` and ``h`` are affine in ``theta``, the flattened
    ``(n_x, L_ini)`` initial-condition coefficients: ``q = q0 + Tq @ theta`` etc.
    """

    problem: StochasticProblem
    hb: HorizonBasis
    mode: str
    P: sp.csc_matrix
    q0: np.ndarray
    Tq: sp.csr_matrix
    A: sp.csc_matrix
    b0: np.ndarray
    Tb: sp.csr_matrix
    G: sp.csc_matrix
    h0: np.ndarray
    Th: sp.csr_matrix
    cones: ConeDims
    theta: np.ndarray
    n_dynamics_rows: int
    n_causality_rows: int
    cone_blocks: list = field(default_factory=list, repr=False)
    layout: dict = field(default_factory=dict, repr=False)

    # -- sizes ------------------------------------------------------------
    @property
    def n_variables(self) -> int:
        return self.P.shape[0]

    @property
    def n_equalities(self) -> int:
        return self.A.shape[0]

    @property
    def n_cone_rows(self) -> int:
        return self.G.shape[0]

    @property
    def n_coefficient_variables(self) -> int:
        """(N+1) L n_x + N L n_u, the size of the full coefficient trajectory."""
        p = self.problem
        return (p.N + 1) * self.hb.L * p.n_x + p.N * self.hb.L * p.n_u

    # -- parameters -------------------------------------------------------
    @property
    def q(self) -> np.ndarray:
        return self.q0 + self.Tq @ self.theta

    @property
    def b(self) -> np.ndarray:
        return self.b0 + self.Tb @ self.theta

    @property
    def h(self) -> np.ndarray:
        return self.h0 + self.Th @ self.theta

    def set_initial_param(self, x0coeff) -> "ConicProgram":
        """Replace the initial-condition coefficients (shape ``(n_x, L_ini)`` or ``(n_x,)``)."""
        p = self.problem
        x = np.asarray(x0coeff, dtype=float)
        if x.ndim == 1 and x.size == p.n_x:
            full = np.zeros((p.n_x, self.hb.L_ini))
            full[:, 0] = x
            x = full
        if x.shape != (p.n_x, self.hb.L_ini):
            raise TranscriptionError(
                f"initial-condition coefficients must have shape {(p.n_x, self.hb.L_ini)} or {(p.n_x,)}, got {x.shape}"
            )
        self.theta = x.ravel().copy()
        return self

    def standard_form(self) -> StandardForm:
        return StandardForm(self.P, self.q, self.A, self.b, self.G, self.h, self.cones)

    def clone(self) -> "ConicProgram":
        return replace(self, theta=self.theta.copy(), cone_blocks=list(self.cone_blocks))

    # -- recovery ---------------------------------------------------------
    def trajectories(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Coefficient trajectories ``x (N+1, n_x, L)`` and ``u (N, n_u, L)`` from a solution."""
        p, L = self.problem, self.hb.L
        lay = self.layout
        if self.mode == "sparse":
            x = v[: lay["n_xvars"]].reshape(p.N + 1, L, p.n_x).transpose(0, 2, 1)
            u = v[lay["n_xvars"] :].reshape(p.N, L, p.n_u).transpose(0, 2, 1)
            return x.copy(), u.copy()
        u = np.zeros((p.N, p.n_u, L))
        idx = lay["u_index"]
        mask = idx >= 0
        u_t = np.zeros((p.N, L, p.n_u))
        u_t[mask] = v[idx[mask]]
        u = u_t.transpose(0, 2, 1)
        x = np.zeros((p.N + 1, p.n_x, L))
        x[0, :, : self.hb.L_ini] = self.theta.reshape(p.n_x, self.hb.L_ini)
        W = lay["w_steps"]
        for k in range(p.N):
            x[k + 1] = p.A @ x[k] + p.B @ u[k] + p.E @ W[k]
        return x, u

    def describe(self) -> str:
        """Stable text summary of sizes and sparsity (for regression fixtures)."""
        p = self.problem
        lines = [
            f"mode {self.mode}",
            f"horizon {p.N}",
            f"terms L {self.hb.L} L_ini {self.hb.L_ini}",
            f"dims n_x {p.n_x} n_u {p.n_u} n_w {p.n_w}",
            f"variables {self.n_variables}",
            f"coefficient_variables {self.n_coefficient_variables}",
            f"equalities {self.n_equalities} dynamics {self.n_dynamics_rows} causality {self.n_causality_rows}",
            f"cone_rows {self.n_cone_rows} orthant {self.cones.l} soc {len(self.cones.q)}",
            f"nnz P {self.P.nnz} A {self.A.nnz} G {self.G.nnz}",
        ]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# building blocks


def causality_constraints(hb: HorizonBasis, k: int) -> np.ndarray:
    """Term indices j with ``u^j(k) = 0`` (germ blocks of steps i >= k)."""
    if not 0 <= k < hb.N:
        raise TranscriptionError(f"step {k} out of range [0, {hb.N - 1}]")
    return hb.zero_input_terms(k)


def _support(hb: HorizonBasis, target: str, k: int) -> np.ndarray:
    """Terms of ``z(k)`` that are not structurally zero: steps < k (plus constant/ini)."""
    return hb.free_input_terms(k)


def rollout_dynamics(prob: StochasticProblem, hb: HorizonBasis) -> tuple[sp.csr_matrix, np.ndarray, sp.csr_matrix]:
    """Equality rows for initial condition and dynamics in the sparse layout.

    Returns ``(A_eq, b0, Tb)`` with ``b = b0 + Tb @ theta``; rows are the
    ``L n_x`` initial-condition rows followed by ``N L n_x`` dynamics rows.
    """
    N, L, n_x, n_u = prob.N, hb.L, prob.n_x, prob.n_u
    _, W = prob.embedded(hb)
    n_xv = (N + 1) * L * n_x

    def xi(k, j, i):
        return (k * L + j) * n_x + i

    def ui(k, j, c):
        return n_xv + (k * L + j) * n_u + c

    rows, cols, vals = [], [], []
    # x^j(0) = theta (ini block) or 0
    r = np.arange(L * n_x)
    rows.append(r)
    cols.append(r)
    vals.append(np.ones(r.size))
    j_idx, i_idx = np.meshgrid(np.arange(L), np.arange(n_x), indexing="ij")
    b0 = [np.zeros(L * n_x)]
    ini_rows = (j_idx * n_x + i_idx)[: hb.L_ini].ravel()
    theta_cols = (i_idx[: hb.L_ini] * hb.L_ini + j_idx[: hb.L_ini]).ravel()
    Tb = sp.csr_matrix(
        (np.ones(ini_rows.size), (ini_rows, theta_cols)), shape=(L * n_x * (N + 1), n_x * hb.L_ini)
    )
    A_, B_ = prob.A, prob.B
    base = L * n_x
    Ai, Aj = np.nonzero(A_)
    Bi, Bj = np.nonzero(B_)
    for k in range(N):
        for j in range(L):
            row0 = base + (k * L + j) * n_x
            rr = row0 + np.arange(n_x)
            rows.append(rr)
            cols.append(xi(k + 1, j, np.arange(n_x)))
            vals.append(np.ones(n_x))
            rows.append(row0 + Ai)
            cols.append(xi(k, j, Aj))
            vals.append(-A_[Ai, Aj])
            rows.append(row0 + Bi)
            cols.append(ui(k, j, Bj))
            vals.append(-B_[Bi, Bj])
        b0.append((prob.E @ W[k]).T.ravel())
    n_rows = L * n_x * (N + 1)
    n_cols = n_xv + N * L * n_u
    Aeq = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_rows, n_cols)
    )
    return Aeq, np.concatenate(b0), Tb


def chance_cone(spec: ChanceSpec, hb: HorizonBasis, gaussian: bool) -> list[tuple[int, str, float]]:
    """Expand a chance spec into ``(k, side, gamma)`` cone descriptors.

    An inactive spec (both bounds infinite) yields an empty list with a warning.
    """
    if not spec.active:
        warnings.warn(f"chance constraint on {spec.target} {spec.component} has no finite bound; skipped")
        return []
    k_max = hb.N if spec.target == "state" else hb.N - 1
    steps = range(k_max + 1) if spec.steps is None else spec.steps
    g = spec.gamma(gaussian)
    out = []
    for k in steps:
        if not 0 <= k <= k_max:
            raise TranscriptionError(f"{spec.target} chance step {k} out of range [0, {k_max}]")
        if math.isfinite(spec.upper):
            out.append((k, "upper", g))
        if math.isfinite(spec.lower):
            out.append((k, "lower", g))
    return out


# ---------------------------------------------------------------------------
# affine maps from decision variables to coefficients


class _SparseMap:
    """Coefficients are variables themselves."""

    def __init__(self, prob: StochasticProblem, hb: HorizonBasis):
        self.prob, self.hb = prob, hb
        self.n_xv = (prob.N + 1) * hb.L * prob.n_x
        self.n_theta = prob.n_x * hb.L_ini

    def rows(self, target: str, comp: int, k: int, terms: np.ndarray):
        """For each term j: variable-coefficient rows (sparse), offset, theta rows."""
        L, n = self.hb.L, len(terms)
        if target == "state":
            idx = (k * L + terms) * self.prob.n_x + comp
        else:
            idx = self.n_xv + (k * L + terms) * self.prob.n_u + comp
        C = sp.csr_matrix((np.ones(n), (np.arange(n), idx)), shape=(n, self.n_var))
        return C, np.zeros(n), sp.csr_matrix((n, self.n_theta))

    @property
    def n_var(self) -> int:
        p = self.prob
        return self.n_xv + p.N * self.hb.L * p.n_u


class _CondensedMap:
    """Free input coefficients only; states by forward substitution."""

    def __init__(self, prob: StochasticProblem, hb: HorizonBasis):
        self.prob, self.hb = prob, hb
        N, L, n_x, n_u = prob.N, hb.L, prob.n_x, prob.n_u
        term_step = hb.term_step()
        u_index = -np.ones((N, L, n_u), dtype=np.int64)
        nxt = 0
        self.free_cols = []  # per term: variable indices, ordered by (k, c)
        self.free_steps = []
        for j in range(L):
            ks = np.arange(term_step[j] + 1, N)
            ids = nxt + np.arange(ks.size * n_u)
            u_index[ks, j, :] = ids.reshape(ks.size, n_u)
            nxt += ids.size
            self.free_cols.append(ids)
            self.free_steps.append(ks)
        self.u_index = u_index
        self.n_var = nxt
        self.n_theta = n_x * hb.L_ini
        # Stacked maps: X = Phi x0 + Gamma U + Gw W (rows (k, i), k = 0..N).
        Apow = [np.eye(n_x)]
        for _ in range(N):
            Apow.append(prob.A @ Apow[-1])
        self.Phi = np.vstack(Apow)
        Gam = np.zeros(((N + 1) * n_x, N * n_u))
        Gw = np.zeros(((N + 1) * n_x, N * prob.n_w))
        for k in range(1, N + 1):
            for t in range(k):
                Gam[k * n_x : (k + 1) * n_x, t * n_u : (t + 1) * n_u] = Apow[k - 1 - t] @ prob.B
                Gw[k * n_x : (k + 1) * n_x, t * prob.n_w : (t + 1) * prob.n_w] = Apow[k - 1 - t] @ prob.E
        self.Gamma, self.Gw = Gam, Gw
        _, W = prob.embedded(hb)
        self.W = W
        # Disturbance-driven part of each term's state trajectory, shape (L, (N+1) n_x).
        self.Xw = np.einsum("rc,jc->jr", Gw, W.transpose(2, 0, 1).reshape(L, -1))

    def gamma_cols(self, j: int) -> np.ndarray:
        n_u = self.prob.n_u
        ks = self.free_steps[j]
        return (ks[:, None] * n_u + np.arange(n_u)[None, :]).ravel()

    def rows(self, target: str, comp: int, k: int, terms: np.ndarray):
        p, L_ini = self.prob, self.hb.L_ini
        n = len(terms)
        r_idx, c_idx, vals = [], [], []
        off = np.zeros(n)
        t_rows, t_cols, t_vals = [], [], []
        for r, j in enumerate(terms):
            if target == "state":
                row = k * p.n_x + comp
                coeffs = self.Gamma[row, self.gamma_cols(j)]
                off[r] = self.Xw[j, row]
                if j < L_ini:
                    phi = self.Phi[row]
                    t_rows.append(np.full(p.n_x, r))
                    t_cols.append(np.arange(p.n_x) * L_ini + j)
                    t_vals.append(phi)
                ids = self.free_cols[j]
            else:
                coeffs = np.ones(1)
                ids = self.u_index[k, j, comp : comp + 1]
                if ids[0] < 0:
                    coeffs, ids = np.zeros(0), np.zeros(0, np.int64)
            nz = coeffs != 0
            r_idx.append(np.full(nz.sum(), r))
            c_idx.append(ids[nz])
            vals.append(coeffs[nz])
        C = sp.csr_matrix(
            (np.concatenate(vals) if vals else [], (np.concatenate(r_idx), np.concatenate(c_idx))),
            shape=(n, self.n_var),
        )
        if t_rows:
            T = sp.csr_matrix(
                (np.concatenate(t_vals), (np.concatenate(t_rows), np.concatenate(t_cols))), shape=(n, self.n_theta)
            )
        else:
            T = sp.csr_matrix((n, self.n_theta))
        return C, off, T


def _cone_rows(vmap, spec: ChanceSpec, k: int, side: str, g: float, hb: HorizonBasis):
    """Rows ``(G, h0, Th)`` of one cone ``(bound -/+ z^0, g z^1, ..., g z^m)``."""
    support = _support(hb, spec.target, k)
    tail = support[support > 0]
    terms = np.concatenate([[0], tail]).astype(np.int64)
    C, off, T = vmap.rows(spec.target, spec.component, k, terms)
    sign = 1.0 if side == "upper" else -1.0
    bound = spec.upper if side == "upper" else spec.lower
    # head: s0 = sign * (bound - z0) = sign*bound - sign*(C0 v + off0 + T0 theta)
    G = sp.vstack([sign * C[:1], -g * C[1:]]).tocsr()
    h0 = np.concatenate([[sign * (bound - off[0])], g * off[1:]])
    Th = sp.vstack([-sign * T[:1], g * T[1:]]).tocsr()
    return G, h0, Th


def _assemble_cones(vmap, specs, hb, gaussian):
    lp_G, lp_h, lp_T = [], [], []
    soc_G, soc_h, soc_T, soc_dims, blocks = [], [], [], [], []
    for spec in specs:
        for k, side, g in chance_cone(spec, hb, gaussian):
            G, h0, Th = _cone_rows(vmap, spec, k, side, g, hb)
            blocks.append(_ConeBlock(spec, k, side, g, G.shape[0]))
            if G.shape[0] == 1:
                lp_G.append(G)
                lp_h.append(h0)
                lp_T.append(Th)
            else:
                soc_G.append(G)
                soc_h.append(h0)
                soc_T.append(Th)
                soc_dims.append(G.shape[0])
    return (lp_G, lp_h, lp_T), (soc_G, soc_h, soc_T, soc_dims), blocks


def _objective_sparse(prob: StochasticProblem, hb: HorizonBasis, n_var: int) -> sp.csc_matrix:
    if not prob.has_objective:
        return sp.csc_matrix((n_var, n_var))
    L, N = hb.L, prob.N
    blocks = [sp.kron(sp.eye(L * N), 2 * prob.Q), sp.kron(sp.eye(L), 2 * prob.QN), sp.kron(sp.eye(L * N), 2 * prob.R)]
    return sp.block_diag(blocks, format="csc")


def _objective_condensed(prob: StochasticProblem, hb: HorizonBasis, cm: _CondensedMap):
    n, n_th = cm.n_var, cm.n_theta
    if not prob.has_objective:
        return sp.csc_matrix((n, n)), np.zeros(n), sp.csr_matrix((n, n_th))
    N, n_x = prob.N, prob.n_x
    Qbar = sp.block_diag([prob.Q] * N + [prob.QN]).toarray()
    Rbar = np.kron(np.eye(N), prob.R)
    Pb, q0 = [], np.zeros(n)
    t_r, t_c, t_v = [], [], []
    for j in range(hb.L):
        cols = cm.gamma_cols(j)
        ids = cm.free_cols[j]
        if ids.size == 0:
            Pb.append(np.zeros((0, 0)))
            continue
        Gj = cm.Gamma[:, cols]
        QG = Qbar @ Gj
        Pb.append(2.0 * (Gj.T @ QG + Rbar[np.ix_(cols, cols)]))
        q0[ids] = 2.0 * QG.T @ cm.Xw[j]
        if j < hb.L_ini:
            M = 2.0 * QG.T @ cm.Phi  # (n_free, n_x)
            rr, cc = np.meshgrid(ids, np.arange(n_x) * hb.L_ini + j, indexing="ij")
            t_r.append(rr.ravel())
            t_c.append(cc.ravel())
            t_v.append(M.ravel())
    P = sp.block_diag([b for b in Pb if b.size], format="csc") if n else sp.csc_matrix((0, 0))
    Tq = (
        sp.csr_matrix((np.concatenate(t_v), (np.concatenate(t_r), np.concatenate(t_c))), shape=(n, n_th))
        if t_r
        else sp.csr_matrix((n, n_th))
    )
    return P, q0, Tq


def build(prob: StochasticProblem, hb: HorizonBasis | None = None, mode: str = "sparse") -> ConicProgram:
    """Assemble the conic program of a stochastic problem.

    Args:
        prob: problem data.
        hb: joint basis (built from the problem when omitted).
        mode: ``"sparse"`` (all coefficients as variables) or ``"condensed"``.
    """
    if hb is None:
        hb = prob.horizon_basis()
    x_ini, W = prob.embedded(hb)
    theta = x_ini[:, : hb.L_ini].ravel().copy()
    n_th = theta.size
    if mode == "sparse":
        vmap = _SparseMap(prob, hb)
        n = vmap.n_var
        A_dyn, b_dyn, Tb_dyn = rollout_dynamics(prob, hb)
        # causality rows
        rows, cols = [], []
        r = 0
        for k in range(prob.N):
            for j in causality_constraints(hb, k):
                for c in range(prob.n_u):
                    rows.append(r)
                    cols.append(vmap.n_xv + (k * hb.L + j) * prob.n_u + c)
                    r += 1
        A_cau = sp.csr_matrix((np.ones(r), (rows, cols)), shape=(r, n))
        A_eq = sp.vstack([A_dyn, A_cau]).tocsc()
        b0 = np.concatenate([b_dyn, np.zeros(r)])
        Tb = sp.vstack([Tb_dyn, sp.csr_matrix((r, n_th))]).tocsr()
        P = _objective_sparse(prob, hb, n)
        q0, Tq = np.zeros(n), sp.csr_matrix((n, n_th))
        n_dyn, n_cau = A_dyn.shape[0], r
        layout = {"n_xvars": vmap.n_xv}
    elif mode == "condensed":
        vmap = _CondensedMap(prob, hb)
        n = vmap.n_var
        A_eq, b0, Tb = sp.csc_matrix((0, n)), np.zeros(0), sp.csr_matrix((0, n_th))
        P, q0, Tq = _objective_condensed(prob, hb, vmap)
        n_dyn = n_cau = 0
        layout = {"u_index": vmap.u_index, "w_steps": W}
    else:
        raise TranscriptionError(f"unknown transcription mode {mode!r}")
    prog = ConicProgram(
        problem=prob, hb=hb, mode=mode, P=sp.csc_matrix(P), q0=q0, Tq=sp.csr_matrix(Tq),
        A=sp.csc_matrix(A_eq), b0=b0, Tb=sp.csr_matrix(Tb),
        G=sp.csc_matrix((0, n)), h0=np.zeros(0), Th=sp.csr_matrix((0, n_th)),
        cones=ConeDims(), theta=theta, n_dynamics_rows=n_dyn, n_causality_rows=n_cau, layout=layout,
    )
    prog.layout["vmap"] = vmap
    _append_cones(prog, prob.chance_specs())
    return prog


def _append_cones(prog: ConicProgram, specs: Sequence[ChanceSpec]) -> None:
    vmap = prog.layout["vmap"]
    (lpG, lph, lpT), (sG, sh, sT, sdims), blocks = _assemble_cones(vmap, specs, prog.hb, prog.problem.gauss)
    if not blocks:
        return
    n, n_th = prog.n_variables, prog.theta.size
    l_old = prog.cones.l
    G_old, h_old, T_old = prog.G.tocsr(), prog.h0, prog.Th.tocsr()
    parts_G = [G_old[:l_old], *lpG, G_old[l_old:], *sG]
    parts_h = [h_old[:l_old], *lph, h_old[l_old:], *sh]
    parts_T = [T_old[:l_old], *lpT, T_old[l_old:], *sT]
    prog.G = sp.vstack([sp.csr_matrix(g, shape=(g.shape[0], n)) for g in parts_G]).tocsc()
    prog.h0 = np.concatenate(parts_h)
    prog.Th = sp.vstack([sp.csr_matrix(t, shape=(t.shape[0], n_th)) for t in parts_T]).tocsr()
    prog.cones = ConeDims(l_old + len(lpG), prog.cones.q + tuple(sdims))
    prog.cone_blocks.extend(blocks)


def add_chance(prog: ConicProgram, spec: ChanceSpec) -> ConicProgram:
    """Append one chance-constraint family to a built program."""
    p = prog.problem
    n = p.n_x if spec.target == "state" else p.n_u
    if not 0 <= spec.component < n:
        raise TranscriptionError(f"{spec.target} chance component {spec.component} out of range [0, {n - 1}]")
    _append_cones(prog, [spec])
    return prog


def set_initial_param(prog: ConicProgram, x0coeff) -> ConicProgram:
    return prog.set_initial_param(x0coeff)
