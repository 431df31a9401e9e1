"""Multivariate polynomial chaos expansions of random vectors.

A :class:`MultiBasis` is a list of independent germs (each tagged with a unique
integer id and carrying its univariate orthonormal family) plus a list of
multi-indices. Term ``j`` of the basis is the product over germs ``g`` of
``psi_g^{terms[j, g]}(xi_g)``; term 0 is always the constant.

A :class:`PCEVector` pairs a basis with an ``n_z x L`` coefficient matrix.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .measures import (
    MeasureError,
    MeasureSpec,
    UnivariateBasis,
    default_node_count,
    gauss_rule,
    make_basis,
)

__all__ = [
    "Germ",
    "MultiBasis",
    "PCEVector",
    "PolynomialMap",
    "PCEError",
    "affine_pce",
    "univariate_pce",
    "union_basis",
    "tensor_basis",
    "stack",
    "gen_pce",
    "gaussian_mv_pce",
    "mean",
    "variance",
    "propagate_affine",
    "galerkin_project",
    "sample",
]


class PCEError(ValueError):
    """Inconsistent bases, coefficients or maps."""


@dataclass(frozen=True)
class Germ:
    """An independent standardized random variable with a unique id."""

    id: int
    basis: UnivariateBasis

    @property
    def measure(self) -> MeasureSpec:
        return self.basis.measure


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class MultiBasis:
    """Orthonormal multivariate basis built from independent germs.

    Attributes:
        germs: germs in column order of ``terms``.
        terms: integer array of shape ``(L, G)``; row 0 is all zeros.
    """

    germs: tuple[Germ, ...]
    terms: np.ndarray

    def __post_init__(self) -> None:
        germs = tuple(self.germs)
        object.__setattr__(self, "germs", germs)
        terms = np.asarray(self.terms, dtype=np.int64)
        terms = terms.reshape(-1, len(germs)) if germs else terms.reshape(max(terms.shape[0], 1), 0)
        if terms.shape[0] == 0:
            raise PCEError("a basis needs at least the constant term")
        if np.any(terms[0] != 0):
            raise PCEError("the first basis term must be the constant (all-zero multi-index)")
        if np.any(terms < 0):
            raise PCEError("multi-index degrees must be non-negative")
        ids = [g.id for g in germs]
        if len(set(ids)) != len(ids):
            raise PCEError(f"duplicate germ ids {sorted(i for i in ids if ids.count(i) > 1)}")
        for col, g in enumerate(germs):
            if terms[:, col].max(initial=0) > g.basis.max_degree:
                raise PCEError(
                    f"term degree {terms[:, col].max()} exceeds germ {g.id} max degree {g.basis.max_degree}"
                )
        if len({tuple(r) for r in terms}) != terms.shape[0]:
            raise PCEError("duplicate multi-indices in basis")
        object.__setattr__(self, "terms", _freeze(terms))

    @property
    def L(self) -> int:
        return self.terms.shape[0]

    term_count = L

    @property
    def n_germs(self) -> int:
        return len(self.germs)

    @property
    def germ_ids(self) -> tuple[int, ...]:
        return tuple(g.id for g in self.germs)

    def germ_index(self, germ_id: int) -> int:
        for i, g in enumerate(self.germs):
            if g.id == germ_id:
                return i
        raise PCEError(f"germ id {germ_id} not in basis")

    @property
    def total_degrees(self) -> np.ndarray:
        return self.terms.sum(axis=1)

    @property
    def max_total_degree(self) -> int:
        return int(self.total_degrees.max(initial=0))

    def __eq__(self, other) -> bool:
        if not isinstance(other, MultiBasis):
            return NotImplemented
        return self.germs == other.germs and np.array_equal(self.terms, other.terms)

    def __hash__(self) -> int:
        return hash((self.germs, self.terms.tobytes()))

    def evaluate(self, germ_draws) -> np.ndarray:
        """Basis values at germ draws.

        Args:
            germ_draws: array of shape ``(n, G)`` (or ``(G,)``) in germ column order.

        Returns:
            Array of shape ``(n, L)`` (or ``(L,)``).
        """
        draws = np.asarray(germ_draws, dtype=float)
        single = draws.ndim == 1
        draws = np.atleast_2d(draws)
        if draws.shape[1] != self.n_germs:
            raise PCEError(f"expected {self.n_germs} germ columns, got {draws.shape[1]}")
        out = np.ones((draws.shape[0], self.L))
        for col, g in enumerate(self.germs):
            degs = self.terms[:, col]
            if not degs.any():
                continue
            tab = g.basis.table(draws[:, col])
            out *= tab[:, degs]
        return out[0] if single else out

    def sample_germs(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Independent draws of all germs, shape ``(n, G)``."""
        out = np.empty((n, self.n_germs))
        for col, g in enumerate(self.germs):
            out[:, col] = g.measure.sample_germ(rng, n)
        return out

    def relabel(self, mapping: Callable[[int], int]) -> "MultiBasis":
        return MultiBasis(tuple(Germ(mapping(g.id), g.basis) for g in self.germs), self.terms)

    def to_dict(self) -> dict:
        return {
            "germs": [
                {"id": g.id, "measure": g.measure.to_dict(), "max_degree": g.basis.max_degree}
                for g in self.germs
            ],
            "terms": self.terms.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MultiBasis":
        germs = tuple(
            Germ(int(g["id"]), make_basis(MeasureSpec.from_dict(g["measure"]), int(g["max_degree"])))
            for g in data["germs"]
        )
        terms = np.asarray(data["terms"], dtype=np.int64)
        return cls(germs, terms if germs else np.zeros((1, 0), dtype=np.int64))


CONSTANT_BASIS = MultiBasis((), np.zeros((1, 0), dtype=np.int64))


@dataclass(frozen=True, eq=False)
class PCEVector:
    """A random vector ``Z = sum_j coeffs[:, j] * Psi_j``."""

    basis: MultiBasis
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim == 1:
            c = c.reshape(1, -1)
        if c.ndim != 2 or c.shape[1] != self.basis.L:
            raise PCEError(
                f"coefficient matrix must have {self.basis.L} columns (one per basis term), got shape {c.shape}"
            )
        object.__setattr__(self, "coeffs", _freeze(c))

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]

    n_z = dim

    @property
    def L(self) -> int:
        return self.basis.L

    def mean(self) -> np.ndarray:
        return mean(self)

    def variance(self) -> np.ndarray:
        return variance(self)

    def std(self) -> np.ndarray:
        return np.sqrt(variance(self))

    def covariance(self) -> np.ndarray:
        c = self.coeffs[:, 1:]
        return c @ c.T

    def component(self, i: int) -> "PCEVector":
        return PCEVector(self.basis, self.coeffs[i : i + 1])

    def sample(self, germ_draws) -> np.ndarray:
        return sample(self, germ_draws)

    @property
    def is_deterministic(self) -> bool:
        return not np.any(self.coeffs[:, 1:])

    def to_dict(self) -> dict:
        return {"basis": self.basis.to_dict(), "coeffs": self.coeffs.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "PCEVector":
        return cls(MultiBasis.from_dict(data["basis"]), np.asarray(data["coeffs"], dtype=float))


def affine_pce(measure: MeasureSpec, germ_id: int = 0) -> PCEVector:
    """Exact two-term expansion ``Z = E[Z] + std(Z) * psi^1(xi)`` (one term for Dirac)."""
    if measure.is_dirac:
        return PCEVector(CONSTANT_BASIS, [[measure.params[0]]])
    basis = MultiBasis((Germ(germ_id, make_basis(measure, 1)),), [[0], [1]])
    return PCEVector(basis, [[measure.mean, measure.std]])


def univariate_pce(measure: MeasureSpec, coeffs: Sequence[float], germ_id: int = 0) -> PCEVector:
    """Scalar PCE ``sum_j coeffs[j] psi^j(xi)`` over the germ of ``measure``.

    Trailing zero coefficients are kept, so the basis degree equals ``len(coeffs) - 1``.
    """
    coeffs = np.asarray(coeffs, dtype=float).ravel()
    if coeffs.size == 0:
        raise PCEError("need at least the constant coefficient")
    degree = coeffs.size - 1
    if degree == 0 or measure.is_dirac:
        if measure.is_dirac and np.any(coeffs[1:]):
            raise PCEError("a Dirac germ supports only the constant term")
        return PCEVector(CONSTANT_BASIS, coeffs[:1].reshape(1, 1))
    basis = MultiBasis(
        (Germ(germ_id, make_basis(measure, degree)),), np.arange(degree + 1).reshape(-1, 1)
    )
    return PCEVector(basis, coeffs.reshape(1, -1))


def union_basis(components: Sequence[MultiBasis]) -> MultiBasis:
    """Shared constant term plus the disjoint union of the non-constant terms."""
    components = list(components)
    if len(components) == 1:
        return components[0]
    germs: list[Germ] = []
    seen: set[int] = set()
    for comp in components:
        for g in comp.germs:
            if g.id in seen:
                raise PCEError(f"germ id {g.id} appears in more than one component (independence violated)")
            seen.add(g.id)
            germs.append(g)
    G = len(germs)
    rows = [np.zeros((1, G), dtype=np.int64)]
    col = 0
    for comp in components:
        block = np.zeros((comp.L - 1, G), dtype=np.int64)
        block[:, col : col + comp.n_germs] = comp.terms[1:]
        rows.append(block)
        col += comp.n_germs
    return MultiBasis(tuple(germs), np.vstack(rows))


def tensor_basis(
    components: Sequence[UnivariateBasis], total_degree: int, germ_ids: Sequence[int] | None = None
) -> MultiBasis:
    """All multi-indices with total degree at most ``total_degree``.

    Terms are ordered by total degree, then lexicographically descending (so the
    degree-1 terms come out as ``psi_1^1, psi_2^1, ...``).
    """
    if total_degree < 0:
        raise PCEError(f"total degree must be >= 0, got {total_degree}")
    components = list(components)
    n = len(components)
    ids = list(range(n)) if germ_ids is None else list(germ_ids)
    germs = []
    for gid, b in zip(ids, components):
        if b.max_degree < total_degree:
            b = make_basis(b.measure, total_degree)
        germs.append(Germ(int(gid), b))
    rows = []
    for d in range(total_degree + 1):
        level = [m for m in itertools.product(range(d + 1), repeat=n) if sum(m) == d]
        rows.extend(sorted(level, reverse=True))
    return MultiBasis(tuple(germs), np.asarray(rows, dtype=np.int64).reshape(-1, n))


def stack(components: Sequence[PCEVector]) -> PCEVector:
    """Stack independent random vectors into one vector over the union basis."""
    components = list(components)
    basis = union_basis([c.basis for c in components])
    n = sum(c.dim for c in components)
    coeffs = np.zeros((n, basis.L))
    row, col = 0, 1
    for c in components:
        coeffs[row : row + c.dim, 0] = c.coeffs[:, 0]
        coeffs[row : row + c.dim, col : col + c.L - 1] = c.coeffs[:, 1:]
        row += c.dim
        col += c.L - 1
    return PCEVector(basis, coeffs)


def gen_pce(specs: Sequence[MeasureSpec], first_germ_id: int = 0) -> PCEVector:
    """Component-wise affine PCEs of independent measures in their union basis.

    Dirac components consume no germ.
    """
    parts = []
    gid = first_germ_id
    for spec in specs:
        parts.append(affine_pce(spec, gid))
        if not spec.is_dirac:
            gid += 1
    return stack(parts)


def _psd_cholesky(cov: np.ndarray, tol: float) -> np.ndarray:
    """Lower-triangular factor of a PSD matrix, skipping (near-)zero pivots."""
    n = cov.shape[0]
    Lf = np.zeros_like(cov)
    A = cov.copy()
    for k in range(n):
        piv = A[k, k]
        if piv < -tol:
            raise PCEError("covariance matrix is not positive semidefinite")
        if piv <= tol:
            if np.any(np.abs(A[k + 1 :, k]) > math.sqrt(tol) * 10):
                raise PCEError("covariance matrix is not positive semidefinite")
            continue
        Lf[k:, k] = A[k:, k] / math.sqrt(piv)
        A[k:, k:] -= np.outer(Lf[k:, k], Lf[k:, k])
    return Lf


def gaussian_mv_pce(mean_vec, covariance, first_germ_id: int = 0) -> PCEVector:
    """``Z = mu + C [psi_1^1(xi_1) ... psi_m^1(xi_m)]^T`` with C a Cholesky factor.

    Columns of the factor that vanish (singular covariance) are dropped together
    with their germs, so a zero covariance yields a one-term deterministic vector.

    Raises:
        PCEError: if the covariance is not symmetric positive semidefinite.
    """
    mu = np.asarray(mean_vec, dtype=float).ravel()
    cov = np.asarray(covariance, dtype=float)
    n = mu.size
    if cov.shape != (n, n):
        raise PCEError(f"covariance must have shape {(n, n)}, got {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14):
        raise PCEError("covariance matrix is not symmetric")
    scale = max(float(np.abs(cov).max(initial=0.0)), 1.0)
    factor = _psd_cholesky(cov, 1e-14 * scale)
    keep = np.flatnonzero(np.any(factor != 0.0, axis=0))
    factor = factor[:, keep]
    hermite = make_basis(MeasureSpec.gaussian(), 1)
    m = keep.size
    germs = tuple(Germ(first_germ_id + i, hermite) for i in range(m))
    basis = MultiBasis(germs, np.vstack([np.zeros((1, m), np.int64), np.eye(m, dtype=np.int64)]))
    return PCEVector(basis, np.hstack([mu.reshape(-1, 1), factor]))


def mean(Z: PCEVector) -> np.ndarray:
    return Z.coeffs[:, 0].copy()


def variance(Z: PCEVector) -> np.ndarray:
    """Component-wise variance, the sum of squared non-constant coefficients."""
    return np.sum(Z.coeffs[:, 1:] ** 2, axis=1)


def propagate_affine(A, b, Z: PCEVector) -> PCEVector:
    """Exact image ``A Z + b`` in the same basis."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[1] != Z.dim:
        raise PCEError(f"matrix has {A.shape[1]} columns but the random vector has dimension {Z.dim}")
    b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float).ravel()
    if b.size != A.shape[0]:
        raise PCEError(f"offset must have length {A.shape[0]}, got {b.size}")
    coeffs = A @ Z.coeffs
    coeffs[:, 0] += b
    return PCEVector(Z.basis, coeffs)


def sample(Z: PCEVector, germ_draws) -> np.ndarray:
    """Realizations ``sum_j z^j Psi_j(xi)``, shape ``(n_samples, n_z)``."""
    draws = np.asarray(germ_draws, dtype=float)
    if draws.ndim == 1:
        draws = draws.reshape(1, -1) if Z.basis.n_germs else draws.reshape(-1, 0)
    if draws.shape[1] != Z.basis.n_germs:
        raise PCEError(f"expected {Z.basis.n_germs} germ columns, got {draws.shape[1]}")
    return Z.basis.evaluate(draws) @ Z.coeffs.T


@dataclass(frozen=True)
class PolynomialMap:
    """A vector polynomial map with a declared total degree.

    ``func`` takes an array of shape ``(n_z, m)`` (one column per evaluation point)
    and returns shape ``(n_y, m)``.
    """

    func: Callable[[np.ndarray], np.ndarray]
    degree: int
    n_out: int | None = None

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.func(z), dtype=float))

    @classmethod
    def from_sympy(cls, exprs, symbols) -> "PolynomialMap":
        """Build from sympy expressions; rejects non-polynomial expressions."""
        import sympy as sp

        if not isinstance(exprs, (list, tuple)):
            exprs = [exprs]
        symbols = list(symbols)
        degree = 0
        for e in exprs:
            try:
                poly = sp.Poly(sp.expand(e), *symbols)
            except sp.PolynomialError as exc:
                raise PCEError(f"map is not polynomial in {symbols}: {e}") from exc
            if any(not s.is_number for s in poly.coeffs()):
                raise PCEError(f"map is not polynomial in {symbols}: {e}")
            degree = max(degree, poly.total_degree())
        fns = [sp.lambdify(symbols, e, "numpy") for e in exprs]

        def func(z: np.ndarray) -> np.ndarray:
            return np.vstack([np.broadcast_to(f(*z), z.shape[1:]) for f in fns])

        return cls(func, int(degree), len(exprs))


def galerkin_project(f: PolynomialMap, Z: PCEVector, target: MultiBasis | None = None) -> PCEVector:
    """Project ``f(Z)`` onto ``target`` by tensorized Gauss quadrature.

    Args:
        f: polynomial map (plain callables are rejected, since exactness needs a degree).
        Z: input random vector.
        target: basis for the output; must contain every germ of ``Z``. Defaults to
            the total-degree tensor basis over Z's germs of the required degree.

    Raises:
        PCEError: non-polynomial map, missing germs, or insufficient target degree.
    """
    if not isinstance(f, PolynomialMap):
        raise PCEError("galerkin_project needs a PolynomialMap (polynomial with declared degree)")
    required = f.degree * Z.basis.max_total_degree
    if target is None:
        target = tensor_basis(
            [g.basis for g in Z.basis.germs], required, germ_ids=Z.basis.germ_ids
        )
    if target.max_total_degree < required:
        raise PCEError(
            f"target basis has total degree {target.max_total_degree}; the map needs degree {required}"
        )
    missing = set(Z.basis.germ_ids) - set(target.germ_ids)
    if missing:
        raise PCEError(f"target basis lacks germ ids {sorted(missing)}")

    # Active germs: those on which Z actually depends.
    active = [i for i in range(Z.basis.n_germs) if np.any(Z.basis.terms[np.any(Z.coeffs != 0, axis=0), i])]
    tgt_cols = [target.germ_index(Z.basis.germs[i].id) for i in active]
    nodes_1d, weights_1d = [], []
    for i, tc in zip(active, tgt_cols):
        deg_in = int(Z.basis.terms[:, i].max()) * f.degree
        deg_out = int(target.terms[:, tc].max())
        rule = gauss_rule(Z.basis.germs[i].measure, default_node_count(deg_in, deg_out))
        nodes_1d.append(rule.nodes)
        weights_1d.append(rule.weights)
    if active:
        grids = np.meshgrid(*nodes_1d, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        w = np.ones(1)
        for wi in weights_1d:
            w = np.outer(w, wi).ravel()
    else:
        pts = np.zeros((1, 0))
        w = np.ones(1)
    full_in = np.zeros((pts.shape[0], Z.basis.n_germs))
    full_in[:, active] = pts
    zvals = sample(Z, full_in)  # (m, n_z)
    yvals = f(zvals.T)  # (n_y, m)

    # Target terms depending on germs outside the active set project to zero.
    other = [c for c in range(target.n_germs) if c not in tgt_cols]
    relevant = ~np.any(target.terms[:, other] != 0, axis=1) if other else np.ones(target.L, bool)
    full_out = np.zeros((pts.shape[0], target.n_germs))
    full_out[:, tgt_cols] = pts
    psi = target.evaluate(full_out)  # (m, L)
    coeffs = (yvals * w) @ psi
    coeffs[:, ~relevant] = 0.0
    return PCEVector(target, coeffs)
