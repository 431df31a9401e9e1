"""Parametric probability measures and their orthonormal polynomial families.

Every non-degenerate measure is written as an affine image ``Z = loc + scale * xi``
of a standardized germ ``xi``:

=========  ==================  ==============================
family     germ                polynomial family (germ space)
=========  ==================  ==============================
Dirac      delta(0)            constant only
Gaussian   N(0, 1)             probabilists' Hermite
Uniform    U(0, 1)             shifted Legendre
Beta       Beta(alpha, beta)   Jacobi on [0, 1]
Gamma      Gamma(k, 1)         generalized Laguerre (k - 1)
=========  ==================  ==============================

Polynomials are generated from monic three-term recurrences

    p_{j+1}(x) = (x - a_j) p_j(x) - b_j p_{j-1}(x),    <p_j, p_j> = b_1 ... b_j,

and Gauss rules come from the Golub-Welsch eigenproblem of the Jacobi matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal

__all__ = [
    "Family",
    "MeasureSpec",
    "UnivariateBasis",
    "QuadratureRule",
    "MeasureError",
    "NumericalError",
    "make_basis",
    "eval_phi",
    "eval_psi",
    "gauss_rule",
    "inner_product",
    "default_node_count",
    "recurrence_coefficients",
]


class MeasureError(ValueError):
    """Invalid measure parameters or an out-of-range request."""


class NumericalError(ArithmeticError):
    """A numerical routine failed (e.g. the Golub-Welsch eigensolver)."""


class Family(str, Enum):
    DIRAC = "dirac"
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    BETA = "beta"
    GAMMA = "gamma"


_PARAM_NAMES = {
    Family.DIRAC: ("c",),
    Family.GAUSSIAN: ("mu", "sigma"),
    Family.UNIFORM: ("a", "b"),
    Family.BETA: ("alpha", "beta"),
    Family.GAMMA: ("k", "theta"),
}


@dataclass(frozen=True)
class MeasureSpec:
    """A parametric probability measure.

    Parameters per family: Dirac ``(c,)``, Gaussian ``(mu, sigma)`` with sigma the
    standard deviation, Uniform ``(a, b)``, Beta ``(alpha, beta)`` on [0, 1],
    Gamma ``(k, theta)`` (shape, scale).
    """

    family: Family
    params: tuple[float, ...]

    def __post_init__(self) -> None:
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        names = _PARAM_NAMES[fam]
        if len(params) != len(names):
            raise MeasureError(
                f"{fam.value} measure takes {len(names)} parameter(s) {names}, got {len(params)}"
            )
        for name, value in zip(names, params):
            if not math.isfinite(value):
                raise MeasureError(f"{fam.value} parameter '{name}' must be finite, got {value}")
        if fam is Family.GAUSSIAN and params[1] <= 0:
            raise MeasureError(f"gaussian parameter 'sigma' must be > 0, got {params[1]}")
        if fam is Family.UNIFORM and not params[0] < params[1]:
            raise MeasureError(f"uniform parameters must satisfy 'a' < 'b', got a={params[0]}, b={params[1]}")
        if fam is Family.BETA:
            for name, value in zip(names, params):
                if value <= 0:
                    raise MeasureError(f"beta parameter '{name}' must be > 0, got {value}")
        if fam is Family.GAMMA:
            for name, value in zip(names, params):
                if value <= 0:
                    raise MeasureError(f"gamma parameter '{name}' must be > 0, got {value}")

    # -- constructors -----------------------------------------------------
    @classmethod
    def dirac(cls, c: float) -> "MeasureSpec":
        return cls(Family.DIRAC, (c,))

    @classmethod
    def gaussian(cls, mu: float = 0.0, sigma: float = 1.0) -> "MeasureSpec":
        return cls(Family.GAUSSIAN, (mu, sigma))

    @classmethod
    def uniform(cls, a: float = 0.0, b: float = 1.0) -> "MeasureSpec":
        return cls(Family.UNIFORM, (a, b))

    @classmethod
    def beta(cls, alpha: float, beta: float) -> "MeasureSpec":
        return cls(Family.BETA, (alpha, beta))

    @classmethod
    def gamma(cls, k: float, theta: float = 1.0) -> "MeasureSpec":
        return cls(Family.GAMMA, (k, theta))

    # -- standardization --------------------------------------------------
    @property
    def is_dirac(self) -> bool:
        return self.family is Family.DIRAC

    def germ(self) -> "MeasureSpec":
        """The standardized germ measure xi with ``Z = loc + scale * xi``."""
        fam = self.family
        if fam is Family.DIRAC:
            return MeasureSpec.dirac(0.0)
        if fam is Family.GAUSSIAN:
            return MeasureSpec.gaussian(0.0, 1.0)
        if fam is Family.UNIFORM:
            return MeasureSpec.uniform(0.0, 1.0)
        if fam is Family.BETA:
            return self
        return MeasureSpec.gamma(self.params[0], 1.0)

    @property
    def loc(self) -> float:
        fam, p = self.family, self.params
        if fam in (Family.DIRAC, Family.GAUSSIAN, Family.UNIFORM):
            return p[0]
        return 0.0

    @property
    def scale(self) -> float:
        fam, p = self.family, self.params
        if fam is Family.DIRAC:
            return 0.0
        if fam is Family.GAUSSIAN:
            return p[1]
        if fam is Family.UNIFORM:
            return p[1] - p[0]
        if fam is Family.BETA:
            return 1.0
        return p[1]

    def is_germ(self) -> bool:
        return self == self.germ()

    # -- moments ----------------------------------------------------------
    def _germ_raw_moment(self, n: int) -> float:
        fam, p = self.family, self.params
        if n == 0:
            return 1.0
        if fam is Family.DIRAC:
            return 0.0
        if fam is Family.GAUSSIAN:
            return 0.0 if n % 2 else float(np.prod(np.arange(n - 1, 0, -2, dtype=float)))
        if fam is Family.UNIFORM:
            return 1.0 / (n + 1)
        if fam is Family.BETA:
            a, b = p
            r = np.arange(n, dtype=float)
            return float(np.prod((a + r) / (a + b + r)))
        k = p[0]
        return float(np.prod(k + np.arange(n, dtype=float)))

    def raw_moment(self, n: int) -> float:
        """E[Z**n], from the germ moments by binomial expansion."""
        if n < 0:
            raise MeasureError(f"moment order must be >= 0, got {n}")
        loc, scale = self.loc, self.scale
        return float(
            sum(
                math.comb(n, r) * loc ** (n - r) * scale**r * self._germ_raw_moment(r)
                for r in range(n + 1)
            )
        )

    @property
    def mean(self) -> float:
        return self.raw_moment(1)

    @property
    def variance(self) -> float:
        fam, p = self.family, self.params
        if fam is Family.DIRAC:
            return 0.0
        if fam is Family.GAUSSIAN:
            return p[1] ** 2
        if fam is Family.UNIFORM:
            return (p[1] - p[0]) ** 2 / 12.0
        if fam is Family.BETA:
            a, b = p
            return a * b / ((a + b) ** 2 * (a + b + 1.0))
        return p[0] * p[1] ** 2

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    # -- sampling ---------------------------------------------------------
    def sample_germ(self, rng: np.random.Generator, size) -> np.ndarray:
        """Draws of the standardized germ (not of Z)."""
        fam, p = self.family, self.params
        if fam is Family.DIRAC:
            return np.zeros(size)
        if fam is Family.GAUSSIAN:
            return rng.standard_normal(size)
        if fam is Family.UNIFORM:
            return rng.random(size)
        if fam is Family.BETA:
            return rng.beta(p[0], p[1], size)
        return rng.standard_gamma(p[0], size)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.loc + self.scale * self.sample_germ(rng, size)

    def to_dict(self) -> dict:
        return {"family": self.family.value, "params": list(self.params)}

    @classmethod
    def from_dict(cls, data: dict) -> "MeasureSpec":
        return cls(Family(data["family"]), tuple(data["params"]))


def recurrence_coefficients(measure: MeasureSpec, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Monic recurrence coefficients ``(a_0..a_{n-1}, b_0..b_{n-1})`` of the germ.

    ``b_0`` is the total mass (1 for probability measures).
    """
    if n < 0:
        raise MeasureError(f"number of recurrence coefficients must be >= 0, got {n}")
    germ = measure.germ()
    fam = germ.family
    j = np.arange(n, dtype=float)
    if fam is Family.DIRAC:
        a, b = np.zeros(n), np.zeros(n)
    elif fam is Family.GAUSSIAN:
        a, b = np.zeros(n), j.copy()
    elif fam is Family.UNIFORM:
        a = np.full(n, 0.5)
        with np.errstate(divide="ignore", invalid="ignore"):
            b = j**2 / (4.0 * (4.0 * j**2 - 1.0))
    elif fam is Family.BETA:
        a, b = _jacobi_unit_interval(germ.params[0], germ.params[1], n)
    else:
        k = germ.params[0]
        a = 2.0 * j + k
        b = j * (j + k - 1.0)
    if n:
        b[0] = 1.0
    return a, b


def _jacobi_unit_interval(alpha: float, beta: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    # Jacobi weight (1-t)^ja (1+t)^jb on [-1, 1] with t = 2x - 1 matches x^(alpha-1)(1-x)^(beta-1).
    ja, jb = beta - 1.0, alpha - 1.0
    a = np.empty(n)
    b = np.empty(n)
    for m in range(n):
        if m == 0:
            a_t = (jb - ja) / (ja + jb + 2.0)
        else:
            s = 2.0 * m + ja + jb
            a_t = (jb**2 - ja**2) / (s * (s + 2.0))
        a[m] = 0.5 * (a_t + 1.0)
        if m == 0:
            b[m] = 1.0
        elif m == 1:
            b_t = 4.0 * (1.0 + ja) * (1.0 + jb) / ((2.0 + ja + jb) ** 2 * (3.0 + ja + jb))
            b[m] = b_t / 4.0
        else:
            s = 2.0 * m + ja + jb
            b_t = 4.0 * m * (m + ja) * (m + jb) * (m + ja + jb) / (s**2 * (s + 1.0) * (s - 1.0))
            b[m] = b_t / 4.0
    return a, b


@dataclass(frozen=True)
class UnivariateBasis:
    """Orthonormal polynomials psi^0..psi^max_degree of a germ measure.

    ``measure`` is always the standardized germ. ``norms[j]`` is ``<phi^j, phi^j>``
    for the monic polynomial ``phi^j``.
    """

    measure: MeasureSpec
    max_degree: int
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    norms: np.ndarray = field(repr=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, UnivariateBasis):
            return NotImplemented
        return self.measure == other.measure and self.max_degree == other.max_degree

    def __hash__(self) -> int:
        return hash((self.measure, self.max_degree))

    def phi(self, degree: int, x) -> np.ndarray:
        return eval_phi(self, degree, x)

    def psi(self, degree: int, x) -> np.ndarray:
        return eval_psi(self, degree, x)

    def table(self, x) -> np.ndarray:
        """psi^0..psi^max_degree at points x, shape ``x.shape + (max_degree + 1,)``."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape + (self.max_degree + 1,))
        out[..., 0] = 1.0
        if self.max_degree == 0:
            return out
        sb = np.sqrt(self.b)
        out[..., 1] = (x - self.a[0]) / sb[1]
        for j in range(1, self.max_degree):
            out[..., j + 1] = ((x - self.a[j]) * out[..., j] - sb[j] * out[..., j - 1]) / sb[j + 1]
        return out


def make_basis(measure: MeasureSpec, max_degree: int, norms: str = "recurrence") -> UnivariateBasis:
    """Orthonormal polynomial basis of ``measure``'s germ up to ``max_degree``.

    Args:
        measure: any measure; its standardized germ defines the inner product.
        max_degree: highest polynomial degree. A Dirac measure always yields the
            constant basis ``{1}``.
        norms: ``"recurrence"`` (products of the b_j) or ``"quadrature"``.
    """
    if int(max_degree) != max_degree or max_degree < 0:
        raise MeasureError(f"max_degree must be a non-negative integer, got {max_degree}")
    max_degree = int(max_degree)
    germ = measure.germ()
    if germ.is_dirac:
        max_degree = 0
    a, b = recurrence_coefficients(germ, max_degree + 1)
    if norms == "recurrence":
        nrm = np.cumprod(b)
    elif norms == "quadrature":
        rule = gauss_rule(germ, max_degree + 1)
        nrm = np.array(
            [np.dot(rule.weights, _monic(a, b, j, rule.nodes) ** 2) for j in range(max_degree + 1)]
        )
    else:
        raise MeasureError(f"unknown norm method {norms!r}")
    a.flags.writeable = False
    b.flags.writeable = False
    nrm.flags.writeable = False
    return UnivariateBasis(germ, max_degree, a, b, nrm)


def _monic(a: np.ndarray, b: np.ndarray, degree: int, x: np.ndarray) -> np.ndarray:
    p_prev = np.zeros_like(x)
    p = np.ones_like(x)
    for j in range(degree):
        p, p_prev = (x - a[j]) * p - b[j] * p_prev, p
    return p


def _check_degree(basis: UnivariateBasis, degree: int) -> None:
    if not 0 <= degree <= basis.max_degree:
        raise MeasureError(f"degree {degree} out of range [0, {basis.max_degree}]")


def eval_phi(basis: UnivariateBasis, degree: int, point) -> np.ndarray:
    """Monic orthogonal polynomial phi^degree at ``point`` (germ coordinates)."""
    _check_degree(basis, degree)
    x = np.asarray(point, dtype=float)
    return _monic(basis.a, basis.b, degree, x)


def eval_psi(basis: UnivariateBasis, degree: int, point) -> np.ndarray:
    """Orthonormal polynomial psi^degree = phi^degree / sqrt(<phi, phi>)."""
    _check_degree(basis, degree)
    return eval_phi(basis, degree, point) / math.sqrt(basis.norms[degree])


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    measure: MeasureSpec

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


def gauss_rule(measure: MeasureSpec, n_nodes: int) -> QuadratureRule:
    """Golub-Welsch Gauss rule for ``measure`` (nodes in the measure's own space)."""
    if n_nodes < 1:
        raise MeasureError(f"n_nodes must be >= 1, got {n_nodes}")
    if measure.is_dirac:
        return QuadratureRule(np.array([measure.params[0]]), np.array([1.0]), measure)
    a, b = recurrence_coefficients(measure, n_nodes)
    try:
        if n_nodes == 1:
            x, v = a.copy(), np.ones((1, 1))
        else:
            x, v = eigh_tridiagonal(a, np.sqrt(b[1:]))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(
            f"Golub-Welsch eigendecomposition failed for {measure.family.value} "
            f"with {n_nodes} nodes (a range [{a.min():.3g}, {a.max():.3g}], "
            f"b max {b.max():.3g}): {exc}"
        ) from exc
    w = v[0, :] ** 2
    w = w / w.sum()
    nodes = measure.loc + measure.scale * x
    return QuadratureRule(nodes, w, measure)


def default_node_count(deg_f: int, deg_g: int = 0, guard: int = 2) -> int:
    """Node count for integrating a product of polynomials of degrees deg_f, deg_g."""
    return math.ceil((deg_f + deg_g) / 2) + 1 + guard


def inner_product(f: Callable, g: Callable, rule: QuadratureRule) -> float:
    """Quadrature approximation of the integral of f * g against the rule's measure."""
    x = rule.nodes
    return float(np.dot(rule.weights, np.asarray(f(x)) * np.asarray(g(x))))
