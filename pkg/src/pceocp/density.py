"""Probability densities of scalar PCEs by characteristic-function inversion.

For ``Z = sum_j z^j Psi_j(xi)`` with independent germs, the terms that depend
on the same germ form one random variable per germ, and these are mutually
independent. The characteristic function of ``Z`` is therefore the product of
one factor per germ group (and ``exp(i t z^0)`` for the constant). Each factor
is analytic when the group is a degree-1 term, or a degree-1/2 combination of a
Gaussian germ, and is otherwise computed by Gauss quadrature over the germ
measure. The density follows from a discrete inverse Fourier transform.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import hyp1f1

from .measures import Family, MeasureSpec, UnivariateBasis, gauss_rule
from .pce import PCEVector

__all__ = [
    "DensityError",
    "GridSpec",
    "DensityGrid",
    "germ_char_fun",
    "char_fun_term",
    "char_fun_group",
    "char_fun",
    "central_moments",
    "pdf_from_pce",
    "ks_distance",
    "write_density_csv",
]


class DensityError(ValueError):
    """Raised when a density cannot be reconstructed."""


# -- characteristic functions ------------------------------------------------
def germ_char_fun(measure: MeasureSpec, s) -> np.ndarray:
    """Characteristic function ``E[exp(i s xi)]`` of a standardized germ."""
    s = np.asarray(s, dtype=float)
    fam, p = measure.family, measure.params
    if fam is Family.DIRAC:
        return np.exp(1j * s * p[0])
    if fam is Family.GAUSSIAN:
        return np.exp(1j * s * p[0] - 0.5 * (p[1] * s) ** 2)
    if fam is Family.UNIFORM:
        a, b = p
        out = np.ones(s.shape, dtype=complex)
        nz = s != 0
        sn = s[nz]
        out[nz] = (np.exp(1j * sn * b) - np.exp(1j * sn * a)) / (1j * sn * (b - a))
        return out
    if fam is Family.BETA:
        return hyp1f1(p[0], p[0] + p[1], 1j * s)
    k, theta = p
    return (1.0 - 1j * theta * s) ** (-k)


def _group_poly(basis: UnivariateBasis, degrees, coeffs):
    degrees = np.asarray(degrees, dtype=int)
    coeffs = np.asarray(coeffs, dtype=float)

    def f(x):
        tab = basis.table(np.asarray(x, dtype=float))
        return tab[..., degrees] @ coeffs

    return f


def _quad_char_fun(basis: UnivariateBasis, degrees, coeffs, t, tol=1e-8, n_start=16, n_max=8192) -> np.ndarray:
    """``E[exp(i t f(xi))]`` by Gauss quadrature, doubling nodes until stable."""
    f = _group_poly(basis, degrees, coeffs)
    t = np.asarray(t, dtype=float)
    n = max(n_start, 2 * int(np.max(degrees)) + 2)
    prev = None
    while n <= n_max:
        rule = gauss_rule(basis.measure, n)
        vals = f(rule.nodes)
        cur = np.exp(1j * np.multiply.outer(t, vals)) @ rule.weights
        if prev is not None and np.max(np.abs(cur - prev), initial=0.0) <= tol:
            return cur
        prev = cur
        n *= 2
    raise DensityError(
        f"characteristic-function quadrature did not stabilize to {tol:g} with {n_max} nodes; "
        "use a narrower frequency range (fewer grid points or a wider support)"
    )


def char_fun_group(basis: UnivariateBasis, degrees, coeffs, t, method: str = "auto") -> np.ndarray:
    """CF of ``sum_d c_d psi^d(xi)`` for one germ ``xi`` (constant term excluded).

    Args:
        basis: the germ's univariate orthonormal basis.
        degrees: polynomial degrees (>= 1) of the terms.
        coeffs: their coefficients.
        t: frequencies.
        method: ``"auto"`` (analytic where available), or ``"quadrature"``.
    """
    degrees = np.asarray(degrees, dtype=int)
    coeffs = np.asarray(coeffs, dtype=float)
    if np.any(degrees < 1):
        raise DensityError("group terms must have degree >= 1")
    t = np.asarray(t, dtype=float)
    keep = coeffs != 0
    degrees, coeffs = degrees[keep], coeffs[keep]
    if degrees.size == 0:
        return np.ones(t.shape, dtype=complex)
    m = basis.measure
    if method == "auto" and degrees.max() == 1:
        # c psi^1(xi) = (c / sd) xi - c mean / sd
        c = float(coeffs.sum())
        mu, sd = m.mean, m.std
        return np.exp(-1j * t * c * mu / sd) * germ_char_fun(m, t * c / sd)
    if method == "auto" and m.family is Family.GAUSSIAN and degrees.max() == 2:
        # psi^1 = xi, psi^2 = (xi^2 - 1) / sqrt(2): a xi^2 + b xi + c0
        b = float(coeffs[degrees == 1].sum())
        a = float(coeffs[degrees == 2].sum()) / math.sqrt(2.0)
        c0 = -a
        den = 1.0 - 2j * t * a
        return np.exp(1j * t * c0 - 0.5 * t**2 * b**2 / den) / np.sqrt(den)
    return _quad_char_fun(basis, degrees, coeffs, t)


def char_fun_term(basis: UnivariateBasis, degree: int, coeff: float, t, method: str = "auto") -> np.ndarray:
    """CF of a single term ``c psi^degree(xi)``; degree 0 is the constant ``c``."""
    t = np.asarray(t, dtype=float)
    if degree == 0:
        return np.exp(1j * t * coeff)
    return char_fun_group(basis, [degree], [coeff], t, method)


def _groups(Z: PCEVector, row: int = 0):
    basis = Z.basis
    coeffs = Z.coeffs[row]
    groups: dict[int, tuple[list[int], list[float]]] = {}
    for j, term in enumerate(basis.terms):
        if j == 0 or coeffs[j] == 0.0:
            continue
        active = [g for g, d in enumerate(term) if d > 0]
        if len(active) > 1:
            ids = [basis.germs[g].id for g in active]
            raise DensityError(f"term {j} depends on several germs {ids}; the product formula needs single-germ terms")
        g = active[0]
        degs, cs = groups.setdefault(g, ([], []))
        degs.append(term[g])
        cs.append(coeffs[j])
    return groups


def char_fun(Z: PCEVector, t, row: int = 0, method: str = "auto") -> np.ndarray:
    """Characteristic function of component ``row`` of ``Z``."""
    t = np.asarray(t, dtype=float)
    out = np.exp(1j * t * Z.coeffs[row, 0])
    for g, (degs, cs) in _groups(Z, row).items():
        out = out * char_fun_group(Z.basis.germs[g].basis, degs, cs, t, method)
    return out


# -- densities -------------------------------------------------------------
@dataclass(frozen=True)
class GridSpec:
    """Reconstruction grid.

    Attributes:
        n_points: number of grid points (power of two).
        width: half-width of the default support in standard deviations.
        lower, upper: explicit support (overrides ``width`` when both are set).
    """

    n_points: int = 4096
    width: float = 10.0
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self) -> None:
        n = self.n_points
        if n < 8 or n & (n - 1):
            raise ValueError(f"n_points must be a power of two >= 8, got {n}")
        if not self.width > 0:
            raise ValueError(f"width must be > 0, got {self.width}")
        if (self.lower is None) != (self.upper is None):
            raise ValueError("give both lower and upper, or neither")
        if self.lower is not None and not self.lower < self.upper:
            raise ValueError(f"lower {self.lower} must be below upper {self.upper}")


@dataclass(frozen=True)
class DensityGrid:
    """Density values on a uniform grid.

    Attributes:
        z: grid points.
        density: nonnegative density values integrating to one.
        t: frequencies used in the inversion.
        raw_mass: trapezoidal integral before clipping and renormalization.
        clipped_mass: magnitude of negative ringing removed by clipping.
        tail_bound: upper bound on the probability mass outside the support.
    """

    z: np.ndarray
    density: np.ndarray
    t: np.ndarray
    raw_mass: float
    clipped_mass: float
    tail_bound: float

    @property
    def lower(self) -> float:
        return float(self.z[0])

    @property
    def upper(self) -> float:
        return float(self.z[-1])

    @property
    def n_points(self) -> int:
        return self.z.size

    @property
    def dz(self) -> float:
        return float(self.z[1] - self.z[0])

    def cdf(self) -> np.ndarray:
        """Cumulative trapezoid of the density, pinned to [0, 1]."""
        inc = 0.5 * (self.density[1:] + self.density[:-1]) * np.diff(self.z)
        c = np.concatenate([[0.0], np.cumsum(inc)])
        return c / c[-1]

    def mean(self) -> float:
        return float(np.trapezoid(self.z * self.density, self.z))

    def variance(self) -> float:
        m = self.mean()
        return float(np.trapezoid((self.z - m) ** 2 * self.density, self.z))

    def __call__(self, z) -> np.ndarray:
        return np.interp(z, self.z, self.density, left=0.0, right=0.0)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Inverse-CDF draws from the grid distribution."""
        c = self.cdf()
        keep = np.concatenate([[True], np.diff(c) > 0])
        return np.interp(rng.random(n), c[keep], self.z[keep])


def _moments_to_cumulants(m: np.ndarray) -> np.ndarray:
    """Raw moments ``m[0..n]`` (``m[0] = 1``) to cumulants ``k[1..n]`` (``k[0]`` unused)."""
    n = m.size - 1
    k = np.zeros(n + 1)
    for r in range(1, n + 1):
        k[r] = m[r] - sum(math.comb(r - 1, j - 1) * k[j] * m[r - j] for j in range(1, r))
    return k


def _cumulants_to_moments(k: np.ndarray) -> np.ndarray:
    n = k.size - 1
    m = np.zeros(n + 1)
    m[0] = 1.0
    for r in range(1, n + 1):
        m[r] = sum(math.comb(r - 1, j - 1) * k[j] * m[r - j] for j in range(1, r + 1))
    return m


def central_moments(Z: PCEVector, row: int = 0, order: int = 8) -> np.ndarray:
    """Central moments ``0..order`` of one component, exact up to round-off.

    Each germ group's moments come from a Gauss rule that integrates its
    ``order``-th power exactly; cumulants of independent groups add.
    """
    kappa = np.zeros(order + 1)
    for g, (degs, cs) in _groups(Z, row).items():
        basis = Z.basis.germs[g].basis
        f = _group_poly(basis, degs, cs)
        rule = gauss_rule(basis.measure, (order * max(degs)) // 2 + 1)
        v = f(rule.nodes)
        raw = np.array([rule.weights @ v**r for r in range(order + 1)])
        kappa += _moments_to_cumulants(raw)
    kappa[1] = 0.0
    return _cumulants_to_moments(kappa)


def pdf_from_pce(Z: PCEVector, grid: GridSpec | None = None, row: int = 0, max_tail: float = 1e-3) -> DensityGrid:
    """Density of component ``row`` of ``Z`` on a uniform grid.

    The support defaults to mean +- ``grid.width`` standard deviations. The mass
    outside the support is bounded by ``min_p E|Z - mean|^(2p) / a^(2p)`` for
    ``p = 1..4`` (Chebyshev is ``p = 1``), with ``a`` the distance from the mean
    to the nearer end; if that exceeds ``max_tail`` the support is rejected.

    Raises:
        DensityError: for a deterministic component, multi-germ terms, or a
            support that is too narrow.
    """
    grid = grid or GridSpec()
    if not 0 <= row < Z.dim:
        raise DensityError(f"component {row} out of range for a {Z.dim}-dimensional PCE")
    mean = float(Z.coeffs[row, 0])
    sd = float(np.sqrt(np.sum(Z.coeffs[row, 1:] ** 2)))
    if sd == 0.0:
        raise DensityError("deterministic (Dirac) variable: no continuous density")
    if grid.lower is None:
        lo, hi = mean - grid.width * sd, mean + grid.width * sd
    else:
        lo, hi = float(grid.lower), float(grid.upper)
    a = min(mean - lo, hi - mean)
    if a <= 0:
        raise DensityError(f"support [{lo}, {hi}] does not contain the mean {mean}")
    mom = central_moments(Z, row, 8)
    tail = min([1.0] + [mom[2 * p] / a ** (2 * p) for p in range(1, 5)])
    if tail > max_tail:
        raise DensityError(
            f"support [{lo:.6g}, {hi:.6g}] is too narrow: up to {tail:.2e} of the mass may lie outside; widen it"
        )
    n = grid.n_points
    dz = (hi - lo) / (n - 1)
    z = lo + dz * np.arange(n)
    dt = 2.0 * np.pi / (n * dz)
    t = (np.arange(n) - n // 2) * dt
    phi = char_fun(Z, t, row)
    g = phi * np.exp(-1j * t * lo)
    f = (dt / (2.0 * np.pi)) * np.real(np.fft.fft(g)) * (-1.0) ** np.arange(n)
    raw_mass = float(np.trapezoid(f, z))
    neg = np.minimum(f, 0.0)
    clipped = float(-np.trapezoid(neg, z))
    f = np.maximum(f, 0.0)
    f = f / np.trapezoid(f, z)
    return DensityGrid(z, f, t, raw_mass, clipped, float(tail))


def ks_distance(grid: DensityGrid, samples) -> float:
    """Kolmogorov-Smirnov statistic between the grid CDF and the empirical CDF."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 100:
        raise ValueError(f"need at least 100 samples, got {n}")
    F = np.interp(x, grid.z, grid.cdf(), left=0.0, right=1.0)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def write_density_csv(grid: DensityGrid, path, header: str | None = None) -> None:
    """Two columns: z, f_Z(z)."""
    with open(path, "w", newline="") as f:
        if header:
            f.write(f"# {header}\n")
        wr = csv.writer(f)
        wr.writerow(["z", "density"])
        for zi, fi in zip(grid.z, grid.density):
            wr.writerow([repr(float(zi)), repr(float(fi))])
