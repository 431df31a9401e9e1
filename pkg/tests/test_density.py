import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from pceocp.density import (
    DensityError,
    GridSpec,
    central_moments,
    char_fun,
    char_fun_group,
    germ_char_fun,
    ks_distance,
    pdf_from_pce,
    write_density_csv,
)
from pceocp.measures import MeasureSpec, gauss_rule, make_basis
from pceocp.pce import PCEVector, affine_pce, gen_pce, sample, stack, tensor_basis, univariate_pce


def scalar_sum(Z: PCEVector) -> PCEVector:
    return PCEVector(Z.basis, Z.coeffs.sum(axis=0, keepdims=True))


def mixed_pce():
    """Uniform + Gaussian quadratic + Beta, one germ each."""
    u = univariate_pce(MeasureSpec.uniform(-1, 1), [0.0, 0.6], 0)
    g = univariate_pce(MeasureSpec.gaussian(), [0.0, 0.3, 0.4], 1)
    b = univariate_pce(MeasureSpec.beta(2, 5), [1.0, 0.5, 0.2], 2)
    return scalar_sum(stack([u, g, b]))


SCIPY_LAWS = [
    (MeasureSpec.gaussian(0.3, 1.7), stats.norm(0.3, 1.7)),
    (MeasureSpec.uniform(-1, 2), stats.uniform(-1, 3)),
    (MeasureSpec.beta(2, 5), stats.beta(2, 5)),
    (MeasureSpec.beta(0.7, 1.3), stats.beta(0.7, 1.3)),
    (MeasureSpec.gamma(2.5, 1.0), stats.gamma(2.5)),
    (MeasureSpec.gamma(1.0, 2.0), stats.gamma(1.0, scale=2.0)),
]


@pytest.mark.parametrize("measure, law", SCIPY_LAWS)
def test_germ_char_fun_matches_numerical_integration(measure, law):
    lo, hi = law.support()
    lo, hi = max(lo, law.ppf(1e-14)), min(hi, law.isf(1e-14))
    for s in (-3.0, -0.7, 0.4, 2.5):
        re = integrate.quad(lambda x: math.cos(s * x) * law.pdf(x), lo, hi, limit=400, epsabs=1e-12)[0]
        im = integrate.quad(lambda x: math.sin(s * x) * law.pdf(x), lo, hi, limit=400, epsabs=1e-12)[0]
        assert abs(germ_char_fun(measure, s) - complex(re, im)) < 1e-8


def test_char_fun_at_zero_is_one():
    assert char_fun(mixed_pce(), 0.0) == pytest.approx(1.0, abs=1e-14)


def test_gaussian_degree_one_quadrature_matches_analytic():
    basis = make_basis(MeasureSpec.gaussian(), 1)
    t = np.linspace(-50, 50, 201)
    a = char_fun_group(basis, [1], [1.0], t)
    q = char_fun_group(basis, [1], [1.0], t, method="quadrature")
    np.testing.assert_allclose(q, a, atol=1e-10)
    np.testing.assert_allclose(a, np.exp(-0.5 * t**2), atol=1e-15)


def test_chi_square_char_fun():
    # xi^2 = 1 + sqrt(2) psi^2(xi)
    Z = univariate_pce(MeasureSpec.gaussian(), [1.0, 0.0, math.sqrt(2)])
    t = np.linspace(-5, 5, 41)
    expected = (1 - 2j * t) ** -0.5
    np.testing.assert_allclose(char_fun(Z, t), expected, atol=1e-12)
    np.testing.assert_allclose(char_fun(Z, t, method="quadrature"), expected, atol=1e-7)


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_gaussian_quadratic_analytic_matches_quadrature(c1, c2):
    basis = make_basis(MeasureSpec.gaussian(), 2)
    t = np.linspace(-3, 3, 13)
    a = char_fun_group(basis, [1, 2], [c1, c2], t)
    q = char_fun_group(basis, [1, 2], [c1, c2], t, method="quadrature")
    np.testing.assert_allclose(a, q, atol=1e-7)


def test_group_rejects_constant_term():
    with pytest.raises(DensityError):
        char_fun_group(make_basis(MeasureSpec.uniform(), 1), [0], [1.0], 0.5)


def test_standard_normal_density_at_zero(oracles):
    g = pdf_from_pce(affine_pce(MeasureSpec.gaussian()))
    assert g(0.0) == pytest.approx(oracles["std_normal_pdf_at_0"], abs=1e-4)


def test_triangular_peak():
    Z = scalar_sum(gen_pce([MeasureSpec.uniform(0, 1)] * 2))
    g = pdf_from_pce(Z)
    assert g(1.0) == pytest.approx(1.0, abs=1e-3)
    assert g(0.5) == pytest.approx(0.5, abs=1e-3)


def test_dirac_has_no_density():
    with pytest.raises(DensityError, match="Dirac"):
        pdf_from_pce(affine_pce(MeasureSpec.dirac(2.0)))


def test_row_out_of_range():
    with pytest.raises(DensityError):
        pdf_from_pce(affine_pce(MeasureSpec.gaussian()), row=1)


def test_multi_germ_terms_rejected():
    basis = tensor_basis([make_basis(MeasureSpec.gaussian(), 2)] * 2, 2)
    row = np.zeros(basis.L)
    j = next(i for i, term in enumerate(basis.terms) if (np.asarray(term) > 0).sum() == 2)
    row[1] = 1.0
    row[j] = 0.5
    with pytest.raises(DensityError, match="several germs"):
        pdf_from_pce(PCEVector(basis, row[None, :]))


def test_narrow_support_rejected():
    with pytest.raises(DensityError, match="narrow"):
        pdf_from_pce(affine_pce(MeasureSpec.gaussian()), GridSpec(width=2.0))
    with pytest.raises(DensityError):
        pdf_from_pce(affine_pce(MeasureSpec.gaussian()), GridSpec(lower=1.0, upper=5.0))


@pytest.mark.parametrize("kw", [dict(n_points=100), dict(n_points=4), dict(width=0), dict(lower=0.0), dict(lower=1.0, upper=0.0)])
def test_grid_spec_validation(kw):
    with pytest.raises(ValueError):
        GridSpec(**kw)


def quadrature_central_moments(orders):
    """Tensor Gauss quadrature over the three germs of mixed_pce()."""
    Z = mixed_pce()
    rules = [gauss_rule(g.basis.measure, 24) for g in Z.basis.germs]
    grids = np.meshgrid(*[r.nodes for r in rules], indexing="ij")
    wts = np.einsum("i,j,k->ijk", *[r.weights for r in rules]).ravel()
    vals = sample(Z, np.column_stack([gr.ravel() for gr in grids]))[:, 0]
    mu = wts @ vals
    return mu, [wts @ (vals - mu) ** r for r in orders]


def test_central_moments_match_quadrature():
    mu, ref = quadrature_central_moments(range(9))
    got = central_moments(mixed_pce(), 0, 8)
    np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-12)


def test_mass_and_moments():
    Z = mixed_pce()
    g = pdf_from_pce(Z)
    mu, (var,) = quadrature_central_moments([2])
    assert abs(g.raw_mass - 1.0) < 1e-3
    assert g.clipped_mass < 1e-3
    assert g.mean() == pytest.approx(mu, abs=1e-3)
    assert g.variance() == pytest.approx(var, rel=1e-3)
    assert np.trapezoid(g.density, g.z) == pytest.approx(1.0, abs=1e-12)
    assert g.cdf()[-1] == pytest.approx(1.0, abs=1e-12)


def test_ks_against_own_samples():
    Z = mixed_pce()
    g = pdf_from_pce(Z)
    rng = np.random.default_rng(3)
    x = sample(Z, Z.basis.sample_germs(rng, 10**4))[:, 0]
    assert ks_distance(g, x) < 1.63 / math.sqrt(10**4)
    far = np.full(200, g.upper + 1.0)
    assert ks_distance(g, far) == pytest.approx(1.0, abs=1e-9)


def test_grid_sampling_follows_density():
    g = pdf_from_pce(mixed_pce())
    assert ks_distance(g, g.sample(np.random.default_rng(4), 10**4)) < 0.02


def test_ks_needs_enough_samples():
    g = pdf_from_pce(affine_pce(MeasureSpec.gaussian()))
    with pytest.raises(ValueError, match="100"):
        ks_distance(g, np.zeros(99))


def test_density_csv(tmp_path):
    g = pdf_from_pce(affine_pce(MeasureSpec.gaussian()), GridSpec(n_points=64))
    write_density_csv(g, tmp_path / "d.csv", header="h")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[:2] == ["# h", "z,density"] and len(lines) == 66
    z, f = map(float, lines[2].split(","))
    assert (z, f) == (g.z[0], g.density[0])
