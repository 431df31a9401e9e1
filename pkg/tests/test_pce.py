import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pceocp.measures import MeasureSpec, gauss_rule, make_basis
from pceocp.pce import (
    Germ,
    MultiBasis,
    PCEError,
    PCEVector,
    PolynomialMap,
    affine_pce,
    galerkin_project,
    gaussian_mv_pce,
    gen_pce,
    mean,
    propagate_affine,
    sample,
    stack,
    tensor_basis,
    union_basis,
    univariate_pce,
    variance,
)

FAMILIES = [
    MeasureSpec.gaussian(1.5, 0.7),
    MeasureSpec.uniform(-2, 3),
    MeasureSpec.beta(2, 5),
    MeasureSpec.gamma(2.5, 0.8),
]
measures = st.one_of(
    st.builds(MeasureSpec.gaussian, st.floats(-3, 3), st.floats(0.05, 3)),
    st.builds(MeasureSpec.uniform, st.floats(-3, 0), st.floats(0.1, 3)),
    st.builds(MeasureSpec.beta, st.floats(0.5, 5), st.floats(0.5, 5)),
    st.builds(MeasureSpec.gamma, st.floats(0.5, 5), st.floats(0.1, 2)),
    st.builds(MeasureSpec.dirac, st.floats(-3, 3)),
)


def example1():
    return gen_pce([MeasureSpec.uniform(1, 3), MeasureSpec.gaussian(0.5, 2)])


# -- affine expansions --------------------------------------------------------
def test_reactor_disturbance_expansion():
    Z = affine_pce(MeasureSpec.uniform(-0.0173, 0.0173))
    np.testing.assert_allclose(Z.coeffs, [[0.0, 2 * 0.0173 / (2 * math.sqrt(3))]], atol=1e-16)


def test_gaussian_affine_expansion():
    np.testing.assert_allclose(affine_pce(MeasureSpec.gaussian(2.0, 0.3)).coeffs, [[2.0, 0.3]])


def test_dirac_affine_expansion():
    Z = affine_pce(MeasureSpec.dirac(7))
    assert Z.L == 1
    np.testing.assert_array_equal(Z.coeffs, [[7.0]])


@given(measures)
def test_affine_expansion_is_pathwise_exact(measure):
    Z = affine_pce(measure)
    rng = np.random.default_rng(0)
    draws = Z.basis.sample_germs(rng, 64)
    direct = measure.loc + measure.scale * draws[:, 0] if Z.basis.n_germs else np.full(64, measure.params[0])
    np.testing.assert_allclose(sample(Z, draws)[:, 0], direct, atol=1e-12 * (1 + abs(measure.mean)))


def test_uniform_endpoints():
    Z = affine_pce(MeasureSpec.uniform(-1.5, 4.0))
    np.testing.assert_allclose(sample(Z, np.array([[0.0], [1.0]]))[:, 0], [-1.5, 4.0], atol=1e-14)


# -- bases ------------------------------------------------------------------------
def test_union_of_two_affine_bases():
    B = union_basis([affine_pce(MeasureSpec.uniform(), 0).basis, affine_pce(MeasureSpec.gaussian(), 1).basis])
    assert B.L == 3
    np.testing.assert_array_equal(B.terms, [[0, 0], [1, 0], [0, 1]])


def test_union_single_component_unchanged():
    b = affine_pce(MeasureSpec.gaussian()).basis
    assert union_basis([b]) is b


def test_union_of_tank_disturbance_bases():
    w = [univariate_pce(MeasureSpec.gaussian(), [0.05, 0.05, 0.05 * math.sqrt(2)], i) for i in range(4)]
    assert union_basis([c.basis for c in w]).L == 9


def test_union_rejects_shared_germs():
    b = affine_pce(MeasureSpec.gaussian(), 3).basis
    with pytest.raises(PCEError, match="independence"):
        union_basis([b, b])


@given(st.lists(st.integers(1, 4), min_size=1, max_size=5))
def test_union_term_count(degrees):
    parts = [univariate_pce(MeasureSpec.gaussian(), np.ones(d + 1), gid).basis for gid, d in enumerate(degrees)]
    assert union_basis(parts).L == 1 + sum(p.L - 1 for p in parts)


@given(st.integers(1, 4), st.integers(0, 4))
def test_tensor_term_count(n, p):
    B = tensor_basis([make_basis(MeasureSpec.uniform(), p)] * n, p)
    assert B.L == math.comb(n + p, p)


def test_tensor_examples():
    u = make_basis(MeasureSpec.uniform(), 2)
    assert tensor_basis([u, u], 2).L == 6
    assert tensor_basis([u, u, u], 0).L == 1
    np.testing.assert_array_equal(tensor_basis([u, u], 1).terms, [[0, 0], [1, 0], [0, 1]])


def test_basis_validation():
    g = Germ(0, make_basis(MeasureSpec.gaussian(), 2))
    with pytest.raises(PCEError, match="constant"):
        MultiBasis((g,), [[1], [0]])
    with pytest.raises(PCEError, match="duplicate"):
        MultiBasis((g,), [[0], [1], [1]])
    with pytest.raises(PCEError, match="max degree"):
        MultiBasis((g,), [[0], [3]])


def test_coefficient_shape_is_checked():
    with pytest.raises(PCEError, match="columns"):
        PCEVector(affine_pce(MeasureSpec.gaussian()).basis, [[1.0, 2.0, 3.0]])


# -- gen_pce and gaussian vectors ----------------------------------------------------
def test_gen_pce_example1_structure():
    a, b, mu, s = 1.0, 3.0, 0.5, 2.0
    Z = gen_pce([MeasureSpec.uniform(a, b), MeasureSpec.gaussian(mu, s)])
    np.testing.assert_allclose(Z.coeffs, [[(a + b) / 2, (b - a) / (2 * math.sqrt(3)), 0], [mu, 0, s]])


def test_gen_pce_all_dirac():
    Z = gen_pce([MeasureSpec.dirac(1), MeasureSpec.dirac(2)])
    assert Z.L == 1
    np.testing.assert_array_equal(Z.coeffs[:, 0], [1, 2])


@given(st.lists(measures, min_size=1, max_size=5))
def test_gen_pce_sparsity(specs):
    Z = gen_pce(specs)
    germ_of_row = []
    g = 0
    for m in specs:
        germ_of_row.append(None if m.is_dirac else g)
        g += 0 if m.is_dirac else 1
    for i, gi in enumerate(germ_of_row):
        for j in range(1, Z.L):
            if gi is None or Z.basis.terms[j, gi] == 0:
                assert Z.coeffs[i, j] == 0


def test_four_uniform_initial_states():
    Z = gen_pce([MeasureSpec.uniform(-1, 1)] * 4)
    assert Z.L == 5
    np.testing.assert_allclose(Z.coeffs[:, 1:], np.eye(4) / math.sqrt(3))


def test_gaussian_mv_reactor_initial_state():
    Z = gaussian_mv_pce([0.5, 0.1], np.diag([0.05**2, 0.01**2]))
    np.testing.assert_allclose(Z.coeffs, [[0.5, 0.05, 0], [0.1, 0, 0.01]], atol=1e-15)


def test_gaussian_mv_zero_covariance_is_dirac():
    Z = gaussian_mv_pce([1.0, 2.0], np.zeros((2, 2)))
    assert Z.L == 1


def test_gaussian_mv_cholesky():
    Z = gaussian_mv_pce([0, 0], [[2, 1], [1, 1]])
    L = Z.coeffs[:, 1:]
    np.testing.assert_allclose(L, [[math.sqrt(2), 0], [1 / math.sqrt(2), 1 / math.sqrt(2)]], atol=1e-14)
    np.testing.assert_allclose(Z.covariance(), [[2, 1], [1, 1]], atol=1e-14)


def test_gaussian_mv_rejects_indefinite():
    with pytest.raises(PCEError):
        gaussian_mv_pce([0, 0], [[1, 2], [2, 1]])


# -- moments -----------------------------------------------------------------------
def test_moment_examples(oracles):
    Z = affine_pce(MeasureSpec.uniform())
    assert mean(Z)[0] == pytest.approx(0.5)
    assert variance(Z)[0] == pytest.approx(1 / 12)
    D = affine_pce(MeasureSpec.dirac(4))
    assert (mean(D)[0], variance(D)[0]) == (4.0, 0.0)
    W = univariate_pce(MeasureSpec.gaussian(), [0.05, 0.05, 0.05 * math.sqrt(2)])
    ref = oracles["tank_disturbance"]
    assert mean(W)[0] == pytest.approx(ref["mean"], rel=1e-14)
    assert variance(W)[0] == pytest.approx(ref["variance"], rel=1e-14)


@pytest.mark.parametrize("measure", FAMILIES, ids=lambda m: m.family.value)
def test_moments_against_monte_carlo(measure):
    Z = affine_pce(measure)
    draws = Z.basis.sample_germs(np.random.default_rng(1), 10**6)
    s = sample(Z, draws)[:, 0]
    se_mean = s.std() / 1e3
    se_var = np.sqrt(np.mean((s - s.mean()) ** 4) - s.var() ** 2) / 1e3
    assert abs(s.mean() - mean(Z)[0]) < 5 * se_mean
    assert abs(s.var() - variance(Z)[0]) < 5 * se_var


# -- affine propagation -------------------------------------------------------------
def test_identity_propagation():
    Z = example1()
    Y = propagate_affine(np.eye(2), np.zeros(2), Z)
    np.testing.assert_array_equal(Y.coeffs, Z.coeffs)


def test_propagation_dimension_error():
    with pytest.raises(PCEError):
        propagate_affine(np.ones((2, 3)), np.zeros(2), example1())


@given(
    arrays(np.float64, (3, 2), elements=st.floats(-5, 5)),
    arrays(np.float64, (3,), elements=st.floats(-5, 5)),
)
def test_affine_propagation_is_pathwise_exact(A, b):
    Z = example1()
    draws = Z.basis.sample_germs(np.random.default_rng(2), 200)
    lhs = sample(propagate_affine(A, b, Z), draws)
    rhs = sample(Z, draws) @ A.T + b
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + np.abs(rhs).max()))


def test_affine_propagation_large_sample():
    rng = np.random.default_rng(3)
    Z = gen_pce([MeasureSpec.gamma(2, 1), MeasureSpec.beta(2, 2), MeasureSpec.gaussian()])
    A, b = rng.normal(size=(2, 3)), rng.normal(size=2)
    draws = Z.basis.sample_germs(rng, 10**5)
    np.testing.assert_allclose(sample(propagate_affine(A, b, Z), draws), sample(Z, draws) @ A.T + b, atol=1e-12, rtol=1e-12)


# -- sampling -------------------------------------------------------------------------
def test_sample_dirac_is_constant():
    Z = gen_pce([MeasureSpec.dirac(1), MeasureSpec.dirac(-2)])
    out = sample(Z, np.zeros((5, 0)))
    np.testing.assert_array_equal(out, np.tile([1.0, -2.0], (5, 1)))


def test_sample_germ_count_mismatch():
    with pytest.raises(PCEError):
        sample(example1(), np.zeros((4, 3)))


def test_sample_mean_clt():
    Z = affine_pce(MeasureSpec.gaussian())
    s = sample(Z, Z.basis.sample_germs(np.random.default_rng(4), 10**6))
    assert abs(s.mean()) < 4 / 1e3


# -- Galerkin projection ------------------------------------------------------------------
def _frozen_example_vector(oracles):
    p = oracles["galerkin_example"]["params"]
    return gen_pce([MeasureSpec.uniform(p["a"], p["b"]), MeasureSpec.gaussian(p["mu"], p["sigma"])])


def test_galerkin_example3_cross_term(oracles):
    Z = _frozen_example_vector(oracles)
    f = PolynomialMap(lambda z: (z[0] + z[1]) ** 2, 2, 1)
    Y = galerkin_project(f, Z)
    ref = oracles["galerkin_example"]["coeffs"]
    for j, row in enumerate(Y.basis.terms):
        key = f"{row[0]},{row[1]}"
        assert Y.coeffs[0, j] == pytest.approx(ref[key], abs=1e-10, rel=1e-10)
    cross = [j for j, r in enumerate(Y.basis.terms) if tuple(r) == (1, 1)][0]
    assert abs(Y.coeffs[0, cross]) > 0.1


def test_galerkin_from_sympy_matches_callable(oracles):
    Z = _frozen_example_vector(oracles)
    z1, z2 = sp.symbols("z1 z2")
    a = galerkin_project(PolynomialMap.from_sympy((z1 + z2) ** 2, [z1, z2]), Z)
    b = galerkin_project(PolynomialMap(lambda z: (z[0] + z[1]) ** 2, 2, 1), Z)
    np.testing.assert_allclose(a.coeffs, b.coeffs, atol=1e-12)


def test_galerkin_identity():
    Z = example1()
    Y = galerkin_project(PolynomialMap(lambda z: z, 1, 2), Z, Z.basis)
    np.testing.assert_allclose(Y.coeffs, Z.coeffs, atol=1e-13)


def test_galerkin_square_of_gaussian():
    Z = affine_pce(MeasureSpec.gaussian())
    Y = galerkin_project(PolynomialMap(lambda z: z**2, 2, 1), Z)
    np.testing.assert_allclose(Y.coeffs, [[1.0, 0.0, math.sqrt(2)]], atol=1e-13)


def test_galerkin_rejects_low_degree_target():
    Z = example1()
    with pytest.raises(PCEError, match="degree 2"):
        galerkin_project(PolynomialMap(lambda z: z[0] * z[1], 2, 1), Z, Z.basis)


def test_galerkin_rejects_non_polynomial():
    x = sp.Symbol("x")
    with pytest.raises(PCEError, match="polynomial"):
        PolynomialMap.from_sympy(sp.sin(x), [x])
    with pytest.raises(PCEError):
        galerkin_project(lambda z: z, example1())


@given(st.integers(0, 3), arrays(np.float64, (4,), elements=st.floats(-2, 2)))
def test_galerkin_moments_match_sampling(degree, c):
    Z = gen_pce([MeasureSpec.uniform(-1, 2), MeasureSpec.beta(2, 3)])
    coeffs = c[: degree + 1]

    def f(z):
        s = z[0] - 0.5 * z[1]
        return sum(ci * s**i for i, ci in enumerate(coeffs))[None, :]

    Y = galerkin_project(PolynomialMap(f, degree, 1), Z)
    # exact moments by a finer tensor rule, independent of the projection's rule
    r1, r2 = gauss_rule(MeasureSpec.uniform(-1, 2), 12), gauss_rule(MeasureSpec.beta(2, 3), 12)
    X1, X2 = np.meshgrid(r1.nodes, r2.nodes, indexing="ij")
    W = np.outer(r1.weights, r2.weights)
    vals = f(np.vstack([X1.ravel(), X2.ravel()]))[0].reshape(X1.shape)
    m1 = np.sum(W * vals)
    m2 = np.sum(W * vals**2)
    assert mean(Y)[0] == pytest.approx(m1, abs=1e-8 * (1 + abs(m1)))
    assert variance(Y)[0] == pytest.approx(m2 - m1**2, abs=1e-8 * (1 + m2))


def test_galerkin_example3_monte_carlo(oracles):
    Z = _frozen_example_vector(oracles)
    Y = galerkin_project(PolynomialMap(lambda z: (z[0] + z[1]) ** 2, 2, 1), Z)
    draws = Z.basis.sample_germs(np.random.default_rng(5), 10**6)
    s = ((sample(Z, draws)).sum(axis=1)) ** 2
    se_m = s.std() / 1e3
    se_v = np.sqrt(np.mean((s - s.mean()) ** 4) - s.var() ** 2) / 1e3
    assert abs(s.mean() - mean(Y)[0]) < 5 * se_m
    assert abs(s.var() - variance(Y)[0]) < 5 * se_v


# -- serialization -------------------------------------------------------------------
def test_pce_round_trip():
    Z = stack([example1(), univariate_pce(MeasureSpec.gamma(2, 1), [1, 2, 3], 7)])
    assert PCEVector.from_dict(Z.to_dict()).to_dict() == Z.to_dict()
