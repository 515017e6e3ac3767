import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import gammaln

from kls_lab.distributions import make_distribution
from kls_lab.moments import (CheegerEstimate, Estimate, density_at_median, halfspace_cheeger, inner_products,
                             iter_pairs, poincare_check, quadratic_form_variance, sphere_identity_check, tensor_T,
                             tensor_values, thin_shell, third_moment_inner, triple_product)


def chi_thin_shell(n):
    mean_norm = np.sqrt(2) * np.exp(gammaln((n + 1) / 2) - gammaln(n / 2))
    return 2 * n - 2 * np.sqrt(n) * mean_norm


def test_estimate_helpers():
    e = Estimate(1.0, 0.1, 100, 0)
    assert e.within(1.25) and not e.within(1.35)
    assert e.scaled(-2.0) == Estimate(-2.0, 0.2, 100, 0)


def test_pairs_dimension_mismatch():
    with pytest.raises(ValueError):
        next(iter_pairs(make_distribution("cube", 2), make_distribution("cube", 3), 10, 0))


def test_common_random_numbers():
    spec = make_distribution("laplace_prod", 3)
    np.testing.assert_array_equal(inner_products(spec, spec, 1000, 4), inner_products(spec, spec, 1000, 4))


def test_third_moment_frozen():
    spec = make_distribution("shifted_exp_prod", 4)
    assert third_moment_inner(spec, spec, 10_000, 7).value == pytest.approx(14.333236303515132, rel=1e-12)


@pytest.mark.parametrize("family,target", [("gaussian", 0.0), ("cube", 0.0), ("shifted_exp_prod", 4.0)])
def test_third_moment_product_values(family, target):
    n = 6
    spec = make_distribution(family, n)
    est = third_moment_inner(spec, spec, 400_000, 1)
    assert est.scaled(1 / n).within(target)


def test_tensor_T_identity_is_third_moment():
    spec = make_distribution("cube", 3)
    I = np.eye(3)
    assert tensor_T(spec, I, I, I, 5000, 2).value == pytest.approx(third_moment_inner(spec, spec, 5000, 2).value, rel=1e-12)


def test_tensor_T_diagonal_product_value():
    # for product laws only the all-equal index terms survive: T(diag d, I, I) = (E x^3)^2 sum d
    spec = make_distribution("shifted_exp_prod", 3)
    d = np.array([0.5, -1.0, 2.0])
    est = tensor_T(spec, np.diag(d), np.eye(3), np.eye(3), 400_000, 3)
    assert est.within(4 * d.sum())


def test_tensor_T_rejects_asymmetric():
    spec = make_distribution("gaussian", 2)
    with pytest.raises(ValueError):
        tensor_T(spec, np.array([[0, 1], [0, 0]]), np.eye(2), np.eye(2), 10, 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32))
def test_triple_product_permutation_invariant_bitwise(seed):
    u, v, w = np.random.default_rng(seed).standard_normal((3, 20))
    ref = triple_product(u, v, w)
    for args in ((v, u, w), (w, v, u), (u, w, v), (v, w, u), (w, u, v)):
        np.testing.assert_array_equal(triple_product(*args), ref)


def test_tensor_values_symmetric_in_matrices():
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((2, 50, 3))
    A, B, C = (M + M.T for M in rng.standard_normal((3, 3, 3)))
    np.testing.assert_array_equal(tensor_values(x, y, A, B, C), tensor_values(x, y, C, A, B))


def test_thin_shell_gaussian_chi_value():
    spec = make_distribution("gaussian", 16)
    assert thin_shell(spec, 400_000, 0).within(chi_thin_shell(16))


def test_quadratic_form_variance_gaussian():
    A = np.diag([1.0, 2.0, 3.0])
    est = quadratic_form_variance(make_distribution("gaussian", 3), A, 400_000, 5)
    assert est.within(2 * np.trace(A @ A))


def test_sphere_identity_shared_pairs():
    rep = sphere_identity_check(make_distribution("shifted_exp_prod", 3), 100_000, 128, 0)
    assert rep.satisfied


def test_sphere_identity_one_dimension_exact():
    rep = sphere_identity_check(make_distribution("cube", 1), 1000, 4, 0)
    assert rep.lhs == pytest.approx(rep.rhs, rel=1e-12)


def test_density_at_median_normal():
    z = np.random.default_rng(0).standard_normal(200_000)
    assert density_at_median(z) == pytest.approx(1 / np.sqrt(2 * np.pi), rel=0.02)


def test_cheeger_calibration():
    g = halfspace_cheeger(make_distribution("gaussian", 3), 16, 200_000, 0)
    assert isinstance(g, CheegerEstimate) and g.direction_count == 16
    assert g.value == pytest.approx(np.sqrt(2 * np.pi) / 2, rel=0.05)
    c = halfspace_cheeger(make_distribution("cube", 1), 4, 200_000, 0)
    assert c.value == pytest.approx(np.sqrt(3), rel=0.05)


def test_cheeger_axes_added():
    est = halfspace_cheeger(make_distribution("cube", 5), 3, 20_000, 0, include_axes=True)
    assert est.direction_count == 8
    with pytest.raises(ValueError):
        halfspace_cheeger(make_distribution("cube", 5), 0, 100, 0)


def test_poincare_check():
    spec = make_distribution("laplace_prod", 4)
    psi = halfspace_cheeger(spec, 16, 100_000, 0)
    assert poincare_check(spec, np.diag([1.0, -1.0, 0.5, 2.0]), 100_000, psi, 4.0, 0).satisfied
    # a tiny constant must fail: Var(|x|^2) > 0 while the bound scales to zero
    assert not poincare_check(spec, np.eye(4), 100_000, psi, 1e-6, 0).satisfied


def test_tensor_T_permutation_symmetry_exact():
    import itertools
    spec = make_distribution("shifted_exp_prod", 3)
    rng = np.random.default_rng(1)
    mats = [M + M.T for M in rng.standard_normal((3, 3, 3))]
    values = {tensor_T(spec, *perm, 20_000, 4).value for perm in itertools.permutations(mats)}
    assert len(values) == 1


def test_cheeger_stable_under_doubling():
    spec = make_distribution("gaussian", 4)
    a = halfspace_cheeger(spec, 32, 200_000, 0).value
    b = halfspace_cheeger(spec, 32, 400_000, 0).value
    assert abs(b / a - 1) < 0.02
