import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pogdiff.gaussian import IsotropicGaussian, kl_isotropic, lemma_residual, pog_product
from pogdiff.verify import check_kl_mc, check_lemma, check_pog_grid

means = st.lists(st.floats(-5, 5), min_size=2, max_size=2)
precisions = st.floats(0.05, 20.0)


def test_identical_factors_double_precision():
    g = IsotropicGaussian([0.3, -1.0], 2.5)
    p = pog_product(g, g)
    np.testing.assert_allclose(p.mean, g.mean, rtol=0, atol=1e-15)
    assert p.precision == 5.0


def test_product_direct_substitution():
    p = pog_product(IsotropicGaussian([0.0], 1.0), IsotropicGaussian([2.0], 3.0))
    assert p.mean[0] == pytest.approx(1.5, abs=1e-15)
    assert p.precision == 4.0


def test_product_dimension_mismatch():
    with pytest.raises(ValueError):
        pog_product(IsotropicGaussian([0.0], 1.0), IsotropicGaussian([0.0, 1.0], 1.0))


@pytest.mark.parametrize("lam", [0.0, -1.0, float("inf"), float("nan")])
def test_non_positive_precision_rejected(lam):
    with pytest.raises(ValueError):
        IsotropicGaussian([0.0], lam)


def test_product_matches_grid_oracle():
    check = check_pog_grid(n_pairs=20, seed=4)
    assert check.passed, check.line()


@given(means, precisions, means, precisions)
@settings(max_examples=200, deadline=None)
def test_product_is_commutative(m1, l1, m2, l2):
    a, b = IsotropicGaussian(m1, l1), IsotropicGaussian(m2, l2)
    ab, ba = pog_product(a, b), pog_product(b, a)
    np.testing.assert_allclose(ab.mean, ba.mean, rtol=1e-12, atol=1e-12)
    assert ab.precision == pytest.approx(ba.precision, rel=1e-14)


@given(means, precisions, means, precisions, means, precisions)
@settings(max_examples=200, deadline=None)
def test_product_is_associative(m1, l1, m2, l2, m3, l3):
    a, b, c = IsotropicGaussian(m1, l1), IsotropicGaussian(m2, l2), IsotropicGaussian(m3, l3)
    left, right = pog_product(pog_product(a, b), c), pog_product(a, pog_product(b, c))
    np.testing.assert_allclose(left.mean, right.mean, rtol=1e-10, atol=1e-10)
    assert left.precision == pytest.approx(right.precision, rel=1e-12)


def test_kl_examples():
    p = IsotropicGaussian([0.2, 0.4], 1.7)
    assert kl_isotropic(p, p) == 0.0
    assert kl_isotropic(IsotropicGaussian([0.0], 1.0), IsotropicGaussian([1.0], 1.0)) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        kl_isotropic(p, IsotropicGaussian([0.0], 1.0))


@given(means, precisions, means, precisions)
@settings(max_examples=200, deadline=None)
def test_kl_non_negative(m1, l1, m2, l2):
    assert kl_isotropic(IsotropicGaussian(m1, l1), IsotropicGaussian(m2, l2)) >= 0.0


def test_kl_matches_monte_carlo():
    check = check_kl_mc(seed=1, n=200_000)
    assert check.passed, check.line()


def test_lemma_equality_case():
    r = lemma_residual([0.5, 1.0], [2.0, -1.0], [2.0, -1.0], 0.7, 1.3)
    assert r.residual == 0.0
    assert r.lhs == pytest.approx(r.rhs, rel=1e-14)


def test_lemma_worked_values():
    r = lemma_residual([0.0], [1.0], [-1.0], 1.0, 1.0)
    assert r.lhs == 1.0 and r.rhs == 0.0 and r.residual == 1.0
    assert r.pog_mean[0] == 0.0


def test_lemma_rejects_bad_inputs():
    with pytest.raises(ValueError):
        lemma_residual([0.0], [1.0], [-1.0], 0.0, 1.0)
    with pytest.raises(ValueError):
        lemma_residual([0.0], [1.0, 2.0], [-1.0], 1.0, 1.0)


def test_lemma_holds_on_random_tuples():
    check = check_lemma(n=2000, seed=9)
    assert check.passed, check.line()
