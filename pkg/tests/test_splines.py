import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heatopt.splines import (gauss_rule, knot_insertion_matrix, make_space, uniform_refine,
                             uniform_space)

from _oracles import basis_matrix, gauss_cells


@pytest.mark.parametrize("k, dim", [(1, 130), (0, 257), (-1, 384)])
def test_dimensions_at_level_seven(k, dim):
    assert uniform_space(2, k, 128).dim == dim


def test_level_seven_dof_counts():
    ys = uniform_space(2, 1, 128).dim - 2
    us = uniform_space(2, -1, 128).dim
    assert ys ** 2 == 16384
    assert us ** 2 == 147456
    assert uniform_space(2, 0, 128).dim == 257


@settings(max_examples=60, deadline=None)
@given(p=st.integers(2, 5), n=st.integers(1, 32), data=st.data())
def test_dimension_formula(p, n, data):
    k = data.draw(st.integers(-1, p - 1))
    assert uniform_space(p, k, n).dim == n * (p - k) + k + 1


def test_bernstein_midpoint():
    first, vals = make_space(2, 1, [0.0, 1.0]).eval_basis(0.5)
    assert first == 0
    np.testing.assert_allclose(vals, [0.25, 0.5, 0.25], atol=1e-15)


def test_partition_of_unity():
    rng = np.random.default_rng(0)
    x = rng.random(1000)
    for p, k, n in [(2, 1, 7), (3, 0, 5), (4, 2, 9), (2, -1, 4)]:
        S = uniform_space(p, k, n)
        C0, C1 = S.collocation(x, 0), S.collocation(x, 1)
        assert np.max(np.abs(C0.sum(axis=1) - 1)) <= 1e-12
        assert np.max(np.abs(C1.sum(axis=1))) <= 1e-10
        assert C0.min() >= -1e-15


def test_nonzeros_per_span():
    S = uniform_space(3, 2, 6)
    x = np.random.default_rng(1).random(50)
    assert np.all(np.diff(S.collocation(x).indptr) == 4)


def test_matches_scipy_bspline_with_derivatives():
    rng = np.random.default_rng(2)
    for p, k in [(2, 1), (3, 1), (4, 3), (5, 0)]:
        S = uniform_space(p, k, 6, 0.0, 2.0)
        x = rng.random(40) * 2.0
        for r in range(p + 1):
            ref = basis_matrix(S, x, r)
            np.testing.assert_allclose(S.collocation(x, r).toarray(), ref, atol=1e-9 * 6 ** r)


def test_eval_outside_domain_raises():
    S = uniform_space(2, 1, 4)
    with pytest.raises(ValueError):
        S.eval_basis(1.5)
    with pytest.raises(ValueError):
        S.eval_basis(0.5, r=3)


@pytest.mark.parametrize("p, k, Z", [(0, -1, [0, 1]), (2, 2, [0, 1]), (2, -2, [0, 1]),
                                     (2, 1, [0, 0.5, 0.5, 1]), (2, 1, [1.0])])
def test_make_space_rejects(p, k, Z):
    with pytest.raises(ValueError):
        make_space(p, k, Z)


def test_uniform_refine():
    S = make_space(2, 1, [0, 1])
    R = uniform_refine(S)
    assert R.n_elements == 2 and R.dim == 4
    assert R.degree == 2 and R.smoothness == 1
    twice = uniform_refine(R)
    np.testing.assert_array_equal(twice.knots, uniform_space(2, 1, 4).knots)


def test_level_has_two_to_the_level_elements():
    S = uniform_space(2, 1, 1)
    for level in range(1, 6):
        S = S.refine()
        assert S.n_elements == 2 ** level


def test_knot_insertion_identity_and_constants():
    S = uniform_space(3, 2, 4)
    np.testing.assert_allclose(knot_insertion_matrix(S, S).toarray(), np.eye(S.dim))
    T = knot_insertion_matrix(S, S.refine())
    np.testing.assert_allclose(T @ np.ones(S.dim), 1.0, atol=1e-14)


def test_knot_insertion_reexpansion():
    rng = np.random.default_rng(3)
    for p, k in [(2, 1), (3, 1), (4, 0)]:
        C = uniform_space(p, k, 3)
        F = C.refine().refine()
        c = rng.standard_normal(C.dim)
        x = rng.random(100)
        T = knot_insertion_matrix(C, F)
        np.testing.assert_allclose(F.evaluate(T @ c, x), C.evaluate(c, x), atol=1e-12)


def test_knot_insertion_rejects_non_nested():
    with pytest.raises(ValueError):
        knot_insertion_matrix(uniform_space(2, 1, 3), uniform_space(2, 1, 4))


def test_gauss_rule_exactness():
    for p in (2, 3, 5):
        rule = gauss_rule(np.linspace(0, 1, 5), p + 1)
        assert np.all(rule.weights > 0)
        np.testing.assert_allclose(rule.weights.sum(axis=1), np.diff(rule.cells), atol=1e-15)
        for m in range(2 * (p + 1)):
            val = np.sum(rule.weights * rule.points ** m)
            assert abs(val - 1 / (m + 1)) <= 1e-14


def test_gauss_rule_split_points():
    rule = gauss_rule(np.array([0.0, 1.0]), 3, split=(0.3,))
    np.testing.assert_allclose(rule.cells, [0, 0.3, 1])


def test_basis_stability_across_levels():
    # sup_v |v|^2 / (h^{-1} ||sum v_i phi_i||^2) = h / lambda_min(M): no growth trend
    worst = []
    for level in range(1, 7):
        S = uniform_space(2, 1, 2 ** level)
        x, w = gauss_cells(S.breakpoints, 4)
        B = S.collocation(x).toarray()
        M = B.T @ (w[:, None] * B)
        worst.append(S.mesh_size / np.linalg.eigvalsh(M)[0])
    assert np.all(np.diff(worst) <= 1e-9)
    assert worst[-1] > 0.5 * worst[0]
