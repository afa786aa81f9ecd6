import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from srmdp.regression import (LP0, LP1, BasisSpec, RankDeficientError, design_matrix, evaluate,
                              householder_qr, ols_lp0, ols_lp1, truncate)

finite = st.floats(-1e3, 1e3)


@given(st.integers(1, 6), st.integers(0, 40), st.data())
def test_lp1_recovers_affine_functions_exactly(d, extra, data):
    M = d + 1 + extra
    X = data.draw(arrays(float, (M, d), elements=st.floats(-5, 5)))
    A = design_matrix(X)
    if np.linalg.matrix_rank(A, tol=1e-6) < d + 1:
        return
    coef = data.draw(arrays(float, d + 1, elements=st.floats(-10, 10)))
    est = ols_lp1(A, A @ coef)
    scale = 1.0 + np.abs(coef).max()
    cond = np.linalg.cond(A)
    assert np.abs(est - coef).max() <= 1e-10 * scale * max(1.0, cond / 1e3)


def test_lp1_exact_on_well_conditioned_cloud(rng):
    X = rng.uniform(-1, 1, size=(200, 4))
    A = design_matrix(X)
    coef = np.array([0.3, -1.0, 2.0, 0.5, 0.0])
    assert np.abs(ols_lp1(A, A @ coef) - coef).max() <= 1e-10


@given(st.integers(1, 5), st.integers(0, 30), st.data())
def test_lp1_matches_normal_equations(d, extra, data):
    M = d + 1 + extra
    X = data.draw(arrays(float, (M, d), elements=st.floats(-3, 3)))
    A = design_matrix(X)
    if np.linalg.cond(A) > 1e6:
        return
    s = data.draw(arrays(float, M, elements=st.floats(-2, 2)))
    ref = np.linalg.solve(A.T @ A, A.T @ s)
    np.testing.assert_allclose(ols_lp1(A, s), ref, atol=1e-7 * (1 + np.abs(ref).max()))


def test_lp1_several_responses_share_factorisation(rng):
    A = design_matrix(rng.normal(size=(30, 3)))
    S = rng.normal(size=(30, 4))
    est = ols_lp1(A, S)
    np.testing.assert_allclose(est, np.linalg.lstsq(A, S, rcond=None)[0], atol=1e-12)


@given(st.integers(1, 8), st.integers(0, 50), st.data())
def test_qr_reconstruction(n, extra, data):
    M = n + extra
    A = data.draw(arrays(float, (M, n), elements=finite))
    qr = householder_qr(A)
    err = np.abs(qr.reconstruct() - A).max()
    assert err <= 1e-6 * max(1.0, np.abs(A).max())


def test_qr_r_matches_lapack_up_to_signs(rng):
    A = rng.normal(size=(40, 5))
    R = householder_qr(A).R
    R_ref = np.linalg.qr(A, mode="r")
    np.testing.assert_allclose(np.abs(R), np.abs(R_ref), atol=1e-12)


def test_q_is_orthogonal(rng):
    A = rng.normal(size=(12, 3))
    qr = householder_qr(A)
    v = rng.normal(size=12)
    np.testing.assert_allclose(qr.apply_q(qr.apply_qt(v)), v, atol=1e-13)
    assert np.linalg.norm(qr.apply_qt(v)) == pytest.approx(np.linalg.norm(v))


@given(st.integers(1, 10), st.integers(0, 200))
def test_flop_count_formula(n, extra):
    M = n + extra
    qr = householder_qr(np.random.default_rng(M * 31 + n).normal(size=(M, n)))
    assert qr.flops == sum(2 * (M - j) * (n - j) for j in range(n))
    # same order as the classical n^2 (M - n/3) count
    assert 1.0 <= qr.flops / (n * n * (M - n / 3)) <= 3.0


def test_rank_deficiency_detected(rng):
    x = rng.normal(size=20)
    A = design_matrix(np.column_stack([x, 2 * x]))
    assert householder_qr(A).rank_deficient
    with pytest.raises(RankDeficientError):
        ols_lp1(A, rng.normal(size=20))
    assert householder_qr(np.zeros((5, 2))).rank_deficient


def test_lp1_needs_enough_rows():
    with pytest.raises(ValueError):
        ols_lp1(np.ones((2, 3)), np.ones(2))


@given(st.floats(-1e6, 1e6), st.integers(1, 300))
def test_lp0_exact_for_constant_responses(c, M):
    assert ols_lp0(np.full(M, c)) == c


def test_lp0_is_the_mean(rng):
    s = rng.normal(size=101)
    assert ols_lp0(s) == pytest.approx(s.mean(), abs=1e-14)
    with pytest.raises(ValueError):
        ols_lp0([])


def test_truncation_bounds_on_random_evaluations(rng):
    spec = BasisSpec(LP1, 3)
    bound = 0.7
    vals = np.array([evaluate(spec, rng.normal(scale=5, size=4), rng.normal(scale=5, size=3))
                     for _ in range(10_000)])
    t = truncate(vals, bound)
    assert np.all(np.abs(t) <= bound)
    inside = np.abs(vals) <= bound
    np.testing.assert_array_equal(t[inside], vals[inside])
    assert truncate([5.0], 1.0)[0] == 1.0
    with pytest.raises(ValueError):
        truncate([1.0], -1.0)


def test_basis_spec():
    assert BasisSpec(LP0, 4).dim_y == 1
    assert BasisSpec(LP1, 4).dim_y == 5 == BasisSpec(LP1, 4).dim_z_per_component
    with pytest.raises(ValueError):
        BasisSpec("lp2", 2)
    assert evaluate(BasisSpec(LP0, 2), [3.0], [100.0, -7.0]) == 3.0
    assert evaluate(BasisSpec(LP1, 2), [1.0, 2.0, 3.0], [1.0, 1.0]) == 6.0
    with pytest.raises(ValueError):
        evaluate(BasisSpec(LP1, 2), [1.0], [1.0, 1.0])
