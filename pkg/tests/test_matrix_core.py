import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import ortho_group

from kolmolab.errors import InvalidInputError
from kolmolab.matrix_core import (OperatorSpec, SpectralClass, classify_spectrum, kalman_index,
                                  lambda_min_spd, mat_exp, sqrtm_psd)

from conftest import random_hypoelliptic

ROT = np.array([[0.0, -1.0], [1.0, 0.0]])
NIL = np.array([[0.0, 0.0], [1.0, 0.0]])


def _series(M, terms=60):
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms):
        term = term @ M / k
        out = out + term
    return out


def test_exp_at_zero_is_identity():
    M = np.random.default_rng(0).standard_normal((4, 4))
    assert np.array_equal(mat_exp(M, 0.0), np.eye(4))


def test_exp_rotation_quarter_turn():
    np.testing.assert_allclose(mat_exp(-ROT, np.pi / 2), [[0, 1], [-1, 0]], atol=1e-15)


def test_exp_nilpotent_truncates():
    np.testing.assert_allclose(mat_exp(-NIL, 2.0), [[1, 0], [-2, 1]], atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_exp_matches_series_on_unit_ball(seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((4, 4))
    M /= np.linalg.norm(M, 2)
    ref = _series(M)
    err = np.linalg.norm(mat_exp(M) - ref) / np.linalg.norm(ref)
    assert err <= 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_exp_matches_scipy_for_large_norm(seed):
    rng = np.random.default_rng(100 + seed)
    M = 5.0 * rng.standard_normal((4, 4))
    ref = scipy.linalg.expm(2.0 * M)
    assert np.linalg.norm(mat_exp(M, 2.0) - ref) / np.linalg.norm(ref) <= 1e-11


def test_exp_batches_over_times():
    t = np.array([0.1, 1.0, 3.0])
    out = mat_exp(ROT, t)
    for k, tk in enumerate(t):
        np.testing.assert_allclose(out[k], scipy.linalg.expm(tk * ROT), atol=1e-14)


def test_exp_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        mat_exp(np.array([[np.nan]]), 1.0)
    with pytest.raises(InvalidInputError):
        mat_exp(np.eye(2), np.inf)


small_floats = st.floats(-5, 5, allow_nan=False)


@given(st.integers(0, 10_000), small_floats, small_floats)
def test_exp_group_property(seed, s, t):
    M = np.random.default_rng(seed).standard_normal((4, 4))
    M *= 2.0 / np.linalg.norm(M, 2)
    lhs = mat_exp(M, s) @ mat_exp(M, t)
    rhs = mat_exp(M, s + t)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(1.0, np.linalg.norm(rhs))


@given(st.integers(0, 10_000), st.floats(-3, 3, allow_nan=False))
def test_exp_determinant_is_exp_trace(seed, t):
    B = np.random.default_rng(seed).standard_normal((3, 3))
    det = np.linalg.det(mat_exp(-B, t))
    assert det == pytest.approx(np.exp(-t * np.trace(B)), rel=1e-10)


def test_determinant_one_on_imaginary_spectrum(rot, mix):
    for spec in (rot, mix):
        for t in (0.5, 7.0, 40.0):
            assert np.linalg.det(mat_exp(-spec.B, t)) == pytest.approx(1.0, rel=1e-10)


def test_spec_validation():
    with pytest.raises(InvalidInputError):
        OperatorSpec([[1.0, 2.0], [0.0, 1.0]], np.zeros((2, 2)))
    with pytest.raises(InvalidInputError):
        OperatorSpec([[-1.0]], [[0.0]])
    with pytest.raises(InvalidInputError):
        OperatorSpec(np.eye(2), np.zeros((3, 3)))
    spec = OperatorSpec(np.eye(2), ROT)
    with pytest.raises(ValueError):
        spec.A[0, 0] = 2.0


def test_spec_equality_by_content():
    assert OperatorSpec(np.eye(2), ROT, "a") == OperatorSpec(np.eye(2), ROT.copy(), "b")
    assert OperatorSpec(np.eye(2), ROT) != OperatorSpec(np.eye(2), -ROT)


def test_kalman_examples():
    assert kalman_index(OperatorSpec(np.eye(3), np.random.default_rng(1).standard_normal((3, 3)))) == (True, 0)
    assert kalman_index(OperatorSpec(np.diag([1.0, 0.0]), NIL)) == (True, 1)
    res = kalman_index(OperatorSpec(np.diag([1.0, 0.0]), np.zeros((2, 2))))
    assert not res.hypoelliptic and res.n0 is None


def test_kalman_chain_length():
    # a 4-step chain needs three drift applications
    B = np.diag(np.ones(3), -1)
    A = np.zeros((4, 4))
    A[0, 0] = 1.0
    assert kalman_index(OperatorSpec(A, B)) == (True, 3)


@pytest.mark.parametrize("seed", range(6))
def test_kalman_invariant_under_orthogonal_change(seed):
    spec = random_hypoelliptic(seed)
    P = ortho_group.rvs(3, random_state=seed)
    moved = OperatorSpec(P @ spec.A @ P.T, P @ spec.B @ P.T)
    assert kalman_index(moved) == kalman_index(spec)


def test_classify_examples():
    rep = classify_spectrum(OperatorSpec(np.eye(2), ROT))
    np.testing.assert_allclose(sorted(np.array(rep.eigenvalues).imag), [-1, 1], atol=1e-14)
    assert rep.spectral_class is SpectralClass.ALL_IMAGINARY and rep.liouville_Linf
    rep = classify_spectrum(OperatorSpec([[1.0]], [[1.0]]))
    assert rep.spectral_class is SpectralClass.HAS_POSITIVE_REAL and not rep.liouville_Linf
    rep = classify_spectrum(OperatorSpec(np.eye(3), np.zeros((3, 3))))
    assert rep.spectral_class is SpectralClass.ALL_IMAGINARY
    assert np.all(np.array(rep.eigenvalues) == 0)
    rep = classify_spectrum(OperatorSpec(np.eye(2), -np.eye(2)))
    assert rep.spectral_class is SpectralClass.ALL_NONPOSITIVE_REAL and rep.liouville_Linf


def test_classify_jordan_block_not_misread():
    # a size-4 nilpotent block has eigenvalues perturbed by ~eps^(1/4)
    B = np.diag(np.ones(3), 1) * 3.0
    rep = classify_spectrum(OperatorSpec(np.eye(4), B))
    assert rep.spectral_class is SpectralClass.ALL_IMAGINARY


@pytest.mark.parametrize("seed", range(8))
def test_all_imaginary_implies_zero_trace(seed):
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((4, 4))
    B = S - S.T
    rep = classify_spectrum(OperatorSpec(np.eye(4), B))
    assert rep.spectral_class is SpectralClass.ALL_IMAGINARY
    assert abs(np.trace(B)) <= 1e-10


def test_sqrtm_and_lambda_min():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((3, 3))
    A = X @ X.T
    R = sqrtm_psd(A)
    np.testing.assert_allclose(R @ R, A, atol=1e-12)
    assert lambda_min_spd(A) == pytest.approx(np.linalg.eigvalsh(A)[0], rel=1e-10)
