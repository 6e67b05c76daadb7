import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from domain_geometry import make_grid
from exceptions import DegenerateOperatorError, InvalidInputError, NonFiniteError, NotPSDError
from spectral_linalg import (
    as_symmetric,
    hs_norm,
    op_norm,
    psd_certify,
    psd_factor,
    psd_sqrt,
    schur_complement,
    sym_eigen,
    truncated_pinv,
    truncation_rank,
)


def test_as_symmetric_exact():
    rng = np.random.default_rng(3)
    A = as_symmetric(rng.standard_normal((6, 6)))
    assert np.array_equal(A, A.T)


def test_as_symmetric_rejects_rectangular():
    with pytest.raises(InvalidInputError):
        as_symmetric(np.ones((2, 3)))


def test_eigen_identity():
    E = sym_eigen(np.eye(3))
    assert np.allclose(E.eigenvalues, [1, 1, 1])
    assert E.source_dim == 3


def test_eigen_two_by_two():
    E = sym_eigen([[2.0, 1.0], [1.0, 2.0]])
    assert np.allclose(E.eigenvalues, [3, 1])


def test_eigen_reconstruction_and_orthonormality():
    rng = np.random.default_rng(0)
    A = as_symmetric(rng.standard_normal((20, 20)))
    E = sym_eigen(A)
    V = E.eigenvectors
    assert np.all(np.diff(E.eigenvalues) <= 0)
    assert np.max(np.abs(V.T @ V - np.eye(20))) <= 1e-10
    assert np.max(np.abs((V * E.eigenvalues) @ V.T - A)) <= 1e-8 * (1 + np.max(np.abs(A)))


def test_eigen_non_finite():
    with pytest.raises(NonFiniteError):
        sym_eigen([[1.0, np.nan], [np.nan, 1.0]])


def test_pinv_identity():
    assert np.allclose(truncated_pinv(sym_eigen(np.eye(3)), rank=3), np.eye(3))


def test_pinv_rank_one_truncation():
    assert np.allclose(truncated_pinv(sym_eigen(np.diag([4.0, 1.0])), rank=1), np.diag([0.25, 0.0]))


def test_pinv_relative_cutoff():
    pinv = truncated_pinv(sym_eigen(np.diag([1.0, 1e-14])), rel_tol=1e-8)
    assert np.allclose(pinv, np.diag([1.0, 0.0]))


def test_pinv_skips_nonpositive_even_at_full_rank():
    E = sym_eigen(np.diag([2.0, 0.0, -1.0]))
    assert truncation_rank(E, rank=3) == 1
    assert np.allclose(truncated_pinv(E, rank=3), np.diag([0.5, 0.0, 0.0]))


def test_pinv_degenerate():
    with pytest.raises(DegenerateOperatorError):
        truncated_pinv(sym_eigen(np.zeros((3, 3))), rel_tol=1e-10)


def test_pinv_needs_exactly_one_criterion():
    E = sym_eigen(np.eye(2))
    with pytest.raises(InvalidInputError):
        truncated_pinv(E)
    with pytest.raises(InvalidInputError):
        truncated_pinv(E, rank=1, rel_tol=0.1)
    with pytest.raises(InvalidInputError):
        truncated_pinv(E, rank=5)


def test_pinv_consistency(random_psd):
    A = random_psd(8, seed=1)
    P = truncated_pinv(sym_eigen(A), rank=8)
    assert np.max(np.abs(P @ A @ P - P)) <= 1e-8 * (1 + np.max(np.abs(P)))


def test_sqrt_identity_and_diagonal():
    assert np.allclose(psd_sqrt(np.eye(4)), np.eye(4))
    assert np.allclose(psd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))


def test_sqrt_squares_back(random_psd):
    B = random_psd(10, seed=2)
    R = psd_sqrt(B)
    assert np.max(np.abs(R @ R - B)) <= 1e-8


def test_sqrt_rejects_negative():
    with pytest.raises(NotPSDError) as info:
        psd_sqrt(np.diag([1.0, -0.5]))
    assert info.value.min_eigenvalue == pytest.approx(-0.5)


def test_factor_reproduces_nonnegative_part():
    A = np.diag([3.0, 1.0, -1e-12])
    F = psd_factor(A)
    assert np.allclose(F @ F.T, np.diag([3.0, 1.0, 0.0]))


def test_schur_self_complement_is_empty():
    K = np.eye(3)
    assert schur_complement(K, [0, 1, 2], [0, 1, 2]).shape == (0, 0)


def test_schur_scalar():
    K = np.array([[1.0, 0.5], [0.5, 2.0]])
    assert schur_complement(K, [0, 1], [1])[0, 0] == pytest.approx(0.875)


def test_schur_brownian_conditional_covariance(brownian):
    K = brownian(5)
    schur = schur_complement(K, range(5), [2, 3, 4])
    # rows follow B \ A = nodes 0 and 0.25
    assert schur[1, 1] == pytest.approx(0.125)
    assert schur[0, 0] == pytest.approx(0.0)


def test_schur_zero_conditioning_block():
    K = np.array([[2.0, 0.0], [0.0, 0.0]])
    assert np.allclose(schur_complement(K, [0, 1], [1]), [[2.0]])


def test_schur_requires_subset():
    with pytest.raises(InvalidInputError):
        schur_complement(np.eye(3), [0, 1], [2])


@settings(max_examples=100)
@given(st.integers(0, 10_000), st.integers(3, 12), st.data())
def test_schur_complement_stays_psd(seed, n, data):
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((n, data.draw(st.integers(1, n))))
    K = C @ C.T
    A = sorted(data.draw(st.sets(st.integers(0, n - 1), min_size=1, max_size=n - 1)))
    schur = schur_complement(K, range(n), A)
    assert np.array_equal(schur, schur.T)
    assert np.linalg.eigvalsh(schur).min() >= -1e-8 * (1 + np.max(np.abs(K)))


def test_certify():
    identity = psd_certify(np.eye(3))
    assert identity.is_psd
    assert identity.min_eigenvalue == pytest.approx(1.0)
    cert = psd_certify(np.diag([1.0, -0.5]))
    assert not cert.is_psd
    assert cert.min_eigenvalue == pytest.approx(-0.5)


def test_certify_gram_matrix():
    C = np.random.default_rng(5).standard_normal((7, 4))
    assert psd_certify(C @ C.T).is_psd


def test_norms():
    grid = make_grid(6)
    assert hs_norm(np.zeros((6, 6)), grid) == 0.0
    assert hs_norm(np.ones((6, 6)), grid) == pytest.approx(grid.weight * 6)
    assert op_norm(np.eye(4)) == pytest.approx(1.0)
