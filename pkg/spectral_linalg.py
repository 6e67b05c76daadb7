"""
Dense symmetric spectral routines: eigendecomposition, truncated pseudo-inverses,
PSD square roots and factors, Schur complements, norms and PSD certification.

Every kernel is handled as its matrix of grid values. RKHS inner products
<f, g> over a separator J are realized as f' pinv(K_J) g; the quadrature weight
cancels from these expressions and only enters the norms.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from config import CONFIG
from domain_geometry import Grid
from exceptions import DegenerateOperatorError, InvalidInputError, NonFiniteError, NotPSDError

logger = logging.getLogger(__name__)

TOLERANCES = CONFIG['tolerances']

# plain ndarray, exactly symmetric when built through as_symmetric
SymMatrix = np.ndarray


@dataclass(frozen=True, eq=False)
class EigenDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def source_dim(self) -> int:
        return self.eigenvectors.shape[0]


@dataclass(frozen=True)
class PSDCertificate:
    is_psd: bool
    min_eigenvalue: float


def as_symmetric(A) -> SymMatrix:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"Expected a square matrix, got shape {A.shape}")
    return 0.5 * (A + A.T)


def sym_eigen(A) -> EigenDecomposition:
    """Eigenvalues in descending order with matching orthonormal eigenvectors."""
    A = as_symmetric(A)
    if not np.all(np.isfinite(A)):
        raise NonFiniteError("Matrix has non-finite entries")
    if A.shape[0] == 0:
        return EigenDecomposition(np.zeros(0), np.zeros((0, 0)))
    w, V = linalg.eigh(A)
    return EigenDecomposition(eigenvalues=w[::-1].copy(), eigenvectors=V[:, ::-1].copy())


def truncation_rank(E: EigenDecomposition, rank: Optional[int] = None,
                    rel_tol: Optional[float] = None) -> int:
    """Number of leading eigenpairs a truncated pseudo-inverse keeps."""
    if (rank is None) == (rel_tol is None):
        raise InvalidInputError("Give exactly one of rank or rel_tol")
    lam = E.eigenvalues
    if E.source_dim == 0 or lam[0] <= 0:
        top = lam[0] if E.source_dim else 'none'
        raise DegenerateOperatorError(f"Leading eigenvalue {top} is not positive")
    positive = int(np.count_nonzero(lam > 0))
    if rank is not None:
        if rank < 0 or rank > E.source_dim:
            raise InvalidInputError(f"Rank {rank} outside 0..{E.source_dim}")
        return min(int(rank), positive)
    if not 0.0 < rel_tol < 1.0:
        raise InvalidInputError(f"Relative tolerance {rel_tol} must lie in (0, 1)")
    return int(np.count_nonzero(lam > rel_tol * lam[0]))


def truncated_pinv(E: EigenDecomposition, rank: Optional[int] = None,
                   rel_tol: Optional[float] = None) -> SymMatrix:
    keep = truncation_rank(E, rank=rank, rel_tol=rel_tol)
    V = E.eigenvectors[:, :keep]
    return as_symmetric((V / E.eigenvalues[:keep]) @ V.T)


def _check_nonnegative(E: EigenDecomposition, tol: float) -> None:
    if E.source_dim == 0:
        return
    lam_max = max(float(E.eigenvalues[0]), 0.0)
    lam_min = float(E.eigenvalues[-1])
    if lam_min < -tol * (1.0 + lam_max):
        raise NotPSDError(f"Matrix is not PSD: minimum eigenvalue {lam_min:.3e}",
                          min_eigenvalue=lam_min)


def psd_sqrt(A, tol: float = TOLERANCES['sqrt_neg_tol']) -> SymMatrix:
    E = sym_eigen(A)
    _check_nonnegative(E, tol)
    V = E.eigenvectors
    root = np.sqrt(np.clip(E.eigenvalues, 0.0, None))
    return as_symmetric((V * root) @ V.T)


def psd_factor(A) -> np.ndarray:
    """F with F F' equal to the nonnegative part of A; negative eigenvalues are clipped."""
    E = sym_eigen(A)
    return E.eigenvectors * np.sqrt(np.clip(E.eigenvalues, 0.0, None))


def schur_complement(K, B_idx: Sequence[int], A_idx: Sequence[int],
                     rel_tol: float = TOLERANCES['pinv_rel_tol']) -> SymMatrix:
    """K_B / K_A: covariance of the B \\ A part left after predicting it from the A part.

    The result is indexed by B \\ A in the order those indices appear in B_idx.
    """
    K = np.asarray(K, dtype=float)
    B = np.asarray(B_idx, dtype=int)
    A = np.asarray(A_idx, dtype=int)
    if not np.all(np.isin(A, B)):
        raise InvalidInputError("Conditioning set must be contained in the block")
    rest = B[~np.isin(B, A)]
    if rest.size == 0:
        return np.zeros((0, 0))
    K_rest = K[np.ix_(rest, rest)]
    if A.size == 0:
        return as_symmetric(K_rest)
    K_A = K[np.ix_(A, A)]
    if not np.any(K_A):
        return as_symmetric(K_rest)
    pinv = truncated_pinv(sym_eigen(K_A), rel_tol=rel_tol)
    cross = K[np.ix_(rest, A)]
    return as_symmetric(K_rest - cross @ pinv @ cross.T)


def psd_certify(A, tol: float = TOLERANCES['partial_psd_tol']) -> PSDCertificate:
    E = sym_eigen(A)
    if E.source_dim == 0:
        return PSDCertificate(is_psd=True, min_eigenvalue=0.0)
    lam_max = max(float(E.eigenvalues[0]), 0.0)
    lam_min = float(E.eigenvalues[-1])
    return PSDCertificate(is_psd=lam_min >= -tol * (1.0 + lam_max), min_eigenvalue=lam_min)


def hs_norm(A, grid: Grid) -> float:
    """Hilbert-Schmidt norm of the kernel with grid values A (rectangle rule)."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(grid.weight * np.linalg.norm(A, 'fro'))


def op_norm(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, 2))
