"""
Canonical completion of partial covariances on serrated domains, separation and
uniqueness checks, and the contraction parametrization of every other completion.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import CONFIG
from domain_geometry import Regions, SerratedDomain, derived_regions
from exceptions import InvalidContractionError, InvalidInputError
from spectral_linalg import (
    as_symmetric,
    hs_norm,
    op_norm,
    psd_certify,
    psd_sqrt,
    schur_complement,
    sym_eigen,
    truncated_pinv,
    truncation_rank,
)

logger = logging.getLogger(__name__)

TOLERANCES = CONFIG['tolerances']

MergeOrder = Union[str, Sequence[int]]


@dataclass(frozen=True, eq=False)
class PartialCovariance:
    domain: SerratedDomain
    values: np.ndarray

    @property
    def grid(self):
        return self.domain.grid

    @property
    def mask(self) -> np.ndarray:
        return self.domain.mask


@dataclass
class StepDiagnostics:
    p: int
    rank_used: int
    lambda_min_J: float
    lambda_at_rank: Optional[float] = None
    separation_residual_max: float = 0.0
    degenerate: bool = False

    def to_dict(self) -> Dict:
        return {
            'p': self.p,
            'rank_used': self.rank_used,
            'lambda_min_J': self.lambda_min_J,
            'lambda_at_rank': self.lambda_at_rank,
            'separation_residual_max': self.separation_residual_max,
            'degenerate': self.degenerate,
        }


@dataclass
class CompletionResult:
    kernel: np.ndarray
    per_step: List[StepDiagnostics]
    order: List[int]
    min_eigenvalue: float = 0.0
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            'order': list(self.order),
            'per_step': [step.to_dict() for step in self.per_step],
            'min_eigenvalue': self.min_eigenvalue,
            'warnings': list(self.warnings),
        }


@dataclass(frozen=True, eq=False)
class ContractionSet:
    """One contraction per step p, of shape |S_p| x |D_p|."""
    matrices: Tuple[np.ndarray, ...]


@dataclass
class UniquenessReport:
    unique: bool
    r: Optional[int]
    schur_norms: Dict[str, List[float]]
    tol: float

    def to_dict(self) -> Dict:
        return {
            'unique': self.unique,
            'r': self.r,
            'schur_norms': {k: list(v) for k, v in self.schur_norms.items()},
            'tol': self.tol,
        }


@dataclass(frozen=True, eq=False)
class Envelope:
    """Attainable values of K(s, t) over all completions, for s in S and t in D."""
    S: np.ndarray
    D: np.ndarray
    canonical: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def make_partial_covariance(domain: SerratedDomain, values,
                            tol: float = TOLERANCES['partial_psd_tol']) -> PartialCovariance:
    """Validate values on the domain; entries off the mask are zeroed."""
    n = domain.grid.n
    values = np.asarray(values, dtype=float)
    if values.shape != (n, n):
        raise InvalidInputError(f"Matrix of shape {values.shape} does not match a {n}-node grid")
    mask = domain.mask
    if not np.all(np.isfinite(values[mask])):
        raise InvalidInputError("Partial covariance has non-finite entries inside the domain")
    values = as_symmetric(np.where(mask, values, 0.0))
    for j, iv in enumerate(domain.intervals, start=1):
        block = values[iv.a:iv.b + 1, iv.a:iv.b + 1]
        cert = psd_certify(block, tol)
        if not cert.is_psd:
            raise InvalidInputError(
                f"Block on interval {j} is not a covariance: minimum eigenvalue {cert.min_eigenvalue:.3e}")
    return PartialCovariance(domain=domain, values=values)


def restrict(K, domain: SerratedDomain,
             tol: float = TOLERANCES['partial_psd_tol']) -> PartialCovariance:
    return make_partial_covariance(domain, K, tol)


def propagate_through_separator(kernel: np.ndarray, S: np.ndarray, J: np.ndarray,
                                D: np.ndarray, inverse: np.ndarray) -> np.ndarray:
    """Fill K[S, D] = K[S, J] inverse K[J, D] in place and mirror it to K[D, S]."""
    block = kernel[np.ix_(S, J)] @ inverse @ kernel[np.ix_(J, D)]
    kernel[np.ix_(S, D)] = block
    kernel[np.ix_(D, S)] = block.T
    return block


def separator_inverse(K_J: np.ndarray, rel_tol: float) -> Tuple[np.ndarray, StepDiagnostics]:
    E = sym_eigen(K_J)
    lam_min = float(E.eigenvalues[-1])
    if E.eigenvalues[0] <= 0:
        return np.zeros_like(K_J), StepDiagnostics(p=0, rank_used=0, lambda_min_J=lam_min,
                                                   degenerate=True)
    rank = truncation_rank(E, rel_tol=rel_tol)
    return (truncated_pinv(E, rel_tol=rel_tol),
            StepDiagnostics(p=0, rank_used=rank, lambda_min_J=lam_min,
                            lambda_at_rank=float(E.eigenvalues[rank - 1])))


def merge_plan(domain: SerratedDomain, order: MergeOrder) -> List[int]:
    steps = list(range(1, domain.m))
    if isinstance(order, str):
        if order == 'ascending':
            return steps
        if order == 'descending':
            return steps[::-1]
        raise InvalidInputError(f"Unknown merge order {order!r}")
    plan = [int(p) for p in order]
    if sorted(plan) != steps:
        raise InvalidInputError(f"Merge order {plan} is not a permutation of {steps}")
    return plan


def _merge_regions(domain: SerratedDomain, groups: List[List[int]], p: int) -> Tuple[Regions, int]:
    """Regions for merging the group ending at interval p-1 with the one starting at p (0-based)."""
    g = next(i for i, (lo, hi) in enumerate(groups) if hi == p - 1)
    left_lo, left_hi = groups[g]
    right_lo, right_hi = groups[g + 1]
    ivs = domain.intervals
    S = np.arange(ivs[left_lo].a, ivs[right_lo].a)
    J = np.arange(ivs[right_lo].a, ivs[left_hi].b + 1)
    D = np.arange(ivs[left_hi].b + 1, ivs[right_hi].b + 1)
    return Regions(p=p, J=J, D=D, S=S), g


def canonical_completion(pc: PartialCovariance, order: MergeOrder = 'ascending',
                         rel_tol: float = TOLERANCES['pinv_rel_tol']) -> CompletionResult:
    """Complete pc by successive 2-interval completions in the given merge order."""
    if not isinstance(pc, PartialCovariance):
        raise InvalidInputError("canonical_completion expects a PartialCovariance")
    domain = pc.domain
    n = domain.grid.n
    if pc.values.shape != (n, n):
        raise InvalidInputError(f"Partial covariance of shape {pc.values.shape} on a {n}-node grid")
    plan = merge_plan(domain, order)

    kernel = pc.values.copy()
    groups = [[j, j] for j in range(domain.m)]
    per_step: List[StepDiagnostics] = []
    warnings: List[str] = []
    for p in plan:
        regions, g = _merge_regions(domain, groups, p)
        inverse, diag = separator_inverse(kernel[np.ix_(regions.J, regions.J)], rel_tol)
        diag.p = p
        if diag.degenerate:
            message = f"Separator of step {p} is degenerate; cross-covariance through it set to zero"
            logger.warning(message)
            warnings.append(message)
        propagate_through_separator(kernel, regions.S, regions.J, regions.D, inverse)
        groups[g] = [groups[g][0], groups[g + 1][1]]
        del groups[g + 1]
        per_step.append(diag)

    residuals = verify_separation(kernel, domain, rel_tol)
    for diag in per_step:
        diag.separation_residual_max = float(residuals[diag.p - 1])
    cert = psd_certify(kernel, TOLERANCES['completion_psd_tol'])
    if not cert.is_psd:
        message = f"Completion fails PSD certification: minimum eigenvalue {cert.min_eigenvalue:.3e}"
        logger.warning(message)
        warnings.append(message)
    logger.info(f"Completed {domain.m}-interval partial covariance in {len(plan)} step(s)")
    return CompletionResult(kernel=kernel, per_step=per_step, order=plan,
                            min_eigenvalue=cert.min_eigenvalue, warnings=warnings)


def complete_2serrated(pc: PartialCovariance,
                       rel_tol: float = TOLERANCES['pinv_rel_tol']) -> np.ndarray:
    if pc.domain.m > 2:
        raise InvalidInputError(f"Expected a cover of at most 2 intervals, got {pc.domain.m}")
    return canonical_completion(pc, 'ascending', rel_tol).kernel


def verify_separation(K, domain: SerratedDomain,
                      rel_tol: float = TOLERANCES['pinv_rel_tol']) -> np.ndarray:
    """Max |K(s,t) - <k_s, k_t>_J| over S_p x D_p for every step p."""
    K = np.asarray(K, dtype=float)
    residuals = np.zeros(max(domain.m - 1, 0))
    for p in range(1, domain.m):
        regions = derived_regions(domain, p)
        S, J, D = regions.S, regions.J, regions.D
        if S.size == 0 or D.size == 0:
            continue
        inverse, _ = separator_inverse(K[np.ix_(J, J)], rel_tol)
        predicted = K[np.ix_(S, J)] @ inverse @ K[np.ix_(J, D)]
        residuals[p - 1] = float(np.max(np.abs(K[np.ix_(S, D)] - predicted)))
    return residuals


def _relative_hs(schur: np.ndarray, block: np.ndarray, grid) -> float:
    denom = hs_norm(block, grid)
    if denom == 0.0:
        return 0.0
    return hs_norm(schur, grid) / denom


def uniqueness_check(pc: PartialCovariance,
                     rel_tol: float = TOLERANCES['uniqueness_rel_tol'],
                     pinv_rel_tol: float = TOLERANCES['pinv_rel_tol']) -> UniquenessReport:
    """Look for a pivot interval r from which the whole process is perfectly predicted.

    left[p-1] is the relative norm of K_{I_p}/K_{J_p}, right[q-1] that of
    K_{I_{q+1}}/K_{J_q}. Pivot r needs left small for p < r and right small
    for q >= r.
    """
    domain = pc.domain
    grid = domain.grid
    K = pc.values
    left: List[float] = []
    right: List[float] = []
    for p in range(1, domain.m):
        J = derived_regions(domain, p).J
        I_p = domain.intervals[p - 1].indices
        I_next = domain.intervals[p].indices
        left.append(_relative_hs(schur_complement(K, I_p, J, pinv_rel_tol),
                                 K[np.ix_(I_p, I_p)], grid))
        right.append(_relative_hs(schur_complement(K, I_next, J, pinv_rel_tol),
                                  K[np.ix_(I_next, I_next)], grid))

    best_r, best_score = None, np.inf
    for r in range(1, domain.m + 1):
        required = left[:r - 1] + right[r - 1:]
        if all(v <= rel_tol for v in required):
            score = max(required, default=0.0)
            if score < best_score:
                best_r, best_score = r, score
    return UniquenessReport(unique=best_r is not None, r=best_r,
                            schur_norms={'left': left, 'right': right}, tol=rel_tol)


def assemble_block_operator(K, domain: SerratedDomain, f) -> np.ndarray:
    """Apply the completion's integral operator from its interval blocks, R_p blocks and separators."""
    K = np.asarray(K, dtype=float)
    f = np.asarray(f, dtype=float)
    out = np.zeros(domain.grid.n)
    for iv in domain.intervals:
        idx = slice(iv.a, iv.b + 1)
        out[idx] += K[idx, idx] @ f[idx]
    for p in range(1, domain.m):
        regions = derived_regions(domain, p)
        S, J, D = regions.S, regions.J, regions.D
        out[S] += K[np.ix_(S, D)] @ f[D]
        out[D] += K[np.ix_(D, S)] @ f[S]
        out[J] -= K[np.ix_(J, J)] @ f[J]
    return domain.grid.weight * out


def zero_contractions(domain: SerratedDomain) -> ContractionSet:
    shapes = [(r.S.size, r.D.size) for r in (derived_regions(domain, p) for p in range(1, domain.m))]
    return ContractionSet(matrices=tuple(np.zeros(shape) for shape in shapes))


def random_contraction(rows: int, cols: int, norm: float, seed) -> np.ndarray:
    """Random rows x cols matrix whose largest singular value equals norm."""
    if not 0.0 <= norm <= 1.0:
        raise InvalidContractionError(f"Contraction norm {norm} must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    k = min(rows, cols)
    if k == 0 or norm == 0.0:
        return np.zeros((rows, cols))
    Q1, _ = np.linalg.qr(rng.standard_normal((rows, k)))
    Q2, _ = np.linalg.qr(rng.standard_normal((cols, k)))
    singular = rng.uniform(0.0, norm, size=k)
    singular[0] = norm
    return (Q1 * singular) @ Q2.T


def random_contraction_set(domain: SerratedDomain, norm: float, seed) -> ContractionSet:
    shapes = [(r.S.size, r.D.size) for r in (derived_regions(domain, p) for p in range(1, domain.m))]
    children = np.random.SeedSequence(seed).spawn(len(shapes))
    return ContractionSet(matrices=tuple(
        random_contraction(rows, cols, norm, child) for (rows, cols), child in zip(shapes, children)))


def _check_contractions(domain: SerratedDomain, psis: ContractionSet) -> None:
    if len(psis.matrices) != domain.m - 1:
        raise InvalidContractionError(
            f"Expected {domain.m - 1} contraction(s), got {len(psis.matrices)}")
    slack = TOLERANCES['contraction_slack']
    for p, psi in enumerate(psis.matrices, start=1):
        regions = derived_regions(domain, p)
        expected = (regions.S.size, regions.D.size)
        if np.shape(psi) != expected:
            raise InvalidContractionError(
                f"Contraction {p} has shape {np.shape(psi)}, expected {expected}")
        norm = op_norm(psi)
        if norm > 1.0 + slack:
            raise InvalidContractionError(f"Contraction {p} has operator norm {norm:.6g} > 1")


def perturbed_completion(canonical: CompletionResult, pc: PartialCovariance,
                         psis: ContractionSet,
                         rel_tol: float = TOLERANCES['pinv_rel_tol']) -> np.ndarray:
    """Completion with R_p = canonical block + U_p^{1/2} Psi_p V_p^{1/2}, built in ascending p.

    U_p and V_p are the Schur complements of the S_p and D_p blocks given J_p,
    formed from the already perturbed kernel.
    """
    domain = pc.domain
    if canonical.kernel.shape != pc.values.shape:
        raise InvalidInputError("Canonical completion and partial covariance live on different grids")
    _check_contractions(domain, psis)
    if not any(np.any(psi) for psi in psis.matrices):
        return canonical.kernel.copy()

    kernel = pc.values.copy()
    for p, psi in enumerate(psis.matrices, start=1):
        regions = derived_regions(domain, p)
        S, J, D = regions.S, regions.J, regions.D
        inverse, _ = separator_inverse(kernel[np.ix_(J, J)], rel_tol)
        block = propagate_through_separator(kernel, S, J, D, inverse)
        if not np.any(psi):
            continue
        K_SJ = kernel[np.ix_(S, J)]
        K_JD = kernel[np.ix_(J, D)]
        U = kernel[np.ix_(S, S)] - K_SJ @ inverse @ K_SJ.T
        V = kernel[np.ix_(D, D)] - K_JD.T @ inverse @ K_JD
        block = block + psd_sqrt(U) @ psi @ psd_sqrt(V)
        kernel[np.ix_(S, D)] = block
        kernel[np.ix_(D, S)] = block.T
    return kernel


def completion_envelope(pc: PartialCovariance,
                        rel_tol: float = TOLERANCES['pinv_rel_tol']) -> Envelope:
    """Pointwise range canonical +/- sqrt(U(s,s) V(t,t)) on a cover of two intervals."""
    domain = pc.domain
    if domain.m != 2:
        raise InvalidInputError(f"The envelope is available for 2-interval covers, got {domain.m}")
    regions = derived_regions(domain, 1)
    S, J, D = regions.S, regions.J, regions.D
    K = pc.values
    inverse, _ = separator_inverse(K[np.ix_(J, J)], rel_tol)
    K_SJ = K[np.ix_(S, J)]
    K_JD = K[np.ix_(J, D)]
    canonical = K_SJ @ inverse @ K_JD
    u = np.diag(K[np.ix_(S, S)]) - np.einsum('ij,jk,ik->i', K_SJ, inverse, K_SJ)
    v = np.diag(K[np.ix_(D, D)]) - np.einsum('ji,jk,ki->i', K_JD, inverse, K_JD)
    half = np.sqrt(np.outer(np.clip(u, 0.0, None), np.clip(v, 0.0, None)))
    return Envelope(S=S, D=D, canonical=canonical, lower=canonical - half, upper=canonical + half)
