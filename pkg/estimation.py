"""
Recovering the canonical completion from fragment data.

Partial covariances are estimated from curves observed on subintervals, either
by pairwise averaging of products (dense fragments) or by a local average of
within-curve cross-products (sparse fragments). The completion is then
propagated through rank-truncated separator inverses.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from completion_core import (
    CompletionResult,
    StepDiagnostics,
    propagate_through_separator,
    separator_inverse,
    verify_separation,
)
from config import CONFIG
from domain_geometry import Grid, SerratedDomain, derived_regions
from exceptions import (
    CoverageError,
    DegenerateOperatorError,
    EmptyEstimateError,
    InvalidInputError,
)
from spectral_linalg import EigenDecomposition, as_symmetric, sym_eigen, truncated_pinv

logger = logging.getLogger(__name__)

ESTIMATION = CONFIG['estimation']
TOLERANCES = CONFIG['tolerances']

RULE_KINDS = ('fve', 'fixed', 'schedule', 'full')


@dataclass(frozen=True, eq=False)
class Fragment:
    curve_id: int
    support: np.ndarray
    values: np.ndarray

    @property
    def is_contiguous(self) -> bool:
        return bool(np.all(np.diff(self.support) == 1))


@dataclass(frozen=True, eq=False)
class FragmentSet:
    grid: Grid
    curves: Tuple[Fragment, ...]

    def __len__(self) -> int:
        return len(self.curves)

    @property
    def is_dense(self) -> bool:
        return all(curve.is_contiguous for curve in self.curves)


@dataclass(frozen=True, eq=False)
class PartialCovEstimate:
    values: np.ndarray
    count: np.ndarray
    mask: np.ndarray
    n_curves: int = 0


@dataclass(frozen=True)
class TruncationRule:
    kind: str
    fraction: Optional[float] = None
    ranks: Tuple[int, ...] = ()
    alpha: Optional[float] = None
    beta: Optional[float] = None
    constant: float = ESTIMATION['schedule_constant']

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise InvalidInputError(f"Unknown truncation rule {self.kind!r}")
        if self.kind == 'fve' and not (self.fraction is not None and 0.0 < self.fraction < 1.0):
            raise InvalidInputError(f"FVE fraction {self.fraction} must lie in (0, 1)")
        if self.kind == 'fixed' and (not self.ranks or any(r < 1 for r in self.ranks)):
            raise InvalidInputError(f"Fixed ranks {list(self.ranks)} must be positive")
        if self.kind == 'schedule' and not (self.alpha and self.beta and self.alpha > 0 and self.beta > 0):
            raise InvalidInputError(f"Schedule needs alpha, beta > 0, got {self.alpha}, {self.beta}")

    def describe(self) -> str:
        if self.kind == 'fve':
            return f"fve:{self.fraction:g}"
        if self.kind == 'fixed':
            return "fixed:" + ",".join(str(r) for r in self.ranks)
        if self.kind == 'schedule':
            return f"schedule:{self.alpha:g},{self.beta:g}"
        return 'full'

    def step_ranks(self, m: int, n_curves: int) -> List[int]:
        """Requested N_p for p = 1..m-1 under fixed and schedule rules."""
        steps = m - 1
        if self.kind == 'fixed':
            if len(self.ranks) == 1:
                return [self.ranks[0]] * steps
            if len(self.ranks) != steps:
                raise InvalidInputError(
                    f"Rule gives {len(self.ranks)} ranks for a cover with {steps} step(s)")
            return list(self.ranks)
        if self.kind == 'schedule':
            return truncation_schedule(n_curves, self.alpha, self.beta, m, self.constant)
        raise InvalidInputError(f"Rule {self.kind!r} does not fix ranks in advance")


def parse_rule(text: str) -> TruncationRule:
    """Parse 'fve:0.95', 'fixed:2', 'fixed:4,4,3', 'schedule:1,2' or 'full'."""
    text = (text or '').strip().lower()
    kind, _, arg = text.partition(':')
    try:
        if kind == 'full' and not arg:
            return TruncationRule(kind='full')
        if kind == 'fve':
            return TruncationRule(kind='fve', fraction=float(arg) if arg else ESTIMATION['fve_fraction'])
        if kind == 'fixed':
            return TruncationRule(kind='fixed', ranks=tuple(int(r) for r in arg.split(',')))
        if kind == 'schedule':
            alpha, beta = (float(x) for x in arg.split(','))
            return TruncationRule(kind='schedule', alpha=alpha, beta=beta)
    except ValueError as e:
        if isinstance(e, InvalidInputError):
            raise
        raise InvalidInputError(f"Cannot parse truncation rule {text!r}: {e}") from e
    raise InvalidInputError(f"Cannot parse truncation rule {text!r}")


def make_fragment_set(grid: Grid, curves: Sequence[Tuple[int, Sequence[int], Sequence[float]]]) -> FragmentSet:
    """Build a FragmentSet from (curve_id, support, values) triples."""
    fragments = []
    for curve_id, support, values in curves:
        support = np.asarray(support, dtype=int)
        values = np.asarray(values, dtype=float)
        if support.size == 0:
            raise InvalidInputError(f"Curve {curve_id} has an empty support")
        if support.shape != values.shape:
            raise InvalidInputError(f"Curve {curve_id}: {support.size} nodes but {values.size} values")
        if np.any(np.diff(support) <= 0):
            raise InvalidInputError(f"Curve {curve_id}: support must be strictly increasing")
        if support[0] < 0 or support[-1] >= grid.n:
            raise InvalidInputError(f"Curve {curve_id}: support outside 0..{grid.n - 1}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError(f"Curve {curve_id} has non-finite values")
        fragments.append(Fragment(curve_id=int(curve_id), support=support, values=values))
    return FragmentSet(grid=grid, curves=tuple(fragments))


def _accumulate_products(frags: FragmentSet) -> Tuple[np.ndarray, np.ndarray]:
    n = frags.grid.n
    sums = np.zeros((n, n))
    counts = np.zeros((n, n), dtype=int)
    for curve in frags.curves:
        block = np.ix_(curve.support, curve.support)
        sums[block] += np.outer(curve.values, curve.values)
        counts[block] += 1
    return sums, counts


def pairwise_empirical(frags: FragmentSet, min_count: int = ESTIMATION['min_count']) -> PartialCovEstimate:
    """Average of X_j(s) X_j(t) over the curves observed at both s and t.

    Entries seen by fewer than min_count curves are masked out. Curves are
    taken as centered; no mean is subtracted.
    """
    if len(frags) == 0:
        raise EmptyEstimateError("No fragments to estimate from")
    sums, counts = _accumulate_products(frags)
    mask = counts >= min_count
    if not mask.any():
        raise EmptyEstimateError(
            f"No grid pair is observed by at least {min_count} curves ({len(frags)} curve(s) given)")
    values = np.where(mask, sums / np.maximum(counts, 1), 0.0)
    logger.info(f"Pairwise estimate from {len(frags)} curves covers {int(mask.sum())} entries")
    return PartialCovEstimate(values=values, count=counts, mask=mask, n_curves=len(frags))


def local_average_smooth(frags: FragmentSet, bandwidth: float = ESTIMATION['smooth_bandwidth'],
                         min_count: int = ESTIMATION['smooth_min_count'],
                         chunk: int = 256) -> PartialCovEstimate:
    """Nadaraya-Watson surface from within-curve cross-products.

    A product observed at (t_a, t_b) enters the estimate at (s, t) with weight
    g(max(|s - t_a|, |t - t_b|) / bandwidth), g a Gaussian cut off at
    CONFIG['estimation']['smooth_cutoff'] bandwidths. count(s, t) is the number
    of products within reach; the mask keeps entries with count >= min_count.
    """
    if bandwidth <= 0:
        raise InvalidInputError(f"Bandwidth {bandwidth} must be positive")
    if len(frags) == 0:
        raise EmptyEstimateError("No fragments to estimate from")
    grid = frags.grid
    nodes = grid.nodes
    sums, counts = _accumulate_products(frags)

    distance = np.abs(nodes[:, None] - nodes[None, :]) / bandwidth
    reach = distance <= ESTIMATION['smooth_cutoff']
    gauss = np.where(reach, np.exp(-0.5 * distance ** 2), 0.0)

    rows, cols = np.nonzero(counts)
    numerator = np.zeros((grid.n, grid.n))
    denominator = np.zeros((grid.n, grid.n))
    within = np.zeros((grid.n, grid.n))
    for start in range(0, rows.size, chunk):
        a = rows[start:start + chunk]
        b = cols[start:start + chunk]
        weights = np.minimum(gauss[:, None, a], gauss[None, :, b])
        hits = reach[:, None, a] & reach[None, :, b]
        numerator += weights @ sums[a, b]
        denominator += weights @ counts[a, b]
        within += hits.astype(float) @ counts[a, b]

    count = np.rint(within).astype(int)
    mask = (count >= min_count) & (denominator > 0)
    if not mask.any():
        raise EmptyEstimateError(f"No observation pair lies within bandwidth {bandwidth} of any grid pair")
    values = as_symmetric(np.where(mask, numerator / np.where(mask, denominator, 1.0), 0.0))
    logger.info(f"Smoothed estimate (bandwidth {bandwidth}) covers {int(mask.sum())} entries")
    return PartialCovEstimate(values=values, count=count, mask=mask, n_curves=len(frags))


def fve_rank(E: EigenDecomposition, fraction: float = ESTIMATION['fve_fraction']) -> int:
    """Smallest r whose leading r eigenvalues explain more than fraction of the positive trace."""
    if not 0.0 < fraction < 1.0:
        raise InvalidInputError(f"FVE fraction {fraction} must lie in (0, 1)")
    if E.source_dim == 0 or E.eigenvalues[0] <= 0:
        raise DegenerateOperatorError("FVE needs a positive leading eigenvalue")
    lam = np.clip(E.eigenvalues, 0.0, None)
    cumulative = np.cumsum(lam)
    return int(np.argmax(cumulative > fraction * cumulative[-1])) + 1


def schedule_exponents(alpha: float, beta: float, m: int) -> List[float]:
    """gamma_p = beta/(beta+2alpha+3/2) * (beta/(beta+alpha+1/2))^(p-1) for p = 1..m-1."""
    if alpha <= 0 or beta <= 0:
        raise InvalidInputError(f"Schedule needs alpha, beta > 0, got {alpha}, {beta}")
    head = beta / (beta + 2 * alpha + 1.5)
    ratio = beta / (beta + alpha + 0.5)
    return [head * ratio ** (p - 1) for p in range(1, m)]


def truncation_schedule(n: int, alpha: float, beta: float, m: int,
                        constant: float = ESTIMATION['schedule_constant']) -> List[int]:
    """N_p = ceil(constant * n^(gamma_p / beta)); empty for m < 2."""
    if m < 2:
        return []
    if n < 1:
        raise InvalidInputError(f"Sample count {n} must be positive")
    return [max(1, int(math.ceil(constant * n ** (gamma / beta))))
            for gamma in schedule_exponents(alpha, beta, m)]


def _coverage_gaps(est: PartialCovEstimate, domain: SerratedDomain) -> None:
    missing = domain.mask & ~est.mask
    if not missing.any():
        return
    nodes = domain.grid.nodes
    holes = []
    for j, iv in enumerate(domain.intervals, start=1):
        if missing[iv.a:iv.b + 1, iv.a:iv.b + 1].any():
            holes.append(f"{j} [{nodes[iv.a]:.4g}, {nodes[iv.b]:.4g}]")
    raise CoverageError(
        f"Estimate misses {int(missing.sum())} entries of the domain, inside interval(s) "
        f"{', '.join(holes)}; shrink the domain or lower the minimum count")


def _truncated_inverse(E: EigenDecomposition, requested: int, p: int,
                       warnings: List[str]) -> Tuple[np.ndarray, int]:
    dim = E.source_dim
    if requested > dim:
        message = f"Step {p}: rank {requested} exceeds separator size {dim}; clamped to {dim}"
        logger.warning(message)
        warnings.append(message)
        requested = dim
    positive = int(np.count_nonzero(E.eigenvalues > 0))
    if requested > positive:
        message = (f"Step {p}: eigenvalue {E.eigenvalues[requested - 1]:.3e} at rank {requested} "
                   f"is not positive; rank reduced to {positive}")
        logger.warning(message)
        warnings.append(message)
        requested = positive
    return truncated_pinv(E, rank=requested), requested


def estimate_canonical(est: PartialCovEstimate, domain: SerratedDomain, rule: TruncationRule,
                       rel_tol: float = TOLERANCES['pinv_rel_tol']) -> CompletionResult:
    """Regularized canonical completion of an estimated partial covariance.

    Steps run in ascending p; the S_p cross-blocks include the blocks filled at
    earlier steps. The output is symmetric and agrees with est on the domain,
    but is not guaranteed PSD.
    """
    n = domain.grid.n
    if est.values.shape != (n, n):
        raise InvalidInputError(f"Estimate of shape {est.values.shape} on a {n}-node grid")
    _coverage_gaps(est, domain)

    kernel = as_symmetric(np.where(domain.mask, est.values, 0.0))
    fixed = rule.step_ranks(domain.m, est.n_curves) if rule.kind in ('fixed', 'schedule') else None
    per_step: List[StepDiagnostics] = []
    warnings: List[str] = []
    for p in range(1, domain.m):
        regions = derived_regions(domain, p)
        K_J = kernel[np.ix_(regions.J, regions.J)]
        if rule.kind == 'full':
            inverse, diag = separator_inverse(K_J, rel_tol)
            diag.p = p
        else:
            E = sym_eigen(K_J)
            lam_min = float(E.eigenvalues[-1])
            if E.eigenvalues[0] <= 0:
                inverse = np.zeros_like(K_J)
                diag = StepDiagnostics(p=p, rank_used=0, lambda_min_J=lam_min, degenerate=True)
            else:
                requested = fve_rank(E, rule.fraction) if rule.kind == 'fve' else fixed[p - 1]
                inverse, rank = _truncated_inverse(E, requested, p, warnings)
                diag = StepDiagnostics(p=p, rank_used=rank, lambda_min_J=lam_min,
                                       lambda_at_rank=float(E.eigenvalues[rank - 1]))
        if diag.degenerate:
            message = f"Separator of step {p} is degenerate; cross-covariance through it set to zero"
            logger.warning(message)
            warnings.append(message)
        propagate_through_separator(kernel, regions.S, regions.J, regions.D, inverse)
        per_step.append(diag)

    residuals = verify_separation(kernel, domain, rel_tol)
    for diag in per_step:
        diag.separation_residual_max = float(residuals[diag.p - 1])
    min_eigenvalue = float(sym_eigen(kernel).eigenvalues[-1])
    if min_eigenvalue < 0:
        logger.info(f"Estimated completion has minimum eigenvalue {min_eigenvalue:.3e}")
    return CompletionResult(kernel=kernel, per_step=per_step, order=list(range(1, domain.m)),
                            min_eigenvalue=min_eigenvalue, warnings=warnings)


def estimate_report(result: CompletionResult, rule: TruncationRule) -> Dict:
    """JSON-ready estimator report with per-step N_p and the minimum output eigenvalue."""
    report = result.to_dict()
    report['rule'] = rule.describe()
    report['N_p'] = [step.rank_used for step in result.per_step]
    return report
