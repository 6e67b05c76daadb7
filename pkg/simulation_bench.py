"""
Monte Carlo benchmark: test kernels, built-in domains, Gaussian fragment
generation, error metrics and the replication runner.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

from config import CONFIG, get_thread_cap
from domain_geometry import Grid, SerratedDomain, make_grid, make_serrated_domain
from estimation import (
    FragmentSet,
    PartialCovEstimate,
    estimate_canonical,
    local_average_smooth,
    make_fragment_set,
    pairwise_empirical,
    parse_rule,
)
from exceptions import (
    InvalidConfigError,
    InvalidDomainError,
    InvalidInputError,
    KernelCompError,
    NotPSDError,
    UndefinedMetricError,
)
from spectral_linalg import as_symmetric, psd_certify, psd_factor

logger = logging.getLogger(__name__)

SIMULATION = CONFIG['simulation']
ESTIMATION = CONFIG['estimation']

REGIMES = ('regular', 'sparse')
ESTIMATORS = ('pairwise', 'smooth', 'exact')
INTERVAL_LAWS = ('uniform', 'balanced')


def _shifted_legendre(t: np.ndarray) -> np.ndarray:
    return np.stack([
        np.ones_like(t),
        np.sqrt(3.0) * (2 * t - 1),
        np.sqrt(5.0) * (6 * t ** 2 - 6 * t + 1),
        np.sqrt(7.0) * (20 * t ** 3 - 30 * t ** 2 + 12 * t - 1),
    ])


def kernel_value(kernel_id: str, s, t):
    """Evaluate K1 (rank 4), K2 (Brownian) or K3 (Gaussian-modulated) at (s, t); broadcasts."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if kernel_id == 'K1':
        weights = 1.0 / 2.0 ** np.arange(4)
        phi_s, phi_t = _shifted_legendre(s), _shifted_legendre(t)
        value = np.tensordot(weights, phi_s * phi_t, axes=1)
    elif kernel_id == 'K2':
        value = np.minimum(s, t)
    elif kernel_id == 'K3':
        value = 10.0 * s * t * np.exp(-10.0 * (s - t) ** 2)
    else:
        raise InvalidInputError(f"Unknown kernel {kernel_id!r}; expected one of {CONFIG['kernels']}")
    return float(value) if value.ndim == 0 else value


def kernel_matrix(kernel_id: str, grid: Grid) -> np.ndarray:
    nodes = grid.nodes
    return as_symmetric(kernel_value(kernel_id, nodes[:, None], nodes[None, :]))


def builtin_domain(j: int, grid: Grid) -> SerratedDomain:
    intervals = CONFIG['builtin_domains'].get(j)
    if intervals is None:
        raise InvalidDomainError(f"Built-in domain {j!r} does not exist; choose 1..{len(CONFIG['builtin_domains'])}")
    return make_serrated_domain(grid, intervals)


def sample_fragments(K, domain: SerratedDomain, n_curves: int, regime: str = 'regular', seed=0,
                     points_per_curve: int = SIMULATION['points_per_curve'],
                     interval_law: str = SIMULATION['interval_law']) -> FragmentSet:
    """Draw centered Gaussian curves, each observed on one interval of the cover.

    'uniform' picks the interval of every curve at random, 'balanced' cycles
    through the intervals. The sparse regime keeps points_per_curve nodes of
    each curve, chosen without replacement.
    """
    K = as_symmetric(K)
    if K.shape != (domain.grid.n, domain.grid.n):
        raise InvalidInputError(f"Kernel of shape {K.shape} on a {domain.grid.n}-node grid")
    if regime not in REGIMES:
        raise InvalidConfigError(f"Unknown regime {regime!r}")
    if interval_law not in INTERVAL_LAWS:
        raise InvalidConfigError(f"Unknown interval law {interval_law!r}")
    if regime == 'sparse' and points_per_curve < 2:
        raise InvalidConfigError(f"Sparse curves need at least 2 points, got {points_per_curve}")
    cert = psd_certify(K, CONFIG['tolerances']['completion_psd_tol'])
    if not cert.is_psd:
        raise NotPSDError(f"Cannot sample from a kernel with minimum eigenvalue {cert.min_eigenvalue:.3e}",
                          min_eigenvalue=cert.min_eigenvalue)

    rng = np.random.default_rng(seed)
    factors = [psd_factor(K[iv.a:iv.b + 1, iv.a:iv.b + 1]) for iv in domain.intervals]
    if interval_law == 'uniform':
        picks = rng.integers(0, domain.m, size=n_curves)
    else:
        picks = np.arange(n_curves) % domain.m

    curves = []
    for i, j in enumerate(picks):
        iv = domain.intervals[j]
        F = factors[j]
        values = F @ rng.standard_normal(F.shape[1])
        support = iv.indices
        if regime == 'sparse':
            keep = np.sort(rng.choice(iv.size, size=min(points_per_curve, iv.size), replace=False))
            support, values = support[keep], values[keep]
        curves.append((i, support, values))
    return make_fragment_set(domain.grid, curves)


def ise(A, B, region_mask, grid: Grid) -> float:
    """Integrated squared error of A - B over the masked region."""
    diff = np.asarray(A, dtype=float) - np.asarray(B, dtype=float)
    return float(grid.weight ** 2 * np.sum(diff[np.asarray(region_mask, dtype=bool)] ** 2))


def rre(ise_out: float, ise_in: float, norm_out: float, norm_in: float) -> float:
    """Ratio of the relative error off the domain to the relative error on it."""
    if norm_out == 0 or norm_in == 0 or ise_in == 0:
        raise UndefinedMetricError(
            f"RRE undefined: norm_out={norm_out}, norm_in={norm_in}, ise_in={ise_in}")
    return (ise_out / norm_out) / (ise_in / norm_in)


def true_squared_norms(K, domain: SerratedDomain) -> Tuple[float, float]:
    """Squared L2 norms of K over the domain and over its complement."""
    zero = np.zeros_like(np.asarray(K, dtype=float))
    return ise(K, zero, domain.mask, domain.grid), ise(K, zero, ~domain.mask, domain.grid)


@dataclass
class ExperimentConfig:
    kernel: str = 'K2'
    domain: Union[int, List[List[float]]] = 2
    n_curves: int = 100
    grid_n: int = SIMULATION['grid_n']
    regime: str = 'regular'
    points_per_curve: int = SIMULATION['points_per_curve']
    rule: Optional[str] = None
    replications: int = SIMULATION['replications']
    base_seed: int = SIMULATION['base_seed']
    estimator: Optional[str] = None
    bandwidth: float = ESTIMATION['smooth_bandwidth']
    min_count: Optional[int] = None
    interval_law: str = SIMULATION['interval_law']
    quadrature: str = SIMULATION['quadrature']
    custom_kernel: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def from_dict(cls, data: Dict, custom_kernel: Optional[np.ndarray] = None) -> 'ExperimentConfig':
        known = {f.name for f in fields(cls)} - {'custom_kernel'}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidConfigError(f"Unknown experiment config key(s): {', '.join(unknown)}")
        try:
            cfg = cls(**data, custom_kernel=custom_kernel)
            cfg.validate()
        except TypeError as e:
            raise InvalidConfigError(f"Malformed experiment config: {e}") from e
        return cfg

    @property
    def resolved_estimator(self) -> str:
        if self.estimator:
            return self.estimator
        return 'pairwise' if self.regime == 'regular' else 'smooth'

    @property
    def resolved_rule(self) -> str:
        if self.rule:
            return self.rule
        ranks = SIMULATION['fixed_ranks']
        if self.custom_kernel is None and self.kernel in ranks:
            return f"fixed:{ranks[self.kernel]}"
        return ESTIMATION['default_rule']

    @property
    def resolved_min_count(self) -> int:
        if self.min_count is not None:
            return self.min_count
        if self.resolved_estimator == 'smooth':
            return ESTIMATION['smooth_min_count']
        return ESTIMATION['min_count']

    def validate(self) -> None:
        if self.custom_kernel is None and self.kernel not in CONFIG['kernels']:
            raise InvalidConfigError(f"Unknown kernel {self.kernel!r}")
        if self.replications < 1:
            raise InvalidConfigError(f"replications must be at least 1, got {self.replications}")
        if self.n_curves < 1:
            raise InvalidConfigError(f"n_curves must be at least 1, got {self.n_curves}")
        if self.regime not in REGIMES:
            raise InvalidConfigError(f"Unknown regime {self.regime!r}")
        if self.regime == 'sparse' and self.points_per_curve < 2:
            raise InvalidConfigError(f"Sparse curves need at least 2 points, got {self.points_per_curve}")
        if self.resolved_estimator not in ESTIMATORS:
            raise InvalidConfigError(f"Unknown estimator {self.estimator!r}")
        if self.interval_law not in INTERVAL_LAWS:
            raise InvalidConfigError(f"Unknown interval law {self.interval_law!r}")
        if self.bandwidth <= 0:
            raise InvalidConfigError(f"bandwidth must be positive, got {self.bandwidth}")
        parse_rule(self.resolved_rule)

    def build(self) -> Tuple[SerratedDomain, np.ndarray]:
        grid = make_grid(self.grid_n, self.quadrature)
        if isinstance(self.domain, (int, np.integer)) and not isinstance(self.domain, bool):
            domain = builtin_domain(int(self.domain), grid)
        else:
            domain = make_serrated_domain(grid, self.domain)
        if self.custom_kernel is not None:
            K = as_symmetric(self.custom_kernel)
            if K.shape != (grid.n, grid.n):
                raise InvalidConfigError(f"Custom kernel of shape {K.shape} does not match grid_n={grid.n}")
        else:
            K = kernel_matrix(self.kernel, grid)
        return domain, K

    def to_dict(self) -> Dict:
        data = asdict(self)
        data.pop('custom_kernel')
        data['rule'] = self.resolved_rule
        data['estimator'] = self.resolved_estimator
        data['min_count'] = self.resolved_min_count
        if self.custom_kernel is not None:
            data['kernel'] = 'custom'
        return data


@dataclass
class ReplicationResult:
    replication: int
    ise_in: float
    ise_out: float
    rre: float
    min_eigenvalue: float


def _median_mad(values: pd.Series) -> Dict[str, Optional[float]]:
    values = values.dropna()
    if values.empty:
        return {'median': None, 'mad': None}
    median = float(values.median())
    return {'median': median, 'mad': float((values - median).abs().mean())}


@dataclass
class ExperimentReport:
    config: Dict
    m: int
    norm_in: float
    norm_out: float
    replications: List[ReplicationResult]

    @classmethod
    def from_dict(cls, data: Dict) -> 'ExperimentReport':
        try:
            rows = [ReplicationResult(**{k: (float('nan') if v is None else v) for k, v in row.items()})
                    for row in data['replications']]
            return cls(config=data['config'], m=int(data['m']),
                       norm_in=float(data['squared_norms']['in']),
                       norm_out=float(data['squared_norms']['out']), replications=rows)
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidInputError(f"Not an experiment report: {e}") from e

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.replications],
                            columns=['replication', 'ise_in', 'ise_out', 'rre', 'min_eigenvalue'])

    def summary(self) -> Dict[str, Dict[str, Optional[float]]]:
        frame = self.to_frame()
        return {col: _median_mad(frame[col]) for col in ('ise_in', 'ise_out', 'rre')}

    def to_dict(self) -> Dict:
        frame = self.to_frame()
        records = frame.astype(object).where(frame.notna(), None).to_dict(orient='records')
        return {
            'config': self.config,
            'm': self.m,
            'squared_norms': {'in': self.norm_in, 'out': self.norm_out},
            'summary': self.summary(),
            'replications': records,
        }


def _exact_estimate(K: np.ndarray, domain: SerratedDomain, n_curves: int) -> PartialCovEstimate:
    mask = domain.mask
    return PartialCovEstimate(values=np.where(mask, K, 0.0), count=np.where(mask, n_curves, 0),
                              mask=mask.copy(), n_curves=n_curves)


def run_replication(cfg: ExperimentConfig, domain: SerratedDomain, K: np.ndarray,
                    norms: Tuple[float, float], r: int) -> ReplicationResult:
    """One replication, seeded from (base_seed, r) only."""
    seed = np.random.SeedSequence([cfg.base_seed, r])
    rule = parse_rule(cfg.resolved_rule)
    try:
        estimator = cfg.resolved_estimator
        if estimator == 'exact':
            est = _exact_estimate(K, domain, cfg.n_curves)
        else:
            frags = sample_fragments(K, domain, cfg.n_curves, cfg.regime, seed,
                                     cfg.points_per_curve, cfg.interval_law)
            if estimator == 'pairwise':
                est = pairwise_empirical(frags, cfg.resolved_min_count)
            else:
                est = local_average_smooth(frags, cfg.bandwidth, cfg.resolved_min_count)
        result = estimate_canonical(est, domain, rule)
    except KernelCompError as e:
        e.args = (f"replication {r}: {e}",) + e.args[1:]
        raise

    grid = domain.grid
    ise_in = ise(result.kernel, K, domain.mask, grid)
    ise_out = ise(result.kernel, K, ~domain.mask, grid)
    try:
        ratio = rre(ise_out, ise_in, norms[1], norms[0])
    except UndefinedMetricError as e:
        logger.warning(f"Replication {r}: {e}")
        ratio = float('nan')
    return ReplicationResult(replication=r, ise_in=ise_in, ise_out=ise_out, rre=ratio,
                             min_eigenvalue=result.min_eigenvalue)


def run_experiment(cfg: ExperimentConfig, threads: Optional[int] = None) -> ExperimentReport:
    cfg.validate()
    domain, K = cfg.build()
    norms = true_squared_norms(K, domain)
    workers = threads or get_thread_cap()
    logger.info(f"Running {cfg.replications} replication(s) of {cfg.resolved_rule} on "
                f"{domain.m} interval(s), n={cfg.n_curves}, {workers} worker(s)")

    if workers == 1:
        results = [run_replication(cfg, domain, K, norms, r) for r in range(cfg.replications)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda r: run_replication(cfg, domain, K, norms, r),
                                    range(cfg.replications)))
    results.sort(key=lambda res: res.replication)
    return ExperimentReport(config=cfg.to_dict(), m=domain.m, norm_in=norms[0], norm_out=norms[1],
                            replications=results)


def plot_frame(reports: Sequence[ExperimentReport]) -> pd.DataFrame:
    """Per-replication RRE rows keyed by m and n, with the median RRE of each report."""
    frames = []
    for report in reports:
        frame = report.to_frame()[['replication', 'rre']].copy()
        frame.insert(0, 'kernel', report.config.get('kernel'))
        frame.insert(1, 'm', report.m)
        frame.insert(2, 'n_curves', report.config.get('n_curves'))
        frame['median_rre'] = report.summary()['rre']['median']
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=['kernel', 'm', 'n_curves', 'replication', 'rre', 'median_rre'])
    return pd.concat(frames, ignore_index=True)


def rre_boxplot(frame: pd.DataFrame, title: str = 'Ratio of relative errors by number of intervals') -> go.Figure:
    fig = px.box(
        frame,
        x='m',
        y='rre',
        color='kernel',
        points='all',
        title=title,
    )
    fig.update_layout(
        xaxis_title='m',
        yaxis_title='RRE',
        yaxis_type='log',
        height=450,
        margin=dict(t=50, b=40, l=60, r=20),
    )
    return fig
