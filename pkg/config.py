import logging
import os

logger = logging.getLogger(__name__)

CONFIG = {
    'tolerances': {
        # eigenvalues at or below rel_tol * lambda_1 are dropped from exact-input inverses
        'pinv_rel_tol': 1e-10,
        'partial_psd_tol': 1e-8,
        'completion_psd_tol': 1e-6,
        'uniqueness_rel_tol': 1e-6,
        'contraction_slack': 1e-10,
        'sqrt_neg_tol': 1e-8,
    },
    'estimation': {
        'min_count': 10,
        'fve_fraction': 0.95,
        'default_rule': 'fve:0.95',
        'smooth_bandwidth': 0.05,
        'smooth_min_count': 1,
        # Gaussian weights vanish beyond this many bandwidths
        'smooth_cutoff': 3.0,
        'schedule_constant': 1.0,
    },
    'simulation': {
        'grid_n': 100,
        'replications': 100,
        'base_seed': 0,
        'points_per_curve': 6,
        # weight 1/n: on 100 nodes only this rule keeps K2's squared norms within 2% of 0.1573 / 0.0094
        'quadrature': 'count',
        'interval_law': 'uniform',
        'fixed_ranks': {
            'K1': 4,
            'K2': 2,
            'K3': 2,
        },
    },
    'builtin_domains': {
        1: [[0, 3/5], [2/5, 1]],
        2: [[0, 3/5], [2/5, 1], [1/5, 4/5]],
        3: [[0, 3/5], [2/5, 1], [1/5, 4/5], [1/10, 7/10], [3/10, 9/10]],
        4: [[0, 3/5], [2/5, 1], [1/5, 4/5], [1/10, 7/10], [3/10, 9/10],
            [1/20, 13/20], [3/20, 15/20], [5/20, 17/20], [7/20, 19/20]],
        5: [[0, 3/5], [2/5, 1], [1/5, 4/5], [1/10, 7/10], [3/10, 9/10],
            [1/20, 13/20], [3/20, 15/20], [5/20, 17/20], [7/20, 19/20],
            [1/40, 25/40], [3/40, 27/40], [5/40, 29/40], [7/40, 31/40],
            [9/40, 33/40], [11/40, 35/40], [13/40, 37/40], [15/40, 39/40]],
    },
    'kernels': ['K1', 'K2', 'K3'],
    'threads_env': 'KERNELCOMP_THREADS',
}


def get_thread_cap() -> int:
    """Read the worker cap from the environment, falling back to a single thread."""
    raw = os.environ.get(CONFIG['threads_env'], '').strip()
    if not raw:
        return 1
    try:
        cap = int(raw)
    except ValueError:
        logger.warning(f"Ignoring {CONFIG['threads_env']}={raw!r}: not an integer")
        return 1
    if cap < 1:
        logger.warning(f"Ignoring {CONFIG['threads_env']}={raw!r}: must be positive")
        return 1
    return cap
