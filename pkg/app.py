import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from completion_core import (
    canonical_completion,
    make_partial_covariance,
    perturbed_completion,
    random_contraction_set,
    uniqueness_check,
)
from config import CONFIG
from data_sanitizer import DataSanitizer
from domain_geometry import derived_regions, regions_to_dict
from estimation import estimate_canonical, estimate_report, local_average_smooth, pairwise_empirical, parse_rule
from exceptions import InvalidConfigError, InvalidContractionError, InvalidInputError, KernelCompError, NumericError
from simulation_bench import ExperimentConfig, ExperimentReport, plot_frame, rre_boxplot, run_experiment
from spectral_linalg import psd_certify

logger = logging.getLogger(__name__)


def _load_partial_covariance(matrix_path: Path, domain_path: Path):
    domain = DataSanitizer.read_domain(domain_path)
    values = DataSanitizer.read_matrix(matrix_path)
    if values.shape[0] != domain.grid.n:
        raise InvalidInputError(
            f"Matrix {matrix_path} has dimension {values.shape[0]} but the domain grid has {domain.grid.n} nodes")
    return make_partial_covariance(domain, values)


def _parse_order(text: str):
    if text in ('ascending', 'descending'):
        return text
    try:
        return [int(p) for p in text.split(',')]
    except ValueError as e:
        raise InvalidInputError(f"--order must be ascending, descending or a comma list of steps, got {text!r}") from e


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(f"{out.stem}_{suffix}.json")


def cmd_complete(args) -> int:
    pc = _load_partial_covariance(args.matrix, args.domain)
    result = canonical_completion(pc, _parse_order(args.order))
    DataSanitizer.write_matrix(result.kernel, args.out)

    diagnostics = result.to_dict()
    diagnostics['domain'] = pc.domain.to_dict()
    diagnostics['regions'] = [regions_to_dict(derived_regions(pc.domain, p)) for p in range(1, pc.domain.m)]
    DataSanitizer.write_json(diagnostics, _sidecar(args.out, 'diagnostics'))
    logger.info(f"Canonical completion written to {args.out}")
    return 0


def cmd_estimate(args) -> int:
    domain = DataSanitizer.read_domain(args.domain)
    frags, notes = DataSanitizer.read_fragments(args.fragments, domain)
    rule = parse_rule(args.rule)
    if frags.is_dense:
        estimator = 'pairwise'
        min_count = args.min_count if args.min_count is not None else CONFIG['estimation']['min_count']
        est = pairwise_empirical(frags, min_count)
    else:
        estimator = 'smooth'
        min_count = args.min_count if args.min_count is not None else CONFIG['estimation']['smooth_min_count']
        est = local_average_smooth(frags, CONFIG['estimation']['smooth_bandwidth'], min_count)
    result = estimate_canonical(est, domain, rule)
    DataSanitizer.write_matrix(result.kernel, args.out)

    report = estimate_report(result, rule)
    report.update({'estimator': estimator, 'min_count': min_count, 'n_curves': len(frags),
                   'notes': notes, 'domain': domain.to_dict()})
    DataSanitizer.write_json(report, _sidecar(args.out, 'report'))
    logger.info(f"Estimated completion from {len(frags)} curve(s) written to {args.out}")
    return 0


def cmd_check_unique(args) -> int:
    pc = _load_partial_covariance(args.matrix, args.domain)
    report = uniqueness_check(pc, rel_tol=args.tol).to_dict()
    if args.out:
        DataSanitizer.write_json(report, args.out)
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


def cmd_simulate(args) -> int:
    data = DataSanitizer.read_json(args.config)
    entries = data if isinstance(data, list) else [data]
    if not entries or not all(isinstance(entry, dict) for entry in entries):
        raise InvalidConfigError(f"{args.config} must hold an experiment config object or a list of them")

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for i, entry in enumerate(entries):
        entry = dict(entry)
        custom = None
        if 'kernel_csv' in entry:
            custom = DataSanitizer.read_matrix(Path(args.config).parent / entry.pop('kernel_csv'))
        if args.seed is not None:
            entry['base_seed'] = args.seed
        cfg = ExperimentConfig.from_dict(entry, custom_kernel=custom)
        report = run_experiment(cfg)

        dest = args.out_dir if len(entries) == 1 else args.out_dir / f"{i:03d}"
        dest.mkdir(parents=True, exist_ok=True)
        DataSanitizer.write_json(report.to_dict(), dest / 'report.json')
        DataSanitizer.write_frame(report.to_frame(), dest / 'replications.csv')
        DataSanitizer.write_frame(plot_frame([report]), dest / 'plot_data.csv')
        summary = report.summary()
        logger.info(f"Experiment {i}: median ISE in {summary['ise_in']['median']}, "
                    f"out {summary['ise_out']['median']}; results in {dest}")
    return 0


def cmd_perturb(args) -> int:
    if not 0.0 <= args.norm <= 1.0:
        raise InvalidContractionError(f"--norm {args.norm} must lie in [0, 1]")
    if args.count < 1:
        raise InvalidInputError(f"--count {args.count} must be positive")
    pc = _load_partial_covariance(args.matrix, args.domain)
    canonical = canonical_completion(pc)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for k in range(args.count):
        psis = random_contraction_set(pc.domain, args.norm, [args.seed, k])
        kernel = perturbed_completion(canonical, pc, psis)
        path = args.out_dir / f"perturbed_{k:03d}.csv"
        DataSanitizer.write_matrix(kernel, path)
        cert = psd_certify(kernel, CONFIG['tolerances']['completion_psd_tol'])
        files.append({'file': path.name, 'min_eigenvalue': cert.min_eigenvalue, 'is_psd': cert.is_psd})
    DataSanitizer.write_json({'norm': args.norm, 'seed': args.seed, 'completions': files},
                             args.out_dir / 'perturb_summary.json')
    logger.info(f"Wrote {args.count} perturbed completion(s) to {args.out_dir}")
    return 0


def cmd_export_plot(args) -> int:
    reports = [ExperimentReport.from_dict(DataSanitizer.read_json(path)) for path in args.reports]
    frame = plot_frame(reports)
    DataSanitizer.write_frame(frame, args.out)
    html = args.out.with_suffix('.html')
    rre_boxplot(frame).write_html(html, include_plotlyjs='cdn', div_id='rre-boxplot')
    logger.info(f"Plot data written to {args.out}, boxplot to {html}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Covariance completion from serrated domains: complete, estimate, simulate."
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    complete = subparsers.add_parser("complete", help="Canonical completion of a partial covariance.")
    complete.add_argument("matrix", type=Path, help="Matrix CSV with values on the domain")
    complete.add_argument("domain", type=Path, help="Domain JSON")
    complete.add_argument("--order", default="ascending",
                          help="ascending, descending or a comma list of merge steps")
    complete.add_argument("--out", type=Path, required=True, help="Output matrix CSV")
    complete.set_defaults(func=cmd_complete)

    estimate = subparsers.add_parser("estimate", help="Estimate the canonical completion from fragments.")
    estimate.add_argument("fragments", type=Path, help="Fragment CSV with curve_id, t, value")
    estimate.add_argument("domain", type=Path, help="Domain JSON")
    estimate.add_argument("--rule", default=CONFIG['estimation']['default_rule'],
                          help="fve:<f>, fixed:<N>[,<N>...], schedule:<alpha>,<beta> or full")
    estimate.add_argument("--min-count", type=int, default=None,
                          help="Minimum number of curves (or products in reach) per entry")
    estimate.add_argument("--out", type=Path, required=True, help="Output matrix CSV")
    estimate.set_defaults(func=cmd_estimate)

    simulate = subparsers.add_parser("simulate", help="Run a Monte Carlo experiment.")
    simulate.add_argument("config", type=Path, help="Experiment config JSON (object or list)")
    simulate.add_argument("--seed", type=int, default=None, help="Override the base seed")
    simulate.add_argument("--out-dir", type=Path, required=True)
    simulate.set_defaults(func=cmd_simulate)

    unique = subparsers.add_parser("check-unique", help="Test whether the completion is unique.")
    unique.add_argument("matrix", type=Path)
    unique.add_argument("domain", type=Path)
    unique.add_argument("--tol", type=float, default=CONFIG['tolerances']['uniqueness_rel_tol'])
    unique.add_argument("--out", type=Path, default=None, help="Also write the report here")
    unique.set_defaults(func=cmd_check_unique)

    perturb = subparsers.add_parser("perturb", help="Sample non-canonical completions.")
    perturb.add_argument("matrix", type=Path)
    perturb.add_argument("domain", type=Path)
    perturb.add_argument("--norm", type=float, default=1.0, help="Operator norm of each contraction")
    perturb.add_argument("--seed", type=int, default=0)
    perturb.add_argument("--count", type=int, default=1)
    perturb.add_argument("--out-dir", type=Path, required=True)
    perturb.set_defaults(func=cmd_perturb)

    export = subparsers.add_parser("export-plot", help="RRE plot data and boxplot from reports.")
    export.add_argument("reports", type=Path, nargs="+", help="report.json files from simulate")
    export.add_argument("--out", type=Path, required=True, help="Plot-data CSV; the HTML goes next to it")
    export.set_defaults(func=cmd_export_plot)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO)
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args))
    except KernelCompError as e:
        logger.error(f"{args.command} failed: {str(e)}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except np.linalg.LinAlgError as e:
        logger.error(f"{args.command} failed in linear algebra: {str(e)}")
        print(f"error: {e}", file=sys.stderr)
        return NumericError.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
