import json
import logging
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import pandas as pd

from domain_geometry import SerratedDomain, inscribe_band, make_grid, make_serrated_domain
from estimation import FragmentSet, make_fragment_set
from exceptions import EmptyEstimateError, InvalidDomainError, InvalidInputError, KernelCompError
from simulation_bench import builtin_domain

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FLOAT_FORMAT = '%.17g'


class DataSanitizer:
    # Columns a fragment file must provide after header normalization
    REQUIRED_COLUMNS = {
        'fragments': ['curve_id', 't', 'value'],
    }

    COLUMN_ALIASES = {
        'id': 'curve_id',
        'curve': 'curve_id',
        'curveid': 'curve_id',
        'subject': 'curve_id',
        'x': 't',
        'time': 't',
        'argument': 't',
        'y': 'value',
        'val': 'value',
        'observation': 'value',
    }

    @staticmethod
    def normalize_columns(df: pd.DataFrame) -> pd.DataFrame:
        df.columns = df.columns.astype(str).str.strip().str.lower().str.replace(' ', '_')
        return df.rename(columns={c: DataSanitizer.COLUMN_ALIASES.get(c, c) for c in df.columns})

    @staticmethod
    def read_matrix(path: PathLike) -> np.ndarray:
        """Read a matrix CSV: first line 'n=<dim>', then dim rows of dim reals."""
        try:
            with open(path, 'r', encoding='utf-8') as fh:
                header = fh.readline().strip()
            if not header.startswith('n='):
                raise InvalidInputError(f"Matrix file {path} must start with 'n=<dim>', got {header!r}")
            dim = int(header[2:])
            df = pd.read_csv(path, skiprows=1, header=None, float_precision='round_trip')
            values = df.to_numpy(dtype=float)
        except KernelCompError:
            raise
        except (OSError, ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            logger.error(f"Error reading matrix file {path}: {str(e)}")
            raise InvalidInputError(f"Cannot read matrix file {path}: {e}") from e
        if values.shape != (dim, dim):
            raise InvalidInputError(f"Matrix file {path} declares n={dim} but holds shape {values.shape}")
        logger.info(f"Read {dim}x{dim} matrix from {path}")
        return values

    @staticmethod
    def write_matrix(K: np.ndarray, path: PathLike) -> None:
        K = np.asarray(K, dtype=float)
        with open(path, 'w', encoding='utf-8', newline='') as fh:
            fh.write(f"n={K.shape[0]}\n")
            pd.DataFrame(K).to_csv(fh, header=False, index=False, float_format=FLOAT_FORMAT,
                                   lineterminator='\n')
        logger.info(f"Wrote {K.shape[0]}x{K.shape[1]} matrix to {path}")

    @staticmethod
    def domain_from_dict(data: Dict) -> SerratedDomain:
        """Domain from {'grid_n', and one of 'intervals' | 'builtin' | 'band'}."""
        if not isinstance(data, dict) or 'grid_n' not in data:
            raise InvalidDomainError("Domain description needs a 'grid_n' field")
        grid = make_grid(data['grid_n'], data.get('quadrature', 'spacing'))
        sources = [key for key in ('intervals', 'builtin', 'band') if key in data]
        if len(sources) != 1:
            raise InvalidDomainError(
                f"Domain description needs exactly one of intervals, builtin, band; got {sources or 'none'}")
        if 'intervals' in data:
            return make_serrated_domain(grid, data['intervals'])
        if 'builtin' in data:
            return builtin_domain(data['builtin'], grid)
        band = data['band']
        try:
            return inscribe_band(grid, float(band['delta']), int(band['m']))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, KernelCompError):
                raise
            raise InvalidDomainError(f"Band description needs numeric 'delta' and 'm': {band!r}") from e

    @staticmethod
    def read_domain(path: PathLike) -> SerratedDomain:
        try:
            with open(path, 'r', encoding='utf-8') as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Error reading domain file {path}: {str(e)}")
            raise InvalidDomainError(f"Cannot read domain file {path}: {e}") from e
        domain = DataSanitizer.domain_from_dict(data)
        logger.info(f"Domain from {path}: {domain.m} interval(s) on {domain.grid.n} nodes")
        return domain

    @staticmethod
    def read_fragments(path: PathLike, domain: SerratedDomain) -> Tuple[FragmentSet, List[str]]:
        """Read curve_id,t,value rows; t is snapped to the domain's grid.

        Rows landing on the same node of the same curve are averaged. Returns
        the fragments and a list of notes about what was cleaned.
        """
        try:
            df = pd.read_csv(path, float_precision='round_trip')
        except pd.errors.EmptyDataError as e:
            raise EmptyEstimateError(f"Fragment file {path} is empty") from e
        except (OSError, pd.errors.ParserError) as e:
            logger.error(f"Error reading fragment file {path}: {str(e)}")
            raise InvalidInputError(f"Cannot read fragment file {path}: {e}") from e
        if df.empty:
            raise EmptyEstimateError(f"Fragment file {path} has no rows")

        df = DataSanitizer.normalize_columns(df)
        missing_cols = [c for c in DataSanitizer.REQUIRED_COLUMNS['fragments'] if c not in df.columns]
        if missing_cols:
            logger.error(f"Missing required columns in fragment file: {missing_cols}")
            raise InvalidInputError(f"Fragment file {path} lacks column(s) {', '.join(missing_cols)}")

        notes: List[str] = []
        df = df[['curve_id', 't', 'value']].dropna(subset=['curve_id']).copy()
        df['t'] = pd.to_numeric(df['t'], errors='coerce')
        df['value'] = pd.to_numeric(df['value'], errors='coerce')
        bad = df['t'].isna() | df['value'].isna() | ~np.isfinite(df['value'])
        if bad.any():
            raise InvalidInputError(f"Fragment file {path} has {int(bad.sum())} non-numeric or non-finite row(s)")
        outside = (df['t'] < 0) | (df['t'] > 1)
        if outside.any():
            raise InvalidInputError(f"Fragment file {path} has {int(outside.sum())} argument(s) outside [0, 1]")

        grid = domain.grid
        df['node'] = np.ceil(df['t'].to_numpy() * (grid.n - 1) - 0.5 - 1e-9).astype(int)
        before = len(df)
        df = df.groupby(['curve_id', 'node'], sort=True, as_index=False)['value'].mean()
        if len(df) < before:
            notes.append(f"averaged {before - len(df)} duplicate row(s) on shared grid nodes")

        codes, _ = pd.factorize(df['curve_id'], sort=True)
        df['code'] = codes
        curves = [(int(code), group['node'].to_numpy(), group['value'].to_numpy())
                  for code, group in df.groupby('code', sort=True)]
        frags = make_fragment_set(grid, curves)
        logger.info(f"Read {len(frags)} curve(s) with {len(df)} observation(s) from {path}")
        return frags, notes

    @staticmethod
    def write_fragments(frags: FragmentSet, path: PathLike) -> None:
        nodes = frags.grid.nodes
        rows = [pd.DataFrame({'curve_id': curve.curve_id, 't': nodes[curve.support], 'value': curve.values})
                for curve in frags.curves]
        df = pd.concat(rows, ignore_index=True) if rows else pd.DataFrame(columns=['curve_id', 't', 'value'])
        df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')

    @staticmethod
    def write_frame(df: pd.DataFrame, path: PathLike) -> None:
        df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')

    @staticmethod
    def write_json(data: Dict, path: PathLike) -> None:
        with open(path, 'w', encoding='utf-8', newline='') as fh:
            json.dump(data, fh, sort_keys=True, indent=2, default=_json_default)
            fh.write('\n')

    @staticmethod
    def read_json(path: PathLike) -> Union[Dict, List]:
        try:
            with open(path, 'r', encoding='utf-8') as fh:
                return json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Error reading JSON file {path}: {str(e)}")
            raise InvalidInputError(f"Cannot read JSON file {path}: {e}") from e


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")
