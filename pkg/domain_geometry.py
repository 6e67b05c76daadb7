import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Sequence, Tuple

import numpy as np

from exceptions import InfeasibleBandError, InvalidDomainError, InvalidGridError

logger = logging.getLogger(__name__)

# snapping slack for endpoints that land on a node up to rounding
_SNAP_EPS = 1e-9


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [0, 1] with a single quadrature weight shared by every node."""
    n: int
    weight: float

    @cached_property
    def nodes(self) -> np.ndarray:
        nodes = np.linspace(0.0, 1.0, self.n)
        nodes.flags.writeable = False
        return nodes

    @property
    def quadrature(self) -> str:
        return 'count' if self.weight == 1.0 / self.n else 'spacing'

    def snap_nearest(self, x: float) -> int:
        """Nearest node index, ties toward the lower index."""
        return int(math.ceil(x * (self.n - 1) - 0.5 - _SNAP_EPS))

    def snap_inward(self, left: float, right: float) -> Tuple[int, int]:
        return (int(math.ceil(left * (self.n - 1) - _SNAP_EPS)),
                int(math.floor(right * (self.n - 1) + _SNAP_EPS)))


@dataclass(frozen=True)
class IntervalIdx:
    a: int
    b: int

    @property
    def size(self) -> int:
        return self.b - self.a + 1

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.a, self.b + 1)

    def contains(self, i: int) -> bool:
        return self.a <= i <= self.b


@dataclass(frozen=True, eq=False)
class Regions:
    """Index sets for merge step p: separator J, new block D, earlier block S."""
    p: int
    J: np.ndarray
    D: np.ndarray
    S: np.ndarray


@dataclass(frozen=True)
class SerratedDomain:
    grid: Grid
    intervals: Tuple[IntervalIdx, ...]

    @property
    def m(self) -> int:
        return len(self.intervals)

    @cached_property
    def mask(self) -> np.ndarray:
        mask = np.zeros((self.grid.n, self.grid.n), dtype=bool)
        for iv in self.intervals:
            mask[iv.a:iv.b + 1, iv.a:iv.b + 1] = True
        mask.flags.writeable = False
        return mask

    def continuum_intervals(self) -> List[List[float]]:
        nodes = self.grid.nodes
        return [[float(nodes[iv.a]), float(nodes[iv.b])] for iv in self.intervals]

    def to_dict(self) -> Dict:
        return {'grid_n': self.grid.n, 'quadrature': self.grid.quadrature,
                'intervals': self.continuum_intervals()}


def make_grid(n: int, quadrature: str = 'spacing') -> Grid:
    """Build the uniform grid t_i = i/(n-1).

    quadrature='spacing' weights every node by 1/(n-1); 'count' uses 1/n.
    """
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 2:
        raise InvalidGridError(f"Grid needs at least 2 nodes, got {n!r}")
    n = int(n)
    if quadrature == 'spacing':
        weight = 1.0 / (n - 1)
    elif quadrature == 'count':
        weight = 1.0 / n
    else:
        raise InvalidGridError(f"Unknown quadrature convention {quadrature!r}")
    return Grid(n=n, weight=weight)


def _canonical_cover(grid: Grid, pairs: Sequence[Tuple[int, int]]) -> SerratedDomain:
    """Sort, drop nested or duplicate index intervals and check the cover invariants."""
    if not pairs:
        raise InvalidDomainError("Domain needs at least one interval")
    for a, b in pairs:
        if not (0 <= a <= b <= grid.n - 1):
            raise InvalidDomainError(
                f"Interval [{a}, {b}] holds no grid node inside 0..{grid.n - 1}")

    kept: List[IntervalIdx] = []
    for a, b in sorted(pairs, key=lambda ab: (ab[0], -ab[1])):
        if kept and b <= kept[-1].b:
            continue
        kept.append(IntervalIdx(int(a), int(b)))

    nodes = grid.nodes
    if kept[0].a != 0:
        raise InvalidDomainError(
            f"Cover starts at t={nodes[kept[0].a]:.6g}, not at 0")
    if kept[-1].b != grid.n - 1:
        raise InvalidDomainError(
            f"Cover ends at t={nodes[kept[-1].b]:.6g}, not at 1")
    for left, right in zip(kept[:-1], kept[1:]):
        if right.a > left.b:
            raise InvalidDomainError(
                f"Intervals [{nodes[left.a]:.6g}, {nodes[left.b]:.6g}] and "
                f"[{nodes[right.a]:.6g}, {nodes[right.b]:.6g}] do not overlap on the grid")
    return SerratedDomain(grid=grid, intervals=tuple(kept))


def make_serrated_domain(grid: Grid, intervals: Sequence[Sequence[float]]) -> SerratedDomain:
    pairs = []
    for raw in intervals:
        try:
            left, right = (float(x) for x in raw)
        except (TypeError, ValueError) as e:
            raise InvalidDomainError(f"Interval {raw!r} is not a pair of reals") from e
        if not (math.isfinite(left) and math.isfinite(right)) or not (0.0 <= left < right <= 1.0):
            raise InvalidDomainError(f"Interval [{left}, {right}] must satisfy 0 <= l < r <= 1")
        pairs.append((grid.snap_nearest(left), grid.snap_nearest(right)))
    return _canonical_cover(grid, pairs)


def derived_regions(domain: SerratedDomain, p: int) -> Regions:
    """Regions of step p (1-based) of the ascending merge."""
    if not 1 <= p <= domain.m - 1:
        raise IndexError(f"Step p={p} out of range for a cover of {domain.m} interval(s)")
    prev = domain.intervals[p - 1]
    nxt = domain.intervals[p]
    return Regions(
        p=p,
        J=np.arange(nxt.a, prev.b + 1),
        D=np.arange(prev.b + 1, nxt.b + 1),
        S=np.arange(0, nxt.a),
    )


def regions_to_dict(regions: Regions) -> Dict:
    return {
        'p': int(regions.p),
        'S': [int(i) for i in regions.S],
        'J': [int(i) for i in regions.J],
        'D': [int(i) for i in regions.D],
    }


def membership(domain: SerratedDomain, i: int, j: int) -> bool:
    return any(iv.contains(i) and iv.contains(j) for iv in domain.intervals)


def band_mask(grid: Grid, delta: float) -> np.ndarray:
    nodes = grid.nodes
    return np.abs(nodes[:, None] - nodes[None, :]) <= delta + 1e-12


def _band_cover_ok(delta: float, m: int) -> bool:
    if m == 1:
        return delta >= 1.0 - 1e-12
    step = (1.0 - delta) / (m - 1)
    return step < delta - 1e-12


def minimal_band_intervals(delta: float) -> int:
    m = 1
    while not _band_cover_ok(delta, m):
        m += 1
    return m


def inscribe_band(grid: Grid, delta: float, m: int) -> SerratedDomain:
    """Serrated domain of m equal squares of side delta inscribed in {|s - t| <= delta}."""
    if not 0.0 < delta <= 1.0:
        raise InfeasibleBandError(f"Band half-width {delta} must lie in (0, 1]", minimal_m=1)
    if m < 1:
        raise InfeasibleBandError(f"Interval count {m} must be positive",
                                  minimal_m=minimal_band_intervals(delta))
    if not _band_cover_ok(delta, m):
        minimal_m = minimal_band_intervals(delta)
        raise InfeasibleBandError(
            f"A band of half-width {delta} cannot be covered by {m} overlapping squares; "
            f"use m >= {minimal_m}", minimal_m=minimal_m)

    if m == 1:
        continuum = [(0.0, 1.0)]
    else:
        step = (1.0 - delta) / (m - 1)
        continuum = [(j * step, min(j * step + delta, 1.0)) for j in range(m)]
    pairs = [grid.snap_inward(left, right) for left, right in continuum]
    domain = _canonical_cover(grid, pairs)
    logger.info(f"Inscribed {domain.m} square(s) in band delta={delta} on {grid.n} nodes")
    return domain
