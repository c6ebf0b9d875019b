"""Geometry, coarsened distances and circle averages over raster outcomes.

Outcome points are raster cell centers. Cell ``(r, c)`` has center
``(origin_x + (c + 0.5) * cell_size, origin_y + (r + 0.5) * cell_size)``,
so row 0 is the southernmost row.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .errors import AllRingsEmpty, BadBinary, DataError, DuplicateId

MAX_KAPPA = 6


@dataclass(frozen=True)
class RasterGrid:
    origin_x: float
    origin_y: float
    cell_size: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DataError(f"raster values must be a non-empty 2-d array, got shape {values.shape}")
        if not (math.isfinite(self.cell_size) and self.cell_size > 0):
            raise DataError(f"cell_size must be positive and finite, got {self.cell_size!r}")
        if not (math.isfinite(self.origin_x) and math.isfinite(self.origin_y)):
            raise DataError("raster origin must be finite")
        bad = ~np.isfinite(values)
        if bad.any():
            raise DataError(f"raster has {int(bad.sum())} non-finite value(s)")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def cell_center(self, r: int, c: int) -> tuple[float, float]:
        return (
            self.origin_x + (c + 0.5) * self.cell_size,
            self.origin_y + (r + 0.5) * self.cell_size,
        )

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(x, y)`` arrays of shape ``(n_rows, n_cols)``."""
        cols = self.origin_x + (np.arange(self.n_cols) + 0.5) * self.cell_size
        rows = self.origin_y + (np.arange(self.n_rows) + 0.5) * self.cell_size
        return np.meshgrid(cols, rows)

    def with_values(self, values) -> RasterGrid:
        return RasterGrid(self.origin_x, self.origin_y, self.cell_size, values)


@dataclass(frozen=True)
class InterventionSet:
    ids: tuple
    xy: np.ndarray
    assignment: np.ndarray | None = None
    p: float | None = None

    def __post_init__(self):
        xy = np.asarray(self.xy, dtype=float)
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise DataError(f"points must have shape (N, 2), got {xy.shape}")
        ids = tuple(self.ids)
        if len(ids) != xy.shape[0]:
            raise DataError("ids and coordinates differ in length")
        if len(ids) < 2:
            raise DataError("at least two intervention points are required")
        if len(set(ids)) != len(ids):
            seen, dups = set(), []
            for i in ids:
                if i in seen:
                    dups.append(i)
                seen.add(i)
            raise DuplicateId(f"duplicate intervention id(s): {sorted(set(map(str, dups)))}")
        if not np.isfinite(xy).all():
            raise DataError("intervention coordinates must be finite")
        if self.assignment is not None:
            z = np.asarray(self.assignment)
            if z.shape != (len(ids),) or not np.isin(z, (0, 1)).all():
                raise BadBinary("assignment must be a 0/1 vector with one entry per point")
            z = z.astype(np.int8)
            z.setflags(write=False)
            object.__setattr__(self, "assignment", z)
        if self.p is not None and not 0 < self.p < 1:
            raise DataError(f"assignment probability must lie in (0, 1), got {self.p!r}")
        xy.setflags(write=False)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return len(self.ids)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def min_distance(self) -> float:
        """Smallest pairwise distance between intervention points (``d0``)."""
        return float(pdist(self.xy).min())

    def check_spacing(self, floor: float) -> float:
        d0 = self.min_distance
        if d0 < floor:
            warnings.warn(
                f"intervention points are {d0:g} apart at minimum, below the spacing floor {floor:g}",
                stacklevel=2,
            )
        return d0

    def with_assignment(self, z, p=None) -> InterventionSet:
        return InterventionSet(self.ids, self.xy, z, self.p if p is None else p)

    def permuted(self, order) -> InterventionSet:
        order = np.asarray(order)
        z = None if self.assignment is None else self.assignment[order]
        return InterventionSet(tuple(self.ids[i] for i in order), self.xy[order], z, self.p)


def default_kappa(cell_size: float) -> int:
    """Coarsening digits giving rings about one cell wide."""
    return int(min(max(math.ceil(-math.log10(cell_size)), 0), MAX_KAPPA))


@dataclass(frozen=True)
class DistanceGrid:
    distances: np.ndarray
    kappa: int = 0
    codes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.distances, dtype=float))
        if d.ndim != 1 or d.size < 1:
            raise DataError("distance grid must be a non-empty 1-d sequence")
        if not isinstance(self.kappa, (int, np.integer)) or self.kappa < 0:
            raise DataError(f"kappa must be a non-negative integer, got {self.kappa!r}")
        if not np.isfinite(d).all() or (d < 0).any():
            raise DataError("distances must be finite and non-negative")
        if (np.diff(d) <= 0).any():
            raise DataError("distances must be strictly increasing")
        scale = 10.0 ** int(self.kappa)
        scaled = d * scale
        codes = np.rint(scaled)
        off = np.abs(scaled - codes) > 1e-9 * np.maximum(1.0, np.abs(scaled))
        if off.any():
            raise DataError(
                f"distance(s) {d[off].tolist()} are not multiples of 10^-{self.kappa}; "
                "no coarsened distance can equal them"
            )
        if (np.diff(codes) <= 0).any():
            raise DataError("distances collapse onto the same coarsened ring")
        d.setflags(write=False)
        codes = codes.astype(np.int64)
        codes.setflags(write=False)
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "kappa", int(self.kappa))
        object.__setattr__(self, "codes", codes)

    @classmethod
    def from_range(cls, dmin: float, dmax: float, dstep: float, kappa: int) -> DistanceGrid:
        if dstep <= 0:
            raise DataError("dstep must be positive")
        n = int(math.floor((dmax - dmin) / dstep + 1e-9)) + 1
        if n < 1:
            raise DataError("empty distance range")
        # round onto the coarsening lattice so 0.1 steps do not drift
        d = np.round(dmin + dstep * np.arange(n), int(kappa) + 6)
        return cls(d, kappa)

    def __len__(self):
        return self.distances.size

    def index_range(self, lo: float, hi: float) -> np.ndarray:
        """Indices of grid distances within ``[lo, hi]``."""
        d = self.distances
        tol = 1e-9 * max(1.0, abs(hi))
        idx = np.flatnonzero((d >= lo - tol) & (d <= hi + tol))
        if idx.size == 0:
            raise DataError(f"no grid distance lies in [{lo}, {hi}]")
        return idx


def coarsened_distance(a, b, kappa: int) -> float:
    """Euclidean distance rounded to ``kappa`` decimal digits (half up)."""
    scale = 10.0**kappa
    dist = math.hypot(a[0] - b[0], a[1] - b[1])
    return math.floor(dist * scale + 0.5) / scale


def ring_codes(dist, kappa: int) -> np.ndarray:
    """Integer ring labels ``floor(dist * 10^kappa + 0.5)``."""
    return np.floor(np.asarray(dist) * 10.0**kappa + 0.5).astype(np.int64)


@dataclass(frozen=True)
class CircleAverageTable:
    mu: np.ndarray
    ring_count: np.ndarray
    missing: np.ndarray
    distances: np.ndarray
    kappa: int = 0

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @property
    def n_distances(self) -> int:
        return self.mu.shape[1]

    def column(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Circle means at distance index ``k`` and the mask of usable rows."""
        valid = ~self.missing[:, k]
        return self.mu[:, k], valid

    def take_rows(self, order) -> CircleAverageTable:
        order = np.asarray(order)
        return CircleAverageTable(
            self.mu[order], self.ring_count[order], self.missing[order], self.distances, self.kappa
        )


class RingOperator:
    """Precomputed ring membership for a fixed geometry.

    ``apply`` turns a raster of values into the ``N x D`` circle-average table;
    reusing one operator across many rasters of identical geometry avoids
    recomputing distances.
    """

    def __init__(self, shape, origin, cell_size, pts: InterventionSet, dg: DistanceGrid):
        n_rows, n_cols = shape
        self.shape = (n_rows, n_cols)
        self.n = pts.n
        self.distances = dg.distances
        self.kappa = dg.kappa
        n_d = len(dg)
        # distances to the grid origin keep results invariant to translation
        rel = pts.xy - np.asarray(origin, dtype=float)
        reach = (dg.distances[-1] + 0.5 * 10.0 ** (-dg.kappa)) / cell_size + 1.0
        rows, cols = [], []
        for i in range(pts.n):
            cx, cy = rel[i] / cell_size
            c0 = max(int(math.floor(cx - 0.5 - reach)), 0)
            c1 = min(int(math.ceil(cx - 0.5 + reach)) + 1, n_cols)
            r0 = max(int(math.floor(cy - 0.5 - reach)), 0)
            r1 = min(int(math.ceil(cy - 0.5 + reach)) + 1, n_rows)
            if c0 >= c1 or r0 >= r1:
                continue
            cc, rr = np.meshgrid(np.arange(c0, c1), np.arange(r0, r1))
            dx = (cc + 0.5) * cell_size - rel[i, 0]
            dy = (rr + 0.5) * cell_size - rel[i, 1]
            code = ring_codes(np.hypot(dx, dy), dg.kappa).ravel()
            pos = np.searchsorted(dg.codes, code)
            pos_c = np.minimum(pos, n_d - 1)
            hit = dg.codes[pos_c] == code
            flat = (rr.ravel() * n_cols + cc.ravel())[hit]
            rows.append(i * n_d + pos_c[hit])
            cols.append(flat)
        if rows:
            row = np.concatenate(rows)
            col = np.concatenate(cols)
            order = np.lexsort((col, row))
            self.row, self.col = row[order], col[order]
        else:
            self.row = np.zeros(0, dtype=np.int64)
            self.col = np.zeros(0, dtype=np.int64)
        self.ring_count = np.bincount(self.row, minlength=self.n * n_d).reshape(self.n, n_d)
        self.missing = self.ring_count == 0

    @classmethod
    def for_grid(cls, grid: RasterGrid, pts: InterventionSet, dg: DistanceGrid) -> RingOperator:
        return cls(grid.shape, (grid.origin_x, grid.origin_y), grid.cell_size, pts, dg)

    def check_nonempty(self):
        empty = self.missing.all(axis=0)
        if empty.any():
            raise AllRingsEmpty(float(self.distances[np.flatnonzero(empty)[0]]))

    def apply(self, values) -> CircleAverageTable:
        v = np.asarray(values, dtype=float)
        if v.shape != self.shape:
            raise DataError(f"raster shape {v.shape} does not match operator shape {self.shape}")
        sums = np.bincount(self.row, weights=v.ravel()[self.col], minlength=self.ring_count.size)
        sums = sums.reshape(self.ring_count.shape)
        with np.errstate(invalid="ignore", divide="ignore"):
            mu = sums / self.ring_count
        mu[self.missing] = np.nan
        return CircleAverageTable(
            mu, self.ring_count.copy(), self.missing.copy(), np.asarray(self.distances), self.kappa
        )

    def apply_many(self, values) -> np.ndarray:
        """Circle means for a stack of rasters, shape ``(M, N, D)``."""
        v = np.asarray(values, dtype=float).reshape(-1, self.shape[0] * self.shape[1])
        n_out = self.ring_count.size
        out = np.empty((v.shape[0], n_out))
        for m in range(v.shape[0]):
            out[m] = np.bincount(self.row, weights=v[m, self.col], minlength=n_out)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = out / self.ring_count.ravel()
        out[:, self.missing.ravel()] = np.nan
        return out.reshape(v.shape[0], *self.ring_count.shape)


def circle_averages(grid: RasterGrid, pts: InterventionSet, dg: DistanceGrid) -> CircleAverageTable:
    """Mean of raster cell values on each coarsened ring around each point.

    Raises
    ------
    AllRingsEmpty
        If some grid distance has an empty ring for every intervention point.
    """
    op = RingOperator.for_grid(grid, pts, dg)
    op.check_nonempty()
    return op.apply(grid.values)
