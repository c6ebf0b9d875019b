"""Point estimators of the average marginalized response (AMR) curve.

Rows whose ring is empty at distance ``d_k`` are dropped for both arms at
that distance; ``N`` is then the number of usable rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, DegenerateArm, NoUsableRows
from .spatial import CircleAverageTable

METHODS = ("HT", "Hajek", "Smoothed")


@dataclass
class AMRCurve:
    distances: np.ndarray
    estimate: np.ndarray
    method: str
    n1: np.ndarray
    n0: np.ndarray
    se: np.ndarray | None = None
    ci_low: np.ndarray | None = None
    ci_high: np.ndarray | None = None
    edof_adjusted: bool = False
    level: float | None = None
    eta: np.ndarray | None = None
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise DataError(f"unknown method {self.method!r}")
        self.distances = np.asarray(self.distances, dtype=float)
        self.estimate = np.asarray(self.estimate, dtype=float)
        self.n1 = np.broadcast_to(np.asarray(self.n1, dtype=np.int64), self.estimate.shape).copy()
        self.n0 = np.broadcast_to(np.asarray(self.n0, dtype=np.int64), self.estimate.shape).copy()

    def __len__(self):
        return self.estimate.size

    def with_inference(self, se, ci_low, ci_high, level, edof_adjusted=False, eta=None, **flags):
        return replace(
            self,
            se=np.asarray(se, dtype=float),
            ci_low=np.asarray(ci_low, dtype=float),
            ci_high=np.asarray(ci_high, dtype=float),
            level=level,
            edof_adjusted=edof_adjusted,
            eta=None if eta is None else np.asarray(eta, dtype=float),
            flags={**self.flags, **flags},
        )


def _arm_column(table: CircleAverageTable, z, k: int):
    mu, valid = table.column(k)
    z = np.asarray(z)
    return mu[valid], z[valid].astype(bool)


def _z_array(z):
    z = np.asarray(getattr(z, "z", z))
    if z.ndim != 1:
        raise DataError("assignment must be a 1-d vector")
    return z


def estimate_ht(table: CircleAverageTable, z, p: float) -> AMRCurve:
    """Horvitz-Thompson estimate using the design probability ``p``."""
    if not 0 < p < 1:
        raise DataError(f"p must lie in (0, 1), got {p!r}")
    z = _z_array(z)
    if z.size != table.n:
        raise DataError("assignment length does not match the table")
    est = np.empty(table.n_distances)
    n1 = np.empty(table.n_distances, dtype=np.int64)
    n0 = np.empty(table.n_distances, dtype=np.int64)
    for k in range(table.n_distances):
        mu, treated = _arm_column(table, z, k)
        n = mu.size
        if n == 0:
            raise NoUsableRows(f"every ring is empty at d={table.distances[k]!r}")
        est[k] = mu[treated].sum() / (n * p) - mu[~treated].sum() / (n * (1 - p))
        n1[k], n0[k] = treated.sum(), n - treated.sum()
    return AMRCurve(table.distances, est, "HT", n1, n0)


def _hajek_column(mu, treated, d):
    n1 = int(treated.sum())
    n0 = treated.size - n1
    if n1 == 0 or n0 == 0:
        raise DegenerateArm(f"at d={d!r} the usable rows have n1={n1}, n0={n0}; both arms need a unit")
    return mu[treated].mean() - mu[~treated].mean(), n1, n0


def estimate_hajek(table: CircleAverageTable, z) -> AMRCurve:
    """Difference in mean circle averages between treated and control points."""
    z = _z_array(z)
    if z.size != table.n:
        raise DataError("assignment length does not match the table")
    est = np.empty(table.n_distances)
    n1 = np.empty(table.n_distances, dtype=np.int64)
    n0 = np.empty(table.n_distances, dtype=np.int64)
    for k in range(table.n_distances):
        mu, treated = _arm_column(table, z, k)
        if mu.size == 0:
            raise NoUsableRows(f"every ring is empty at d={table.distances[k]!r}")
        est[k], n1[k], n0[k] = _hajek_column(mu, treated, table.distances[k])
    return AMRCurve(table.distances, est, "Hajek", n1, n0)


@dataclass(frozen=True)
class TwoGroupFit:
    intercept: float
    slope: float
    residuals: np.ndarray
    valid: np.ndarray
    treated: np.ndarray

    def __iter__(self):
        return iter((self.intercept, self.slope, self.residuals))


def regress_circle_means(table: CircleAverageTable, z, k: int) -> TwoGroupFit:
    """OLS of circle means at distance index ``k`` on ``(1, z)``.

    Solved through the normal equations of the two-column design, so the
    slope is computed independently of the group-mean difference.
    ``residuals`` has one entry per table row, NaN for dropped rows.
    """
    z = _z_array(z)
    mu, valid = table.column(k)
    y = mu[valid]
    zz = z[valid].astype(float)
    n = y.size
    n1 = zz.sum()
    if n1 == 0 or n1 == n:
        raise DegenerateArm(f"at d={table.distances[k]!r} one arm is empty (n1={int(n1)}, n={n})")
    xtx = np.array([[n, n1], [n1, n1]])
    xty = np.array([y.sum(), (zz * y).sum()])
    intercept, slope = np.linalg.solve(xtx, xty)
    resid = np.full(table.n, np.nan)
    resid[valid] = y - intercept - slope * zz
    treated = np.zeros(table.n, dtype=bool)
    treated[valid] = zz.astype(bool)
    return TwoGroupFit(float(intercept), float(slope), resid, valid, treated)


def hajek_draws(mu: np.ndarray, missing: np.ndarray, Z: np.ndarray):
    """Hajek estimates for many assignments at once.

    Parameters
    ----------
    mu, missing : (N, D) arrays
    Z : (P, N) 0/1 array

    Returns
    -------
    est : (P, D) array, NaN where an arm is empty
    ok : (P, D) boolean array, False where an arm is empty
    """
    valid = (~missing).astype(float)
    mu0 = np.where(missing, 0.0, mu)
    Zf = np.asarray(Z, dtype=float)
    n1 = Zf @ valid
    n0 = (1.0 - Zf) @ valid
    s1 = Zf @ mu0
    s0 = (1.0 - Zf) @ mu0
    ok = (n1 > 0) & (n0 > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        est = s1 / n1 - s0 / n0
    est[~ok] = np.nan
    return est, ok
