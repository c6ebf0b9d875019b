"""Spatial-HAC variance for the two-group regression, EDoF scaling and CIs.

The dependency neighborhood of unit ``i`` at ring radius ``d`` is
``B(i; d) = {j : |x(i) - x(j)| - d <= h(d)}``. Cross-unit residual products
enter the sandwich meat only for pairs inside each other's neighborhood
(hard truncation, no taper).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist

from .errors import DataError, DegenerateArm, SingularDesign
from .estimators import AMRCurve, estimate_hajek, regress_circle_means
from .spatial import CircleAverageTable, InterventionSet

ETA_FLOOR = 1e-12


@dataclass(frozen=True)
class NeighborhoodSpec:
    """Interference bound ``h(d)``: a constant or a ``(d, h)`` table."""

    h: float | None = None
    table: tuple = ()

    def __post_init__(self):
        if (self.h is None) == (not self.table):
            raise DataError("give exactly one of a constant h or an h(d) table")
        if self.h is not None and not (self.h >= 0 and math.isfinite(self.h)):
            raise DataError(f"h must be a non-negative finite number, got {self.h!r}")
        if self.table:
            d = np.array([r[0] for r in self.table], dtype=float)
            h = np.array([r[1] for r in self.table], dtype=float)
            if (np.diff(d) <= 0).any():
                raise DataError("h(d) table distances must be strictly increasing")
            if (h < 0).any() or not np.isfinite(h).all():
                raise DataError("h(d) table values must be non-negative and finite")

    @classmethod
    def constant(cls, h: float) -> NeighborhoodSpec:
        return cls(h=float(h))

    @classmethod
    def from_table(cls, rows) -> NeighborhoodSpec:
        return cls(table=tuple((float(d), float(h)) for d, h in rows))

    def h_at(self, d: float) -> float:
        if self.h is not None:
            return self.h
        ds = np.array([r[0] for r in self.table])
        hs = np.array([r[1] for r in self.table])
        tol = 1e-9 * max(1.0, abs(d))
        if d < ds[0] - tol or d > ds[-1] + tol:
            raise DataError(f"h(d) table does not cover d={d!r}")
        # linear interpolation between listed distances
        return float(np.interp(d, ds, hs))


@dataclass(frozen=True)
class Neighborhoods:
    adjacency: np.ndarray
    d: float
    h: float

    @property
    def sizes(self) -> np.ndarray:
        """``c_i(d) = |B(i; d)|``."""
        return self.adjacency.sum(axis=1)

    @property
    def c(self) -> int:
        return int(self.sizes.max())

    def members(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def as_lists(self) -> list[np.ndarray]:
        return [self.members(i) for i in range(self.adjacency.shape[0])]


def build_neighborhoods(pts, d: float, h: float) -> Neighborhoods:
    """Dependency sets ``B(i; d)`` for every intervention point.

    ``pts`` is an :class:`InterventionSet` or an ``(N, 2)`` coordinate array.
    """
    if not h >= 0:
        raise DataError(f"h must be non-negative, got {h!r}")
    xy = pts.xy if isinstance(pts, InterventionSet) else np.asarray(pts, dtype=float)
    dist = cdist(xy, xy)
    adj = dist - d <= h
    np.fill_diagonal(adj, True)
    return Neighborhoods(adj, float(d), float(h))


def neighborhoods_for_grid(pts, distances, spec: NeighborhoodSpec) -> list[Neighborhoods]:
    xy = pts.xy if isinstance(pts, InterventionSet) else np.asarray(pts, dtype=float)
    dist = cdist(xy, xy)
    out = []
    for d in np.asarray(distances, dtype=float):
        h = spec.h_at(float(d))
        adj = dist - d <= h
        np.fill_diagonal(adj, True)
        out.append(Neighborhoods(adj, float(d), h))
    return out


@dataclass(frozen=True)
class VarianceEstimate:
    var_tau: float
    eta: float
    sandwich_meat: np.ndarray
    hc0: float
    clamped: bool = False


def _adjacency(nb) -> np.ndarray:
    adj = nb.adjacency if isinstance(nb, Neighborhoods) else np.asarray(nb)
    return adj.astype(bool)


def edof_scale(z, nb) -> float:
    """Effective-DoF scale ``eta = trace(B)`` for the two-group design.

    With the residual maker ``M`` block-diagonal by arm, the trace collapses
    to per-arm counts of neighbor pairs.
    """
    z = np.asarray(getattr(z, "z", z)).astype(bool)
    adj = _adjacency(nb)
    n = z.size
    n1 = int(z.sum())
    n0 = n - n1
    if n1 in (0, n):
        raise SingularDesign("two-group design is singular with an empty arm")
    if n1 < 2 or n0 < 2:
        raise DegenerateArm(f"EDoF scale needs n1, n0 >= 2 (got {n1}, {n0})")
    diag = np.diag(adj).astype(float)
    lam2 = np.where(z, 1.0 / n1**2, 1.0 / n0**2)
    a11 = adj[np.ix_(z, z)].sum()
    a00 = adj[np.ix_(~z, ~z)].sum()
    tr = (lam2 * diag).sum() - a11 / n1**3 - a00 / n0**3
    return float(n1 * n0 / n * tr)


def spatial_hac_variance(table: CircleAverageTable, z, k: int, nb) -> VarianceEstimate:
    """Spatial-HAC variance of the Hajek/OLS slope at distance index ``k``.

    ``nb`` is a :class:`Neighborhoods` (or boolean adjacency) over all table
    rows; rows with an empty ring are dropped together with their pairs.
    A negative quadratic form (possible with an indefinite truncation) is
    replaced by the singleton-neighborhood value and flagged ``clamped``.
    """
    zf = np.asarray(getattr(z, "z", z))
    valid = ~table.missing[:, k]
    t = zf[valid].astype(bool)
    n = t.size
    n1 = int(t.sum())
    n0 = n - n1
    if n1 in (0, n):
        raise SingularDesign(f"at d={table.distances[k]!r} one arm is empty (n1={n1}, n={n})")
    if n1 < 2 or n0 < 2:
        raise DegenerateArm(f"at d={table.distances[k]!r} HAC variance needs n1, n0 >= 2 (got {n1}, {n0})")
    fit = regress_circle_means(table, zf, k)
    e = fit.residuals[valid]
    adj = _adjacency(nb)[np.ix_(valid, valid)]
    af = adj.astype(float)
    lam = np.where(t, 1.0 / n1, -1.0 / n0)
    s = lam * e
    var = float(s @ af @ s)
    hc0 = float(s @ s)
    u = np.column_stack([e, t * e])
    meat = u.T @ af @ u
    # round-off below zero (e.g. a complete graph, where the form is exactly 0)
    clamped = var < -1e-12 * hc0
    if clamped:
        var = hc0
    elif var < 0:
        var = 0.0
    eta = edof_scale(t, adj)
    return VarianceEstimate(var, eta, meat, hc0, clamped)


def critical_value(level: float, crit: str = "normal", df: float | None = None) -> float:
    if not 0 < level < 1:
        raise DataError(f"level must lie in (0, 1), got {level!r}")
    q = (1 + level) / 2
    if crit == "normal":
        return float(stats.norm.ppf(q))
    if crit == "t":
        if df is None or df <= 0:
            raise DataError("t critical values need positive degrees of freedom")
        return float(stats.t.ppf(q, df))
    raise DataError(f"unknown critical value family {crit!r}")


def adjusted_variance(var_tau, eta, adjust: bool):
    """``var / eta`` when adjusting; falls back to ``var`` where ``eta`` is ~0."""
    var_tau = np.asarray(var_tau, dtype=float)
    if not adjust:
        return var_tau
    eta = np.asarray(eta, dtype=float)
    usable = eta > ETA_FLOOR
    return np.where(usable, var_tau / np.where(usable, eta, 1.0), var_tau)


def confidence_interval(estimate, var_tau, eta, level: float = 0.95, adjust: bool = False,
                        crit: str = "normal", df=None):
    """Symmetric normal-approximation interval around ``estimate``."""
    zc = critical_value(level, crit, df) if crit == "normal" else None
    if crit == "t":
        zc = np.vectorize(lambda v: critical_value(level, "t", v))(np.asarray(df, dtype=float))
    half = zc * np.sqrt(adjusted_variance(var_tau, eta, adjust))
    estimate = np.asarray(estimate, dtype=float)
    return estimate - half, estimate + half


def hac_curve(table: CircleAverageTable, z, neighborhoods, level: float = 0.95,
              adjust: bool = True, crit: str = "normal") -> AMRCurve:
    """Hajek curve with spatial-HAC standard errors and CIs at every distance."""
    curve = estimate_hajek(table, z)
    D = table.n_distances
    var = np.empty(D)
    eta = np.empty(D)
    clamped = []
    for k in range(D):
        v = spatial_hac_variance(table, z, k, neighborhoods[k])
        var[k], eta[k] = v.var_tau, v.eta
        if v.clamped:
            clamped.append(float(table.distances[k]))
    df = (curve.n1 + curve.n0 - 2) if crit == "t" else None
    lo, hi = confidence_interval(curve.estimate, var, eta, level, adjust, crit, df)
    se = np.sqrt(adjusted_variance(var, eta, adjust))
    no_adjust = [float(d) for d, e in zip(table.distances, eta) if adjust and e <= ETA_FLOOR]
    flags = {"var_unadjusted": var.tolist()}
    if clamped:
        flags["clamped_at"] = clamped
    if no_adjust:
        flags["edof_skipped_at"] = no_adjust
    return curve.with_inference(se, lo, hi, level, edof_adjusted=adjust, eta=eta, **flags)
