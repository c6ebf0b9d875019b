"""Local-linear kernel smoothing of the AMR curve across distances.

At a target distance ``d`` every valid circle mean ``mu[i, k]`` enters as one
observation with regressors ``(1, z_i, d_k - d, z_i (d_k - d))`` and normal
kernel weight ``K((d_k - d) / h)``. The coefficient on ``z_i`` is the
smoothed AMR at ``d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import design as dsg
from .errors import DataError, DegenerateArm, SingularFit
from .estimators import AMRCurve
from .spatial import CircleAverageTable, DistanceGrid
from .variance import NeighborhoodSpec, confidence_interval, neighborhoods_for_grid

RIDGE = 1e-10
COND_LIMIT = 1e12


@dataclass(frozen=True)
class SmoothSpec:
    kernel: str = "normal"
    bandwidth: float | str = "cv"
    cv_folds: int = 5
    candidate_bandwidths: tuple = ()
    cv_seed: int = 0

    def __post_init__(self):
        if self.kernel != "normal":
            raise DataError(f"only the normal kernel is supported, got {self.kernel!r}")
        if self.bandwidth == "cv":
            if self.cv_folds < 2:
                raise DataError("cross-validation needs at least two folds")
            if any(not h > 0 for h in self.candidate_bandwidths):
                raise DataError("candidate bandwidths must be positive")
        elif not (isinstance(self.bandwidth, (int, float)) and self.bandwidth > 0
                  and math.isfinite(self.bandwidth)):
            raise DataError(f"bandwidth must be positive or 'cv', got {self.bandwidth!r}")

    @property
    def uses_cv(self) -> bool:
        return self.bandwidth == "cv"

    def candidates(self, dstep: float) -> tuple:
        if self.candidate_bandwidths:
            return tuple(float(h) for h in self.candidate_bandwidths)
        return tuple(m * dstep for m in (0.25, 0.5, 1.0, 2.0, 4.0))


def normal_kernel(u):
    return np.exp(-0.5 * np.asarray(u, dtype=float) ** 2)


@dataclass
class LocalFit:
    d: float
    coef: np.ndarray
    bread: np.ndarray
    X: np.ndarray
    w: np.ndarray
    resid: np.ndarray
    unit: np.ndarray
    ridged: bool = False


@dataclass
class _Panel:
    """Valid ``(i, k)`` rows of the circle-average table, flattened."""

    y: np.ndarray
    z: np.ndarray
    dist: np.ndarray
    unit: np.ndarray

    @classmethod
    def from_table(cls, table: CircleAverageTable, z, units=None):
        valid = ~table.missing
        if units is not None:
            keep = np.zeros(table.n, dtype=bool)
            keep[units] = True
            valid = valid & keep[:, None]
        i, k = np.nonzero(valid)
        return cls(table.mu[i, k], np.asarray(z, dtype=float)[i], table.distances[k], i)


def _local_fit(panel: _Panel, d: float, h: float) -> LocalFit:
    delta = panel.dist - d
    w = normal_kernel(delta / h)
    X = np.column_stack([np.ones_like(delta), panel.z, delta, panel.z * delta])
    live = w > 0
    if np.linalg.matrix_rank(X[live]) < 4:
        reached = np.unique(panel.dist[live]).size
        raise SingularFit(f"weighted design at d={d:g} is rank-deficient with h={h:g} "
                          f"(kernel reaches {reached} distance(s))")
    A = X.T @ (w[:, None] * X)
    b = X.T @ (w * panel.y)
    ridged = bool(np.linalg.cond(A) > COND_LIMIT)
    if ridged:
        A = A + RIDGE * np.trace(A) / 4 * np.eye(4)
    coef = np.linalg.solve(A, b)
    return LocalFit(d, coef, A, X, w, panel.y - X @ coef, panel.unit, ridged)


def _check_arms(z):
    n1 = int(np.sum(z))
    n0 = len(z) - n1
    if n1 < 1 or n0 < 1:
        raise DegenerateArm(f"smoothing needs both arms (n1={n1}, n0={n0})")
    return n1, n0


def local_linear(table: CircleAverageTable, z, h: float, targets=None, units=None) -> list[LocalFit]:
    """Local-linear fits at each target distance (default: the table's grid)."""
    z = np.asarray(getattr(z, "z", z))
    if np.unique(table.distances).size < 2:
        raise SingularFit("local-linear smoothing needs at least two distances")
    panel = _Panel.from_table(table, z, units)
    _check_arms(panel.z[np.unique(panel.unit, return_index=True)[1]])
    targets = table.distances if targets is None else np.asarray(targets, dtype=float)
    return [_local_fit(panel, float(d), h) for d in targets]


def hac_local_variance(fit: LocalFit, adjacency: np.ndarray) -> tuple[float, bool]:
    """Sandwich variance of the ``z`` coefficient with unit-level kernel scores.

    The score of unit ``i`` sums ``w X e`` over its rows; scores are paired
    within each unit's dependency neighborhood.
    """
    n = adjacency.shape[0]
    contrib = fit.X * (fit.w * fit.resid)[:, None]
    scores = np.zeros((n, 4))
    np.add.at(scores, fit.unit, contrib)
    inv = np.linalg.inv(fit.bread)
    g = scores @ inv[:, 1]
    var = float(g @ adjacency.astype(float) @ g)
    if var < 0:
        return float(g @ g), True
    return var, False


def _fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    """Balanced fold labels assigned by a seeded unit permutation."""
    if folds > n:
        raise DataError(f"cannot split {n} units into {folds} folds")
    order = dsg.stream_rng(seed, 0).permutation(n)
    ids = np.empty(n, dtype=np.int64)
    ids[order] = np.arange(n) % folds
    return ids


def cv_score(table: CircleAverageTable, z, h: float, folds: int = 5, seed: int = 0) -> float:
    """Mean squared error of held-out units' circle means.

    A held-out unit ``i`` at ``d_k`` is predicted by ``alpha(d_k) + tau(d_k) z_i``
    from the local-linear fit on the remaining units.
    """
    z = np.asarray(getattr(z, "z", z))
    ids = _fold_ids(table.n, folds, seed)
    sse = 0.0
    count = 0
    for f in range(folds):
        train = np.flatnonzero(ids != f)
        test = np.flatnonzero(ids == f)
        fits = local_linear(table, z, h, units=train)
        alpha = np.array([fit.coef[0] for fit in fits])
        tau = np.array([fit.coef[1] for fit in fits])
        pred = alpha[None, :] + tau[None, :] * z[test, None]
        valid = ~table.missing[test]
        err = np.where(valid, table.mu[test] - pred, 0.0)
        sse += float((err**2).sum())
        count += int(valid.sum())
    return sse / count


def select_bandwidth(table: CircleAverageTable, z, candidates, folds: int = 5, seed: int = 0):
    """Candidate with the smallest held-out MSE; ties go to the smaller bandwidth.

    Candidates whose fits are singular on some fold are skipped.
    """
    scores = {}
    for h in sorted(float(c) for c in candidates):
        try:
            scores[h] = cv_score(table, z, h, folds, seed)
        except (SingularFit, DegenerateArm):
            scores[h] = math.inf
    best = min(scores, key=lambda h: (scores[h], h))
    if not math.isfinite(scores[best]):
        raise SingularFit("every candidate bandwidth gives a singular fit")
    return best, scores


def smooth_amr(table: CircleAverageTable, z, dg: DistanceGrid, spec: SmoothSpec,
               pts=None, hband: NeighborhoodSpec | None = None, level: float = 0.95,
               targets=None) -> AMRCurve:
    """Kernel-smoothed AMR curve.

    Standard errors need the intervention coordinates ``pts`` and an
    interference bound ``hband``; without them the curve has no inference.
    """
    z = np.asarray(getattr(z, "z", z))
    if z.shape != (table.n,):
        raise DataError("assignment length does not match the table")
    targets = dg.distances if targets is None else np.asarray(targets, dtype=float)
    cv_scores = {}
    if spec.uses_cv:
        steps = np.diff(dg.distances)
        dstep = float(steps.min()) if steps.size else 1.0
        h, cv_scores = select_bandwidth(table, z, spec.candidates(dstep), spec.cv_folds, spec.cv_seed)
    else:
        h = float(spec.bandwidth)
    fits = local_linear(table, z, h, targets)
    est = np.array([f.coef[1] for f in fits])
    used = np.unique(np.nonzero(~table.missing)[0])
    n1 = int(z[used].sum())
    n0 = used.size - n1
    flags = {"bandwidth": h, "kernel": spec.kernel}
    if cv_scores:
        flags["cv_scores"] = {str(k): v for k, v in cv_scores.items()}
    ridged = [float(f.d) for f in fits if f.ridged]
    if ridged:
        flags["ridge_at"] = ridged
    curve = AMRCurve(targets, est, "Smoothed", n1, n0, flags=flags)
    if pts is None or hband is None:
        return curve
    nbs = neighborhoods_for_grid(pts, targets, hband)
    var = np.empty(len(fits))
    clamped = []
    for j, (fit, nb) in enumerate(zip(fits, nbs)):
        var[j], neg = hac_local_variance(fit, nb.adjacency)
        if neg:
            clamped.append(float(fit.d))
    lo, hi = confidence_interval(est, var, None, level, adjust=False)
    extra = {"clamped_at": clamped} if clamped else {}
    return curve.with_inference(np.sqrt(var), lo, hi, level, edof_adjusted=False, **extra)
