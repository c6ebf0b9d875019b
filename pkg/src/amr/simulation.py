"""Synthetic spatial experiments with known AMR curves.

A scene is an ``n x n`` raster with intervention points on a regular
``sqrt(N) x sqrt(N)`` sublattice. Outcomes are a smooth baseline surface plus
effects emanating from treated points:

* additive: every treated point adds ``g(|x - x(i)|)``;
* interactive: a treated point whose nearest intervention neighbor is also
  treated adds ``m_i * g_plus(|x - x(i)|)`` instead, where ``g_plus`` is the
  positive gamma component alone and ``m_i`` is a fixed per-unit multiplier.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist

from . import design as dsg
from .errors import AMRError, DataError, TooLarge
from .estimators import estimate_hajek, estimate_ht
from .spatial import DistanceGrid, InterventionSet, RasterGrid, RingOperator
from .variance import NeighborhoodSpec, adjusted_variance, critical_value, neighborhoods_for_grid

EFFECT_KINDS = ("additive_gamma_mix", "interactive")


@dataclass(frozen=True)
class EffectFunction:
    kind: str = "additive_gamma_mix"
    shape1: float = 2.0
    scale1: float = 0.5
    shape2: float = 6.0
    scale2: float = 0.5
    weight: float = 0.6
    # None scales the profile so that max |g| = 1
    amplitude: float | None = None
    multiplier_low: float = 0.5
    multiplier_high: float = 1.5

    def __post_init__(self):
        if self.kind not in EFFECT_KINDS:
            raise DataError(f"unknown effect kind {self.kind!r}")
        if not 0 <= self.weight <= 1:
            raise DataError("mixing weight must lie in [0, 1]")

    def _raw(self, d):
        d = np.asarray(d, dtype=float)
        pos = self.weight * stats.gamma.pdf(d, self.shape1, scale=self.scale1)
        neg = (1 - self.weight) * stats.gamma.pdf(d, self.shape2, scale=self.scale2)
        return pos, neg

    @cached_property
    def scale(self) -> float:
        if self.amplitude is not None:
            return float(self.amplitude)
        grid = np.linspace(0.0, self._tail_end(), 200_001)
        pos, neg = self._raw(grid)
        peak = np.abs(pos - neg).max()
        return 1.0 / peak if peak > 0 else 0.0

    def _tail_end(self) -> float:
        mean = max(self.shape1 * self.scale1, self.shape2 * self.scale2)
        sd = max(math.sqrt(self.shape1) * self.scale1, math.sqrt(self.shape2) * self.scale2)
        return mean + 60 * sd

    def profile(self, d):
        """Effect ``g(d)`` of one treated point at distance ``d``."""
        pos, neg = self._raw(d)
        return self.scale * (pos - neg)

    def positive_profile(self, d):
        pos, _ = self._raw(d)
        return self.scale * pos

    def support_radius(self, rel: float = 1e-6) -> float:
        """Distance beyond which ``|g| < rel * max|g|``."""
        if self.scale == 0:
            return 0.0
        grid = np.linspace(0.0, self._tail_end(), 200_001)
        g = np.abs(self.profile(grid))
        big = np.flatnonzero(g >= rel * g.max())
        return float(grid[min(big[-1] + 1, grid.size - 1)])


@dataclass(frozen=True)
class SyntheticScene:
    """Scene parameters; derived arrays are built lazily and cached."""

    effect: EffectFunction = field(default_factory=EffectFunction)
    n_points: int = 64
    grid_size: int = 80
    cell_size: float = 1.0
    p: float = 0.5
    seed: int = 0
    baseline_amplitude: float = 0.5
    baseline_wavelengths: tuple = (25.0, 50.0)
    dmax: float = 8.0
    dstep: float = 1.0
    kappa: int | None = None
    support_rel: float = 1e-6

    def __post_init__(self):
        side = math.isqrt(self.n_points)
        if side * side != self.n_points or side < 1:
            raise DataError(f"n_points must be a perfect square, got {self.n_points}")
        if self.n_points < 2:
            raise DataError("need at least two intervention points")
        if self.grid_size < side:
            raise DataError("grid is smaller than the intervention sublattice")
        if not 0 < self.p < 1:
            raise DataError("p must lie in (0, 1)")

    # -- construction -------------------------------------------------
    @classmethod
    def additive(cls, n_points=64, grid_size=None, **kw) -> SyntheticScene:
        grid_size = grid_size or 10 * math.isqrt(n_points)
        return cls(effect=EffectFunction("additive_gamma_mix"), n_points=n_points, grid_size=grid_size, **kw)

    @classmethod
    def interactive(cls, n_points=64, grid_size=None, **kw) -> SyntheticScene:
        grid_size = grid_size or 10 * math.isqrt(n_points)
        return cls(effect=EffectFunction("interactive"), n_points=n_points, grid_size=grid_size, **kw)

    @classmethod
    def null(cls, n_points=64, grid_size=None, **kw) -> SyntheticScene:
        grid_size = grid_size or 10 * math.isqrt(n_points)
        return cls(effect=EffectFunction("additive_gamma_mix", amplitude=0.0),
                   n_points=n_points, grid_size=grid_size, **kw)

    @classmethod
    def named(cls, name: str, **kw) -> SyntheticScene:
        makers = {"additive": cls.additive, "interactive": cls.interactive, "null": cls.null}
        if name not in makers:
            raise DataError(f"unknown scene {name!r}; choose from {sorted(makers)}")
        return makers[name](**kw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["baseline_wavelengths"] = list(self.baseline_wavelengths)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> SyntheticScene:
        data = dict(data)
        data["effect"] = EffectFunction(**data.get("effect", {}))
        if "baseline_wavelengths" in data:
            data["baseline_wavelengths"] = tuple(data["baseline_wavelengths"])
        return cls(**data)

    # -- derived geometry ---------------------------------------------
    @property
    def is_additive(self) -> bool:
        return self.effect.kind == "additive_gamma_mix"

    @cached_property
    def points(self) -> InterventionSet:
        side = math.isqrt(self.n_points)
        spacing = self.grid_size / side
        idx = np.floor((np.arange(side) + 0.5) * spacing).astype(int)
        cc, rr = np.meshgrid(idx, idx)
        xy = np.column_stack([(cc.ravel() + 0.5) * self.cell_size, (rr.ravel() + 0.5) * self.cell_size])
        return InterventionSet(tuple(range(self.n_points)), xy, p=self.p)

    @cached_property
    def distance_grid(self) -> DistanceGrid:
        from .spatial import default_kappa

        kappa = default_kappa(self.cell_size) if self.kappa is None else self.kappa
        return DistanceGrid.from_range(0.0, self.dmax, self.dstep, kappa)

    @cached_property
    def ring_operator(self) -> RingOperator:
        op = RingOperator((self.grid_size, self.grid_size), (0.0, 0.0), self.cell_size,
                          self.points, self.distance_grid)
        op.check_nonempty()
        return op

    @cached_property
    def _cell_distances(self) -> np.ndarray:
        n = self.grid_size
        centers = (np.arange(n) + 0.5) * self.cell_size
        cx, cy = np.meshgrid(centers, centers)
        return cdist(np.column_stack([cx.ravel(), cy.ravel()]), self.points.xy)

    @cached_property
    def effect_matrix(self) -> np.ndarray:
        """``G[x, i] = g(|x - x(i)|)``, one column per intervention point."""
        return self.effect.profile(self._cell_distances)

    @cached_property
    def positive_matrix(self) -> np.ndarray:
        return self.effect.positive_profile(self._cell_distances)

    @cached_property
    def nearest_neighbor(self) -> np.ndarray:
        """Index of each point's nearest other point (lowest index on ties)."""
        dist = cdist(self.points.xy, self.points.xy)
        np.fill_diagonal(dist, np.inf)
        return np.argmin(dist, axis=1)

    @cached_property
    def multipliers(self) -> np.ndarray:
        rng = dsg.stream_rng(self.seed, 1)
        return rng.uniform(self.effect.multiplier_low, self.effect.multiplier_high, self.n_points)

    @cached_property
    def baseline(self) -> np.ndarray:
        """Sum of two planar sinusoids, fixed by the scene seed."""
        rng = dsg.stream_rng(self.seed, 0)
        n = self.grid_size
        centers = (np.arange(n) + 0.5) * self.cell_size
        cx, cy = np.meshgrid(centers, centers)
        lo, hi = self.baseline_wavelengths
        f = np.zeros((n, n))
        for _ in range(2):
            angle = rng.uniform(0, np.pi)
            wavelength = rng.uniform(lo, hi)
            phase = rng.uniform(0, 2 * np.pi)
            proj = cx * np.cos(angle) + cy * np.sin(angle)
            f += self.baseline_amplitude * np.sin(2 * np.pi * proj / wavelength + phase)
        return f

    @property
    def raster_template(self) -> RasterGrid:
        return RasterGrid(0.0, 0.0, self.cell_size, self.baseline)

    def design(self, seed: int) -> dsg.AssignmentDesign:
        return dsg.AssignmentDesign.bernoulli(self.p, seed)

    def interference_bound(self) -> NeighborhoodSpec:
        """``h(d) = R + d`` where ``R`` is the effect support radius."""
        r = self.effect.support_radius(self.support_rel)
        return NeighborhoodSpec.from_table([(float(d), r + float(d)) for d in self.distance_grid.distances])

    # -- potential outcomes -------------------------------------------
    def coefficients(self, z):
        """Per-unit weights on the full and positive-only profiles."""
        z = np.asarray(getattr(z, "z", z), dtype=float)
        if self.is_additive:
            return z, np.zeros_like(z)
        nn = z[..., self.nearest_neighbor]
        return z * (1 - nn), z * nn * self.multipliers

    @cached_property
    def _ring_effects(self):
        """Circle averages of every unit's profile around every unit: (N, D, N)."""
        op = self.ring_operator
        n = self.grid_size
        full = op.apply_many(self.effect_matrix.T.reshape(self.n_points, n, n))
        pos = op.apply_many(self.positive_matrix.T.reshape(self.n_points, n, n))
        base = op.apply(self.baseline).mu
        return base, np.moveaxis(full, 0, -1), np.moveaxis(pos, 0, -1)

    def circle_means_batch(self, Z) -> np.ndarray:
        """Circle-average tables for a batch of assignments, shape ``(M, N, D)``.

        Uses linearity of ring means in the raster; agrees with
        :func:`generate_outcomes` followed by ``circle_averages``.
        """
        base, full, pos = self._ring_effects
        a, b = self.coefficients(np.atleast_2d(Z))
        return base[None] + np.einsum("ndj,mj->mnd", full, a) + np.einsum("ndj,mj->mnd", pos, b)


def generate_outcomes(scene: SyntheticScene, z) -> RasterGrid:
    z = np.asarray(getattr(z, "z", z))
    if z.shape != (scene.n_points,):
        raise DataError(f"assignment must have length {scene.n_points}")
    a, b = scene.coefficients(z)
    y = scene.effect_matrix @ a
    if not scene.is_additive:
        y = y + scene.positive_matrix @ b
    n = scene.grid_size
    return scene.raster_template.with_values(scene.baseline + y.reshape(n, n))


@dataclass(frozen=True)
class TrueAMR:
    distances: np.ndarray
    values: np.ndarray
    se: np.ndarray | None = None
    mode: str = "analytic_additive"


def _valid_rows(scene):
    return ~scene.ring_operator.missing


def true_amr(scene: SyntheticScene, mode: str = "analytic_additive", draws: int = 100_000,
             seed: int = 0, batch: int = 4096) -> TrueAMR:
    """True AMR curve of a scene.

    ``analytic_additive`` ring-averages each unit's own profile; ``enumerate``
    marginalizes over all ``2**(N-1)`` assignments of the other units with
    Bernoulli weights; ``monte_carlo`` replaces the enumeration with ``draws``
    random assignments and reports a standard error.
    """
    op = scene.ring_operator
    valid = _valid_rows(scene)
    counts = valid.sum(axis=0)
    dists = np.asarray(op.distances)
    N = scene.n_points
    if mode == "analytic_additive":
        if not scene.is_additive:
            raise DataError("analytic_additive mode needs an additive scene")
        unit = op.row // len(dists)
        sums = np.bincount(op.row, weights=scene.effect_matrix[op.col, unit], minlength=op.ring_count.size)
        with np.errstate(invalid="ignore"):
            own = sums.reshape(op.ring_count.shape) / op.ring_count
        own[~valid] = 0.0
        return TrueAMR(dists, own.sum(axis=0) / counts, None, mode)
    if mode == "enumerate":
        if N > dsg.MAX_ENUMERATE:
            raise TooLarge(f"enumeration over 2^{N} assignments is too large (N <= {dsg.MAX_ENUMERATE})")
        tau = np.zeros_like(op.ring_count, dtype=float)
        others = np.array([v.z for v in dsg.enumerate_assignments(N - 1)], dtype=np.int8)
        weights = scene.p ** others.sum(axis=1) * (1 - scene.p) ** (N - 1 - others.sum(axis=1))
        for i in range(N):
            z1 = np.insert(others, i, 1, axis=1)
            z0 = np.insert(others, i, 0, axis=1)
            for start in range(0, others.shape[0], batch):
                sl = slice(start, start + batch)
                diff = scene.circle_means_batch(z1[sl])[:, i, :] - scene.circle_means_batch(z0[sl])[:, i, :]
                tau[i] += weights[sl] @ diff
        tau[~valid] = 0.0
        return TrueAMR(dists, tau.sum(axis=0) / counts, None, mode)
    if mode == "monte_carlo":
        design = dsg.AssignmentDesign.bernoulli(scene.p, seed)
        samples = np.empty((draws, len(dists)))
        done = 0
        while done < draws:
            m = min(batch, draws - done)
            Z = dsg.draw_matrix(design, N, range(done, done + m))
            acc = np.zeros((m, len(dists)))
            for i in range(N):
                z1 = Z.copy()
                z1[:, i] = 1
                z0 = Z.copy()
                z0[:, i] = 0
                diff = scene.circle_means_batch(z1)[:, i, :] - scene.circle_means_batch(z0)[:, i, :]
                acc += np.where(valid[i], diff, 0.0)
            samples[done:done + m] = acc / counts
            done += m
        return TrueAMR(dists, samples.mean(axis=0), samples.std(axis=0, ddof=1) / math.sqrt(draws), mode)
    raise DataError(f"unknown true-AMR mode {mode!r}")


@dataclass
class ExperimentReport:
    scene: dict
    replications: int
    seed: int
    estimator: str
    level: float
    distances: np.ndarray
    truth: np.ndarray
    h: np.ndarray
    estimates: np.ndarray
    variances: np.ndarray
    etas: np.ndarray
    failed: np.ndarray
    truth_mode: str = "analytic_additive"
    crit: str = "normal"
    messages: list = field(default_factory=list)

    SCHEMA = "amr.experiment/1"

    def __post_init__(self):
        for name in ("distances", "truth", "h", "estimates", "variances", "etas"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self.failed = np.asarray(self.failed, dtype=bool)

    @property
    def ok(self) -> np.ndarray:
        return ~self.failed

    def _crit(self):
        return critical_value(self.level, self.crit)

    def intervals(self, adjust: bool):
        est = self.estimates[self.ok]
        half = self._crit() * np.sqrt(adjusted_variance(self.variances[self.ok], self.etas[self.ok], adjust))
        return est - half, est + half

    def coverage(self, adjust: bool = False) -> np.ndarray:
        lo, hi = self.intervals(adjust)
        return ((lo <= self.truth) & (self.truth <= hi)).mean(axis=0)

    def mean_estimate(self) -> np.ndarray:
        return self.estimates[self.ok].mean(axis=0)

    def mc_se(self) -> np.ndarray:
        est = self.estimates[self.ok]
        return est.std(axis=0, ddof=1) / math.sqrt(est.shape[0])

    def bias(self) -> np.ndarray:
        return self.mean_estimate() - self.truth

    def mse(self) -> np.ndarray:
        return ((self.estimates[self.ok] - self.truth) ** 2).mean(axis=0)

    def mc_variance(self) -> np.ndarray:
        return self.estimates[self.ok].var(axis=0, ddof=1)

    def mean_variance(self) -> np.ndarray:
        return self.variances[self.ok].mean(axis=0)

    def summary_rows(self) -> list[dict]:
        cov = self.coverage(False)
        cov_e = self.coverage(True)
        lo, hi = self.intervals(False)
        rows = []
        for k, d in enumerate(self.distances):
            rows.append({
                "d": float(d),
                "true_amr": float(self.truth[k]),
                "mean_estimate": float(self.mean_estimate()[k]),
                "bias": float(self.bias()[k]),
                "mc_se": float(self.mc_se()[k]),
                "mse": float(self.mse()[k]),
                "mc_variance": float(self.mc_variance()[k]),
                "mean_var_hat": float(self.mean_variance()[k]),
                "coverage": float(cov[k]),
                "coverage_edof": float(cov_e[k]),
                "mean_ci_low": float(lo[:, k].mean()),
                "mean_ci_high": float(hi[:, k].mean()),
                "h": float(self.h[k]),
            })
        return rows

    def to_dict(self) -> dict:
        return {
            "schema": self.SCHEMA,
            "scene": self.scene,
            "replications": self.replications,
            "seed": self.seed,
            "estimator": self.estimator,
            "level": self.level,
            "truth_mode": self.truth_mode,
            "crit": self.crit,
            "distances": self.distances.tolist(),
            "truth": self.truth.tolist(),
            "h": self.h.tolist(),
            "estimates": self.estimates.tolist(),
            "variances": self.variances.tolist(),
            "etas": self.etas.tolist(),
            "failed": self.failed.tolist(),
            "messages": list(self.messages),
        }

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentReport:
        if data.get("schema") != cls.SCHEMA:
            raise DataError(f"unsupported report schema {data.get('schema')!r}")
        data = {k: v for k, v in data.items() if k != "schema"}
        return cls(**data)


def run_experiment(scene: SyntheticScene, replications: int, estimator: str = "hajek",
                   h_spec: NeighborhoodSpec | None = None, level: float = 0.95, seed: int = 0,
                   truth_mode: str | None = None, truth_draws: int = 20_000) -> ExperimentReport:
    """Monte Carlo over fresh Bernoulli assignments of a fixed scene.

    Replicate ``r`` draws its assignment from stream ``r`` of ``seed``.
    Replicates whose estimator fails (e.g. an empty arm) are flagged and
    excluded from the summaries.
    """
    if replications < 1:
        raise DataError("need at least one replication")
    if estimator not in ("hajek", "ht"):
        raise DataError(f"unknown estimator {estimator!r}")
    from .variance import spatial_hac_variance

    op = scene.ring_operator
    dg = scene.distance_grid
    h_spec = h_spec or scene.interference_bound()
    nbs = neighborhoods_for_grid(scene.points, dg.distances, h_spec)
    if truth_mode is None:
        truth_mode = "analytic_additive" if scene.is_additive else "monte_carlo"
    truth = true_amr(scene, truth_mode, draws=truth_draws, seed=seed + 1).values
    D = len(dg)
    est = np.full((replications, D), np.nan)
    var = np.full((replications, D), np.nan)
    eta = np.full((replications, D), np.nan)
    failed = np.zeros(replications, dtype=bool)
    messages = []
    design = scene.design(seed)
    for r in range(replications):
        z = dsg.draw_assignment(design, scene.n_points, r)
        table = op.apply(generate_outcomes(scene, z).values)
        try:
            if estimator == "ht":
                est[r] = estimate_ht(table, z, scene.p).estimate
                continue
            est[r] = estimate_hajek(table, z).estimate
            for k in range(D):
                v = spatial_hac_variance(table, z, k, nbs[k])
                var[r, k], eta[r, k] = v.var_tau, v.eta
        except AMRError as exc:
            failed[r] = True
            messages.append(f"replicate {r}: {exc}")
    return ExperimentReport(
        scene=scene.to_dict(), replications=replications, seed=seed, estimator=estimator,
        level=level, distances=dg.distances, truth=truth,
        h=np.array([nb.h for nb in nbs]), estimates=est, variances=var, etas=eta,
        failed=failed, truth_mode=truth_mode, messages=messages,
    )
