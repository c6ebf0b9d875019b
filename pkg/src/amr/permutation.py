"""Fisher randomization tests of the sharp null of no effect anywhere.

Under the sharp null the observed raster is the full potential-outcome
schedule, so the circle-average table is held fixed and only the
assignment is redrawn from the design.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import design as dsg
from .errors import DataError, DegenerateArm
from .estimators import hajek_draws
from .spatial import CircleAverageTable

MAX_REDRAWS = 1000
TAILS = ("two", "upper", "lower")


@dataclass(frozen=True)
class Statistic:
    """Hajek estimate at one distance index, or its mean over an index window."""

    k1: int
    k2: int

    def __post_init__(self):
        if self.k1 < 0 or self.k2 < self.k1:
            raise DataError(f"bad statistic window [{self.k1}, {self.k2}]")

    @classmethod
    def amr_at_d(cls, k: int) -> Statistic:
        return cls(k, k)

    @classmethod
    def mean_amr_over(cls, k1: int, k2: int) -> Statistic:
        return cls(k1, k2)

    @classmethod
    def parse(cls, text: str, distances) -> Statistic:
        """``at:d`` or ``mean:a:b`` with distances in coordinate units."""
        parts = text.split(":")
        d = np.asarray(distances, dtype=float)
        try:
            if parts[0] == "at" and len(parts) == 2:
                k = _nearest_index(d, float(parts[1]))
                return cls.amr_at_d(k)
            if parts[0] == "mean" and len(parts) == 3:
                lo, hi = float(parts[1]), float(parts[2])
                ks = np.flatnonzero((d >= lo - 1e-9) & (d <= hi + 1e-9))
                if ks.size == 0:
                    raise DataError(f"no grid distance lies in [{lo}, {hi}]")
                return cls.mean_amr_over(int(ks[0]), int(ks[-1]))
        except ValueError as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"bad statistic {text!r}") from exc
        raise DataError(f"bad statistic {text!r}; expected at:D or mean:A:B")

    def evaluate(self, mu, missing, Z):
        """Statistic for each row of ``Z``; NaN where an arm is empty."""
        if self.k2 >= mu.shape[1]:
            raise DataError("statistic window exceeds the distance grid")
        est, ok = hajek_draws(mu[:, self.k1:self.k2 + 1], missing[:, self.k1:self.k2 + 1], Z)
        good = ok.all(axis=1)
        out = np.full(est.shape[0], np.nan)
        out[good] = est[good].mean(axis=1)
        return out, good

    def describe(self, distances) -> str:
        d = np.asarray(distances)
        if self.k1 == self.k2:
            return f"amr_at_d({d[self.k1]:g})"
        return f"mean_amr_over({d[self.k1]:g}..{d[self.k2]:g})"


def _nearest_index(d, value):
    k = int(np.argmin(np.abs(d - value)))
    if abs(d[k] - value) > 1e-9 * max(1.0, abs(value)):
        raise DataError(f"distance {value} is not on the grid")
    return k


@dataclass
class PermutationResult:
    observed: float
    draws: np.ndarray
    p_value: float
    band_low: float
    band_high: float
    P: int
    seed: int
    tail: str = "two"
    statistic: str = ""
    design: str = ""
    rejected_draws: int = 0
    band_levels: tuple = (0.025, 0.975)

    SCHEMA = "amr.permutation/1"

    def to_dict(self) -> dict:
        return {
            "schema": self.SCHEMA,
            "statistic": self.statistic,
            "observed": self.observed,
            "p_value": self.p_value,
            "tail": self.tail,
            "band_low": self.band_low,
            "band_high": self.band_high,
            "band_levels": list(self.band_levels),
            "band_kind": "pointwise",
            "P": self.P,
            "seed": self.seed,
            "design": self.design,
            "rejected_draws": self.rejected_draws,
        }


def p_value(observed: float, draws, tail: str = "two") -> float:
    """Randomization p-value with the +1 correction; ties count toward rejection."""
    draws = np.asarray(draws, dtype=float)
    P = draws.size
    ge = int((draws >= observed).sum()) + 1
    le = int((draws <= observed).sum()) + 1
    if tail == "upper":
        return ge / (P + 1)
    if tail == "lower":
        return le / (P + 1)
    if tail == "two":
        return min(1.0, 2 * min(ge, le) / (P + 1))
    raise DataError(f"unknown tail {tail!r}; choose from {TAILS}")


def sharp_null_draws(table: CircleAverageTable, design: dsg.AssignmentDesign, statistic: Statistic,
                     P: int):
    """``P`` statistics under fresh assignments; replicate ``p`` uses stream ``p``.

    Draws with an empty arm are redrawn from the same stream, giving up after
    ``MAX_REDRAWS`` consecutive failures.
    """
    n = table.n
    Z = dsg.draw_matrix(design, n, range(P))
    mu, missing = table.mu, table.missing
    stats_, good = statistic.evaluate(mu, missing, Z)
    rejected = 0
    for p in np.flatnonzero(~good):
        stream = dsg.assignment_stream(design, n, int(p))
        next(stream)
        for _ in range(MAX_REDRAWS):
            rejected += 1
            z = next(stream).z[None]
            val, ok = statistic.evaluate(mu, missing, z)
            if ok[0]:
                stats_[p] = val[0]
                break
        else:
            raise DegenerateArm(f"{MAX_REDRAWS} consecutive redraws left an arm empty")
    return stats_, rejected


def permutation_test(table: CircleAverageTable, z, design: dsg.AssignmentDesign, statistic: Statistic,
                     P: int = 2000, tail: str = "two", band=(0.025, 0.975)) -> PermutationResult:
    """Sharp-null randomization test of ``statistic`` at the observed assignment ``z``.

    The seed is taken from ``design``. Bands are pointwise empirical quantiles
    of the null draws.
    """
    if P < 100:
        raise DataError(f"need P >= 100 permutation draws, got {P}")
    if tail not in TAILS:
        raise DataError(f"unknown tail {tail!r}; choose from {TAILS}")
    z = np.asarray(getattr(z, "z", z))
    if z.shape != (table.n,):
        raise DataError("assignment length does not match the table")
    obs, ok = statistic.evaluate(table.mu, table.missing, z[None])
    if not ok[0]:
        raise DegenerateArm("observed assignment leaves an arm empty at the tested distances")
    draws, rejected = sharp_null_draws(table, design, statistic, P)
    lo, hi = np.quantile(draws, band)
    return PermutationResult(
        observed=float(obs[0]), draws=draws, p_value=p_value(obs[0], draws, tail),
        band_low=float(lo), band_high=float(hi), P=P, seed=int(design.seed), tail=tail,
        statistic=statistic.describe(table.distances), design=str(design),
        rejected_draws=rejected, band_levels=tuple(band),
    )
