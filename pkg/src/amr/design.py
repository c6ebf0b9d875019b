"""Treatment assignment designs and reproducible randomization streams.

Every random draw comes from a Philox counter-based generator keyed by
``(seed, stream_index)``. Replicate ``r`` of any Monte Carlo loop uses
stream ``r``, so results do not depend on evaluation order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DataError, TooLarge

MAX_ENUMERATE = 20
_MASK64 = (1 << 64) - 1


def stream_rng(seed: int, stream_index: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, stream_index)``."""
    if not 0 <= seed <= _MASK64 or not 0 <= stream_index <= _MASK64:
        raise DataError("seed and stream index must be unsigned 64-bit integers")
    return np.random.Generator(np.random.Philox(key=int(seed) | (int(stream_index) << 64)))


@dataclass(frozen=True)
class AssignmentDesign:
    kind: str
    p: float | None = None
    n1: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind == "bernoulli":
            if self.p is None or not 0 < self.p < 1:
                raise DataError(f"bernoulli design needs 0 < p < 1, got {self.p!r}")
        elif self.kind == "complete":
            if self.n1 is None or self.n1 < 1:
                raise DataError(f"complete design needs N1 >= 1, got {self.n1!r}")
        else:
            raise DataError(f"unknown design kind {self.kind!r}")
        if not 0 <= int(self.seed) <= _MASK64:
            raise DataError("seed must be an unsigned 64-bit integer")

    @classmethod
    def bernoulli(cls, p: float, seed: int = 0) -> AssignmentDesign:
        return cls("bernoulli", p=p, seed=seed)

    @classmethod
    def complete(cls, n1: int, seed: int = 0) -> AssignmentDesign:
        return cls("complete", n1=n1, seed=seed)

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> AssignmentDesign:
        """Parse ``bernoulli:0.5`` or ``complete:14``."""
        kind, _, arg = text.partition(":")
        kind = kind.strip().lower()
        try:
            if kind == "bernoulli":
                return cls.bernoulli(float(arg), seed)
            if kind == "complete":
                return cls.complete(int(arg), seed)
        except ValueError as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"bad design specification {text!r}") from exc
        raise DataError(f"bad design specification {text!r}; expected bernoulli:P or complete:N1")

    def with_seed(self, seed: int) -> AssignmentDesign:
        return AssignmentDesign(self.kind, self.p, self.n1, seed)

    def marginal_p(self, n: int) -> float:
        return self.p if self.kind == "bernoulli" else self.n1 / n

    def __str__(self):
        return f"bernoulli:{self.p}" if self.kind == "bernoulli" else f"complete:{self.n1}"


@dataclass(frozen=True)
class AssignmentVector:
    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.int8)
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @property
    def n1(self) -> int:
        return int(self.z.sum())

    @property
    def n0(self) -> int:
        return int(self.z.size - self.z.sum())

    def __len__(self):
        return self.z.size

    def __eq__(self, other):
        return isinstance(other, AssignmentVector) and np.array_equal(self.z, other.z)

    def __hash__(self):
        return hash(self.z.tobytes())


def _draw(design: AssignmentDesign, n: int, rng: np.random.Generator) -> np.ndarray:
    if design.kind == "bernoulli":
        return (rng.random(n) < design.p).astype(np.int8)
    z = np.zeros(n, dtype=np.int8)
    z[rng.permutation(n)[: design.n1]] = 1
    return z


def _check_n(design: AssignmentDesign, n: int):
    if n < 2:
        raise DataError("need at least two intervention points")
    if design.kind == "complete" and not 0 < design.n1 < n:
        raise DataError(f"complete design needs 0 < N1 < N, got N1={design.n1}, N={n}")


def assignment_stream(design: AssignmentDesign, n: int, stream_index: int):
    """Yield successive assignment vectors from one stream."""
    _check_n(design, n)
    rng = stream_rng(design.seed, stream_index)
    while True:
        yield AssignmentVector(_draw(design, n, rng))


def draw_assignment(design: AssignmentDesign, n: int, stream_index: int = 0) -> AssignmentVector:
    return next(assignment_stream(design, n, stream_index))


def draw_matrix(design: AssignmentDesign, n: int, streams) -> np.ndarray:
    """First draw of each listed stream, stacked into an ``(S, n)`` array."""
    _check_n(design, n)
    streams = list(streams)
    out = np.empty((len(streams), n), dtype=np.int8)
    for row, s in enumerate(streams):
        out[row] = _draw(design, n, stream_rng(design.seed, s))
    return out


def enumerate_assignments(n: int):
    """All ``2**n`` binary vectors in lexicographic order."""
    if n > MAX_ENUMERATE:
        raise TooLarge(f"refusing to enumerate 2^{n} assignments (limit n <= {MAX_ENUMERATE})")
    if n < 1:
        raise DataError("n must be positive")
    return [AssignmentVector(np.array(bits)) for bits in itertools.product((0, 1), repeat=n)]


def bernoulli_probability(z, p: float) -> float:
    z = np.asarray(z)
    n1 = int(z.sum())
    return p**n1 * (1 - p) ** (z.size - n1)
