"""Deterministic random streams keyed by (seed, stream_id).

Every stochastic draw in the toolkit flows through an RngStream. A stream is
a cursor over the counter-based Philox sequence keyed by (seed, stream_id),
so the k-th uniform draw is a pure function of (seed, stream_id, k): streams
can be replayed, forked per population member, and evaluated in any order
without one consumer perturbing another. Population member i always draws
from stream_id == i; harness-level draws use the first id past the
population size.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidRange

_MASK64 = (1 << 64) - 1


class RngStream:
    """Stateful cursor over one keyed Philox stream.

    Two streams constructed with the same (seed, stream_id) produce the same
    sequence; draw_index reports how many positions have been consumed.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))
        self._index = 0

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, draw_index={self._index})"

    @property
    def draw_index(self) -> int:
        return self._index

    def spawn(self, stream_id: int) -> "RngStream":
        """Fresh stream with the same seed and a different stream_id."""
        return RngStream(self.seed, stream_id)

    def uniform(self, lo: float, hi: float) -> float:
        """One uniform draw on [lo, hi); degenerate lo == hi returns lo exactly."""
        if lo > hi:
            raise InvalidRange(f"uniform bounds out of order: lo={lo} > hi={hi}")
        u = self._gen.random()
        self._index += 1
        return lo + u * (hi - lo)

    def uniform_array(self, lo, hi, size: int) -> np.ndarray:
        """size uniform draws with per-element bounds; consumes size positions."""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        if np.any(lo > hi):
            raise InvalidRange("uniform bounds out of order in array draw")
        u = self._gen.random(int(size))
        self._index += int(size)
        return lo + u * (hi - lo)

    def normal(self, mean: float, std: float, size=None):
        """Gaussian draws. Sequence-deterministic for a fixed call pattern,
        but not position-indexed (the ziggurat consumes a variable number of
        underlying words)."""
        if std < 0:
            raise InvalidRange(f"negative std: {std}")
        out = self._gen.normal(mean, std, size)
        self._index += 1 if size is None else int(np.prod(size))
        return out

    def randint_below(self, n: int) -> int:
        """Integer in [0, n) from a single uniform draw."""
        if n <= 0:
            raise InvalidRange(f"randint_below needs n >= 1, got {n}")
        return min(int(self.uniform(0.0, float(n))), n - 1)

    def distinct_indices(self, pool_size: int, count: int, exclude=()) -> list[int]:
        """count distinct indices from range(pool_size) avoiding exclude,
        drawn without replacement."""
        banned = set(int(e) for e in exclude)
        candidates = [i for i in range(pool_size) if i not in banned]
        if count < 0 or len(candidates) < count:
            raise InvalidRange(
                f"cannot draw {count} distinct indices from pool of {pool_size} "
                f"with {len(banned)} excluded"
            )
        picked = []
        for _ in range(count):
            k = self.randint_below(len(candidates))
            picked.append(candidates.pop(k))
        return picked


def rng_draw_uniform(stream: RngStream, lo: float, hi: float) -> float:
    """Functional spelling of RngStream.uniform."""
    return stream.uniform(lo, hi)
