"""Mergeable streaming quantile sketch (KLL-style compactor hierarchy).

Level ``h`` holds an unsorted buffer of values each representing ``2**h``
stream items. Buffers have geometrically decaying capacities; when one
overflows it is sorted and every other element (random parity) is promoted
one level up, the rest are discarded. The weighted item count is conserved
exactly, so ``n`` always equals ``sum(len(buf) * 2**h)``.

While ``n`` is at most the base capacity ``k`` no compaction has happened
and every query is an exact order statistic.
"""

from __future__ import annotations

import math
import struct
from typing import Iterable, Sequence

from .errors import EmptySketch, MismatchedConfig
from .kernels import hash64

_CAPACITY_RATIO = 2.0 / 3.0
_MIN_LEVEL_CAPACITY = 2


class KllSketch:
    __slots__ = ("k", "n", "min_val", "max_val", "_levels", "_seed", "_draws")

    def __init__(self, k: int = 256, seed: int = 0):
        if k < 8:
            raise ValueError("k must be >= 8")
        self.k = k
        self.n = 0
        self.min_val = math.inf
        self.max_val = -math.inf
        self._levels: list[list[float]] = [[]]
        self._seed = seed
        self._draws = 0

    # -- maintenance ---------------------------------------------------

    def _capacity(self, level: int) -> int:
        top = len(self._levels) - 1
        return max(int(math.ceil(self.k * _CAPACITY_RATIO ** (top - level))), _MIN_LEVEL_CAPACITY)

    def _compact_level(self, level: int) -> None:
        buf = self._levels[level]
        if len(buf) < 2:
            return
        buf.sort()
        bits = hash64(self._draws, self._seed)
        self._draws += 1
        leftover: float | None = None
        if len(buf) % 2:
            # keep one element behind so the promoted weight stays even
            leftover = buf.pop(0) if (bits >> 1) & 1 else buf.pop()
        survivors = buf[bits & 1 :: 2]
        self._levels[level] = [leftover] if leftover is not None else []
        if level + 1 == len(self._levels):
            self._levels.append([])
        self._levels[level + 1].extend(survivors)

    def _compress(self) -> None:
        while True:
            for level in range(len(self._levels)):
                if len(self._levels[level]) > self._capacity(level):
                    self._compact_level(level)
                    break
            else:
                return

    # -- updates -------------------------------------------------------

    def update(self, value: float) -> None:
        value = float(value)
        if not math.isfinite(value):
            raise ValueError("sketch values must be finite")
        self._levels[0].append(value)
        self.n += 1
        if value < self.min_val:
            self.min_val = value
        if value > self.max_val:
            self.max_val = value
        if len(self._levels[0]) > self._capacity(0):
            self._compress()

    def extend(self, values: Iterable[float]) -> None:
        for v in values:
            self.update(v)

    def merge(self, other: "KllSketch") -> None:
        """Absorb ``other`` (levelwise concat, then compact to capacity)."""
        if other.k != self.k:
            raise MismatchedConfig(f"cannot merge k={other.k} into k={self.k}")
        if other.n == 0:
            return
        while len(self._levels) < len(other._levels):
            self._levels.append([])
        for level, buf in enumerate(other._levels):
            self._levels[level].extend(buf)
        self.n += other.n
        self.min_val = min(self.min_val, other.min_val)
        self.max_val = max(self.max_val, other.max_val)
        self._compress()

    @classmethod
    def merge_many(cls, sketches: Sequence["KllSketch"], k: int, seed: int = 0) -> "KllSketch":
        """One-shot fold used by window queries: concat everything, compact once."""
        out = cls(k, seed)
        for s in sketches:
            if s.k != k:
                raise MismatchedConfig(f"cannot merge k={s.k} into k={k}")
            if s.n == 0:
                continue
            while len(out._levels) < len(s._levels):
                out._levels.append([])
            for level, buf in enumerate(s._levels):
                out._levels[level].extend(buf)
            out.n += s.n
            out.min_val = min(out.min_val, s.min_val)
            out.max_val = max(out.max_val, s.max_val)
        out._compress()
        return out

    # -- queries -------------------------------------------------------

    def _materialize(self) -> tuple[list[float], list[int]]:
        pairs: list[tuple[float, int]] = []
        for level, buf in enumerate(self._levels):
            w = 1 << level
            pairs.extend((v, w) for v in buf)
        pairs.sort(key=lambda p: p[0])
        return [p[0] for p in pairs], [p[1] for p in pairs]

    def quantile(self, phi: float) -> float:
        if self.n == 0:
            raise EmptySketch("quantile of an empty sketch")
        if not 0.0 <= phi <= 1.0:
            raise ValueError("phi must be in [0, 1]")
        if phi == 0.0:
            return self.min_val
        if phi == 1.0:
            return self.max_val
        return self.quantiles([phi])[0]

    def quantiles(self, phis: Sequence[float]) -> list[float]:
        """Batch quantiles over one materialization of the sketch."""
        if self.n == 0:
            raise EmptySketch("quantile of an empty sketch")
        values, weights = self._materialize()
        cum = 0
        cumulative: list[int] = []
        for w in weights:
            cum += w
            cumulative.append(cum)
        out: list[float] = []
        for phi in phis:
            if not 0.0 <= phi <= 1.0:
                raise ValueError("phi must be in [0, 1]")
            if phi == 0.0:
                out.append(self.min_val)
                continue
            if phi == 1.0:
                out.append(self.max_val)
                continue
            target = max(1, math.ceil(phi * self.n))
            lo, hi = 0, len(values) - 1
            ans = values[-1]
            while lo <= hi:
                mid = (lo + hi) // 2
                if cumulative[mid] >= target:
                    ans = values[mid]
                    hi = mid - 1
                else:
                    lo = mid + 1
            out.append(ans)
        return out

    def rank(self, value: float) -> int:
        """Estimated count of inserted items <= value."""
        total = 0
        for level, buf in enumerate(self._levels):
            w = 1 << level
            total += w * sum(1 for v in buf if v <= value)
        return total

    # -- introspection / serialization ---------------------------------

    def stored_items(self) -> int:
        return sum(len(buf) for buf in self._levels)

    def weighted_count(self) -> int:
        """Must always equal ``n`` (weight conservation invariant)."""
        return sum(len(buf) << level for level, buf in enumerate(self._levels))

    def copy(self) -> "KllSketch":
        dup = KllSketch(self.k, self._seed)
        dup.n = self.n
        dup.min_val = self.min_val
        dup.max_val = self.max_val
        dup._levels = [list(buf) for buf in self._levels]
        dup._draws = self._draws
        return dup

    def byte_size(self) -> int:
        """Exact length of to_bytes() without materializing it."""
        return 32 + sum(4 + 8 * len(buf) for buf in self._levels)

    def to_bytes(self) -> bytes:
        parts = [struct.pack("<IQdd I", self.k, self.n, self.min_val, self.max_val, len(self._levels))]
        for buf in self._levels:
            parts.append(struct.pack("<I", len(buf)))
            parts.append(struct.pack(f"<{len(buf)}d", *buf))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "KllSketch":
        k, n, mn, mx, nlevels = struct.unpack_from("<IQdd I", data, 0)
        off = struct.calcsize("<IQdd I")
        sketch = cls(k, seed=hash64(n, k))
        sketch.n = n
        sketch.min_val = mn
        sketch.max_val = mx
        sketch._levels = []
        for _ in range(nlevels):
            (cnt,) = struct.unpack_from("<I", data, off)
            off += 4
            sketch._levels.append(list(struct.unpack_from(f"<{cnt}d", data, off)))
            off += 8 * cnt
        if not sketch._levels:
            sketch._levels = [[]]
        return sketch

    def __repr__(self) -> str:  # pragma: no cover
        return f"KllSketch(k={self.k}, n={self.n}, levels={len(self._levels)})"
