"""Exponential-histogram bucket engine over a sliding time window.

Buckets are stored oldest -> newest. Every insert appends a fresh singleton
bucket, then a regime-specific merge cascade restores the invariants:

* COUNT: bucket sizes are powers of two and nonincreasing from oldest to
  newest. When a size class exceeds ceil(k/2)+1 members, its two oldest
  buckets merge into the next class, cascading upward. Window count queries
  therefore err only on the single straddling bucket: relative error <= 2/k.

* L2SQ: bucket size is the (estimated) squared L2 mass of the bucket.
  Adjacent pairs merge, oldest first, while the pair's combined mass is at
  most 1/k of everything newer, repeated to a fixpoint. This keeps every
  bucket's mass <= 2/k of the newer suffix (plus one item's own mass), so a
  straddler costs at most a ~2/k relative slice of the window's L2^2.

Payload semantics (what a bucket summarizes) are delegated to a PayloadOps
so the same engine drives quantile sketches and universal sketches.
"""

from __future__ import annotations

import struct
from typing import Any, Protocol, Sequence

import numpy as np

from .errors import EmptyWindow, OutOfOrder, QueryOutsideWindow
from .model import TimeWindow

COUNT = "COUNT"
L2SQ = "L2SQ"


class PayloadOps(Protocol):
    """Payload callbacks the bucket engine needs."""

    def merge_pair(self, a: Any, b: Any, size_a: float, size_b: float) -> tuple[Any, float]:
        """Merge b (newer) into a (older); return (payload, merged size).

        May mutate and reuse ``a``; must leave ``b`` usable only if it never
        reuses it. Both arguments are owned by the engine.
        """
        ...

    def fold(self, payloads: Sequence[Any]) -> Any:
        """Merge a snapshot of payloads into a fresh result, mutating none."""
        ...

    def payload_to_bytes(self, payload: Any) -> bytes: ...

    def payload_from_bytes(self, data: bytes) -> Any: ...

    def payload_byte_size(self, payload: Any) -> int:
        """Exact length payload_to_bytes would produce, without building it."""
        ...


class Bucket:
    __slots__ = ("start", "end", "size", "max_item", "payload")

    def __init__(self, start: int, end: int, size: float, max_item: float, payload: Any):
        self.start = start  # oldest item timestamp in the bucket
        self.end = end  # newest item timestamp in the bucket
        self.size = size  # regime size metric (count, or l2^2 mass)
        self.max_item = max_item  # largest singleton size ever merged in
        self.payload = payload

    def midpoint(self) -> float:
        return 0.5 * (self.start + self.end)


class EhWindow:
    __slots__ = (
        "regime",
        "k_eh",
        "window_ms",
        "ops",
        "buckets",
        "total_size",
        "last_ts",
        "_sizes",
        "_max_items",
    )

    def __init__(self, regime: str, k_eh: int, window_ms: int, ops: PayloadOps):
        if regime not in (COUNT, L2SQ):
            raise ValueError(f"unknown regime {regime!r}")
        if k_eh < 1:
            raise ValueError("k_eh must be >= 1")
        if window_ms <= 0:
            raise ValueError("window_ms must be positive")
        self.regime = regime
        self.k_eh = k_eh
        self.window_ms = window_ms
        self.ops = ops
        self.buckets: list[Bucket] = []
        self.total_size: float = 0
        self.last_ts = -1
        # flat mirrors of bucket size/max_item, kept hot for the cascade and
        # the per-insert invariant monitor
        self._sizes = np.zeros(64, dtype=np.float64)
        self._max_items = np.zeros(64, dtype=np.float64)

    # -- ingest ----------------------------------------------------------

    def insert(self, ts: int, payload: Any, size: float) -> None:
        if ts < self.last_ts:
            raise OutOfOrder(f"timestamp {ts} is older than last seen {self.last_ts}")
        self.last_ts = ts
        self.expire(ts)
        self.buckets.append(Bucket(ts, ts, size, size, payload))
        n = len(self.buckets)
        if n > self._sizes.shape[0]:
            self._sizes = np.concatenate((self._sizes, np.zeros_like(self._sizes)))
            self._max_items = np.concatenate((self._max_items, np.zeros_like(self._max_items)))
        self._sizes[n - 1] = size
        self._max_items[n - 1] = size
        self.total_size += size
        if self.regime == COUNT:
            self._cascade_count()
        else:
            self._cascade_l2sq()

    def expire(self, now: int) -> None:
        """Drop buckets whose newest item has left the retention window."""
        horizon = now - self.window_ms
        buckets = self.buckets
        dropped = 0
        for b in buckets:
            if b.end <= horizon:
                dropped += 1
            else:
                break
        if dropped:
            for b in buckets[:dropped]:
                self.total_size -= b.size
            del buckets[:dropped]
            n = len(buckets)
            self._sizes[:n] = self._sizes[dropped : dropped + n]
            self._max_items[:n] = self._max_items[dropped : dropped + n]
            if not buckets:
                self.total_size = 0

    def _merge_adjacent(self, idx: int) -> None:
        """Merge bucket idx+1 (newer) into bucket idx (older)."""
        a, b = self.buckets[idx], self.buckets[idx + 1]
        self.total_size -= a.size + b.size
        payload, size = self.ops.merge_pair(a.payload, b.payload, a.size, b.size)
        merged = Bucket(a.start, b.end, size, max(a.max_item, b.max_item), payload)
        self.buckets[idx : idx + 2] = [merged]
        n = len(self.buckets)
        sizes = self._sizes
        sizes[idx] = size
        sizes[idx + 1 : n] = sizes[idx + 2 : n + 1]
        maxs = self._max_items
        maxs[idx] = merged.max_item
        maxs[idx + 1 : n] = maxs[idx + 2 : n + 1]
        self.total_size += size

    def _cascade_count(self) -> None:
        cap = -(-self.k_eh // 2) + 1  # ceil(k/2) + 1
        buckets = self.buckets
        i = len(buckets) - 1
        size = 1
        while i >= 0:
            j = i
            while j >= 0 and buckets[j].size == size:
                j -= 1
            if i - j <= cap:
                break
            # class overflow: merge the two oldest of this class
            self._merge_adjacent(j + 1)
            size *= 2
            i = j + 1

    def _cascade_l2sq(self) -> None:
        k = self.k_eh
        while True:
            n = len(self.buckets)
            if n < 2:
                return
            sizes = self._sizes[:n]
            running = np.cumsum(sizes)
            # suffix[j] = mass strictly newer than bucket j
            suffix = running[-1] - running
            mergeable = np.nonzero(sizes[:-1] + sizes[1:] <= suffix[1:] / k)[0]
            if len(mergeable) == 0:
                return
            self._merge_adjacent(int(mergeable[0]))

    # -- selection -------------------------------------------------------

    def select(self, window: TimeWindow) -> tuple[int, int]:
        """Pick the inclusive bucket range [lo, hi] approximating window.

        A bucket straddling an endpoint joins the range only when the
        endpoint sits past the bucket's time midpoint toward the inside of
        the window; if both endpoints land inside one bucket, that single
        bucket is the answer.
        """
        buckets = self.buckets
        if not buckets:
            raise EmptyWindow("no data retained")
        if window.start < self.last_ts - self.window_ms:
            raise QueryOutsideWindow(
                f"window start {window.start} precedes retention horizon "
                f"{self.last_ts - self.window_ms}"
            )
        if window.start >= buckets[-1].end:
            raise EmptyWindow("window starts after the newest sample")
        if window.end < buckets[0].start:
            # the end bound is inclusive: a window ending exactly on the
            # oldest bucket's first item still covers that item
            raise EmptyWindow("window ends before the oldest retained sample")

        # oldest bucket with items possibly inside: first with end > start
        lo = 0
        while buckets[lo].end <= window.start:
            lo += 1
        straddle_lo = buckets[lo].start <= window.start
        # newest bucket with items possibly inside: last with start <= end
        hi = len(buckets) - 1
        while buckets[hi].start > window.end:
            hi -= 1
        straddle_hi = window.end < buckets[hi].end

        if lo == hi and (straddle_lo or straddle_hi):
            return lo, hi  # both endpoints inside one bucket: use it as-is
        if straddle_lo and window.start >= buckets[lo].midpoint():
            lo += 1
        if straddle_hi and window.end < buckets[hi].midpoint():
            hi -= 1
        if lo > hi:
            raise EmptyWindow("window too narrow: no bucket lies inside it")
        return lo, hi

    def merge_range(self, lo: int, hi: int) -> Any:
        """Fold payloads of buckets lo..hi into a fresh summary."""
        return self.ops.fold([b.payload for b in self.buckets[lo : hi + 1]])

    def range_size(self, lo: int, hi: int) -> float:
        return float(sum(b.size for b in self.buckets[lo : hi + 1]))

    def query(self, window: TimeWindow) -> Any:
        lo, hi = self.select(window)
        return self.merge_range(lo, hi)

    # -- introspection ---------------------------------------------------

    def bucket_count(self) -> int:
        return len(self.buckets)

    def size_classes(self) -> dict[int, int]:
        """COUNT regime: map size -> number of buckets of that size."""
        classes: dict[int, int] = {}
        for b in self.buckets:
            classes[int(b.size)] = classes.get(int(b.size), 0) + 1
        return classes

    def check_invariants(self) -> None:
        """Raise AssertionError when the regime invariants are violated."""
        buckets = self.buckets
        if not buckets:
            return
        sizes = self._sizes[: len(buckets)]
        running = np.cumsum(sizes)
        suffix = running[-1] - running
        if self.regime == COUNT:
            ints = sizes.astype(np.int64)
            assert np.all(ints == sizes), "COUNT sizes must be integers"
            assert np.all(ints & (ints - 1) == 0), "sizes must be powers of two"
            assert np.all(np.diff(ints) <= 0), "sizes must be nonincreasing oldest->newest"
            # per-bucket growth bound: C_j <= (2/k)*(1 + sum newer) + 1
            assert np.all(sizes <= (2.0 / self.k_eh) * (1.0 + suffix) + 1.0), (
                "bucket size bound violated"
            )
            cap = -(-self.k_eh // 2) + 1
            vals, counts = np.unique(ints, return_counts=True)  # ascending sizes
            assert int(counts.max()) <= cap, "a size class exceeds its multiplicity cap"
            if vals.shape[0] > 1:
                assert int(counts[:-1].min()) >= cap - 1, (
                    "a non-largest size class is underfull"
                )
        else:
            max_items = self._max_items[: len(buckets)]
            # no adjacent pair may still be mergeable (with float-slop tolerance)
            if len(sizes) >= 2:
                pair = sizes[:-1] + sizes[1:]
                assert np.all(pair > suffix[1:] / self.k_eh - 1e-9 * (1.0 + suffix[1:])), (
                    "adjacent pair still mergeable"
                )
            # per-bucket mass bound: f(B_j) <= (2/k) * suffix + own largest item
            assert np.all(
                sizes <= (2.0 / self.k_eh) * suffix + max_items + 1e-9 * (1.0 + suffix)
            ), "bucket mass bound violated"

    # -- serialization -----------------------------------------------------

    _HEADER = struct.Struct("<4sBIQqdI")
    _MAGIC = b"EHW1"

    def byte_size(self) -> int:
        """Exact length of to_bytes() without materializing it."""
        return self._HEADER.size + sum(
            36 + self.ops.payload_byte_size(b.payload) for b in self.buckets
        )

    def to_bytes(self) -> bytes:
        parts = [
            self._HEADER.pack(
                self._MAGIC,
                0 if self.regime == COUNT else 1,
                self.k_eh,
                self.window_ms,
                self.last_ts,
                float(self.total_size),
                len(self.buckets),
            )
        ]
        for b in self.buckets:
            blob = self.ops.payload_to_bytes(b.payload)
            parts.append(struct.pack("<qqddI", b.start, b.end, b.size, b.max_item, len(blob)))
            parts.append(blob)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, ops: PayloadOps) -> "EhWindow":
        magic, regime_code, k_eh, window_ms, last_ts, total, count = cls._HEADER.unpack_from(
            data, 0
        )
        if magic != cls._MAGIC:
            raise ValueError("bad bucket-window header")
        eh = cls(COUNT if regime_code == 0 else L2SQ, k_eh, window_ms, ops)
        eh.last_ts = last_ts
        eh.total_size = total if regime_code else int(total)
        off = cls._HEADER.size
        rec = struct.Struct("<qqddI")
        for _ in range(count):
            start, end, size, max_item, blob_len = rec.unpack_from(data, off)
            off += rec.size
            payload = ops.payload_from_bytes(data[off : off + blob_len])
            off += blob_len
            if regime_code == 0:
                size = int(size)
            eh.buckets.append(Bucket(start, end, size, max_item, payload))
        n = len(eh.buckets)
        if n > eh._sizes.shape[0]:
            cap = max(64, 1 << (n - 1).bit_length())
            eh._sizes = np.zeros(cap, dtype=np.float64)
            eh._max_items = np.zeros(cap, dtype=np.float64)
        for i, b in enumerate(eh.buckets):
            eh._sizes[i] = b.size
            eh._max_items[i] = b.max_item
        return eh
