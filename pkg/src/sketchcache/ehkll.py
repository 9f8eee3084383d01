"""Sub-window quantiles: an exponential histogram of KLL sketch buckets.

Each insert opens a fresh single-value bucket; the COUNT-regime cascade
merges buckets (and their KLL payloads) as classes fill. A window query
selects the covered bucket range, merges those KLL sketches into a
throwaway sketch, and reads quantiles off it. Rank error composes as
(window alignment) + (sketch compaction): about 2/k_eh + eps_kll.
"""

from __future__ import annotations

import struct
from typing import Any, Sequence

from .ehwindow import COUNT, EhWindow
from .errors import EmptyRange
from .kernels import hash64
from .kll import KllSketch
from .model import SketchConfig, TimeWindow


class _KllOps:
    __slots__ = ("k_kll", "seed")

    def __init__(self, k_kll: int, seed: int):
        self.k_kll = k_kll
        self.seed = seed

    def merge_pair(self, a: KllSketch, b: KllSketch, size_a: float, size_b: float):
        a.merge(b)
        return a, size_a + size_b

    def fold(self, payloads: Sequence[KllSketch]) -> KllSketch:
        return KllSketch.merge_many(payloads, self.k_kll, seed=hash64(len(payloads), self.seed))

    def payload_to_bytes(self, payload: KllSketch) -> bytes:
        return payload.to_bytes()

    def payload_from_bytes(self, data: bytes) -> KllSketch:
        return KllSketch.from_bytes(data)

    def payload_byte_size(self, payload: KllSketch) -> int:
        return payload.byte_size()


class EhKll:
    """Quantile/min/max/count summaries over any sub-window of the last T ms."""

    __slots__ = ("config", "window_ms", "seed", "eh", "_inserts")

    def __init__(self, config: SketchConfig, window_ms: int, seed: int = 0):
        self.config = config
        self.window_ms = window_ms
        self.seed = seed
        self.eh = EhWindow(COUNT, config.k_eh, window_ms, _KllOps(config.k_kll, seed))
        self._inserts = 0

    def insert(self, ts: int, value: float) -> None:
        sketch = KllSketch(self.config.k_kll, seed=hash64(self._inserts, self.seed))
        sketch.update(value)
        self._inserts += 1
        self.eh.insert(ts, sketch, 1)

    def merged_sketch(self, q: TimeWindow) -> KllSketch:
        lo, hi = self.eh.select(q)
        merged = self.eh.merge_range(lo, hi)
        if merged.n == 0:
            raise EmptyRange("selected buckets hold no samples")
        return merged

    def quantile(self, q: TimeWindow, phi: float) -> float:
        return self.merged_sketch(q).quantile(phi)

    def quantiles(self, q: TimeWindow, phis: Sequence[float]) -> list[float]:
        return self.merged_sketch(q).quantiles(phis)

    def min(self, q: TimeWindow) -> float:
        return self.merged_sketch(q).min_val

    def max(self, q: TimeWindow) -> float:
        return self.merged_sketch(q).max_val

    def count(self, q: TimeWindow) -> float:
        """Approximate sample count of the selected range (size-metric mass)."""
        lo, hi = self.eh.select(q)
        return self.eh.range_size(lo, hi)

    @property
    def last_ts(self) -> int:
        return self.eh.last_ts

    def bucket_count(self) -> int:
        return self.eh.bucket_count()

    def check_invariants(self) -> None:
        self.eh.check_invariants()

    # -- serialization ---------------------------------------------------

    _HEADER = struct.Struct("<IIQQ")

    def to_bytes(self) -> bytes:
        head = self._HEADER.pack(self.config.k_eh, self.config.k_kll, self.seed, self._inserts)
        return head + self.eh.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes, config: SketchConfig, window_ms: int) -> "EhKll":
        k_eh, k_kll, seed, inserts = cls._HEADER.unpack_from(data, 0)
        if (k_eh, k_kll) != (config.k_eh, config.k_kll):
            raise ValueError("serialized sketch does not match config")
        inst = cls(config, window_ms, seed)
        inst._inserts = inserts
        inst.eh = EhWindow.from_bytes(data[cls._HEADER.size :], _KllOps(k_kll, seed))
        return inst

    def serialized_bytes(self) -> int:
        return len(self.to_bytes())

    def byte_size(self) -> int:
        """Exact serialized size computed without building the bytes."""
        return self._HEADER.size + self.eh.byte_size()
