"""Sub-window GSum statistics: an L2SQ exponential histogram whose buckets
hold either an exact token-frequency map or a universal sketch.

Small buckets stay exact: a plain dict of token -> count plus the running
sum of squared frequencies. Once a map's estimated serialized size would
exceed what a universal sketch costs under the active config, the bucket
converts by replaying its entries as weighted sketch updates. Bucket merges
follow the three cases: map+map stays exact (and may convert), map+sketch
replays the map into the sketch, sketch+sketch adds counters layerwise and
patches the L2^2 size metric with a clamped inner-product estimate.

Queries fold the selected bucket range: all-map ranges answer exactly;
anything touching a sketch materializes one merged map, replays it into a
clone of the merged sketch, and runs the recursive GSum estimator.
"""

from __future__ import annotations

import math
import struct
from collections import Counter
from typing import Sequence, Union

import numpy as np

from .ehwindow import L2SQ, EhWindow
from .errors import EmptyRange
from .kernels import hash64
from .model import SketchConfig, TimeWindow
from .universal import UnivSketch

MAP_ENTRY_BYTES = 16  # serialized token u64 + count u64


class MapPayload:
    """Exact bucket payload: token frequencies with cached moments."""

    __slots__ = ("counts", "l2sq", "n")

    def __init__(self, counts: dict[int, int], l2sq: int, n: int):
        self.counts = counts
        self.l2sq = l2sq
        self.n = n

    def estimated_bytes(self) -> int:
        return 24 + MAP_ENTRY_BYTES * len(self.counts)


Payload = Union[MapPayload, UnivSketch]


def _replay_into(sketch: UnivSketch, counts: dict[int, int], l2sq: float) -> float:
    """Weighted-update a frequency map into sketch; return updated l2sq."""
    for token, c in counts.items():
        est_after = sketch.update(token, c)
        l2sq += 2.0 * c * max(est_after - c, 0.0) + float(c) * c
    return l2sq


class _UnivOps:
    __slots__ = ("config", "seed", "threshold")

    def __init__(self, config: SketchConfig, seed: int):
        self.config = config
        self.seed = seed
        self.threshold = config.map_threshold()

    def _fresh_sketch(self) -> UnivSketch:
        return UnivSketch(self.config, self.seed)

    def _convert(self, payload: MapPayload) -> UnivSketch:
        sketch = self._fresh_sketch()
        for token, c in payload.counts.items():
            sketch.update(token, c)
        return sketch

    def _maybe_convert(self, payload: MapPayload) -> Payload:
        if payload.estimated_bytes() > self.threshold:
            return self._convert(payload)
        return payload

    def merge_pair(self, a: Payload, b: Payload, size_a: float, size_b: float):
        a_map = isinstance(a, MapPayload)
        b_map = isinstance(b, MapPayload)
        if a_map and b_map:
            big, small = (a, b) if len(a.counts) >= len(b.counts) else (b, a)
            counts = big.counts
            cross = 0
            for token, c in small.counts.items():
                prev = counts.get(token, 0)
                cross += prev * c
                counts[token] = prev + c
            merged = MapPayload(counts, a.l2sq + b.l2sq + 2 * cross, a.n + b.n)
            return self._maybe_convert(merged), float(merged.l2sq)
        if a_map:  # replay the exact side into the sketch side
            return b, _replay_into(b, a.counts, size_b)
        if b_map:
            return a, _replay_into(a, b.counts, size_a)
        inner = sum(x.inner(y) for x, y in zip(a.cs_layers, b.cs_layers))
        clamped = min(max(inner, 0.0), math.sqrt(size_a * size_b))
        a.merge(b)
        return a, size_a + size_b + 2.0 * clamped

    def fold(self, payloads: Sequence[Payload]) -> Payload:
        maps = [p for p in payloads if isinstance(p, MapPayload)]
        sketches = [p for p in payloads if not isinstance(p, MapPayload)]
        if not sketches:
            if len(maps) == 1:
                return maps[0]
            n = sum(m.n for m in maps)
            if not 0 < n < 2**31:  # keep arbitrary-precision ints: l2sq can pass 2^62
                counts: Counter[int] = Counter()
                for m in maps:
                    counts.update(m.counts)
                return MapPayload(counts, sum(c * c for c in counts.values()), n)
            keys = np.concatenate(
                [np.fromiter(m.counts.keys(), np.uint64, len(m.counts)) for m in maps]
            )
            vals = np.concatenate(
                [np.fromiter(m.counts.values(), np.int64, len(m.counts)) for m in maps]
            )
            order = np.argsort(keys, kind="stable")
            keys = keys[order]
            vals = vals[order]
            starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
            sums = np.add.reduceat(vals, starts)
            return MapPayload(
                dict(zip(keys[starts].tolist(), sums.tolist())), int(sums @ sums), n
            )
        merged = sketches[0].copy()
        for s in sketches[1:]:
            merged.merge(s)
        if maps:
            for m in maps:
                for token, c in m.counts.items():
                    merged.update(token, c)
        return merged

    def payload_to_bytes(self, payload: Payload) -> bytes:
        if isinstance(payload, MapPayload):
            head = struct.pack("<BQQI", 0, payload.n, payload.l2sq, len(payload.counts))
            if payload.counts:
                arr = np.empty(2 * len(payload.counts), dtype="<u8")
                arr[0::2] = np.fromiter(payload.counts.keys(), dtype=np.uint64)
                arr[1::2] = np.fromiter(payload.counts.values(), dtype=np.uint64)
                return head + arr.tobytes()
            return head
        return b"\x01" + payload.to_bytes()

    def payload_from_bytes(self, data: bytes) -> Payload:
        if data[0] == 0:
            _, n, l2sq, count = struct.unpack_from("<BQQI", data, 0)
            arr = np.frombuffer(data, dtype="<u8", count=2 * count, offset=21)
            counts = dict(zip(arr[0::2].tolist(), arr[1::2].tolist()))
            return MapPayload(counts, l2sq, n)
        return UnivSketch.from_bytes(data[1:], self.config)

    def payload_byte_size(self, payload: Payload) -> int:
        if isinstance(payload, MapPayload):
            return 21 + 16 * len(payload.counts)
        return 1 + payload.byte_size()


class EhUniv:
    """Distinct/L1/L2/entropy/top-k over any sub-window of the last T ms."""

    __slots__ = ("config", "window_ms", "seed", "eh", "ops")

    def __init__(self, config: SketchConfig, window_ms: int, seed: int = 0):
        self.config = config
        self.window_ms = window_ms
        self.seed = seed
        self.ops = _UnivOps(config, hash64(seed, 0x0B5E55ED))
        self.eh = EhWindow(L2SQ, config.k_eh, window_ms, self.ops)

    def insert(self, ts: int, token: int, weight: int = 1) -> None:
        if weight < 1:
            raise ValueError("weight must be a positive integer")
        w2 = weight * weight
        self.eh.insert(ts, MapPayload({token: weight}, w2, weight), float(w2))

    def _folded(self, q: TimeWindow) -> Payload:
        lo, hi = self.eh.select(q)
        payload = self.eh.merge_range(lo, hi)
        n = payload.n if isinstance(payload, MapPayload) else payload.n_total
        if n <= 0:
            raise EmptyRange("selected buckets hold no tokens")
        return payload

    # -- statistics ------------------------------------------------------

    def distinct(self, q: TimeWindow) -> float:
        p = self._folded(q)
        if isinstance(p, MapPayload):
            return float(len(p.counts))
        return p.distinct()

    def l1(self, q: TimeWindow) -> float:
        p = self._folded(q)
        if isinstance(p, MapPayload):
            return float(p.n)
        return p.l1()

    def l2(self, q: TimeWindow) -> float:
        p = self._folded(q)
        if isinstance(p, MapPayload):
            return math.sqrt(p.l2sq)
        return p.l2()

    def entropy(self, q: TimeWindow) -> float:
        p = self._folded(q)
        if isinstance(p, MapPayload):
            return map_entropy(p.counts, p.n)
        return p.entropy()

    def topk(self, q: TimeWindow, k: int) -> list[tuple[int, float]]:
        if k < 1:
            raise ValueError("k must be >= 1")
        p = self._folded(q)
        if isinstance(p, MapPayload):
            best = sorted(p.counts.items(), key=lambda tc: (-tc[1], tc[0]))[:k]
            return [(t, float(c)) for t, c in best]
        return p.topk(k)

    def frequency(self, q: TimeWindow, token: int) -> float:
        p = self._folded(q)
        if isinstance(p, MapPayload):
            return float(p.counts.get(token, 0))
        return p.estimate(token)

    @property
    def last_ts(self) -> int:
        return self.eh.last_ts

    def bucket_count(self) -> int:
        return self.eh.bucket_count()

    def mode_counts(self) -> dict[str, int]:
        modes = {"MAP": 0, "SKETCH": 0}
        for b in self.eh.buckets:
            modes["MAP" if isinstance(b.payload, MapPayload) else "SKETCH"] += 1
        return modes

    def check_invariants(self) -> None:
        self.eh.check_invariants()

    # -- serialization ---------------------------------------------------

    _HEADER = struct.Struct("<IQQ")

    def to_bytes(self) -> bytes:
        head = self._HEADER.pack(self.config.k_eh, self.seed, self.ops.threshold)
        return head + self.eh.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes, config: SketchConfig, window_ms: int) -> "EhUniv":
        k_eh, seed, _threshold = cls._HEADER.unpack_from(data, 0)
        if k_eh != config.k_eh:
            raise ValueError("serialized sketch does not match config")
        inst = cls(config, window_ms, seed=seed)
        inst.eh = EhWindow.from_bytes(data[cls._HEADER.size :], inst.ops)
        return inst

    def serialized_bytes(self) -> int:
        return len(self.to_bytes())

    def byte_size(self) -> int:
        """Exact serialized size computed without building the bytes."""
        return self._HEADER.size + self.eh.byte_size()


def map_entropy(counts: dict[int, int], n: int) -> float:
    """Exact empirical entropy (bits) of a frequency table."""
    if n <= 0:
        raise EmptyRange("entropy of an empty range")
    arr = np.fromiter(counts.values(), dtype=np.float64, count=len(counts))
    y = float((arr * np.log2(arr, where=arr > 0, out=np.zeros_like(arr))).sum())
    return max(math.log2(n) - y / n, 0.0)
