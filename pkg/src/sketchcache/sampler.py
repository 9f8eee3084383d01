"""Sliding-window uniform sampling for moment statistics.

Admission is a deterministic coin per stream position: sample i is kept iff
hash(i, seed) falls below p * 2^64, so a given (seed, stream) always keeps
the same subset and replays are reproducible. Retained samples live in a
time-sorted array pair; sub-window queries binary-search the span and
compute moments on the retained points (mean is self-normalized, SUM and
COUNT are inverse-probability scaled, variance is the unbiased n-1 form).
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .errors import EmptyRange, InsufficientSamples, OutOfOrder
from .kernels import admit_mask, admit_one
from .model import TimeWindow

AVG = "AVG"
SUM = "SUM"
COUNT = "COUNT"
STDDEV = "STDDEV"
STDVAR = "STDVAR"

STATS = (AVG, SUM, COUNT, STDDEV, STDVAR)


class SampleWindow:
    __slots__ = ("p", "window_ms", "seed", "last_ts", "_ts", "_vals", "_lo", "_hi", "_index")

    def __init__(self, p: float, window_ms: int, seed: int = 0):
        if not 0.0 < p <= 1.0:
            raise ValueError("sampling probability must be in (0, 1]")
        if window_ms <= 0:
            raise ValueError("window_ms must be positive")
        self.p = p
        self.window_ms = window_ms
        self.seed = seed
        self.last_ts = -1
        self._ts = np.empty(1024, dtype=np.int64)
        self._vals = np.empty(1024, dtype=np.float64)
        self._lo = 0
        self._hi = 0
        self._index = 0  # stream position over all offered samples

    # -- ingest ----------------------------------------------------------

    def _grow(self, needed: int) -> None:
        cap = self._ts.shape[0]
        if self._hi + needed <= cap:
            return
        live = self._hi - self._lo
        new_cap = max(cap, 1024)
        while new_cap < live + needed:
            new_cap *= 2
        ts = np.empty(new_cap, dtype=np.int64)
        vals = np.empty(new_cap, dtype=np.float64)
        ts[:live] = self._ts[self._lo : self._hi]
        vals[:live] = self._vals[self._lo : self._hi]
        self._ts, self._vals = ts, vals
        self._lo, self._hi = 0, live

    def _evict(self, now: int) -> None:
        horizon = now - self.window_ms
        if self._hi > self._lo and self._ts[self._lo] <= horizon:
            self._lo = int(
                np.searchsorted(self._ts[self._lo : self._hi], horizon, side="right")
                + self._lo
            )
        if self._lo > 65536 and self._lo * 2 > self._hi:
            live = self._hi - self._lo
            self._ts[:live] = self._ts[self._lo : self._hi]
            self._vals[:live] = self._vals[self._lo : self._hi]
            self._lo, self._hi = 0, live

    def insert(self, ts: int, value: float) -> None:
        if ts < self.last_ts:
            raise OutOfOrder(f"timestamp {ts} is older than last seen {self.last_ts}")
        self.last_ts = ts
        if admit_one(self.seed, self._index, self.p):
            self._grow(1)
            self._ts[self._hi] = ts
            self._vals[self._hi] = value
            self._hi += 1
        self._index += 1
        self._evict(ts)

    def extend(self, ts: np.ndarray, values: np.ndarray) -> None:
        """Bulk insert of a time-sorted batch."""
        if len(ts) == 0:
            return
        ts = np.asarray(ts, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if ts[0] < self.last_ts or np.any(np.diff(ts) < 0):
            raise OutOfOrder("batch timestamps must be nondecreasing")
        mask = admit_mask(self.seed, self._index, len(ts), self.p)
        self._index += len(ts)
        kept_ts = ts[mask]
        if kept_ts.shape[0]:
            kept_vals = values[mask]
            self._grow(kept_ts.shape[0])
            self._ts[self._hi : self._hi + kept_ts.shape[0]] = kept_ts
            self._vals[self._hi : self._hi + kept_ts.shape[0]] = kept_vals
            self._hi += kept_ts.shape[0]
        self.last_ts = int(ts[-1])
        self._evict(self.last_ts)

    # -- queries ---------------------------------------------------------

    def retained(self) -> int:
        return self._hi - self._lo

    def oldest_ts(self) -> int | None:
        return int(self._ts[self._lo]) if self._hi > self._lo else None

    def _select(self, q: TimeWindow) -> np.ndarray:
        view = self._ts[self._lo : self._hi]
        i0 = int(np.searchsorted(view, q.start, side="right"))
        i1 = int(np.searchsorted(view, q.end, side="right"))
        if i1 <= i0:
            raise EmptyRange("no retained samples in the window")
        return self._vals[self._lo + i0 : self._lo + i1]

    def query(self, q: TimeWindow, stat: str) -> float:
        vals = self._select(q)
        if stat == AVG:
            return float(np.mean(vals))
        if stat == SUM:
            return float(np.sum(vals)) / self.p
        if stat == COUNT:
            return float(vals.shape[0]) / self.p
        if stat in (STDDEV, STDVAR):
            if vals.shape[0] < 2:
                raise InsufficientSamples("variance needs at least 2 retained samples")
            var = float(np.var(vals, ddof=1))
            return math.sqrt(var) if stat == STDDEV else var
        raise ValueError(f"unknown statistic {stat!r}")

    # -- serialization ---------------------------------------------------

    _HEADER = struct.Struct("<dQQqQI")

    def to_bytes(self) -> bytes:
        live = self.retained()
        head = self._HEADER.pack(
            self.p, self.window_ms, self.seed, self.last_ts, self._index, live
        )
        ts = np.ascontiguousarray(self._ts[self._lo : self._hi], dtype="<i8")
        vals = np.ascontiguousarray(self._vals[self._lo : self._hi], dtype="<f8")
        return head + ts.tobytes() + vals.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "SampleWindow":
        p, window_ms, seed, last_ts, index, live = cls._HEADER.unpack_from(data, 0)
        s = cls(p, window_ms, seed)
        s.last_ts = last_ts
        s._index = index
        off = cls._HEADER.size
        s._grow(live)
        s._ts[:live] = np.frombuffer(data, dtype="<i8", count=live, offset=off)
        off += 8 * live
        s._vals[:live] = np.frombuffer(data, dtype="<f8", count=live, offset=off)
        s._hi = live
        return s

    def serialized_bytes(self) -> int:
        return self._HEADER.size + 16 * self.retained()
