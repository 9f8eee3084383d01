"""Universal sketch: layered Count Sketches answering GSum statistics.

Layer 0 sees every token; each deeper layer keeps a ~1/2 subsample of the
one above it (per-token seeded coins, so membership is a pure function of
the token). An update touches exactly one layer — the token's deepest
sampled one — which also records the token's *full* frequency there, since
layer membership is nested. Per layer a bounded heavy-hitter heap tracks
the hottest tokens; the recursive GSum estimator de-randomizes the tracked
tokens and doubles its way up through the subsampled tail.

Supported statistics: L0 (distinct), L1, L2, and entropy
``log2(n) - (1/n) * sum f_i*log2(f_i)``.
"""

from __future__ import annotations

import heapq
import math
import struct
from typing import Callable

import numpy as np

from .errors import EmptySketch, MismatchedConfig
from .kernels import cs_estimate, cs_estimate_many, cs_update_est, hash64, hash64_many, sample_depth
from .model import SketchConfig

_U64_MASK = (1 << 64) - 1

_LAYER_SALT = 0xC0FFEE0DDBA11
_ROW_SALT = 0x5EED5EED5EED

HH_CAPACITY_CAP = 1024


class CountSketch:
    """One rows x cols signed-counter sketch. cols must be a power of two."""

    __slots__ = ("rows", "cols", "seed", "counters", "_row_seeds", "_mask")

    def __init__(self, rows: int, cols: int, seed: int):
        if cols & (cols - 1):
            raise ValueError("cols must be a power of two")
        self.rows = rows
        self.cols = cols
        self.seed = seed
        self.counters = np.zeros((rows, cols), dtype=np.int64)
        self._row_seeds = np.array([hash64(r, seed) for r in range(rows)], dtype=np.uint64)
        self._mask = cols - 1

    def update_est(self, token: int, weight: int) -> float:
        """Add weight; return the post-update median estimate for token."""
        return cs_update_est(self.counters, self._row_seeds, token, weight, self._mask)

    def estimate(self, token: int) -> float:
        return cs_estimate(self.counters, self._row_seeds, token, self._mask)

    def estimate_many(self, tokens: np.ndarray) -> np.ndarray:
        if len(tokens) == 0:
            return np.empty(0, dtype=np.float64)
        return cs_estimate_many(self.counters, self._row_seeds, tokens, self._mask)

    def merge(self, other: "CountSketch") -> None:
        if (other.rows, other.cols, other.seed) != (self.rows, self.cols, self.seed):
            raise MismatchedConfig("count-sketch shape/seed mismatch")
        self.counters += other.counters

    def inner(self, other: "CountSketch") -> float:
        """Median-over-rows inner-product estimate between two sketches."""
        if (other.rows, other.cols, other.seed) != (self.rows, self.cols, self.seed):
            raise MismatchedConfig("count-sketch shape/seed mismatch")
        dots = (self.counters * other.counters).sum(axis=1)
        return float(np.median(dots))

    def copy(self) -> "CountSketch":
        dup = CountSketch(self.rows, self.cols, self.seed)
        dup.counters = self.counters.copy()
        return dup


class _HitterHeap:
    """Bounded token->estimate map with lazy min-heap eviction."""

    __slots__ = ("cap", "entries", "_heap")

    def __init__(self, cap: int):
        self.cap = cap
        self.entries: dict[int, float] = {}
        self._heap: list[tuple[float, int]] = []

    def put(self, token: int, est: float) -> None:
        if token in self.entries or len(self.entries) < self.cap:
            self.entries[token] = est
            heapq.heappush(self._heap, (est, token))
        else:
            h = self._heap
            while h and self.entries.get(h[0][1]) != h[0][0]:
                heapq.heappop(h)
            if h and est > h[0][0]:
                _, victim = heapq.heappop(h)
                del self.entries[victim]
                self.entries[token] = est
                heapq.heappush(h, (est, token))
        if len(self._heap) > 4 * self.cap + 16:
            self._heap = [(e, t) for t, e in self.entries.items()]
            heapq.heapify(self._heap)

    def rebuild(self, entries: dict[int, float]) -> None:
        if len(entries) > self.cap:
            top = heapq.nlargest(self.cap, entries.items(), key=lambda kv: kv[1])
            entries = dict(top)
        self.entries = entries
        self._heap = [(e, t) for t, e in entries.items()]
        heapq.heapify(self._heap)


def _g_l0(est: np.ndarray) -> np.ndarray:
    return (est >= 0.5).astype(np.float64)


def _g_l1(est: np.ndarray) -> np.ndarray:
    return np.maximum(est, 0.0)


def _g_l2sq(est: np.ndarray) -> np.ndarray:
    e = np.maximum(est, 0.0)
    return e * e


def _g_entropy(est: np.ndarray) -> np.ndarray:
    e = np.maximum(est, 1.0)
    out = e * np.log2(e)
    return np.where(est >= 1.0, out, 0.0)


_G_FUNCS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "L0": _g_l0,
    "L1": _g_l1,
    "L2SQ": _g_l2sq,
    "ENTROPY": _g_entropy,
}


class UnivSketch:
    __slots__ = ("config", "seed", "n_total", "layer_seeds", "cs_layers", "hh_heaps")

    def __init__(self, config: SketchConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.n_total = 0
        layers = config.univ_layers
        self.layer_seeds = np.array(
            [hash64(j, seed ^ _LAYER_SALT) for j in range(layers)], dtype=np.uint64
        )
        self.cs_layers = [
            CountSketch(config.cs_rows, config.layer_cols(j), hash64(j, seed ^ _ROW_SALT))
            for j in range(layers)
        ]
        self.hh_heaps = [
            _HitterHeap(min(HH_CAPACITY_CAP, 2 * config.cs_rows * config.layer_cols(j)))
            for j in range(layers)
        ]

    # -- updates -------------------------------------------------------

    def depth(self, token: int) -> int:
        return sample_depth(token, self.layer_seeds)

    def update(self, token: int, weight: int = 1) -> float:
        """One-layer update; returns the token's post-update estimate."""
        d = sample_depth(token, self.layer_seeds)
        est = self.cs_layers[d].update_est(token, weight)
        self.hh_heaps[d].put(token, est)
        self.n_total += weight
        return est

    def merge(self, other: "UnivSketch") -> None:
        if other.seed != self.seed or other.config.univ_layers != self.config.univ_layers:
            raise MismatchedConfig("universal sketch lineage mismatch")
        for mine, theirs in zip(self.cs_layers, other.cs_layers):
            mine.merge(theirs)
        self.n_total += other.n_total
        for j in range(self.config.univ_layers):
            union = set(self.hh_heaps[j].entries) | set(other.hh_heaps[j].entries)
            if union:
                toks = np.fromiter(union, dtype=np.uint64, count=len(union))
                ests = self.cs_layers[j].estimate_many(toks)
                self.hh_heaps[j].rebuild(dict(zip((int(t) for t in toks), ests.tolist())))

    def copy(self) -> "UnivSketch":
        dup = UnivSketch(self.config, self.seed)
        dup.n_total = self.n_total
        for j, cs in enumerate(self.cs_layers):
            dup.cs_layers[j].counters = cs.counters.copy()
            dup.hh_heaps[j].rebuild(dict(self.hh_heaps[j].entries))
        return dup

    # -- queries -------------------------------------------------------

    def _ranked_entries(self) -> tuple[np.ndarray, np.ndarray]:
        """Tracked (estimate, depth) pairs ordered best estimate first.

        A token lives in exactly one heap (at its sampling depth) and its
        counter row holds its full count, so one estimate per token serves
        every layer that token is active in. Ties are broken by a hash of
        the token: within a tie class the selection below must not favour
        shallow over deep tokens (or vice versa), otherwise the +/- signs
        in the correction stop cancelling and the estimate drifts.
        """
        ests: list[np.ndarray] = []
        depths: list[np.ndarray] = []
        ties: list[np.ndarray] = []
        for j, heap in enumerate(self.hh_heaps):
            if not heap.entries:
                continue
            toks = np.fromiter(heap.entries, dtype=np.uint64, count=len(heap.entries))
            ests.append(self.cs_layers[j].estimate_many(toks))
            depths.append(np.full(len(toks), j, dtype=np.int64))
            ties.append(hash64_many(toks, (self.seed + 0x9E37) & _U64_MASK))
        if not ests:
            return np.empty(0, dtype=np.float64), np.empty(0, dtype=np.int64)
        est_all = np.concatenate(ests)
        depth_all = np.concatenate(depths)
        order = np.lexsort((np.concatenate(ties), -est_all))
        return est_all[order], depth_all[order]

    def gsum(self, stat: str) -> float:
        """Recursive GSum: de-randomized heavy part + doubled subsampled tail.

        Walking from the deepest layer down to layer 0:
        Y_j = 2*Y_{j+1} + sum over the layer's heavy set of
        (1 - 2*[token also active in layer j+1]) * g(est). The heavy set at
        layer j is the top-k (by estimate) of every tracked token still
        active there, i.e. with sampling depth >= j. A deep token enters
        with a minus sign, cancelling the doubled copy of its own exact
        count, so every selected token is counted exactly once; dropped
        and untracked tokens ride the unbiased doubling argument instead.
        """
        if self.n_total <= 0:
            raise EmptySketch("gsum of an empty sketch")
        g = _G_FUNCS[stat]
        ests, depths = self._ranked_entries()
        if len(ests) == 0:
            return 0.0
        gvals = g(ests)
        y = 0.0
        for j in range(self.config.univ_layers - 1, -1, -1):
            idx = np.nonzero(depths >= j)[0][: self.hh_heaps[j].cap]
            if len(idx):
                signs = np.where(depths[idx] == j, 1.0, -1.0)
                y = 2.0 * y + float(signs @ gvals[idx])
            else:
                y = 2.0 * y
        return y

    def distinct(self) -> float:
        return max(self.gsum("L0"), 0.0)

    def l1(self) -> float:
        return max(self.gsum("L1"), 0.0)

    def l2(self) -> float:
        return math.sqrt(max(self.gsum("L2SQ"), 0.0))

    def entropy(self) -> float:
        if self.n_total <= 0:
            raise EmptySketch("entropy of an empty sketch")
        y = self.gsum("ENTROPY")
        return max(math.log2(self.n_total) - y / self.n_total, 0.0)

    def estimate(self, token: int) -> float:
        return self.cs_layers[self.depth(token)].estimate(token)

    def topk(self, k: int) -> list[tuple[int, float]]:
        """Highest-estimate candidates from the layer-0 heavy-hitter set.

        With one-layer updates, layer 0's logical candidate set is the
        union of every depth's heap (layer 0 samples all tokens).
        """
        cands: list[tuple[int, float]] = []
        for j, heap in enumerate(self.hh_heaps):
            if not heap.entries:
                continue
            toks = np.fromiter(heap.entries, dtype=np.uint64, count=len(heap.entries))
            ests = self.cs_layers[j].estimate_many(toks)
            cands.extend(zip((int(t) for t in toks), ests.tolist()))
        cands.sort(key=lambda te: (-te[1], te[0]))
        return cands[:k]

    # -- serialization ---------------------------------------------------

    def byte_size(self) -> int:
        """Exact length of to_bytes() without materializing it."""
        total = 18  # <QQBB header
        for j, cs in enumerate(self.cs_layers):
            total += 8 + cs.rows * cs.cols * 8 + 16 * len(self.hh_heaps[j].entries)
        return total

    def to_bytes(self) -> bytes:
        cfg = self.config
        parts = [
            struct.pack(
                "<QQBB", self.seed, self.n_total, cfg.univ_layers, cfg.cs_rows
            )
        ]
        for j, cs in enumerate(self.cs_layers):
            entries = self.hh_heaps[j].entries
            parts.append(struct.pack("<II", cs.cols, len(entries)))
            parts.append(np.ascontiguousarray(cs.counters, dtype="<i8").tobytes())
            for token, est in entries.items():
                parts.append(struct.pack("<Qd", token, est))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, config: SketchConfig) -> "UnivSketch":
        seed, n_total, layers, rows = struct.unpack_from("<QQBB", data, 0)
        if layers != config.univ_layers or rows != config.cs_rows:
            raise MismatchedConfig("serialized universal sketch does not match config")
        off = struct.calcsize("<QQBB")
        sketch = cls(config, seed)
        sketch.n_total = n_total
        for j in range(layers):
            cols, n_entries = struct.unpack_from("<II", data, off)
            off += 8
            if cols != config.layer_cols(j):
                raise MismatchedConfig("serialized layer width does not match config")
            nbytes = rows * cols * 8
            counters = np.frombuffer(data, dtype="<i8", count=rows * cols, offset=off)
            sketch.cs_layers[j].counters = counters.reshape(rows, cols).astype(np.int64)
            off += nbytes
            entries: dict[int, float] = {}
            for _ in range(n_entries):
                token, est = struct.unpack_from("<Qd", data, off)
                off += 16
                entries[token] = est
            sketch.hh_heaps[j].rebuild(entries)
        return sketch
