"""Pure-Python hot kernels.

Twin of the compiled module ``_ckernels``: every function here must be
bit-identical to its compiled counterpart, because sketch state built on
one backend has to replay on the other (tests assert this). The scalar
paths use plain Python integers masked to 64 bits; the batch paths use
numpy uint64 arithmetic, which wraps modulo 2**64 like C does.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

_M64 = 0xFFFFFFFFFFFFFFFF
_X_MULT = 0x9E3779B97F4A7C15
_SEED_MULT = 0xC2B2AE3D27D4EB4F
_F1 = 0xBF58476D1CE4E5B9
_F2 = 0x94D049BB133111EB


def hash64(x: int, seed: int) -> int:
    """Seeded 64-bit mix (splitmix64 finalizer over x and seed)."""
    z = (x * _X_MULT + seed * _SEED_MULT) & _M64
    z ^= z >> 30
    z = (z * _F1) & _M64
    z ^= z >> 27
    z = (z * _F2) & _M64
    z ^= z >> 31
    return z


def hash64_many(xs: np.ndarray, seed: int) -> np.ndarray:
    """Vector form of :func:`hash64` over a uint64 array."""
    with np.errstate(over="ignore"):
        z = xs * np.uint64(_X_MULT) + np.uint64((seed * _SEED_MULT) & _M64)
        z ^= z >> np.uint64(30)
        z *= np.uint64(_F1)
        z ^= z >> np.uint64(27)
        z *= np.uint64(_F2)
        z ^= z >> np.uint64(31)
    return z


def sample_depth(token: int, layer_seeds: np.ndarray) -> int:
    """Deepest sampled layer: longest prefix of 1-bits over per-layer hashes.

    Layer 0 receives every token; token is active in layer j>0 iff the
    seeded coin of every layer 1..j came up 1.
    """
    depth = 0
    n = len(layer_seeds)
    for j in range(1, n):
        if hash64(token, int(layer_seeds[j])) & 1:
            depth = j
        else:
            break
    return depth


def sample_depth_many(tokens: np.ndarray, layer_seeds: np.ndarray) -> np.ndarray:
    """Vector form of :func:`sample_depth`."""
    depth = np.zeros(len(tokens), dtype=np.int64)
    alive = np.ones(len(tokens), dtype=bool)
    for j in range(1, len(layer_seeds)):
        if not alive.any():
            break
        bits = hash64_many(tokens, int(layer_seeds[j])) & np.uint64(1)
        alive &= bits == 1
        depth[alive] = j
    return depth


def cs_update_est(
    counters: np.ndarray, row_seeds: np.ndarray, token: int, weight: int, mask: int
) -> float:
    """Apply one Count-Sketch update; return the post-update estimate.

    One hash per row: low bits choose the column, bit 63 the sign. The
    returned value is the median over rows of sign*counter after the
    update (the pre-update estimate is exactly this minus ``weight``).
    """
    rows = counters.shape[0]
    ests = []
    for r in range(rows):
        h = hash64(token, int(row_seeds[r]))
        col = h & mask
        sign = 1 if (h >> 63) else -1
        counters[r, col] += sign * weight
        ests.append(sign * int(counters[r, col]))
    ests.sort()
    mid = rows // 2
    if rows % 2:
        return float(ests[mid])
    return (ests[mid - 1] + ests[mid]) / 2.0


def cs_estimate(counters: np.ndarray, row_seeds: np.ndarray, token: int, mask: int) -> float:
    """Median over rows of sign(token)*counter[row][bucket(token)]."""
    rows = counters.shape[0]
    ests = []
    for r in range(rows):
        h = hash64(token, int(row_seeds[r]))
        col = h & mask
        sign = 1 if (h >> 63) else -1
        ests.append(sign * int(counters[r, col]))
    ests.sort()
    mid = rows // 2
    if rows % 2:
        return float(ests[mid])
    return (ests[mid - 1] + ests[mid]) / 2.0


def cs_estimate_many(
    counters: np.ndarray, row_seeds: np.ndarray, tokens: np.ndarray, mask: int
) -> np.ndarray:
    """Batch :func:`cs_estimate` (vectorized per row, median across rows)."""
    rows = counters.shape[0]
    out = np.empty((rows, len(tokens)), dtype=np.float64)
    m = np.uint64(mask)
    for r in range(rows):
        h = hash64_many(tokens, int(row_seeds[r]))
        cols = (h & m).astype(np.int64)
        signs = np.where((h >> np.uint64(63)) > 0, 1.0, -1.0)
        out[r] = signs * counters[r, cols]
    return np.median(out, axis=0)


def admit_one(seed: int, index: int, p: float) -> bool:
    """Deterministic Bernoulli(p) admission for the sample at ``index``."""
    if p >= 1.0:
        return True
    if p <= 0.0:
        return False
    return hash64(index, seed) < int(p * 2.0**64)


def admit_mask(seed: int, start_index: int, count: int, p: float) -> np.ndarray:
    """Vector of admission decisions for indices start..start+count-1."""
    if p >= 1.0:
        return np.ones(count, dtype=bool)
    if p <= 0.0:
        return np.zeros(count, dtype=bool)
    idx = np.arange(start_index, start_index + count, dtype=np.uint64)
    thresh = np.uint64(int(p * 2.0**64))
    return hash64_many(idx, seed) < thresh
