# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Bit-identical twin of ``_pykernels``.

Keep both modules in lockstep: sketch bytes built on one backend must
replay on the other, and tests assert exact equality of the outputs.
"""

import numpy as np

cimport numpy as cnp

BACKEND = "cython"

cdef unsigned long long _X_MULT = 0x9E3779B97F4A7C15ULL
cdef unsigned long long _SEED_MULT = 0xC2B2AE3D27D4EB4FULL
cdef unsigned long long _F1 = 0xBF58476D1CE4E5B9ULL
cdef unsigned long long _F2 = 0x94D049BB133111EBULL
cdef double _TWO64 = 18446744073709551616.0


cdef inline unsigned long long _hash64(unsigned long long x, unsigned long long seed) nogil:
    cdef unsigned long long z = x * _X_MULT + seed * _SEED_MULT
    z ^= z >> 30
    z *= _F1
    z ^= z >> 27
    z *= _F2
    z ^= z >> 31
    return z


def hash64(x, seed):
    """Seeded 64-bit mix (splitmix64 finalizer over x and seed)."""
    return _hash64(<unsigned long long> (x & 0xFFFFFFFFFFFFFFFF),
                   <unsigned long long> (seed & 0xFFFFFFFFFFFFFFFF))


def hash64_many(cnp.ndarray xs, seed):
    """Vector form of :func:`hash64` over a uint64 array."""
    cdef unsigned long long[::1] v = np.ascontiguousarray(xs, dtype=np.uint64)
    cdef unsigned long long s = <unsigned long long> (seed & 0xFFFFFFFFFFFFFFFF)
    out = np.empty(v.shape[0], dtype=np.uint64)
    cdef unsigned long long[::1] o = out
    cdef Py_ssize_t i
    for i in range(v.shape[0]):
        o[i] = _hash64(v[i], s)
    return out


def sample_depth(token, layer_seeds):
    """Deepest sampled layer: longest prefix of 1-bits over per-layer hashes."""
    cdef unsigned long long[::1] seeds = np.ascontiguousarray(layer_seeds, dtype=np.uint64)
    cdef unsigned long long t = <unsigned long long> (token & 0xFFFFFFFFFFFFFFFF)
    cdef int depth = 0
    cdef Py_ssize_t j
    for j in range(1, seeds.shape[0]):
        if _hash64(t, seeds[j]) & 1ULL:
            depth = <int> j
        else:
            break
    return depth


def sample_depth_many(cnp.ndarray tokens, layer_seeds):
    """Vector form of :func:`sample_depth`."""
    cdef unsigned long long[::1] toks = np.ascontiguousarray(tokens, dtype=np.uint64)
    cdef unsigned long long[::1] seeds = np.ascontiguousarray(layer_seeds, dtype=np.uint64)
    out = np.zeros(toks.shape[0], dtype=np.int64)
    cdef long long[::1] o = out
    cdef Py_ssize_t i, j
    cdef int depth
    cdef Py_ssize_t L = seeds.shape[0]
    for i in range(toks.shape[0]):
        depth = 0
        for j in range(1, L):
            if _hash64(toks[i], seeds[j]) & 1ULL:
                depth = <int> j
            else:
                break
        o[i] = depth
    return out


cdef inline double _median_ll(long long* ests, int rows) nogil:
    # insertion sort; rows is tiny (typically 3)
    cdef int i, j
    cdef long long key
    for i in range(1, rows):
        key = ests[i]
        j = i - 1
        while j >= 0 and ests[j] > key:
            ests[j + 1] = ests[j]
            j -= 1
        ests[j + 1] = key
    if rows % 2:
        return <double> ests[rows // 2]
    return (ests[rows // 2 - 1] + ests[rows // 2]) / 2.0


def cs_update_est(long long[:, ::1] counters, unsigned long long[::1] row_seeds,
                  token, weight, mask):
    """Apply one Count-Sketch update; return the post-update estimate."""
    cdef unsigned long long t = <unsigned long long> (token & 0xFFFFFFFFFFFFFFFF)
    cdef unsigned long long m = <unsigned long long> mask
    cdef long long w = <long long> weight
    cdef int rows = <int> counters.shape[0]
    cdef long long ests[64]
    cdef unsigned long long h
    cdef Py_ssize_t col
    cdef long long sign
    cdef int r
    for r in range(rows):
        h = _hash64(t, row_seeds[r])
        col = <Py_ssize_t> (h & m)
        sign = 1 if (h >> 63) else -1
        counters[r, col] += sign * w
        ests[r] = sign * counters[r, col]
    return _median_ll(ests, rows)


def cs_estimate(long long[:, ::1] counters, unsigned long long[::1] row_seeds, token, mask):
    """Median over rows of sign(token)*counter[row][bucket(token)]."""
    cdef unsigned long long t = <unsigned long long> (token & 0xFFFFFFFFFFFFFFFF)
    cdef unsigned long long m = <unsigned long long> mask
    cdef int rows = <int> counters.shape[0]
    cdef long long ests[64]
    cdef unsigned long long h
    cdef Py_ssize_t col
    cdef long long sign
    cdef int r
    for r in range(rows):
        h = _hash64(t, row_seeds[r])
        col = <Py_ssize_t> (h & m)
        sign = 1 if (h >> 63) else -1
        ests[r] = sign * counters[r, col]
    return _median_ll(ests, rows)


def cs_estimate_many(long long[:, ::1] counters, unsigned long long[::1] row_seeds,
                     cnp.ndarray tokens, mask):
    """Batch :func:`cs_estimate`."""
    cdef unsigned long long[::1] toks = np.ascontiguousarray(tokens, dtype=np.uint64)
    cdef unsigned long long m = <unsigned long long> mask
    cdef int rows = <int> counters.shape[0]
    out = np.empty(toks.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    cdef long long ests[64]
    cdef unsigned long long h
    cdef Py_ssize_t col, i
    cdef long long sign
    cdef int r
    for i in range(toks.shape[0]):
        for r in range(rows):
            h = _hash64(toks[i], row_seeds[r])
            col = <Py_ssize_t> (h & m)
            sign = 1 if (h >> 63) else -1
            ests[r] = sign * counters[r, col]
        o[i] = _median_ll(ests, rows)
    return out


def admit_one(seed, index, p):
    """Deterministic Bernoulli(p) admission for the sample at ``index``."""
    cdef double pp = <double> p
    if pp >= 1.0:
        return True
    if pp <= 0.0:
        return False
    cdef double d = pp * _TWO64
    cdef unsigned long long thresh = <unsigned long long> d
    return _hash64(<unsigned long long> (index & 0xFFFFFFFFFFFFFFFF),
                   <unsigned long long> (seed & 0xFFFFFFFFFFFFFFFF)) < thresh


def admit_mask(seed, start_index, count, p):
    """Vector of admission decisions for indices start..start+count-1."""
    cdef double pp = <double> p
    cdef Py_ssize_t n = <Py_ssize_t> count
    if pp >= 1.0:
        return np.ones(n, dtype=bool)
    if pp <= 0.0:
        return np.zeros(n, dtype=bool)
    cdef double d = pp * _TWO64
    cdef unsigned long long thresh = <unsigned long long> d
    cdef unsigned long long s = <unsigned long long> (seed & 0xFFFFFFFFFFFFFFFF)
    cdef unsigned long long base = <unsigned long long> (start_index & 0xFFFFFFFFFFFFFFFF)
    out = np.empty(n, dtype=bool)
    cdef cnp.uint8_t[::1] o = out.view(np.uint8)
    cdef Py_ssize_t i
    for i in range(n):
        o[i] = 1 if _hash64(base + <unsigned long long> i, s) < thresh else 0
    return out
