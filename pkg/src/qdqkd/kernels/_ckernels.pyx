# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Semantics are defined by ``_pykernels``; both must agree exactly."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t, uint8_t

cnp.import_array()


def deadtime_mask(const int64_t[:] times, int64_t dead_time):
    cdef Py_ssize_t n = times.shape[0], i
    cdef int64_t gap = dead_time if dead_time > 1 else 1
    cdef int64_t last = 0
    cdef bint have = False
    mask = np.zeros(n, dtype=np.uint8)
    cdef uint8_t[:] m = mask
    for i in range(n):
        if not have or times[i] - last >= gap:
            m[i] = 1
            last = times[i]
            have = True
    return mask


def diff_histogram(const int64_t[:] ta, const int64_t[:] tb, int64_t lo, int64_t bin_width,
                   Py_ssize_t nbins):
    cdef Py_ssize_t na = ta.shape[0], nb = tb.shape[0], i, j, j0 = 0
    cdef int64_t top = lo + bin_width * nbins, d
    counts = np.zeros(nbins, dtype=np.int64)
    cdef int64_t[:] c = counts
    for i in range(na):
        # tb must satisfy ta - top < tb <= ta - lo
        while j0 < nb and tb[j0] <= ta[i] - top:
            j0 += 1
        j = j0
        while j < nb and tb[j] <= ta[i] - lo:
            d = ta[i] - tb[j]
            c[(d - lo) // bin_width] += 1
            j += 1
    return counts


def match_sweep(const int64_t[:] ta, const int64_t[:] tb, const int64_t[:] offsets, int64_t half):
    cdef Py_ssize_t na = ta.shape[0], nb = tb.shape[0], i, j, j0 = 0, best
    cdef int64_t lower, upper, dist, best_dist
    used = np.zeros(nb, dtype=np.uint8)
    cdef uint8_t[:] u = used
    ia = np.empty(min(na, nb), dtype=np.int64)
    ib = np.empty(min(na, nb), dtype=np.int64)
    cdef int64_t[:] oa = ia, ob = ib
    cdef Py_ssize_t k = 0
    for i in range(na):
        lower = ta[i] - offsets[i] - half
        upper = ta[i] - offsets[i] + half
        while j0 > 0 and tb[j0 - 1] >= lower:
            j0 -= 1
        while j0 < nb and tb[j0] < lower:
            j0 += 1
        best = -1
        best_dist = 0
        j = j0
        while j < nb and tb[j] <= upper:
            if not u[j]:
                dist = ta[i] - tb[j] - offsets[i]
                if dist < 0:
                    dist = -dist
                if best < 0 or dist < best_dist:
                    best = j
                    best_dist = dist
            j += 1
        if best >= 0:
            u[best] = 1
            oa[k] = i
            ob[k] = best
            k += 1
    return ia[:k], ib[:k]


def signed_autocorr(const int64_t[:] t, const uint8_t[:] ch, int64_t span, int64_t bin_width):
    """Histogram of signed delays between tags on distinct channels over [-span, span)."""
    cdef Py_ssize_t n = t.shape[0], i, j
    cdef Py_ssize_t nbins = (2 * span) // bin_width
    cdef int64_t d
    counts = np.zeros(nbins, dtype=np.int64)
    cdef int64_t[:] c = counts
    for i in range(n):
        j = i + 1
        while j < n and t[j] - t[i] < span:
            if ch[j] != ch[i]:
                d = t[j] - t[i]
                if ch[i] > ch[j]:
                    d = -d
                d = (d + span) // bin_width
                if 0 <= d < nbins:
                    c[d] += 1
            j += 1
    return counts


cdef inline uint64_t _gf_mul(uint64_t a, uint64_t b, int l, uint64_t poly, uint64_t mask) nogil:
    # branchless shift-and-add; b is consumed from the low end
    cdef uint64_t r = 0
    cdef int i
    for i in range(l):
        r ^= a & (<uint64_t>0 - (b & 1))
        b >>= 1
        a = ((a << 1) & mask) ^ (poly & (<uint64_t>0 - ((a >> (l - 1)) & 1)))
    return r


cdef inline int _parity64(uint64_t x) nogil:
    x ^= x >> 32
    x ^= x >> 16
    x ^= x >> 8
    x ^= x >> 4
    x ^= x >> 2
    x ^= x >> 1
    return <int>(x & 1)


def rsh_bits(const uint64_t[:] chunks, const uint64_t[:] alphas, const uint64_t[:] betas,
             int field_bits, uint64_t poly):
    # y -> y*alpha is GF(2)-linear: tabulate it per input byte, then Horner by lookups
    cdef Py_ssize_t m = alphas.shape[0], s = chunks.shape[0], i, j
    cdef int nbytes = (field_bits + 7) // 8, b, k, v
    cdef uint64_t mask = 0xFFFFFFFFFFFFFFFF if field_bits == 64 else ((<uint64_t>1 << field_bits) - 1)
    cdef uint64_t y, a, basis
    out = np.empty(m, dtype=np.uint8)
    table = np.zeros((8, 256), dtype=np.uint64)
    cdef uint8_t[:] o = out
    cdef uint64_t[:, :] T = table
    with nogil:
        for i in range(m):
            a = alphas[i]
            for b in range(nbytes):
                for k in range(8):
                    if 8 * b + k < field_bits:
                        basis = a
                    else:
                        basis = 0
                    v = 1 << k
                    T[b, v] = basis
                    for j in range(1, v):
                        T[b, v + j] = T[b, j] ^ basis
                    if 8 * b + k < field_bits:
                        a = ((a << 1) & mask) ^ (poly & (<uint64_t>0 - ((a >> (field_bits - 1)) & 1)))
            y = 0
            for j in range(s):
                basis = chunks[j]
                for b in range(nbytes):
                    basis ^= T[b, (y >> (8 * b)) & 0xFF]
                y = basis
            o[i] = _parity64(y & betas[i])
    return out
