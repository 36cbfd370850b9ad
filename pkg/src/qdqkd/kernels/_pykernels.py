"""Reference implementations of the hot loops (numpy / plain Python).

These define the semantics; the compiled module must reproduce them bit for bit.
"""

import numpy as np


def deadtime_mask(times, dead_time):
    gap = max(int(dead_time), 1)
    mask = np.zeros(len(times), dtype=np.uint8)
    last = None
    for i, t in enumerate(times.tolist()):
        if last is None or t - last >= gap:
            mask[i] = 1
            last = t
    return mask


def _pair_indices(starts, stops):
    counts = stops - starts
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(starts)), counts)
    first = np.repeat(np.cumsum(counts) - counts, counts)
    partner = np.repeat(starts, counts) + (np.arange(total) - first)
    return owner, partner


def diff_histogram(ta, tb, lo, bin_width, nbins):
    top = lo + bin_width * nbins
    starts = np.searchsorted(tb, ta - top, side="right")
    stops = np.searchsorted(tb, ta - lo, side="right")
    ia, ib = _pair_indices(starts, stops)
    d = ta[ia] - tb[ib]
    return np.bincount((d - lo) // bin_width, minlength=nbins).astype(np.int64)


def match_sweep(ta, tb, offsets, half):
    lower = np.searchsorted(tb, ta - offsets - half, side="left")
    upper = np.searchsorted(tb, ta - offsets + half, side="right")
    used = set()
    ia, ib = [], []
    tb_list = tb.tolist()
    for i, (lo, hi) in enumerate(zip(lower.tolist(), upper.tolist())):
        best, best_dist = -1, 0
        ref = int(ta[i]) - int(offsets[i])
        for j in range(lo, hi):
            if j in used:
                continue
            dist = abs(ref - tb_list[j])
            if best < 0 or dist < best_dist:
                best, best_dist = j, dist
        if best >= 0:
            used.add(best)
            ia.append(i)
            ib.append(best)
    return np.asarray(ia, dtype=np.int64), np.asarray(ib, dtype=np.int64)


def signed_autocorr(t, ch, span, bin_width):
    nbins = (2 * span) // bin_width
    starts = np.arange(1, len(t))
    stops = np.searchsorted(t, t + span, side="left")[: len(t) - 1]
    stops = np.maximum(stops, starts)
    i, j = _pair_indices(starts, stops)
    keep = ch[i] != ch[j]
    i, j = i[keep], j[keep]
    d = t[j] - t[i]
    d = np.where(ch[i] > ch[j], -d, d)
    b = (d + span) // bin_width
    b = b[(b >= 0) & (b < nbins)]
    return np.bincount(b, minlength=nbins).astype(np.int64)


def _gf_mul_vec(a, b, field_bits, poly):
    a = a.copy()
    b = b.copy()
    r = np.zeros_like(a)
    mask = np.uint64((1 << field_bits) - 1) if field_bits < 64 else np.uint64(0xFFFFFFFFFFFFFFFF)
    one = np.uint64(1)
    top = np.uint64(field_bits - 1)
    poly = np.uint64(poly)
    for _ in range(field_bits):
        r ^= np.where(b & one, a, np.uint64(0))
        b >>= one
        carry = (a >> top) & one
        a = (a << one) & mask
        a ^= np.where(carry, poly, np.uint64(0))
    return r


def _parity(x):
    x = x.copy()
    for shift in (32, 16, 8, 4, 2, 1):
        x ^= x >> np.uint64(shift)
    return (x & np.uint64(1)).astype(np.uint8)


def rsh_bits(chunks, alphas, betas, field_bits, poly):
    y = np.zeros(len(alphas), dtype=np.uint64)
    for c in np.asarray(chunks, dtype=np.uint64):
        y = _gf_mul_vec(y, alphas, field_bits, poly) ^ c
    return _parity(y & betas)
