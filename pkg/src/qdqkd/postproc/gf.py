"""Small finite fields GF(p^k) as lookup tables, plus the GF(2^l) moduli of the one-bit extractor."""

from __future__ import annotations

from functools import lru_cache
from itertools import product

import numpy as np

# Low-order terms of irreducible x^l + ... over GF(2); the x^l term is implicit.
GF2_MODULI = {
    2: 0b11,  # x^2 + x + 1
    4: 0b11,  # x^4 + x + 1
    8: 0x1B,  # x^8 + x^4 + x^3 + x + 1
    16: 0x2B,  # x^16 + x^5 + x^3 + x + 1
    32: 0x8D,  # x^32 + x^7 + x^3 + x^2 + 1
    64: 0x1B,  # x^64 + x^4 + x^3 + x + 1
}


def prime_power(q: int):
    """(p, k) with q = p**k, or None."""
    if q < 2:
        return None
    p = next(d for d in range(2, q + 1) if q % d == 0)
    k = 0
    while q % p == 0:
        q //= p
        k += 1
    return (p, k) if q == 1 else None


def _poly_mod(a: list[int], m: list[int], p: int) -> list[int]:
    # coefficient lists, lowest degree first; m monic
    a = a[:]
    while len(a) >= len(m):
        c = a[-1] % p
        if c:
            shift = len(a) - len(m)
            for i, mi in enumerate(m):
                a[shift + i] = (a[shift + i] - c * mi) % p
        a.pop()
    return a


def _irreducible(p: int, k: int) -> list[int]:
    """First monic irreducible polynomial of degree k over GF(p), by trial division."""
    if k == 1:
        return [0, 1]
    for low in product(range(p), repeat=k):
        cand = list(low) + [1]
        if cand[0] == 0:
            continue
        reducible = False
        for d in range(1, k // 2 + 1):
            for dlow in product(range(p), repeat=d):
                if not any(_poly_mod(cand, list(dlow) + [1], p)):
                    reducible = True
                    break
            if reducible:
                break
        if not reducible:
            return cand
    raise AssertionError("no irreducible polynomial found")


class GF:
    """GF(q) with elements 0..q-1 (base-p digits are polynomial coefficients)."""

    def __init__(self, q: int):
        pk = prime_power(q)
        if pk is None:
            raise ValueError(f"{q} is not a prime power")
        self.q = q
        self.p, self.k = pk
        self.add, self.mul = _tables(q)


@lru_cache(maxsize=None)
def _tables(q: int):
    p, k = prime_power(q)
    digits = np.array([[(e // p ** i) % p for i in range(k)] for e in range(q)], dtype=np.int64)
    weights = p ** np.arange(k)
    add = (digits[:, None, :] + digits[None, :, :]) % p @ weights
    if k == 1:
        mul = np.outer(np.arange(q), np.arange(q)) % p
        return add, mul
    modulus = _irreducible(p, k)
    if p == 2:
        return add, _binary_mul(k, sum(c << i for i, c in enumerate(modulus)))
    mul = np.zeros((q, q), dtype=np.int64)
    for a in range(q):
        for b in range(a, q):
            prod = [0] * (2 * k - 1)
            for i in range(k):
                for j in range(k):
                    prod[i + j] += digits[a, i] * digits[b, j]
            red = _poly_mod([c % p for c in prod], modulus, p)
            val = sum(int(c) * p ** i for i, c in enumerate(red))
            mul[a, b] = mul[b, a] = val
    return add, mul


def _binary_mul(k: int, modulus: int) -> np.ndarray:
    a = np.arange(1 << k, dtype=np.int64)[:, None]
    b = np.arange(1 << k, dtype=np.int64)[None, :]
    r = np.zeros((1 << k, 1 << k), dtype=np.int64)
    for i in range(k):
        r ^= np.where((b >> i) & 1, a << i, 0)
    for i in range(2 * k - 2, k - 1, -1):
        r ^= np.where((r >> i) & 1, modulus << (i - k), 0)
    return r
