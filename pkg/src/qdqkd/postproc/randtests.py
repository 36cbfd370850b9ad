"""Frequency (monobit) and runs tests on a bit sequence, NIST SP 800-22 style."""

import math

import numpy as np


def monobit_pvalue(bits) -> float:
    bits = np.asarray(bits, dtype=np.int64)
    n = len(bits)
    if n == 0:
        raise ValueError("empty sequence")
    s = abs(int(2 * bits.sum() - n)) / math.sqrt(n)
    return math.erfc(s / math.sqrt(2))


def runs_pvalue(bits) -> float:
    bits = np.asarray(bits, dtype=np.int64)
    n = len(bits)
    if n < 2:
        raise ValueError("need at least two bits")
    pi = bits.mean()
    if abs(pi - 0.5) >= 2 / math.sqrt(n):
        return 0.0  # frequency prerequisite fails
    v = 1 + int(np.count_nonzero(bits[1:] != bits[:-1]))
    num = abs(v - 2 * n * pi * (1 - pi))
    return math.erfc(num / (2 * math.sqrt(2 * n) * pi * (1 - pi)))
