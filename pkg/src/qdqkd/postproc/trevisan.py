"""Trevisan extractor: polynomial weak design + Reed-Solomon/Hadamard one-bit extractor.

Bit order throughout: bit 0 is the least significant bit of byte 0, and of
each field element.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import kernels
from .cascade import binary_entropy
from .gf import GF, GF2_MODULI, prime_power


class ParameterError(ValueError):
    pass


def field_bits_for(n: int, eps: float) -> int:
    """Smallest supported l with l >= log2(n) + 2 log2(2/eps)."""
    need = math.log2(max(n, 2)) + 2 * math.log2(2.0 / eps)
    for l in sorted(GF2_MODULI):
        if l >= need:
            return l
    raise ParameterError(f"input of {n} bits at eps={eps} needs a field beyond GF(2^64)")


def weak_design(m: int, t: int) -> np.ndarray:
    """m index sets of size t over [0, t*t): {x*t + f_i(x) : x in GF(t)}.

    f_i is the polynomial of degree <= d whose coefficients are the base-t digits of
    i, with d the least degree giving t**(d+1) >= m. Two sets meet in at most d points.
    """
    if m < 1:
        raise ParameterError("m must be >= 1")
    if prime_power(t) is None:
        raise ParameterError(f"design size t={t} is not a prime power")
    field = GF(t)
    d = 0
    while t ** (d + 1) < m:
        d += 1
    i = np.arange(m, dtype=np.int64)
    coeffs = [(i // t ** j) % t for j in range(d + 1)]
    x = np.arange(t, dtype=np.int64)
    val = np.zeros((m, t), dtype=np.int64)
    for c in reversed(coeffs):  # Horner, highest degree first
        val = field.add[field.mul[val, x[None, :]], c[:, None]]
    return x[None, :] * t + val


def design_overlap_bound(m: int, t: int) -> int:
    d = 0
    while t ** (d + 1) < m:
        d += 1
    return d


def bits_to_words(bits: np.ndarray, width: int) -> np.ndarray:
    """Pack rows of ``width`` bits (LSB first) into uint64 words."""
    bits = np.asarray(bits, dtype=np.uint64).reshape(-1, width)
    weights = np.left_shift(np.uint64(1), np.arange(width, dtype=np.uint64))
    return np.bitwise_or.reduce(bits * weights, axis=1) if width else np.zeros(len(bits), np.uint64)


def input_chunks(bits: np.ndarray, field_bits: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    s = max(1, -(-len(bits) // field_bits))
    padded = np.zeros(s * field_bits, dtype=np.uint8)
    padded[: len(bits)] = bits
    return bits_to_words(padded, field_bits)


def one_bit_extract(input_bits, subseed, eps: float | None = None) -> int:
    """<beta, sum_j x_j alpha^(s-1-j)> over GF(2^l).

    The subseed holds alpha (first l bits) and beta (next l bits). ``eps``
    optionally checks that l is large enough for this input length.
    """
    subseed = np.asarray(subseed, dtype=np.uint8)
    if len(subseed) % 2 or len(subseed) // 2 not in GF2_MODULI:
        raise ParameterError(f"subseed of {len(subseed)} bits does not match a supported field")
    l = len(subseed) // 2
    if eps is not None and l < field_bits_for(len(input_bits), eps):
        raise ParameterError(f"subseed of {len(subseed)} bits too short for n={len(input_bits)}, eps={eps}")
    alpha, beta = bits_to_words(subseed, l)
    bit = kernels.rsh_bits(input_chunks(input_bits, l), [alpha], [beta], l, GF2_MODULI[l])
    return int(bit[0])


@dataclass(frozen=True)
class ExtractorParams:
    input_length: int
    output_length: int
    min_entropy: float
    error: float
    seed: np.ndarray

    def __post_init__(self):
        if not 0.0 < self.error < 1.0:
            raise ParameterError("error must lie in (0, 1)")
        budget = self.min_entropy - 4 * math.log2(1.0 / self.error) - 6
        # an empty output is valid whatever the budget
        if self.output_length < 0 or (self.output_length and self.output_length > budget):
            raise ParameterError(
                f"output of {self.output_length} bits exceeds the budget {budget:.1f} for k={self.min_entropy}")
        need = self.seed_length_for(self.input_length, self.error)
        if len(self.seed) != need:
            raise ParameterError(f"seed must be {need} bits, got {len(self.seed)}")

    @property
    def field_bits(self) -> int:
        return field_bits_for(self.input_length, self.error)

    @property
    def design_size(self) -> int:
        return 2 * self.field_bits

    @staticmethod
    def seed_length_for(n: int, eps: float) -> int:
        t = 2 * field_bits_for(n, eps)
        return t * t


def trevisan_extract(input_bits, params: ExtractorParams) -> np.ndarray:
    """Output bit i is the one-bit extractor applied with the seed restricted to design set i."""
    bits = np.asarray(input_bits, dtype=np.uint8)
    if len(bits) != params.input_length:
        raise ParameterError(f"input has {len(bits)} bits, parameters expect {params.input_length}")
    m = params.output_length
    if m == 0:
        return np.zeros(0, dtype=np.uint8)
    l, t = params.field_bits, params.design_size
    subseeds = np.asarray(params.seed, dtype=np.uint8)[weak_design(m, t)]
    alphas = bits_to_words(subseeds[:, :l], l)
    betas = bits_to_words(subseeds[:, l:], l)
    return kernels.rsh_bits(input_chunks(bits, l), alphas, betas, l, GF2_MODULI[l])


def min_entropy(n: int, qber: float, leaked_bits: int, margin: int = 64) -> float:
    """Practical entropy estimate n(1 - h(qber)) - leakage - margin."""
    return n * (1.0 - binary_entropy(qber)) - leaked_bits - margin


def plan_extraction(n: int, qber: float, leaked_bits: int, eps: float, seed) -> ExtractorParams:
    k = min_entropy(n, qber, leaked_bits)
    m = max(0, math.floor(k - 4 * math.log2(1.0 / eps) - 6))
    return ExtractorParams(n, m, k, eps, np.asarray(seed, dtype=np.uint8))


def extract_blocks(bits, qber: float, leaked_bits: int, eps: float, seed_source, block_bits: int = 8192):
    """Extract from a long key block by block, sharing leakage in proportion to length.

    ``seed_source(nbits)`` supplies public seed bits for each block.
    Returns (extracted bits, list of per-block params).
    """
    bits = np.asarray(bits, dtype=np.uint8)
    n = len(bits)
    out, plans = [], []
    for start in range(0, n, block_bits):
        block = bits[start:start + block_bits]
        if len(block) < 64:
            break
        leak = math.ceil(leaked_bits * len(block) / n)
        seed = seed_source(ExtractorParams.seed_length_for(len(block), eps))
        params = plan_extraction(len(block), qber, leak, eps, seed)
        plans.append(params)
        out.append(trevisan_extract(block, params))
    return (np.concatenate(out) if out else np.zeros(0, np.uint8)), plans
