import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdqkd import kernels
from qdqkd.postproc.gf import GF, GF2_MODULI, prime_power
from qdqkd.postproc.trevisan import (ExtractorParams, ParameterError, bits_to_words, design_overlap_bound,
                                     extract_blocks, field_bits_for, min_entropy, one_bit_extract, plan_extraction,
                                     trevisan_extract, weak_design)

from gf_oracle import binary_modulus, code_bit, gmul, oracle_extract, poly_design, rabin_irreducible


def full_modulus(l):
    return (1 << l) | GF2_MODULI[l]


def to_bits(value, width):
    return [(value >> i) & 1 for i in range(width)]


@pytest.mark.parametrize("l", sorted(GF2_MODULI))
def test_moduli_irreducible(l):
    assert rabin_irreducible(full_modulus(l))


def test_reducible_is_rejected_by_oracle():
    assert not rabin_irreducible(0b10001)  # x^4 + 1 = (x + 1)^4


@pytest.mark.parametrize("q", [2, 3, 4, 5, 7, 8, 9, 16, 25, 27])
def test_small_fields_are_fields(q):
    f = GF(q)
    nz = np.arange(1, q)
    assert np.all(f.add[0] == np.arange(q)) and np.all(f.mul[1] == np.arange(q))
    # every non-zero row of the multiplication table is a permutation of the non-zero elements
    for a in nz:
        assert sorted(f.mul[a, nz].tolist()) == nz.tolist()
    a, b, c = np.meshgrid(np.arange(q), np.arange(q), np.arange(q), indexing="ij")
    assert np.array_equal(f.mul[a, f.add[b, c]], f.add[f.mul[a, b], f.mul[a, c]])


def test_gf16_matches_oracle():
    f = GF(16)
    mod = next(m for m in range(16, 32) if all(f.mul[a, b] == gmul(a, b, m) for a in range(16) for b in range(16)))
    assert rabin_irreducible(mod)


def test_prime_power():
    assert prime_power(49) == (7, 2) and prime_power(64) == (2, 6)
    assert prime_power(12) is None and prime_power(1) is None
    with pytest.raises(ParameterError):
        weak_design(4, 6)


def test_design_examples():
    one = weak_design(1, 5)
    assert one.shape == (1, 5)
    two = weak_design(2, 3)
    assert len(set(two[0]) & set(two[1])) <= 2
    sets = weak_design(16, 7)
    assert max(len(set(a) & set(b)) for a, b in combinations(sets.tolist(), 2)) <= 4


@pytest.mark.parametrize("t", [2, 3, 4, 5, 7, 8, 9, 16])
def test_design_overlap_exhaustive_up_to_64(t):
    for m in range(1, 65):
        if m > t ** t:
            break
        sets = weak_design(m, t)
        assert sets.shape == (m, t)
        assert np.all((sets >= 0) & (sets < t * t))
        assert all(len(set(r)) == t for r in sets.tolist())
        worst = max((len(set(a) & set(b)) for a, b in combinations(sets.tolist(), 2)), default=0)
        assert worst <= design_overlap_bound(m, t) <= math.ceil(math.log2(m))


def test_design_matches_oracle():
    f = GF(16)
    mod = next(m for m in range(16, 32) if all(f.mul[a, b] == gmul(a, b, m) for a in range(16) for b in range(16)))
    for m in (1, 5, 16, 17, 64):
        assert weak_design(m, 16).tolist() == poly_design(m, 16, mod)


def test_one_bit_linear_zero():
    for seed in range(50):
        sub = np.random.default_rng(seed).integers(0, 2, 16)
        assert one_bit_extract(np.zeros(40, np.uint8), sub) == 0


def test_one_bit_exhaustive_n8():
    l, f = 4, full_modulus(4)
    for x in range(0, 256, 7):
        xb = to_bits(x, 8)
        for sub in range(256):
            assert one_bit_extract(xb, to_bits(sub, 8)) == code_bit(xb, sub & 15, sub >> 4, l, f)


def test_flip_changes_half_the_subseeds():
    # for a non-zero difference of degree s-1, only alphas that are roots fail, and then
    # every other alpha splits beta into halves
    l, n = 4, 8
    s = n // l
    bound = 0.5 * (1 - (s - 1) / 2 ** l)
    rng = np.random.default_rng(0)
    alphas = np.repeat(np.arange(16, dtype=np.uint64), 16)
    betas = np.tile(np.arange(16, dtype=np.uint64), 16)
    for _ in range(20):
        x = rng.integers(0, 2, n)
        base = kernels.rsh_bits(bits_to_words(x, l), alphas, betas, l, GF2_MODULI[l])
        for i in range(n):
            y = x.copy()
            y[i] ^= 1
            flip = kernels.rsh_bits(bits_to_words(y, l), alphas, betas, l, GF2_MODULI[l])
            assert np.mean(base != flip) >= bound


def test_all_subseeds_l8_against_oracle():
    l, f = 8, full_modulus(8)
    x = np.random.default_rng(3).integers(0, 2, 16)
    alphas = np.repeat(np.arange(256, dtype=np.uint64), 256)
    betas = np.tile(np.arange(256, dtype=np.uint64), 256)
    got = kernels.rsh_bits(bits_to_words(x, l), alphas, betas, l, GF2_MODULI[l])
    # RS value per alpha by the oracle, then the Hadamard bit for every beta
    xs = [int(v) for v in bits_to_words(x, l)]
    rs = [gmul(xs[0], a, f) ^ xs[1] for a in range(256)]
    ref = np.array([bin(rs[a] & b).count("1") & 1 for a in range(256) for b in range(256)])
    assert np.array_equal(got, ref)


@pytest.mark.parametrize("l", [16, 32, 64])
def test_wide_fields_against_oracle(l):
    rng = np.random.default_rng(l)
    x = rng.integers(0, 2, 5 * l + 3)
    for _ in range(20):
        sub = rng.integers(0, 2, 2 * l)
        a = int(bits_to_words(sub[:l], l)[0])
        b = int(bits_to_words(sub[l:], l)[0])
        assert one_bit_extract(x, sub) == code_bit(x.tolist(), a, b, l, full_modulus(l))


def test_toy_composition_n16_m4():
    eps = 0.5
    assert field_bits_for(16, eps) == 8
    rng = np.random.default_rng(11)
    for _ in range(25):
        x = rng.integers(0, 2, 16)
        seed = rng.integers(0, 2, 256)
        params = ExtractorParams(16, 4, 14.0, eps, seed)
        design_mod = binary_modulus(16, GF(16).mul)
        assert trevisan_extract(x, params).tolist() == oracle_extract(x, seed, 4, 8, 16, full_modulus(8), design_mod)


def test_single_output_is_one_bit_extract():
    rng = np.random.default_rng(2)
    x, seed = rng.integers(0, 2, 16), rng.integers(0, 2, 256)
    out = trevisan_extract(x, ExtractorParams(16, 1, 14.0, 0.5, seed))
    sub = seed[weak_design(1, 16)[0]]
    assert out.tolist() == [one_bit_extract(x, sub)]


def test_deterministic_and_parameter_checks():
    rng = np.random.default_rng(5)
    x = rng.integers(0, 2, 1000)
    params = plan_extraction(1000, 0.02, 150, 1e-6, rng.integers(0, 2, ExtractorParams.seed_length_for(1000, 1e-6)))
    assert params.output_length == math.floor(min_entropy(1000, 0.02, 150) - 4 * math.log2(1e6) - 6)
    assert np.array_equal(trevisan_extract(x, params), trevisan_extract(x.copy(), params))
    with pytest.raises(ParameterError):
        ExtractorParams(1000, params.output_length + 1, params.min_entropy, 1e-6, params.seed)
    with pytest.raises(ParameterError):
        ExtractorParams(1000, 10, params.min_entropy, 1e-6, params.seed[:-1])
    with pytest.raises(ParameterError):
        trevisan_extract(x[:-1], params)
    with pytest.raises(ParameterError):
        one_bit_extract(x, np.zeros(10, np.uint8))
    with pytest.raises(ParameterError):
        one_bit_extract(x, np.zeros(16, np.uint8), eps=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(64, 3000), st.floats(0.0, 0.1))
def test_output_respects_budget(n, q):
    rng = np.random.default_rng(n)
    bits = rng.integers(0, 2, n)
    leak = int(0.2 * n)
    out, plans = extract_blocks(bits, q, leak, 1e-6, lambda k: rng.integers(0, 2, k), block_bits=1024)
    assert len(out) == sum(p.output_length for p in plans)
    for p in plans:
        assert p.output_length == 0 or p.output_length <= p.min_entropy - 4 * math.log2(1e6) - 6
