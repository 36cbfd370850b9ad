import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdqkd.postproc.cascade import (LocalParityOracle, ReconciliationError, RemoteParityOracle, binary_entropy,
                                    cascade_correct, first_block_size, reconcile, serve_parities)
from qdqkd.transport import ProtocolError, transport_pair


def noisy_pair(rng, n, errors):
    a = rng.integers(0, 2, n, dtype=np.uint8)
    b = a.copy()
    b[rng.choice(n, errors, replace=False)] ^= 1
    return a, b


def test_binary_entropy():
    assert binary_entropy(0.5) == 1.0 and binary_entropy(0.0) == 0.0
    assert binary_entropy(0.03) == pytest.approx(0.1944, abs=1e-4)
    assert first_block_size(0.03, 10**4) == 25 and first_block_size(0.0, 500) == 500


@pytest.mark.parametrize("q", [0.01, 0.05, 0.1])
def test_identical_keys_leak_first_pass_only(q, rng):
    a = rng.integers(0, 2, 10**4, dtype=np.uint8)
    r = reconcile(a, a.copy(), q)
    assert r.corrections == 0 and r.passes == 1
    assert r.leaked_bits == -(-10**4 // first_block_size(q, 10**4))


@pytest.mark.parametrize("q", [0.03, 0.05])
def test_examples_leakage(q, rng):
    n = 10**4
    a, b = noisy_pair(rng, n, int(q * n))
    r = reconcile(a, b, q, seed=1)
    assert np.array_equal(r.key, a) and r.passes == 4 and r.verified
    assert r.corrections == int(q * n)
    assert r.leaked_bits <= 1.2 * binary_entropy(q) * n


def test_leakage_equals_transcript(rng):
    a, b = noisy_pair(rng, 5000, 150)
    oracle = LocalParityOracle(a, seed=4)
    r = reconcile(a, b, 0.03, seed=4, oracle=oracle)
    assert r.leaked_bits == len(oracle.transcript)


def test_zero_estimate_cannot_converge(rng):
    a, b = noisy_pair(rng, 2000, 3)
    with pytest.raises(ReconciliationError) as err:
        reconcile(a, b, 0.0)
    assert err.value.passes == 12 and err.value.leaked_bits > 0
    # an even number of errors is invisible to a single whole-key parity
    a, b = noisy_pair(rng, 2000, 2)
    r = reconcile(a, b, 0.0)
    assert not r.verified and not np.array_equal(r.key, a)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3000), st.floats(0.005, 0.1), st.integers(0, 2**31))
def test_always_corrects(n, q, seed):
    rng = np.random.default_rng(seed)
    a, b = noisy_pair(rng, n, int(rng.binomial(n, q)))
    r = reconcile(a, b, q, seed=seed)
    if r.verified or r.passes > 1:
        assert np.array_equal(r.key, a)
    else:
        assert r.corrections == 0  # first pass saw only even blocks


def test_randomized_trials(rng):
    for i in range(100):
        q = (0.01, 0.03, 0.05)[i % 3]
        a, b = noisy_pair(rng, 2000, int(q * 2000))
        assert np.array_equal(reconcile(a, b, q, seed=i).key, a)


def test_remote_matches_local(rng):
    a, b = noisy_pair(rng, 4000, 120)
    local = reconcile(a, b, 0.03, seed=8)
    ta, tb = transport_pair()
    box = {}
    t = threading.Thread(target=lambda: box.setdefault("done", serve_parities(a, ta, seed=8)))
    t.start()
    oracle = RemoteParityOracle(tb)
    remote = cascade_correct(b, 0.03, oracle, seed=8)
    oracle.finish(remote)
    t.join()
    assert np.array_equal(remote.key, local.key) and remote.leaked_bits == local.leaked_bits
    assert box["done"]["corrections"] == local.corrections


def test_leakage_mismatch_detected(rng):
    a, _ = noisy_pair(rng, 100, 0)
    ta, tb = transport_pair()
    tb.send({"type": "RECONCILE_DONE", "leaked_bits": 5, "corrections": 0, "verified": True, "passes": 1})
    with pytest.raises(ProtocolError):
        serve_parities(a, ta, seed=0)


def test_input_validation():
    with pytest.raises(ValueError):
        reconcile([0, 1], [0], 0.1)
    with pytest.raises(ValueError):
        reconcile([0, 1], [0, 1], 0.6)
    assert reconcile([], [], 0.1).leaked_bits == 0
