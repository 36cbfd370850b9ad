import threading

import numpy as np
import pytest

from qdqkd.loopback import run_loopback
from qdqkd.session import SessionConfig, SessionError, chsh_from_qber, keys_agree, run_session
from qdqkd.testbed import Testbed, apply_overrides, expected_rates, scenario_preset, window_capture
from qdqkd.transport import transport_pair


def ideal(**emitter):
    return apply_overrides(scenario_preset("ideal"), {"emitter": emitter}) if emitter else scenario_preset("ideal")


def run_threads(sc, cfg_a, cfg_b, seed=0, feed_b=None):
    bed = Testbed(sc, seed)
    ta, tb = transport_pair()
    out = {}

    def go(role, cfg, tx, feed):
        try:
            out[role] = run_session(role, cfg, tx, feed, bed.channel_map)
        except SessionError as exc:
            out[role] = exc
            tx.close()

    threads = [threading.Thread(target=go, args=("alice", cfg_a, ta, bed.feed("alice"))),
               threading.Thread(target=go, args=("bob", cfg_b, tb, feed_b or bed.feed("bob")))]
    for t in threads:
        t.start()
    for t in threads:
        t.join(60)
    return out["alice"], out["bob"], tb


def test_ideal_loopback_is_error_free():
    a, b = run_loopback(ideal(), SessionConfig(session_id="ideal", n_packets=10, seed=3))
    assert not a.aborted and not b.aborted
    assert a.qber == 0 and b.qber == 0
    assert np.array_equal(a.sifted.bits, b.sifted.bits)
    assert a.corrections == 0 and keys_agree(a, b)
    assert a.chsh[0] == pytest.approx(2.828, abs=0.03)
    raw = sum(m.raw_coincidences for m in a.metrics)
    assert a.n_key_coincidences / raw == pytest.approx(0.25, abs=3 * np.sqrt(0.1875 / raw))


def test_noisy_keys_reconcile_and_stay_disjoint():
    sc = ideal(visibility_override=0.9)
    a, b = run_loopback(sc, SessionConfig(session_id="n", n_packets=4, seed=5))
    assert len(a.sifted) == len(b.sifted)
    assert not np.array_equal(a.sifted.bits, b.sifted.bits)
    assert keys_agree(a, b)
    assert a.final_qber == pytest.approx(0.05, abs=0.01)
    for m in a.metrics:
        # key bits, disclosed sample and monitor rounds never overlap
        n_sample = sum(m.counts["key"])
        n_monitor = sum(sum(v) for k, v in m.counts.items() if k != "key")
        assert n_sample <= m.sifted_bits and m.sifted_bits + n_monitor <= m.raw_coincidences
    assert len(a.sifted) == sum(m.sifted_bits - sum(m.counts["key"]) for m in a.metrics)
    assert a.reconciled.leaked_bits > 0 and a.extracted.n_bits < a.reconciled.n_bits


def test_identity_between_s_and_qber():
    a, _ = run_loopback(ideal(visibility_override=0.9, pair_prob=1e-3), SessionConfig(n_packets=2, postprocess=False))
    s, err = a.chsh
    q_err = np.sqrt(a.qber * (1 - a.qber) / sum(a.key_sample))
    assert abs(s - chsh_from_qber(a.qber)) <= 3 * np.hypot(err, 4 * np.sqrt(2) * q_err)


@pytest.mark.parametrize("v,reason", [(0.76, "QBER"), (0.65, "Bell")])
def test_abort_is_final(v, reason):
    a, b = run_loopback(ideal(visibility_override=v), SessionConfig(n_packets=6, seed=1))
    assert a.aborted and b.aborted
    assert a.abort_reason == b.abort_reason == reason
    last = a.metrics[-1]
    assert last.aborted and len(a.metrics) < 6
    assert a.extracted is None and b.extracted is None
    assert np.all(a.sifted.packets < last.packet_index)


def test_too_little_data_aborts_on_statistics():
    a, b = run_loopback(ideal(pair_prob=1e-6), SessionConfig(n_packets=1))
    assert a.abort_reason == b.abort_reason == "statistics"


def test_handshake_mismatch():
    sc = ideal()
    a, b, _ = run_threads(sc, SessionConfig(session_id="x", n_packets=1), SessionConfig(session_id="y", n_packets=1))
    assert isinstance(a, SessionError) and isinstance(b, SessionError)
    assert "session_id" in str(a) + str(b)


def test_transport_failure_keeps_partial_result():
    sc = ideal()
    bed = Testbed(sc, 0)
    box = {}

    def feed_b(k):
        if k == 2:
            box["tx"].close()
        return bed.packet(k).bob

    bed_feed = feed_b
    ta, tb = transport_pair()
    box["tx"] = tb
    out = {}

    def go(role, tx, feed):
        try:
            out[role] = run_session(role, SessionConfig(n_packets=5), tx, feed, bed.channel_map)
        except SessionError as exc:
            out[role] = exc
            tx.close()

    threads = [threading.Thread(target=go, args=("alice", ta, bed.feed("alice"))),
               threading.Thread(target=go, args=("bob", tb, bed_feed))]
    for t in threads:
        t.start()
    for t in threads:
        t.join(60)
    err = out["alice"]
    assert isinstance(err, SessionError)
    assert len(err.result.metrics) == 2 and len(err.result.sifted) > 0


def test_packets_are_order_independent():
    bed = Testbed(scenario_preset("fiber-250m"), 9)
    p1 = bed.packet(1)
    bed.packet(0)
    again = Testbed(scenario_preset("fiber-250m"), 9).packet(1)
    assert p1.alice == again.alice and p1.bob == again.bob


def test_testbed_rates_match_model():
    sc = scenario_preset("fiber-250m")
    p = Testbed(sc, 0).packet(0)
    rates = expected_rates(sc)
    dark_a = 6 * sc.alice_detector.dark_rate
    assert len(p.alice) / 1.2 == pytest.approx(rates["alice_singles"] + dark_a, rel=0.02)
    assert 0.55 < window_capture(sc) < 0.7


def test_config_validation():
    with pytest.raises(ValueError):
        SessionConfig(n_packets=0)
    with pytest.raises(ValueError):
        SessionConfig(sample_fraction=1.0)
    with pytest.raises(KeyError):
        apply_overrides(scenario_preset("ideal"), {"emitter": {"colour": 1}})
    with pytest.raises(ValueError):
        scenario_preset("moon")
