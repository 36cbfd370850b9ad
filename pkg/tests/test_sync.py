import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdqkd.detection import TagArray
from qdqkd.sync import (ClockModel, OffsetTrack, SyncError, estimate_offset, localize, match_coincidences,
                        track_offset)

from conftest import brute_force_match, pair_streams


def test_localize_examples():
    assert localize(ClockModel(), 123456789) == 123456789
    assert localize(ClockModel(offset=1e6), 0) == 10**6
    clk = ClockModel(drift=1e-9, discipline_interval=1.0)
    t = np.array([10**12 - 1, 2 * 10**12 - 1, 5 * 10**12 + 10**12 - 1])
    err = clk.localize(t) - t
    assert np.all(np.abs(err) <= 1000)  # drift * interval = 1 ns
    assert clk.localize(10**12) == 10**12  # re-anchored
    with pytest.raises(ValueError):
        ClockModel(drift=2e-6)


def test_discipline_jitter_is_reproducible():
    clk = ClockModel(discipline_jitter=50.0, seed=3)
    t = np.arange(0, 5 * 10**12, 10**11)
    a, b = clk.localize(t), ClockModel(discipline_jitter=50.0, seed=3).localize(t[::-1])[::-1]
    assert np.array_equal(a, b)
    assert 0 < np.std(a - t) < 200


def test_shifted_copy():
    t = np.sort(np.random.default_rng(1).integers(0, 10**12, 5000))
    off = estimate_offset(t + 1_234_567, t, 5e6, 100)
    assert abs(off - 1_234_567) <= 50


def test_offset_under_background(rng):
    a, b, _ = pair_streams(rng, duration=1.0, clock=ClockModel(offset=1e6))
    assert abs(estimate_offset(a, b, 5e6, 100) - 1e6) <= 400


def test_independent_streams_fail(rng):
    a = np.sort(rng.integers(0, 10**12, 10**5))
    b = np.sort(rng.integers(0, 10**12, 10**5))
    with pytest.raises(SyncError):
        estimate_offset(a, b, 5e6, 100)
    with pytest.raises(SyncError):
        estimate_offset(a, np.empty(0, np.int64), 5e6, 100)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**12))
def test_offset_translation_invariant(shift):
    rng = np.random.default_rng(0)
    a, b, _ = pair_streams(rng, duration=0.5, clock=ClockModel(offset=3e5))
    base = estimate_offset(a, b, 5e6, 100)
    moved = estimate_offset(a.timestamps + shift, b.timestamps + shift, 5e6, 100)
    assert moved == pytest.approx(base, abs=1e-6)


def test_track_follows_drift(rng):
    clk = ClockModel(offset=1e6, drift=1e-9, discipline_interval=None)
    a, b, true_a = pair_streams(rng, duration=3.0, clock=clk)
    track = track_offset(a, b)
    probe = np.linspace(0.2e12, 2.8e12, 50).astype(np.int64)
    truth = clk.localize(probe) - probe
    assert np.max(np.abs(track(clk.localize(probe)) - truth)) <= 400


def test_match_examples():
    a, b = TagArray([5_000_000], [0]), TagArray([4_000_000], [6])
    co = match_coincidences(a, b, 1_000_000, 800)
    assert len(co) == 1 and co.delta[0] == 1_000_000
    rec = next(iter(co))
    assert (rec.alice_basis, rec.bob_basis, rec.alice_outcome, rec.bob_outcome) == ("A_k", "B_0", 1, 1)
    a = TagArray([10_900], [0])
    b = TagArray([10_000], [6])
    assert len(match_coincidences(a, b, 0, 1600)) == 0
    assert len(match_coincidences(a, b, 0, 2000)) == 1
    with pytest.raises(ValueError):
        match_coincidences(a, b, 0, 0)


def test_tie_goes_to_earlier_bob():
    co = match_coincidences(TagArray([1000], [0]), TagArray([900, 1100], [6, 7]), 0, 800)
    assert co.idx_b.tolist() == [0]


def test_callable_offset():
    a = TagArray([1000, 10**9 + 2000], [0, 0])
    b = TagArray([0, 10**9], [6, 6])
    co = match_coincidences(a, b, OffsetTrack(np.array([0.0, 1e9]), np.array([1000.0, 2000.0])), 100)
    assert len(co) == 2


stamps = st.lists(st.integers(0, 20_000), max_size=60)


@settings(max_examples=200, deadline=None)
@given(stamps, stamps, st.integers(-500, 500), st.integers(1, 3000))
def test_sweep_equals_brute_force(a, b, off, window):
    ta, tb = np.sort(np.array(a, np.int64)), np.sort(np.array(b, np.int64))
    co = match_coincidences(TagArray(ta, np.zeros(len(ta))), TagArray(tb, np.full(len(tb), 6)), off, window)
    ref = brute_force_match(ta, tb, np.full(len(ta), off), window // 2)
    assert list(zip(co.idx_a.tolist(), co.idx_b.tolist())) == ref
    assert len(set(co.idx_b.tolist())) == len(co)  # injective
    assert np.all(np.abs(co.delta - off) <= window / 2)


def test_accidental_rate(rng):
    duration, rate, window = 2.0, 1e6, 800
    n = int(rate * duration)
    a = TagArray(np.sort(rng.integers(0, int(duration * 1e12), n)), np.zeros(n))
    b = TagArray(np.sort(rng.integers(0, int(duration * 1e12), n)), np.full(n, 6))
    expected = rate * rate * window * 1e-12 * duration
    assert len(match_coincidences(a, b, 0, window)) == pytest.approx(expected, rel=0.10)


def test_csv_export(tmp_path):
    co = match_coincidences(TagArray([100, 5000], [2, 5]), TagArray([90, 5010], [7, 8]), 0, 800)
    path = tmp_path / "c.csv"
    co.write_csv(path)
    rows = path.read_text().splitlines()
    assert rows[0] == "t_a,t_b,delta,basis_a,basis_b,out_a,out_b"
    assert rows[1] == "100,90,10,A_0,B_0,1,-1"
    assert rows[2] == "5000,5010,-10,A_1,B_1,-1,1"


def test_reanchor_step_is_tracked_as_a_step():
    # 2 ns of drift per interval; the step must stay inside the +-3 ns fine search
    clock = ClockModel(offset=1e6, drift=2e-9, discipline_interval=1.0, discipline_jitter=0.0)
    a, b, t_pair = pair_streams(np.random.default_rng(8), duration=2.5, clock=clock)
    track = track_offset(a, b)
    local = clock.localize(t_pair)
    err = np.abs(track(local) - (local - t_pair))
    assert np.percentile(err, 99) < 400
    assert np.mean(err > 1000) < 0.005
    assert np.any(np.diff(track.knots_t) <= 1.0)  # a vertical step, not a ramp
