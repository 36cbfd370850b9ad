"""End-to-end physical layer: source, channel, detectors and clocks, packet by packet.

Each packet is generated from its own seed, so packets can be produced in
any order and by both endpoints independently with identical results.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .channel import ChannelModel, PRESETS as CHANNEL_PRESETS
from .detection import ALICE, BOB, ChannelMap, DetectorConfig, TagArray, detect_batch
from .emitter import ARM_X, ARM_XX, EmitterConfig, effective_pair_state, emit_pulse_train
from .estimators import BasisScheme
from .qstate import correlation, sample_from_correlation
from .sync import ClockModel

# Lumped optics and detection efficiency per detector, see calibration notes in README.
APPARATUS_EFFICIENCY = 0.08
FREE_SPACE_TERMINAL = 0.27


@dataclass
class Scenario:
    emitter: EmitterConfig = field(default_factory=EmitterConfig)
    channel: dict = field(default_factory=lambda: dict(CHANNEL_PRESETS["ideal"]))
    alice_detector: DetectorConfig = field(default_factory=DetectorConfig)
    bob_detector: DetectorConfig = field(default_factory=DetectorConfig)
    alice_clock: ClockModel = field(default_factory=ClockModel)
    bob_clock: ClockModel = field(default_factory=ClockModel)
    scheme: BasisScheme = field(default_factory=BasisScheme)
    packet_duration: float = 1.2
    window: float = 800.0

    @property
    def pulses_per_packet(self) -> int:
        return int(round(self.packet_duration * self.emitter.rep_rate))

    def build_channel(self, seed: int) -> ChannelModel:
        return ChannelModel(**{**self.channel, "seed": seed})


def _fiber() -> Scenario:
    det = DetectorConfig(efficiency=APPARATUS_EFFICIENCY)
    return Scenario(
        emitter=EmitterConfig(visibility_override=0.9326),
        channel=dict(CHANNEL_PRESETS["fiber-250m"]),
        alice_detector=det, bob_detector=det,
        alice_clock=ClockModel(offset=1e6, drift=1e-11, discipline_jitter=50.0, seed=11),
        bob_clock=ClockModel(offset=0.0, drift=-1e-11, discipline_jitter=50.0, seed=12),
    )


def _free_space() -> Scenario:
    return Scenario(
        emitter=EmitterConfig(fss=0.35, visibility_override=0.92, visibility_x=0.7559),
        channel=dict(CHANNEL_PRESETS["freespace-270m"]),
        alice_detector=DetectorConfig(efficiency=APPARATUS_EFFICIENCY * FREE_SPACE_TERMINAL),
        bob_detector=DetectorConfig(efficiency=APPARATUS_EFFICIENCY),
        alice_clock=ClockModel(offset=1e6, drift=1e-11, discipline_jitter=50.0, seed=21),
        bob_clock=ClockModel(offset=0.0, drift=-1e-11, discipline_jitter=50.0, seed=22),
    )


def _ideal() -> Scenario:
    det = DetectorConfig(efficiency=1.0, jitter_sigma=0.0, dead_time=0.0, dark_rate=0.0)
    return Scenario(
        emitter=EmitterConfig(pair_prob=1e-4, g2_x=0.0, g2_xx=0.0, visibility_override=1.0),
        channel=dict(CHANNEL_PRESETS["ideal"]),
        alice_detector=det, bob_detector=det,
    )


SCENARIOS = {"fiber-250m": _fiber, "freespace-270m": _free_space, "ideal": _ideal}


def scenario_preset(name: str) -> Scenario:
    try:
        return SCENARIOS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(SCENARIOS)}") from None


_SECTIONS = {"emitter": EmitterConfig, "alice_detector": DetectorConfig, "bob_detector": DetectorConfig,
             "alice_clock": ClockModel, "bob_clock": ClockModel, "scheme": BasisScheme}


def apply_overrides(sc: Scenario, doc: dict) -> Scenario:
    """Scenario with JSON sections merged in; unknown keys raise ``KeyError``."""
    updates = {}
    top = {f.name for f in fields(Scenario)}
    for key, value in doc.items():
        if key not in top:
            raise KeyError(f"unknown scenario key {key!r}")
        if key == "channel":
            allowed = {f.name for f in fields(ChannelModel) if f.init} - {"seed"}
            bad = set(value) - allowed
            if bad:
                raise KeyError(f"unknown channel keys {sorted(bad)}")
            updates[key] = {**sc.channel, **value}
        elif key in _SECTIONS:
            cls = _SECTIONS[key]
            allowed = {f.name for f in fields(cls)}
            bad = set(value) - allowed
            if bad:
                raise KeyError(f"unknown {key} keys {sorted(bad)}")
            value = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
            updates[key] = replace(getattr(sc, key), **value)
        else:
            updates[key] = value
    return replace(sc, **updates)


@dataclass
class Packet:
    index: int
    start_ps: int
    end_ps: int
    alice: TagArray
    bob: TagArray
    n_pairs: int = 0


class Testbed:
    """Generates the tag streams both parties would record for each packet."""

    __test__ = False  # not a pytest class

    def __init__(self, scenario: Scenario, seed: int = 0, channel_map: ChannelMap | None = None):
        self.scenario = scenario
        self.seed = seed
        self.channel_map = channel_map or ChannelMap(scenario.scheme.alice_labels, scenario.scheme.bob_labels)
        self.state = effective_pair_state(scenario.emitter)
        self.channel = scenario.build_channel(seed)
        self._cache: dict[int, list] = {}
        self._lock = threading.Lock()

    def packet(self, k: int) -> Packet:
        sc = self.scenario
        n = sc.pulses_per_packet
        period = 1e12 / sc.emitter.rep_rate
        start, end = int(round(k * n * period)), int(round((k + 1) * n * period))
        ss = np.random.SeedSequence([self.seed, k])
        r_emit, r_chan, r_out, r_det_a, r_det_b = (np.random.default_rng(s) for s in ss.spawn(5))

        photons = emit_pulse_train(sc.emitter, n, r_emit, start_pulse=k * n)
        half = len(photons) // 2
        xx, x = slice(0, half), slice(half, None)  # aligned halves, same pair order
        t_bob = photons.true_time[xx]
        t_alice = photons.true_time[x] + self.channel.delay_ps
        survive, rotation = self.channel.transmit_batch(photons.true_time[x], r_chan)

        basis_a = sc.scheme.assign_basis("alice", r_out, half)
        basis_b = sc.scheme.assign_basis("bob", r_out, half)
        e = correlation(self.state, sc.scheme.angles("alice", basis_a), sc.scheme.angles("bob", basis_b), rotation)
        e = np.where(photons.correlated[xx], e, 0.0)
        out_a, out_b = sample_from_correlation(e, r_out)

        cm = self.channel_map
        ch_a = cm.encode(ALICE, basis_a, out_a)
        ch_b = cm.encode(BOB, basis_b, out_b)
        order_a = np.argsort(t_alice[survive], kind="stable")
        order_b = np.argsort(t_bob, kind="stable")
        tags_a = detect_batch(t_alice[survive][order_a], ch_a[survive][order_a], sc.alice_detector,
                              sc.alice_clock, r_det_a, cm.channels(ALICE), (start, end))
        tags_b = detect_batch(t_bob[order_b], ch_b[order_b], sc.bob_detector, sc.bob_clock, r_det_b,
                              cm.channels(BOB), (start, end))
        return Packet(k, start, end, tags_a, tags_b, int(np.sum(photons.correlated[xx])))

    def shared_packet(self, k: int, consumers: int = 2) -> Packet:
        """Generate once, hand out ``consumers`` times (in-process loopback)."""
        with self._lock:
            entry = self._cache.get(k)
            if entry is None:
                entry = self._cache[k] = [self.packet(k), consumers]
            entry[1] -= 1
            if entry[1] == 0:
                del self._cache[k]
            return entry[0]

    def feed(self, role: str, shared: bool = False):
        """Per-packet tag source for one endpoint."""
        def get(k: int) -> TagArray:
            p = self.shared_packet(k) if shared else self.packet(k)
            return p.alice if role == "alice" else p.bob
        return get


def expected_rates(sc: Scenario) -> dict:
    """Back-of-envelope singles and coincidence rates (per second) for a scenario."""
    pairs = sc.emitter.rep_rate * sc.emitter.pair_prob
    t = sc.build_channel(0).mean_transmission if sc.channel.get("kind") != "ideal" else 1.0
    ea, eb = sc.alice_detector.efficiency, sc.bob_detector.efficiency
    return {"pairs": pairs, "alice_singles": pairs * t * ea, "bob_singles": pairs * eb,
            "coincidences": pairs * t * ea * eb, "key": pairs * t * ea * eb * sc.scheme.key_fraction()}


def window_capture(sc: Scenario) -> float:
    """Fraction of true pairs landing inside the coincidence window (Gaussian jitter + exciton delay)."""
    sig = math.hypot(sc.alice_detector.jitter_sigma, sc.bob_detector.jitter_sigma)
    tau = sc.emitter.exciton_lifetime * 1e3
    rng = np.random.default_rng(0)
    d = rng.normal(0, sig, 200000) + rng.exponential(tau, 200000) if sig else rng.exponential(tau, 200000)
    return float(np.mean(np.abs(d) <= sc.window / 2))


def simulate_sifted_keys(state, n_bits: int, rng: np.random.Generator, scheme: BasisScheme | None = None):
    """Key-basis outcome pairs drawn directly from the pair state, skipping timing.

    For key volumes that would take hours of simulated acquisition.
    """
    scheme = scheme or BasisScheme()
    a = scheme.alice_angles[0]
    b = scheme.bob_angles[0]
    e = np.full(n_bits, float(correlation(state, a, b)))
    out_a, out_b = sample_from_correlation(e, rng)
    return (out_a < 0).astype(np.uint8), (out_b < 0).astype(np.uint8)
