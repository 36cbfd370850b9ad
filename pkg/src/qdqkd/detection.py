"""Detector clicks, time tags and the QTAG binary tag-stream format.

QTAG layout (little-endian): a 16-byte header ``b"QTAG"``, u16 version, u16
channel count, 8 reserved zero bytes; then 9-byte records of u64 picosecond
timestamp and u8 channel id, sorted by timestamp.
"""

from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from . import kernels

MAGIC = b"QTAG"
VERSION = 1
HEADER = struct.Struct("<4sHH8s")
RECORD_DTYPE = np.dtype([("timestamp", "<u8"), ("channel", "u1")])
assert HEADER.size == 16 and RECORD_DTYPE.itemsize == 9

ALICE, BOB = "alice", "bob"


class TagFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


@dataclass(frozen=True)
class DetectorConfig:
    efficiency: float = 0.30
    jitter_sigma: float = 250.0
    dead_time: float = 25_000.0
    dark_rate: float = 200.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in [0, 1]")
        if self.dead_time < 0 or self.jitter_sigma < 0 or self.dark_rate < 0:
            raise ValueError("dead_time, jitter_sigma and dark_rate must be >= 0")


class TimeTag(NamedTuple):
    timestamp: int
    channel: int


@dataclass
class TagArray:
    """Columnar tag stream sorted by timestamp."""

    timestamps: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    channels: np.ndarray = field(default_factory=lambda: np.empty(0, np.uint8))

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.channels = np.asarray(self.channels, dtype=np.uint8)

    def __len__(self):
        return len(self.timestamps)

    def __iter__(self) -> Iterator[TimeTag]:
        for t, c in zip(self.timestamps.tolist(), self.channels.tolist()):
            yield TimeTag(t, c)

    def __eq__(self, other):
        return (isinstance(other, TagArray) and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.channels, other.channels))

    @classmethod
    def from_tags(cls, tags) -> "TagArray":
        tags = list(tags)
        return cls(np.array([t.timestamp for t in tags], np.int64), np.array([t.channel for t in tags], np.uint8))

    @classmethod
    def merge(cls, *streams: "TagArray") -> "TagArray":
        t = np.concatenate([s.timestamps for s in streams])
        c = np.concatenate([s.channels for s in streams])
        order = np.argsort(t, kind="stable")
        return cls(t[order], c[order])

    def select(self, mask) -> "TagArray":
        return TagArray(self.timestamps[mask], self.channels[mask])

    def window(self, t0: int, t1: int) -> "TagArray":
        lo, hi = np.searchsorted(self.timestamps, [t0, t1])
        return TagArray(self.timestamps[lo:hi], self.channels[lo:hi])


class ChannelMap:
    """Channel id <-> (party, basis index, outcome).

    Default layout: Alice ids 0-5 for bases (A_k, A_0, A_1) x outcomes (+1, -1),
    Bob ids 6-9 for (B_0, B_1) x (+1, -1).
    """

    def __init__(self, alice_labels=("A_k", "A_0", "A_1"), bob_labels=("B_0", "B_1")):
        self.alice_labels = tuple(alice_labels)
        self.bob_labels = tuple(bob_labels)
        self.bob_base = 2 * len(self.alice_labels)
        self.n_channels = self.bob_base + 2 * len(self.bob_labels)

    @classmethod
    def default(cls) -> "ChannelMap":
        return cls()

    def encode(self, party: str, basis, outcome):
        basis = np.asarray(basis, dtype=np.int64)
        bit = (np.asarray(outcome) < 0).astype(np.int64)
        base = 0 if party == ALICE else self.bob_base
        ch = (base + 2 * basis + bit).astype(np.uint8)
        return int(ch) if ch.ndim == 0 else ch

    def decode(self, channel):
        ch = np.asarray(channel, dtype=np.int64)
        if np.any((ch < 0) | (ch >= self.n_channels)):
            raise ValueError("channel id outside the map")
        is_bob = ch >= self.bob_base
        rel = np.where(is_bob, ch - self.bob_base, ch)
        outcome = np.where(rel % 2 == 0, 1, -1).astype(np.int8)
        party = np.where(is_bob, BOB, ALICE)
        return party, rel // 2, outcome

    def channels(self, party: str) -> list[int]:
        if party == ALICE:
            return list(range(self.bob_base))
        return list(range(self.bob_base, self.n_channels))

    def describe(self, channel: int):
        party, basis, outcome = self.decode(channel)
        labels = self.alice_labels if party == ALICE else self.bob_labels
        return str(party), labels[int(basis)], int(outcome)


class Detector:
    """One avalanche photodiode with dead-time memory; event-at-a-time interface."""

    def __init__(self, cfg: DetectorConfig, clock=None, channel: int = 0):
        self.cfg = cfg
        self.clock = clock
        self.channel = channel
        self._last_click = None

    def detect(self, arrival: int, rng: np.random.Generator) -> TimeTag | None:
        if rng.random() >= self.cfg.efficiency:
            return None
        t = int(round(arrival + rng.normal(0.0, self.cfg.jitter_sigma))) if self.cfg.jitter_sigma else int(arrival)
        gap = max(int(self.cfg.dead_time), 1)
        if self._last_click is not None and t - self._last_click < gap:
            return None
        self._last_click = t
        local = self.clock.localize(t) if self.clock is not None else t
        return TimeTag(int(local), self.channel)


def detect(arrival: int, basis: int, outcome: int, det: DetectorConfig, clock, rng,
           party: str = ALICE, state: dict | None = None, channel_map: ChannelMap | None = None):
    """Single-photon detection on the detector selected by (party, basis, outcome).

    ``state`` keeps one :class:`Detector` per channel across calls.
    """
    cm = channel_map or ChannelMap.default()
    ch = cm.encode(party, basis, outcome)
    state = {} if state is None else state
    d = state.setdefault(ch, Detector(det, clock, ch))
    return d.detect(arrival, rng)


def dark_count_stream(det: DetectorConfig, duration: float, rng: np.random.Generator,
                      channel: int = 0, start: int = 0) -> TagArray:
    """Homogeneous Poisson clicks over ``duration`` seconds (true-time ps), one channel."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = rng.poisson(det.dark_rate * duration)
    t = np.sort(rng.integers(0, int(round(duration * 1e12)), n)) + start
    return TagArray(t, np.full(n, channel, np.uint8))


def detect_batch(arrivals: np.ndarray, channels: np.ndarray, det: DetectorConfig, clock,
                 rng: np.random.Generator, channel_ids, span: tuple[int, int]) -> TagArray:
    """Detector model for a block of photon arrivals (true ps) on known channels.

    Applies efficiency, Gaussian jitter, dark counts on every id in ``channel_ids``
    over ``span`` (true ps), per-channel dead time, then the local clock.
    """
    keep = rng.random(len(arrivals)) < det.efficiency
    t = arrivals[keep]
    if det.jitter_sigma:
        t = t + np.rint(rng.normal(0.0, det.jitter_sigma, len(t))).astype(np.int64)
    ch = channels[keep].astype(np.uint8)
    duration = (span[1] - span[0]) * 1e-12
    darks = [dark_count_stream(det, duration, rng, c, span[0]) for c in channel_ids] if det.dark_rate else []
    merged = TagArray.merge(TagArray(t, ch), *darks)
    t, ch = merged.timestamps, merged.channels
    keep = np.zeros(len(t), bool)
    for c in np.unique(ch):
        idx = np.flatnonzero(ch == c)
        keep[idx] = kernels.deadtime_mask(t[idx], det.dead_time)
    t, ch = t[keep], ch[keep]
    if clock is not None:
        t = np.asarray(clock.localize(t), dtype=np.int64)
    order = np.argsort(t, kind="stable")
    return TagArray(t[order], ch[order])


def _open(target, mode):
    if isinstance(target, (str, os.PathLike)):
        return open(target, mode), True
    return target, False


def write_tags(tags, destination, n_channels: int = 10) -> None:
    """Write a QTAG stream to a path or binary file object."""
    if not isinstance(tags, TagArray):
        tags = TagArray.from_tags(tags)
    t = tags.timestamps
    if len(t) and (t[0] < 0 or np.any(np.diff(t) < 0)):
        raise ValueError("tags must be sorted with non-negative timestamps")
    rec = np.empty(len(tags), RECORD_DTYPE)
    rec["timestamp"] = t.astype(np.uint64)
    rec["channel"] = tags.channels
    fh, owned = _open(destination, "wb")
    try:
        fh.write(HEADER.pack(MAGIC, VERSION, n_channels, bytes(8)))
        fh.write(rec.tobytes())
    finally:
        if owned:
            fh.close()


def tags_to_bytes(tags, n_channels: int = 10) -> bytes:
    buf = io.BytesIO()
    write_tags(tags, buf, n_channels)
    return buf.getvalue()


def parse_tags(data: bytes) -> tuple[TagArray, int]:
    """Decode QTAG bytes; returns (tags, channel count)."""
    if len(data) < HEADER.size:
        raise TagFormatError("truncated header", 0)
    magic, version, n_channels, reserved = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise TagFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise TagFormatError(f"unsupported version {version}", 4)
    body = len(data) - HEADER.size
    n = body // RECORD_DTYPE.itemsize
    if body % RECORD_DTYPE.itemsize:
        raise TagFormatError("truncated record", HEADER.size + n * RECORD_DTYPE.itemsize)
    rec = np.frombuffer(data, RECORD_DTYPE, count=n, offset=HEADER.size)
    t = rec["timestamp"].astype(np.int64)
    ch = rec["channel"].copy()
    if n > 1:
        bad = np.flatnonzero(np.diff(t) < 0)
        if len(bad):
            k = int(bad[0]) + 1
            raise TagFormatError(f"timestamp regression in record {k}", HEADER.size + RECORD_DTYPE.itemsize * k)
    if n and int(ch.max()) >= n_channels:
        k = int(np.argmax(ch >= n_channels))
        raise TagFormatError(f"channel {int(ch[k])} outside header channel count", HEADER.size + 9 * k + 8)
    return TagArray(t, ch), n_channels


def read_tags(source) -> TagArray:
    """Read a QTAG stream from a path, bytes or binary file object."""
    if isinstance(source, (bytes, bytearray, memoryview)):
        return parse_tags(bytes(source))[0]
    fh, owned = _open(source, "rb")
    try:
        data = fh.read()
    finally:
        if owned:
            fh.close()
    return parse_tags(data)[0]


def write_tags_csv(tags: TagArray, path, channel_map: ChannelMap | None = None) -> None:
    cm = channel_map or ChannelMap.default()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp_ps", "channel", "party", "basis", "outcome"])
        for t, c in zip(tags.timestamps.tolist(), tags.channels.tolist()):
            w.writerow([t, c, *cm.describe(c)])
