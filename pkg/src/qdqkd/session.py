"""Asymmetric Ekert protocol endpoints.

Both roles run the same state machine over a :class:`~qdqkd.transport.FramedTransport`.
Per packet::

    bob   -> alice  TAGDIGEST  (Bob's timestamps, no channel ids)
    alice -> bob    TAGDIGEST  (Bob indices of matched coincidences)
    alice -> bob    BASES, then bob -> alice BASES
    alice -> bob    QBERSAMPLE (sample ids, outcomes), then bob -> alice QBERSAMPLE
    alice -> bob    METRICS, and ABORT if the gate fails

After the last packet Bob corrects his key with Cascade against Alice's parity
server (RECONCILE, PARITY, VERIFY), Alice publishes extractor seeds (EXTRACT),
and both close with BYE.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .detection import ChannelMap, TagArray
from .estimators import (  # noqa: F401  re-exported
    CHSH_TERMS, BasisScheme, GateResult, InsufficientStatistics, SessionMetrics, correlation_from_counts,
    estimate_chsh, estimate_qber, outcome_counts, qber_from_correlation, security_gate,
)
from .postproc.cascade import ReconciliationError, RemoteParityOracle, cascade_correct, serve_parities
from .postproc.keys import KeyMaterial
from .postproc.trevisan import ExtractorParams, extract_blocks
from .sync import SyncError, match_coincidences, track_offset
from .transport import (
    PROTOCOL_VERSION, HandshakeError, PeerAbort, ProtocolError, TransportError, pack_array, unpack_array,
)

ROLES = ("alice", "bob")
QBER_FLOOR = 0.005  # Cascade block size needs a non-zero estimate


class SessionError(RuntimeError):
    """Session ended early; ``result`` keeps everything gathered so far."""

    def __init__(self, message: str, result: "SessionResult"):
        super().__init__(message)
        self.result = result


@dataclass
class SessionConfig:
    session_id: str = "qkd"
    n_packets: int = 10
    packet_duration: float = 1.2
    window: float = 800.0
    sample_fraction: float = 0.1
    min_key_sample: int = 200
    min_monitor_counts: int = 50
    eps: float = 1e-6
    postprocess: bool = True
    reconcile_chunk: int = 1 << 16
    extract_block: int = 8192
    seed: int = 0
    accel: float | None = None
    coarse_span: float = 5e6
    segment: float = 0.1e12
    scheme: BasisScheme = field(default_factory=BasisScheme)

    def __post_init__(self):
        if self.n_packets < 1:
            raise ValueError("n_packets must be >= 1")
        if self.window <= 0 or self.packet_duration <= 0:
            raise ValueError("window and packet_duration must be positive")
        if not 0.0 < self.sample_fraction < 1.0:
            raise ValueError("sample_fraction must lie in (0, 1)")


@dataclass
class SiftedKey:
    bits: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint8))
    packets: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    basis: tuple = ("A_k", "B_0")

    def __len__(self):
        return len(self.bits)

    def extend(self, bits, packet: int):
        self.bits = np.concatenate([self.bits, np.asarray(bits, np.uint8)])
        self.packets = np.concatenate([self.packets, np.full(len(bits), packet, np.int64)])


@dataclass
class SessionResult:
    role: str
    session_id: str
    metrics: list = field(default_factory=list)
    sifted: SiftedKey = field(default_factory=SiftedKey)
    reconciled: KeyMaterial | None = None
    extracted: KeyMaterial | None = None
    aborted: bool = False
    abort_reason: str | None = None
    offsets: list = field(default_factory=list)
    key_sample: tuple = (0, 0, 0, 0)
    monitor: list = field(default_factory=lambda: [(0, 0, 0, 0)] * 4)
    corrections: int | None = None

    @property
    def final_qber(self) -> float:
        """Error rate over every key bit: disclosed sample plus errors fixed by reconciliation."""
        if self.corrections is None or self.reconciled is None:
            return float("nan")
        n_pp, n_mm, n_pm, n_mp = self.key_sample
        total = sum(self.key_sample) + self.reconciled.n_bits
        return (n_pm + n_mp + self.corrections) / total if total else float("nan")

    @property
    def qber(self) -> float:
        return estimate_qber(self.key_sample) if sum(self.key_sample) else float("nan")

    @property
    def chsh(self) -> tuple[float, float]:
        if min(sum(c) for c in self.monitor) == 0:
            return float("nan"), float("nan")
        return estimate_chsh(self.monitor)

    @property
    def n_key_coincidences(self) -> int:
        return sum(m.sifted_bits for m in self.metrics)


def _add(a, b):
    return tuple(x + y for x, y in zip(a, b))


def _bits(outcomes) -> np.ndarray:
    return (np.asarray(outcomes) < 0).astype(np.uint8)


def _outcomes(bits) -> np.ndarray:
    return np.where(np.asarray(bits, np.uint8) > 0, -1, 1).astype(np.int8)


class _Endpoint:
    def __init__(self, role, cfg: SessionConfig, transport, feed, channel_map, on_packet):
        if role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")
        self.role = role
        self.cfg = cfg
        self.tx = transport
        self.feed = feed
        self.cm = channel_map or ChannelMap(cfg.scheme.alice_labels, cfg.scheme.bob_labels)
        self.on_packet = on_packet
        self.res = SessionResult(role, cfg.session_id)
        self.prior = 0.0

    @property
    def alice(self) -> bool:
        return self.role == "alice"

    # -- handshake -------------------------------------------------------
    def handshake(self):
        hello = {"type": "HELLO", "version": PROTOCOL_VERSION, "session_id": self.cfg.session_id,
                 "scheme": self.cfg.scheme.digest(), "role": self.role, "n_packets": self.cfg.n_packets}
        if self.alice:
            self.tx.send(hello)
            peer = self.tx.recv("HELLO")
        else:
            peer = self.tx.recv("HELLO")
            self.tx.send(hello)
        if peer.get("version") != PROTOCOL_VERSION:
            raise HandshakeError(f"protocol version {peer.get('version')} != {PROTOCOL_VERSION}")
        for key in ("session_id", "scheme", "n_packets"):
            if peer.get(key) != hello[key]:
                raise HandshakeError(f"{key} mismatch: {peer.get(key)!r} != {hello[key]!r}")
        if peer.get("role") == self.role:
            raise HandshakeError(f"both endpoints claim role {self.role}")

    # -- one packet ------------------------------------------------------
    def exchange(self, kind, mine: dict, k: int) -> dict:
        """Alice speaks first on symmetric exchanges so large frames never cross."""
        msg = {"type": kind, "packet": k, **mine}
        if self.alice:
            self.tx.send(msg)
            peer = self.tx.recv(kind)
        else:
            peer = self.tx.recv(kind)
            self.tx.send(msg)
        if peer.get("packet") != k:
            raise ProtocolError(f"{kind} for packet {peer.get('packet')} while processing {k}")
        return peer

    def coincidences(self, k: int, tags: TagArray) -> np.ndarray:
        """Indices of my tags that form coincidences, in coincidence order."""
        if not self.alice:
            self.tx.send({"type": "TAGDIGEST", "packet": k, "t": pack_array(tags.timestamps, "<i8")})
            reply = self.tx.recv("TAGDIGEST")
            if reply.get("packet") != k:
                raise ProtocolError("TAGDIGEST packet mismatch")
            idx = unpack_array(reply["idx"], "<i8")
            self.res.offsets.append(reply.get("offset"))
            if len(idx) and (idx.min() < 0 or idx.max() >= len(tags)):
                raise ProtocolError("coincidence index outside Bob's packet")
            return idx
        msg = self.tx.recv("TAGDIGEST")
        if msg.get("packet") != k:
            raise ProtocolError("TAGDIGEST packet mismatch")
        tb = unpack_array(msg["t"], "<i8")
        bob = TagArray(tb, np.zeros(len(tb), np.uint8))
        try:
            track = track_offset(tags, bob, coarse_span=self.cfg.coarse_span, segment=self.cfg.segment,
                                 prior=self.prior)
            self.prior = float(np.median(track.knots_offset))
            co = match_coincidences(tags, bob, track, self.cfg.window, self.cm)
            idx_a, idx_b, offset = co.idx_a, co.idx_b, self.prior
        except SyncError:
            idx_a = idx_b = np.zeros(0, np.int64)
            offset = None
        self.res.offsets.append(offset)
        self.tx.send({"type": "TAGDIGEST", "packet": k, "idx": pack_array(idx_b, "<i8"), "offset": offset})
        return idx_a

    def packet(self, k: int) -> SessionMetrics:
        cfg, cm = self.cfg, self.cm
        tags = self.feed(k)
        idx = self.coincidences(k, tags)
        _, basis, outcome = cm.decode(tags.channels[idx])
        basis = basis.astype(np.uint8)
        peer = unpack_array(self.exchange("BASES", {"bases": pack_array(basis, "u1")}, k)["bases"], "u1")
        if len(peer) != len(basis):
            raise ProtocolError("basis list length differs from coincidence count")
        ba, bb = (basis, peer) if self.alice else (peer, basis)
        key_idx = np.flatnonzero((ba == 0) & (bb == 0))
        mon_idx = np.flatnonzero(ba > 0)

        if self.alice:
            rng = np.random.default_rng([cfg.seed, 3, k])
            sample = np.sort(rng.choice(key_idx, size=int(round(cfg.sample_fraction * len(key_idx))),
                                        replace=False)) if len(key_idx) else np.zeros(0, np.int64)
            mine = {"ids": pack_array(sample, "<i8")}
        else:
            mine = {}
            sample = None
        if not self.alice:
            # Bob learns the sample ids before answering
            peer_msg = self.tx.recv("QBERSAMPLE")
            if peer_msg.get("packet") != k:
                raise ProtocolError("QBERSAMPLE packet mismatch")
            sample = unpack_array(peer_msg["ids"], "<i8")
            if not np.isin(sample, key_idx).all():
                raise ProtocolError("sample ids outside the key rounds")
        disclosed = np.concatenate([sample, mon_idx])
        mine["outcomes"] = pack_array(_bits(outcome[disclosed]), "u1")
        if self.alice:
            self.tx.send({"type": "QBERSAMPLE", "packet": k, **mine})
            peer_msg = self.tx.recv("QBERSAMPLE")
        else:
            self.tx.send({"type": "QBERSAMPLE", "packet": k, **mine})
        peer_out = _outcomes(unpack_array(peer_msg["outcomes"], "u1"))
        if len(peer_out) != len(disclosed):
            raise ProtocolError("disclosed outcome count mismatch")
        oa, ob = (outcome[disclosed], peer_out) if self.alice else (peer_out, outcome[disclosed])
        ns = len(sample)
        key_counts = outcome_counts(oa[:ns], ob[:ns])
        mon_a, mon_b = oa[ns:], ob[ns:]
        mon_ba, mon_bb = ba[mon_idx], bb[mon_idx]
        mon_counts = [outcome_counts(mon_a[(mon_ba == i) & (mon_bb == j)], mon_b[(mon_ba == i) & (mon_bb == j)])
                      for i, j, _ in CHSH_TERMS]

        res = self.res
        res.key_sample = _add(res.key_sample, key_counts)
        res.monitor = [_add(c, d) for c, d in zip(res.monitor, mon_counts)]
        m = SessionMetrics(
            packet_index=k, t=(k + 1) * cfg.packet_duration, qber=float("nan"), s_value=float("nan"),
            s_err=float("nan"), raw_coincidences=len(idx), sifted_bits=len(key_idx),
            packet_duration=cfg.packet_duration,
            counts={"key": list(key_counts), **{f"{cfg.scheme.alice_labels[i]}{cfg.scheme.bob_labels[j]}": list(c)
                                                for (i, j, _), c in zip(CHSH_TERMS, mon_counts)}},
        )
        if sum(key_counts):
            m.qber = estimate_qber(key_counts)
        if min(sum(c) for c in mon_counts) > 0:
            m.s_value, m.s_err = estimate_chsh(mon_counts)
        m.cum_qber = res.qber
        m.cum_s, m.cum_s_err = res.chsh
        m.gated = (sum(res.key_sample) >= cfg.min_key_sample
                   and min(sum(c) for c in res.monitor) >= cfg.min_monitor_counts)
        verdict = security_gate({"qber": m.cum_qber, "s_value": m.cum_s}) if m.gated else GateResult(True)

        if self.alice:
            self.tx.send({"type": "METRICS", "packet": k, "qber": m.cum_qber, "s_value": m.cum_s,
                          "abort": verdict.reason})
        else:
            theirs = self.tx.recv("METRICS")
            if theirs.get("packet") != k or theirs.get("abort") != verdict.reason:
                raise ProtocolError(f"gate verdict disagrees at packet {k}")
        if not verdict:
            m.aborted, m.abort_reason = True, verdict.reason
        else:
            keep = np.setdiff1d(key_idx, sample, assume_unique=True)
            res.sifted.extend(_bits(outcome[keep]), k)
        return m

    def abort(self, reason: str):
        self.res.aborted, self.res.abort_reason = True, reason
        if self.alice:
            self.tx.send({"type": "ABORT", "reason": reason})
        else:
            try:
                self.tx.recv("ABORT")
            except PeerAbort:
                pass

    # -- distillation ----------------------------------------------------
    def reconcile(self):
        cfg, res = self.cfg, self.res
        bits = res.sifted.bits
        qber = max(res.qber, QBER_FLOOR)
        chunks = [(s, min(len(bits), s + cfg.reconcile_chunk)) for s in range(0, len(bits), cfg.reconcile_chunk)]
        out, leaked, fixed = [], 0, 0
        if self.alice:
            self.tx.send({"type": "RECONCILE", "qber": qber, "chunks": [e - s for s, e in chunks]})
            for c, (s, e) in enumerate(chunks):
                done = serve_parities(bits[s:e], self.tx, seed=_chunk_seed(cfg.seed, c))
                leaked += done["leaked_bits"]
                fixed += done["corrections"]
                out.append(bits[s:e])
        else:
            msg = self.tx.recv("RECONCILE")
            if msg["chunks"] != [e - s for s, e in chunks]:
                raise ProtocolError("sifted key lengths differ between endpoints")
            qber = msg["qber"]
            oracle = RemoteParityOracle(self.tx)
            for c, (s, e) in enumerate(chunks):
                try:
                    r = cascade_correct(bits[s:e], qber, oracle, seed=_chunk_seed(cfg.seed, c))
                except ReconciliationError:
                    self.tx.send({"type": "ABORT", "reason": "reconciliation"})
                    raise
                oracle.finish(r)
                leaked += r.leaked_bits
                fixed += r.corrections
                out.append(r.key)
        key = np.concatenate(out) if out else np.zeros(0, np.uint8)
        res.reconciled = KeyMaterial(key, "reconciled", leaked_bits=leaked)
        res.corrections = fixed
        return qber

    def extract(self, qber: float):
        cfg, res = self.cfg, self.res
        rec = res.reconciled
        n_blocks = -(-rec.n_bits // cfg.extract_block)
        if self.alice:
            rng = np.random.default_rng([cfg.seed, 4])
            seeds = []
            for b in range(n_blocks):
                nb = min(cfg.extract_block, rec.n_bits - b * cfg.extract_block)
                seeds.append(rng.integers(0, 2, ExtractorParams.seed_length_for(max(nb, 2), cfg.eps), dtype=np.uint8))
            self.tx.send({"type": "EXTRACT", "eps": cfg.eps, "qber": qber, "leaked_bits": rec.leaked_bits,
                          "block": cfg.extract_block, "seeds": [pack_array(np.packbits(s, bitorder="little"), "u1")
                                                                for s in seeds], "lengths": [len(s) for s in seeds]})
        else:
            msg = self.tx.recv("EXTRACT")
            if msg["leaked_bits"] != rec.leaked_bits or msg["block"] != cfg.extract_block:
                raise ProtocolError("extraction parameters disagree")
            seeds = [np.unpackbits(unpack_array(s, "u1"), bitorder="little", count=n)
                     for s, n in zip(msg["seeds"], msg["lengths"])]
        pool = iter(seeds)

        def seed_source(nbits):
            s = next(pool)
            if len(s) != nbits:
                raise ProtocolError("extractor seed length mismatch")
            return s

        bits, _ = extract_blocks(rec.bits, qber, rec.leaked_bits, cfg.eps, seed_source, cfg.extract_block)
        res.extracted = KeyMaterial(bits, "extracted", leaked_bits=rec.leaked_bits, extraction_error=cfg.eps)

    def bye(self):
        if self.alice:
            self.tx.send({"type": "BYE"})
            self.tx.recv("BYE")
        else:
            self.tx.recv("BYE")
            self.tx.send({"type": "BYE"})

    # -- driver ----------------------------------------------------------
    def run(self) -> SessionResult:
        cfg, res = self.cfg, self.res
        try:
            self.handshake()
            t0 = time.monotonic()
            for k in range(cfg.n_packets):
                m = self.packet(k)
                res.metrics.append(m)
                if self.on_packet:
                    self.on_packet(self.role, m)
                if m.aborted:
                    self.abort(m.abort_reason)
                    return res
                if cfg.accel:
                    wait = t0 + (k + 1) * cfg.packet_duration / cfg.accel - time.monotonic()
                    if wait > 0:
                        time.sleep(wait)
            if not res.metrics[-1].gated:
                self.abort("statistics")
                return res
            if cfg.postprocess:
                try:
                    qber = self.reconcile()
                except (ReconciliationError, PeerAbort):
                    res.aborted, res.abort_reason = True, "reconciliation"
                    return res
                self.extract(qber)
            self.bye()
        except (TransportError, ProtocolError) as exc:
            raise SessionError(f"{self.role}: {exc}", res) from exc
        return res


def _chunk_seed(seed: int, chunk: int) -> int:
    return int(np.random.default_rng([seed, 5, chunk]).integers(0, 2**31))


def run_session(role: str, config: SessionConfig, transport, feed, channel_map: ChannelMap | None = None,
                on_packet=None) -> SessionResult:
    """Run one endpoint to completion.

    ``feed(k)`` returns this endpoint's :class:`TagArray` for packet ``k``.
    Raises :class:`SessionError` (with the partial result) on transport or
    protocol failure; security aborts are reported in the result.
    """
    return _Endpoint(role, config, transport, feed, channel_map, on_packet).run()


def keys_agree(a: SessionResult, b: SessionResult) -> bool:
    return a.extracted is not None and b.extracted is not None and np.array_equal(a.extracted.bits, b.extracted.bits)


def chsh_from_qber(qber: float) -> float:
    """Isotropic-noise prediction S = 2 sqrt2 (1 - 2 qber)."""
    return 2 * math.sqrt(2) * (1 - 2 * qber)
