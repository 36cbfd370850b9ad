"""Cascade reconciliation with parity caching and a random-subset verification step.

Bob corrects his key against Alice's through a parity oracle. Every parity the
oracle returns is one disclosed bit. Permutations and verification subsets come
from a public seed, so both ends can rebuild them.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from ..transport import PeerAbort, ProtocolError


class ReconciliationError(RuntimeError):
    def __init__(self, message, leaked_bits=0, passes=0):
        super().__init__(message)
        self.leaked_bits = leaked_bits
        self.passes = passes


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def first_block_size(qber: float, n: int) -> int:
    if qber <= 0:
        return n
    return max(1, min(n, math.ceil(0.73 / qber)))


def pass_permutation(seed: int, pass_index: int, n: int) -> np.ndarray:
    if pass_index == 0:
        return np.arange(n)
    return np.random.default_rng([seed, 1, pass_index]).permutation(n)


def verification_subsets(seed: int, round_index: int, n: int, count: int) -> np.ndarray:
    return np.random.default_rng([seed, 2, round_index]).integers(0, 2, (count, n), dtype=np.uint8)


class LocalParityOracle:
    """Alice's side answered in-process; keeps a transcript of every disclosed bit."""

    def __init__(self, key_a, seed: int):
        self.key = np.asarray(key_a, dtype=np.uint8)
        self.seed = seed
        self._prefix = {}
        self.transcript: list[tuple] = []

    def parities(self, pass_index: int, ranges) -> list[int]:
        prefix = self._prefix.get(pass_index)
        if prefix is None:
            perm = pass_permutation(self.seed, pass_index, len(self.key))
            prefix = self._prefix[pass_index] = np.concatenate([[0], np.cumsum(self.key[perm], dtype=np.int64)])
        out = [int((prefix[e] - prefix[s]) & 1) for s, e in ranges]
        self.transcript.extend(("parity", pass_index, s, e, b) for (s, e), b in zip(ranges, out))
        return out

    def verify(self, round_index: int, count: int) -> list[int]:
        subsets = verification_subsets(self.seed, round_index, len(self.key), count)
        out = [int(x) for x in (subsets.astype(np.int64) @ self.key) & 1]
        self.transcript.extend(("verify", round_index, i, b) for i, b in enumerate(out))
        return out


@dataclass
class ReconcileResult:
    key: np.ndarray
    leaked_bits: int
    corrections: int
    passes: int
    verified: bool
    block_sizes: list = field(default_factory=list)


class _Pass:
    def __init__(self, perm, k):
        self.perm = perm
        self.pos = np.empty_like(perm)
        self.pos[perm] = np.arange(len(perm))
        self.k = k
        self.known = {}  # (start, end) -> Alice's parity


def cascade_correct(key_b, qber_estimate: float, oracle, seed: int = 0, passes: int = 4,
                    max_passes: int = 12, verify_bits: int = 32) -> ReconcileResult:
    """Bob's side of Cascade.

    Passes use block sizes ceil(0.73/qber) * 2**i (capped at n). A first pass
    with no odd block ends the protocol at once. Otherwise, after ``passes``
    passes, ``verify_bits`` random-subset parities are compared. On a mismatch
    further passes at the last block size are run and verified again, up to
    ``max_passes``.
    """
    b = np.array(key_b, dtype=np.uint8)
    n = len(b)
    if n == 0:
        return ReconcileResult(b, 0, 0, 0, True)
    leaked = 0
    corrections = 0
    k1 = first_block_size(qber_estimate, n)
    done: list[_Pass] = []

    def alice(p_idx, ranges):
        nonlocal leaked
        leaked += len(ranges)
        return oracle.parities(p_idx, ranges)

    def bob_parity(ps, s, e):
        return int(b[ps.perm[s:e]].sum() & 1)

    def known_parity(p_idx, ps, s, e):
        if (s, e) in ps.known:
            return ps.known[(s, e)]
        bit = alice(p_idx, [(s, e)])[0]
        ps.known[(s, e)] = bit
        return bit

    def bisect(p_idx, ps, s, e):
        while e - s > 1:
            m = (s + e) // 2
            whole = ps.known[(s, e)]
            if (s, m) not in ps.known and (m, e) in ps.known:
                ps.known[(s, m)] = whole ^ ps.known[(m, e)]
            left = known_parity(p_idx, ps, s, m)
            ps.known[(m, e)] = whole ^ left
            if left != bob_parity(ps, s, m):
                e = m
            else:
                s = m
        return int(ps.perm[s])

    def block_of(ps, x):
        st = (int(ps.pos[x]) // ps.k) * ps.k
        return st, min(n, st + ps.k)

    def run_pass(p_idx):
        nonlocal corrections
        # passes beyond the standard ones repeat the last block size; a block spanning
        # the whole key can never expose an even number of residual errors
        k = min(n, k1 * 2 ** min(p_idx, passes - 1))
        ps = _Pass(pass_permutation(seed, p_idx, n), k)
        done.append(ps)
        blocks = [(s, min(n, s + k)) for s in range(0, n, k)]
        for blk, bit in zip(blocks, alice(p_idx, blocks)):
            ps.known[blk] = bit
        heap = [(p_idx, s, e) for s, e in blocks if ps.known[(s, e)] != bob_parity(ps, s, e)]
        found = len(heap)
        heapq.heapify(heap)
        while heap:
            j, s, e = heapq.heappop(heap)
            pj = done[j]
            if pj.known[(s, e)] == bob_parity(pj, s, e):
                continue
            x = bisect(j, pj, s, e)
            b[x] ^= 1
            corrections += 1
            for i, other in enumerate(done):
                if i == j:
                    continue
                st, en = block_of(other, x)
                if other.known[(st, en)] != bob_parity(other, st, en):
                    heapq.heappush(heap, (i, st, en))
        return found

    if run_pass(0) == 0:
        return ReconcileResult(b, leaked, corrections, 1, False, [d.k for d in done])
    for p_idx in range(1, passes):
        run_pass(p_idx)
    verify_round = 0
    while True:
        subsets = verification_subsets(seed, verify_round, n, verify_bits)
        ours = (subsets.astype(np.int64) @ b) & 1
        leaked += verify_bits
        theirs = oracle.verify(verify_round, verify_bits)
        verify_round += 1
        if np.array_equal(ours, np.asarray(theirs)):
            return ReconcileResult(b, leaked, corrections, len(done), True, [d.k for d in done])
        if len(done) >= max_passes:
            raise ReconciliationError(
                f"keys still differ after {len(done)} passes", leaked_bits=leaked, passes=len(done))
        run_pass(len(done))


def reconcile(key_a, key_b, qber_estimate: float, seed: int = 0, oracle=None, **kwargs) -> ReconcileResult:
    """In-process reconciliation of ``key_b`` against ``key_a``."""
    key_a = np.asarray(key_a, dtype=np.uint8)
    key_b = np.asarray(key_b, dtype=np.uint8)
    if len(key_a) != len(key_b):
        raise ValueError("keys must have equal length")
    if not 0.0 <= qber_estimate < 0.5:
        raise ValueError("qber_estimate must lie in [0, 0.5)")
    oracle = oracle or LocalParityOracle(key_a, seed)
    return cascade_correct(key_b, qber_estimate, oracle, seed, **kwargs)


class RemoteParityOracle:
    """Parity queries sent over a message transport to :func:`serve_parities`."""

    def __init__(self, transport):
        self.transport = transport

    def parities(self, pass_index, ranges):
        flat = [int(v) for r in ranges for v in r]
        self.transport.send({"type": "PARITY", "pass": pass_index, "ranges": flat})
        return self.transport.recv("PARITY_REPLY")["bits"]

    def verify(self, round_index, count):
        self.transport.send({"type": "VERIFY", "round": round_index, "count": count})
        return self.transport.recv("PARITY_REPLY")["bits"]

    def finish(self, result: ReconcileResult):
        self.transport.send({"type": "RECONCILE_DONE", "leaked_bits": result.leaked_bits,
                             "corrections": result.corrections, "verified": result.verified,
                             "passes": result.passes})


def serve_parities(key_a, transport, seed: int) -> dict:
    """Answer Bob's parity requests until RECONCILE_DONE; returns that message."""
    oracle = LocalParityOracle(key_a, seed)
    disclosed = 0
    while True:
        msg = transport.recv()
        kind = msg.get("type")
        if kind == "PARITY":
            flat = msg["ranges"]
            bits = oracle.parities(msg["pass"], list(zip(flat[::2], flat[1::2])))
        elif kind == "VERIFY":
            bits = oracle.verify(msg["round"], msg["count"])
        elif kind == "RECONCILE_DONE":
            if msg["leaked_bits"] != disclosed:
                raise ProtocolError(f"leakage mismatch: peer counted {msg['leaked_bits']}, served {disclosed}")
            return msg
        elif kind == "ABORT":
            raise PeerAbort(msg.get("reason", "unspecified"))
        else:
            raise ProtocolError(f"unexpected {kind} during reconciliation")
        disclosed += len(bits)
        transport.send({"type": "PARITY_REPLY", "bits": bits})
