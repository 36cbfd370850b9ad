"""Basis scheme, correlation estimators and the security gate."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .qstate import A_0, A_1, A_KEY, B_0, B_1

QBER_LIMIT = 0.11
BELL_LIMIT = 2.0

# (alice basis index, bob basis index, sign in S)
CHSH_TERMS = ((1, 0, 1), (1, 1, 1), (2, 0, 1), (2, 1, -1))


class InsufficientStatistics(ValueError):
    pass


@dataclass(frozen=True)
class BasisScheme:
    alice_labels: tuple = ("A_k", "A_0", "A_1")
    alice_angles: tuple = (A_KEY, A_0, A_1)
    alice_probs: tuple = (0.5, 0.25, 0.25)
    bob_labels: tuple = ("B_0", "B_1")
    bob_angles: tuple = (B_0, B_1)
    bob_probs: tuple = (0.5, 0.5)

    def __post_init__(self):
        for side in ("alice", "bob"):
            labels, angles, probs = (getattr(self, f"{side}_{k}") for k in ("labels", "angles", "probs"))
            if not len(labels) == len(angles) == len(probs):
                raise ValueError(f"{side} labels, angles and probabilities differ in length")
            if abs(sum(probs) - 1.0) > 1e-12 or min(probs) < 0:
                raise ValueError(f"{side} basis probabilities must be non-negative and sum to 1")

    def assign_basis(self, party: str, rng: np.random.Generator, size=None):
        """Passive basis choice: index into the party's labels."""
        probs = self.alice_probs if party == "alice" else self.bob_probs
        cdf = np.cumsum(probs)
        idx = np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), len(probs) - 1)
        return int(idx) if size is None else idx.astype(np.uint8)

    def angles(self, party: str, idx) -> np.ndarray:
        return np.asarray(self.alice_angles if party == "alice" else self.bob_angles)[idx]

    def label(self, party: str, idx: int) -> str:
        return (self.alice_labels if party == "alice" else self.bob_labels)[int(idx)]

    def key_fraction(self) -> float:
        return self.alice_probs[0] * self.bob_probs[0]

    def digest(self) -> str:
        doc = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(doc).hexdigest()[:16]


def outcome_counts(out_a, out_b) -> tuple[int, int, int, int]:
    """(N++, N--, N+-, N-+) for paired +-1 outcomes."""
    a = np.asarray(out_a) > 0
    b = np.asarray(out_b) > 0
    return (int(np.sum(a & b)), int(np.sum(~a & ~b)), int(np.sum(a & ~b)), int(np.sum(~a & b)))


def correlation_from_counts(n_pp, n_mm, n_pm, n_mp) -> float:
    total = n_pp + n_mm + n_pm + n_mp
    if total <= 0:
        raise InsufficientStatistics("no coincidences for this basis pair")
    return (n_pp + n_mm - n_pm - n_mp) / total


def estimate_qber(counts) -> float:
    return (1.0 - correlation_from_counts(*counts)) / 2.0


def qber_from_correlation(e: float) -> float:
    return (1.0 - e) / 2.0


def estimate_chsh(counts) -> tuple[float, float]:
    """S and its Poisson error from four correlator count tuples in CHSH_TERMS order."""
    if len(counts) != 4:
        raise ValueError("need four correlators")
    s, var = 0.0, 0.0
    for (_, _, sign), c in zip(CHSH_TERMS, counts):
        e = correlation_from_counts(*c)
        s += sign * e
        var += (1.0 - e * e) / sum(c)
    return s, math.sqrt(var)


@dataclass
class GateResult:
    passed: bool
    reason: str | None = None

    def __bool__(self):
        return self.passed


def security_gate(metrics) -> GateResult:
    """Bell violation first, then the QBER threshold; point estimates."""
    s = metrics.s_value if hasattr(metrics, "s_value") else metrics["s_value"]
    q = metrics.qber if hasattr(metrics, "qber") else metrics["qber"]
    if not s > BELL_LIMIT:
        return GateResult(False, "Bell")
    if not q < QBER_LIMIT:
        return GateResult(False, "QBER")
    return GateResult(True)


@dataclass
class SessionMetrics:
    """One packet row. ``qber``/``s_value`` are per packet; ``cum_*`` drive the gate."""

    packet_index: int
    t: float
    qber: float
    s_value: float
    s_err: float
    raw_coincidences: int
    sifted_bits: int
    aborted: bool = False
    abort_reason: str | None = None
    cum_qber: float = float("nan")
    cum_s: float = float("nan")
    cum_s_err: float = float("nan")
    gated: bool = False
    packet_duration: float = 1.2
    counts: dict = field(default_factory=dict)

    @property
    def raw_rate(self) -> float:
        return self.raw_coincidences / self.packet_duration

    @property
    def key_rate(self) -> float:
        return self.sifted_bits / self.packet_duration

    CSV_COLUMNS = ("packet_index", "t", "qber", "S", "S_err", "raw_rate", "key_rate", "raw_coincidences",
                   "sifted_bits", "cum_qber", "cum_S", "aborted", "abort_reason")

    def csv_row(self) -> list:
        return [self.packet_index, f"{self.t:.6f}", _fmt(self.qber), _fmt(self.s_value), _fmt(self.s_err),
                f"{self.raw_rate:.3f}", f"{self.key_rate:.3f}", self.raw_coincidences, self.sifted_bits,
                _fmt(self.cum_qber), _fmt(self.cum_s), int(self.aborted), self.abort_reason or ""]

    def to_json(self) -> dict:
        d = asdict(self)
        d["raw_rate"] = self.raw_rate
        d["key_rate"] = self.key_rate
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"
