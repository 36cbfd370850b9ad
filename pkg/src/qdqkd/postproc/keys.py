"""Key material with a consumption ledger, one-time-pad use, and key files on disk."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KEY_MAGIC = b"QKEY"
KEY_VERSION = 1
KEY_HEADER = struct.Struct("<4sHBBQQd")  # magic, version, stage, reserved, bits, leaked, eps

STAGES = ("sifted", "reconciled", "extracted")


class KeyReuseError(RuntimeError):
    pass


class InsufficientKey(RuntimeError):
    pass


class KeyFileError(ValueError):
    pass


def pack_bits(bits) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def unpack_bits(data: bytes, n_bits: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little", count=n_bits)


@dataclass
class KeyMaterial:
    """A key at some processing stage; byte ranges handed out for encryption are recorded."""

    bits: np.ndarray
    stage: str = "extracted"
    leaked_bits: int = 0
    extraction_error: float = 0.0
    consumed: list = field(default_factory=list)  # sorted disjoint [start, end) byte ranges

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.stage not in STAGES:
            raise ValueError(f"unknown key stage {self.stage!r}")

    @property
    def n_bits(self) -> int:
        return len(self.bits)

    @property
    def n_bytes(self) -> int:
        return self.n_bits // 8  # trailing partial byte is never used

    def key_bytes(self) -> bytes:
        return pack_bits(self.bits[: 8 * self.n_bytes])

    def fingerprint(self) -> str:
        return hashlib.sha256(pack_bits(self.bits)).hexdigest()

    @property
    def remaining(self) -> int:
        return self.n_bytes - sum(e - s for s, e in self.consumed)

    def next_free(self) -> int:
        return max((e for _, e in self.consumed), default=0)

    def consume(self, start: int, length: int) -> bytes:
        end = start + length
        if start < 0 or end > self.n_bytes:
            raise InsufficientKey(f"need key bytes [{start}, {end}) but only {self.n_bytes} exist")
        for s, e in self.consumed:
            if start < e and s < end:
                raise KeyReuseError(f"key bytes [{max(s, start)}, {min(e, end)}) already used")
        self.consumed.append((start, end))
        self.consumed.sort()
        return self.key_bytes()[start:end]


def otp_encrypt(plaintext: bytes, key: KeyMaterial, offset: int | None = None) -> tuple[bytes, int]:
    """XOR with unused key bytes; returns (ciphertext, key offset)."""
    if key.stage != "extracted":
        raise ValueError("only extracted key may be used for encryption")
    offset = key.next_free() if offset is None else offset
    pad = key.consume(offset, len(plaintext))
    return bytes(np.bitwise_xor(np.frombuffer(plaintext, np.uint8), np.frombuffer(pad, np.uint8))), offset


def otp_decrypt(ciphertext: bytes, key: KeyMaterial, offset: int) -> bytes:
    return otp_encrypt(ciphertext, key, offset)[0]


def ledger_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".ledger.json")


def write_key(path, key: KeyMaterial) -> None:
    path = Path(path)
    header = KEY_HEADER.pack(KEY_MAGIC, KEY_VERSION, STAGES.index(key.stage), 0,
                             key.n_bits, key.leaked_bits, key.extraction_error)
    path.write_bytes(header + pack_bits(key.bits))
    save_ledger(path, key)


def save_ledger(path, key: KeyMaterial) -> None:
    doc = {"key_sha256": key.fingerprint(), "consumed": [list(r) for r in key.consumed]}
    ledger_path(path).write_text(json.dumps(doc, indent=1))


def read_key(path) -> KeyMaterial:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < KEY_HEADER.size:
        raise KeyFileError("truncated key header")
    magic, version, stage, _, n_bits, leaked, eps = KEY_HEADER.unpack_from(data)
    if magic != KEY_MAGIC:
        raise KeyFileError(f"bad magic {magic!r}")
    if version != KEY_VERSION:
        raise KeyFileError(f"unsupported key file version {version}")
    if stage >= len(STAGES):
        raise KeyFileError(f"bad stage code {stage}")
    body = data[KEY_HEADER.size:]
    if len(body) != -(-n_bits // 8):
        raise KeyFileError(f"key body is {len(body)} bytes, header says {n_bits} bits")
    key = KeyMaterial(unpack_bits(body, n_bits), STAGES[stage], leaked, eps)
    lp = ledger_path(path)
    if lp.exists():
        doc = json.loads(lp.read_text())
        if doc.get("key_sha256") != key.fingerprint():
            raise KeyFileError("ledger does not belong to this key")
        key.consumed = sorted(tuple(r) for r in doc["consumed"])
    return key
