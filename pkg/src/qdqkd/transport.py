"""Length-prefixed JSON messages over a reliable byte stream.

Frame = 4-byte big-endian payload length + UTF-8 JSON object. Every payload
carries a ``type`` field; arrays travel as base64 of their little-endian bytes.
"""

from __future__ import annotations

import base64
import json
import socket
import struct
import time

import numpy as np

PROTOCOL_VERSION = 1
MAX_FRAME = 1 << 30
_LEN = struct.Struct(">I")


class TransportError(ConnectionError):
    pass


class ProtocolError(RuntimeError):
    pass


class HandshakeError(ProtocolError):
    pass


def pack_array(arr, dtype) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()).decode()


def unpack_array(text: str, dtype) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype=np.dtype(dtype).newbyteorder("<")).astype(dtype)


def encode_frame(message: dict) -> bytes:
    payload = json.dumps(message, separators=(",", ":"), sort_keys=True).encode()
    return _LEN.pack(len(payload)) + payload


class FramedTransport:
    """Message transport on a connected stream socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.sent = 0
        self.received = 0

    def send(self, message: dict) -> None:
        frame = encode_frame(message)
        try:
            self.sock.sendall(frame)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc
        self.sent += 1

    def _read_exact(self, n: int) -> bytes:
        chunks = []
        while n:
            try:
                chunk = self.sock.recv(min(n, 1 << 20))
            except OSError as exc:
                raise TransportError(f"receive failed: {exc}") from exc
            if not chunk:
                raise TransportError("peer closed the connection")
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def recv(self, expect: str | None = None) -> dict:
        (length,) = _LEN.unpack(self._read_exact(4))
        if length > MAX_FRAME:
            raise ProtocolError(f"frame of {length} bytes exceeds limit")
        try:
            message = json.loads(self._read_exact(length))
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed payload: {exc}") from exc
        self.received += 1
        kind = message.get("type")
        if expect is not None and kind != expect:
            if kind == "ABORT":
                raise PeerAbort(message.get("reason", "unspecified"))
            raise ProtocolError(f"expected {expect}, got {kind}")
        return message

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class PeerAbort(ProtocolError):
    def __init__(self, reason: str):
        super().__init__(f"peer aborted: {reason}")
        self.reason = reason


def transport_pair() -> tuple[FramedTransport, FramedTransport]:
    a, b = socket.socketpair()
    return FramedTransport(a), FramedTransport(b)


def parse_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not port.isdigit():
        raise ValueError(f"address must look like host:port, got {address!r}")
    return host or "127.0.0.1", int(port)


def listen(address: str, timeout: float | None = None) -> FramedTransport:
    host, port = parse_address(address)
    with socket.create_server((host, port)) as server:
        server.settimeout(timeout)
        try:
            conn, _ = server.accept()
        except OSError as exc:
            raise TransportError(f"no peer connected on {address}: {exc}") from exc
    conn.settimeout(None)
    return FramedTransport(conn)


def connect(address: str, retries: int = 50, delay: float = 0.1) -> FramedTransport:
    host, port = parse_address(address)
    for attempt in range(retries):
        try:
            return FramedTransport(socket.create_connection((host, port)))
        except OSError as exc:
            if attempt == retries - 1:
                raise TransportError(f"cannot reach peer at {address}: {exc}") from exc
            time.sleep(delay)
    raise AssertionError("unreachable")
