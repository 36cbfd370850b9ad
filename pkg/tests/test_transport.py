import socket
import threading

import numpy as np
import pytest

from qdqkd.transport import (FramedTransport, PeerAbort, ProtocolError, TransportError, connect, encode_frame,
                             listen, pack_array, parse_address, transport_pair, unpack_array)


def test_frame_layout():
    frame = encode_frame({"type": "BYE"})
    assert frame[:4] == len(frame[4:]).to_bytes(4, "big")
    assert frame[4:] == b'{"type":"BYE"}'


def test_round_trip_and_counters():
    a, b = transport_pair()
    a.send({"type": "HELLO", "x": [1, 2]})
    assert b.recv("HELLO") == {"type": "HELLO", "x": [1, 2]}
    assert (a.sent, b.received) == (1, 1)
    a.close(), b.close()


def test_large_frame_crosses_intact():
    a, b = transport_pair()
    arr = np.arange(10**6, dtype=np.int64)
    t = threading.Thread(target=a.send, args=({"type": "T", "t": pack_array(arr, "<i8")},))
    t.start()
    got = unpack_array(b.recv("T")["t"], "<i8")
    t.join()
    assert np.array_equal(got, arr)


def test_unexpected_and_abort():
    a, b = transport_pair()
    a.send({"type": "BASES"})
    with pytest.raises(ProtocolError):
        b.recv("METRICS")
    a.send({"type": "ABORT", "reason": "QBER"})
    with pytest.raises(PeerAbort) as err:
        b.recv("METRICS")
    assert err.value.reason == "QBER"


def test_malformed_payload_and_closed_peer():
    s1, s2 = socket.socketpair()
    b = FramedTransport(s2)
    s1.sendall((5).to_bytes(4, "big") + b"{oops")
    with pytest.raises(ProtocolError):
        b.recv()
    s1.close()
    with pytest.raises(TransportError):
        b.recv()


def test_parse_address():
    assert parse_address("127.0.0.1:9000") == ("127.0.0.1", 9000)
    assert parse_address(":9000") == ("127.0.0.1", 9000)
    with pytest.raises(ValueError):
        parse_address("localhost")


def test_tcp_listen_connect():
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    box = {}
    t = threading.Thread(target=lambda: box.setdefault("srv", listen(f"127.0.0.1:{port}", timeout=10)))
    t.start()
    client = connect(f"127.0.0.1:{port}")
    t.join()
    client.send({"type": "PING"})
    assert box["srv"].recv("PING")["type"] == "PING"
    client.close(), box["srv"].close()


def test_unreachable_peer():
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    with pytest.raises(TransportError):
        connect(f"127.0.0.1:{port}", retries=2, delay=0.01)
