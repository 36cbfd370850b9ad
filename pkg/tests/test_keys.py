import numpy as np
import pytest

from qdqkd.postproc.keys import (InsufficientKey, KeyFileError, KeyMaterial, KeyReuseError, ledger_path, otp_decrypt,
                                 otp_encrypt, pack_bits, read_key, unpack_bits, write_key)


def test_bit_order():
    assert pack_bits([1, 0, 0, 0, 0, 0, 0, 0, 0, 1]) == bytes([1, 2])
    assert unpack_bits(bytes([1, 2]), 10).tolist() == [1, 0, 0, 0, 0, 0, 0, 0, 0, 1]


def test_zero_key_is_identity():
    ct, off = otp_encrypt(b"hello", KeyMaterial(np.zeros(64)))
    assert ct == b"hello" and off == 0


def test_round_trip_and_reuse(rng):
    bits = rng.integers(0, 2, 8 * 100)
    alice, bob = KeyMaterial(bits), KeyMaterial(bits.copy())
    msg = bytes(rng.integers(0, 256, 40, dtype=np.uint8))
    ct, off = otp_encrypt(msg, alice)
    assert ct != msg
    assert otp_decrypt(ct, bob, off) == msg
    with pytest.raises(KeyReuseError):
        otp_encrypt(b"x", alice, offset=10)
    with pytest.raises(KeyReuseError):
        otp_decrypt(ct, bob, off)
    ct2, off2 = otp_encrypt(b"more", alice)
    assert off2 == 40 and alice.remaining == 56


def test_insufficient_and_stage(rng):
    key = KeyMaterial(rng.integers(0, 2, 8 * 10 + 5))
    assert key.n_bytes == 10
    with pytest.raises(InsufficientKey) as err:
        otp_encrypt(b"x" * 11, key)
    assert "[0, 11)" in str(err.value)
    with pytest.raises(ValueError):
        otp_encrypt(b"x", KeyMaterial(np.zeros(8), stage="reconciled"))
    with pytest.raises(ValueError):
        KeyMaterial(np.zeros(8), stage="raw")


def test_key_file_round_trip(rng, tmp_path):
    path = tmp_path / "k.bin"
    key = KeyMaterial(rng.integers(0, 2, 1001), leaked_bits=77, extraction_error=1e-6)
    write_key(path, key)
    assert path.stat().st_size == 32 + 126
    back = read_key(path)
    assert np.array_equal(back.bits, key.bits) and back.leaked_bits == 77 and back.extraction_error == 1e-6
    otp_encrypt(b"abc", back)
    from qdqkd.postproc.keys import save_ledger
    save_ledger(path, back)
    again = read_key(path)
    assert again.consumed == [(0, 3)]
    with pytest.raises(KeyReuseError):
        otp_encrypt(b"z", again, offset=2)


def test_key_file_errors(rng, tmp_path):
    path = tmp_path / "k.bin"
    write_key(path, KeyMaterial(rng.integers(0, 2, 64)))
    data = path.read_bytes()
    for bad in (data[:10], b"XKEY" + data[4:], data[:-1]):
        path.write_bytes(bad)
        with pytest.raises(KeyFileError):
            read_key(path)
    path.write_bytes(data)
    ledger_path(path).write_text('{"key_sha256": "00", "consumed": []}')
    with pytest.raises(KeyFileError):
        read_key(path)
