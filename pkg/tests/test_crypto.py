import pytest

from moss_chain.crypto import (
    KeyPair,
    address_from_public_key,
    format_address,
    parse_address,
    sha256,
    verify_signature,
)


@pytest.mark.parametrize("scheme", ["ed25519", "hmac-sha256"])
def test_sign_verify(scheme):
    key = KeyPair.from_seed("op1", scheme)
    sig = key.sign(b"hello")
    assert verify_signature(key.public, b"hello", sig, scheme)
    assert not verify_signature(key.public, b"hellp", sig, scheme)
    other = KeyPair.from_seed("op2", scheme)
    assert not verify_signature(other.public, b"hello", sig, scheme)


@pytest.mark.parametrize("scheme", ["ed25519", "hmac-sha256"])
def test_keys_are_deterministic(scheme):
    assert KeyPair.from_seed("x", scheme) == KeyPair.from_seed("x", scheme)
    assert KeyPair.from_seed("x", scheme).public != KeyPair.from_seed("y", scheme).public


def test_address_is_last_20_bytes_of_key_hash():
    key = KeyPair.from_seed("op1")
    assert key.address == sha256(key.public)[-20:]
    assert address_from_public_key(key.public) == key.address


def test_address_text_round_trip():
    addr = KeyPair.from_seed("op1").address
    text = format_address(addr)
    assert text.startswith("0x") and len(text) == 42
    assert parse_address(text) == addr


def test_sha256_vector():
    assert sha256(b"abc").hex() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
