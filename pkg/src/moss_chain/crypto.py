"""Hashing, signatures and address derivation.

SHA-256 is the single hash used for block ids, merkle nodes, signing digests
and addresses. Signatures default to Ed25519 (deterministic); an HMAC
stand-in with the same interface exists for fast unit tests.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

ZERO_HASH = bytes(32)
ADDRESS_LEN = 20


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def address_from_public_key(public_key: bytes) -> bytes:
    """Last 20 bytes of SHA-256(public key), Ethereum-style."""
    return sha256(public_key)[-ADDRESS_LEN:]


def format_address(address: bytes) -> str:
    return "0x" + address.hex()


def parse_address(text: str) -> bytes:
    raw = bytes.fromhex(text[2:] if text.startswith("0x") else text)
    if len(raw) != ADDRESS_LEN:
        raise ValueError(f"address must be {ADDRESS_LEN} bytes, got {len(raw)}")
    return raw


class SignatureScheme:
    name: str = ""

    def private_from_seed(self, seed: str | bytes) -> bytes:
        raise NotImplementedError

    def public_key(self, private: bytes) -> bytes:
        raise NotImplementedError

    def sign(self, private: bytes, message: bytes) -> bytes:
        raise NotImplementedError

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        raise NotImplementedError


def _seed_bytes(seed: str | bytes) -> bytes:
    return seed.encode("utf-8") if isinstance(seed, str) else bytes(seed)


class Ed25519Scheme(SignatureScheme):
    name = "ed25519"

    def private_from_seed(self, seed: str | bytes) -> bytes:
        return sha256(b"moss-chain/ed25519/" + _seed_bytes(seed))

    def public_key(self, private: bytes) -> bytes:
        key = Ed25519PrivateKey.from_private_bytes(private)
        return key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    def sign(self, private: bytes, message: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(private).sign(message)

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        except (InvalidSignature, ValueError):
            return False
        return True


class HmacScheme(SignatureScheme):
    """Keyed-MAC stand-in. The "public key" is the MAC key itself, so it only
    authenticates anything inside a test harness."""

    name = "hmac-sha256"

    def private_from_seed(self, seed: str | bytes) -> bytes:
        return sha256(b"moss-chain/hmac/" + _seed_bytes(seed))

    def public_key(self, private: bytes) -> bytes:
        return private

    def sign(self, private: bytes, message: bytes) -> bytes:
        return hmac.new(private, message, hashlib.sha256).digest()

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        expected = hmac.new(public_key, message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, signature)


SCHEMES: dict[str, SignatureScheme] = {
    s.name: s for s in (Ed25519Scheme(), HmacScheme())
}
DEFAULT_SCHEME = "ed25519"


def get_scheme(name: str) -> SignatureScheme:
    try:
        return SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown signature scheme {name!r}") from None


@dataclass(frozen=True)
class KeyPair:
    private: bytes = field(repr=False)
    public: bytes
    scheme: str = DEFAULT_SCHEME

    @classmethod
    def from_seed(cls, seed: str | bytes, scheme: str = DEFAULT_SCHEME) -> "KeyPair":
        impl = get_scheme(scheme)
        private = impl.private_from_seed(seed)
        return cls(private=private, public=impl.public_key(private), scheme=scheme)

    @property
    def address(self) -> bytes:
        return address_from_public_key(self.public)

    def sign(self, message: bytes) -> bytes:
        return get_scheme(self.scheme).sign(self.private, message)


def verify_signature(
    public_key: bytes, message: bytes, signature: bytes, scheme: str = DEFAULT_SCHEME
) -> bool:
    return get_scheme(scheme).verify(public_key, message, signature)
