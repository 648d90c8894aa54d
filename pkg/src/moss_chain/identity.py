"""Administrator-run certificate authority and operator profiles."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

from .crypto import KeyPair, address_from_public_key, sha256, verify_signature
from .encoding import encode


class Role(str, enum.Enum):
    SELLER = "seller"
    BUYER = "buyer"


class RegistryError(Exception):
    pass


class DuplicateId(RegistryError):
    pass


class NotAdministrator(RegistryError):
    pass


class UnknownIdentity(RegistryError):
    pass


class BadCertificate(RegistryError):
    pass


class WrongRole(ValueError):
    pass


def id_digest(operator_id: str) -> bytes:
    return sha256(operator_id.encode("utf-8"))


def certificate_message(digest: bytes, public_key: bytes, wallet_address: bytes) -> bytes:
    return encode(["moss-chain/cert/v1", digest, public_key, wallet_address])


@dataclass(frozen=True)
class OperatorIdentity:
    """{ID, PK, Cert, WA} tuple held by the administrator.

    ``id`` is None when the identity was rebuilt from on-chain data, where
    only the digest of the operator id is published.
    """

    id: str | None
    id_digest: bytes
    public_key: bytes
    certificate: bytes
    wallet_address: bytes
    revoked: bool = False


class IdentityRegistry:
    """Membership set for the permissioned chain.

    Only the administrator key may register or revoke. Reads never mutate.
    """

    def __init__(self, admin_public_key: bytes, scheme: str = "ed25519", admin_id: str = "administrator"):
        self.admin_public_key = admin_public_key
        self.scheme = scheme
        self._by_address: dict[bytes, OperatorIdentity] = {}
        self._by_digest: dict[bytes, bytes] = {}
        # Administrator is a member from the start and self-certifies.
        digest = id_digest(admin_id)
        self._admin_identity = OperatorIdentity(
            id=admin_id,
            id_digest=digest,
            public_key=admin_public_key,
            certificate=b"",
            wallet_address=address_from_public_key(admin_public_key),
        )
        self._by_address[self._admin_identity.wallet_address] = self._admin_identity
        self._by_digest[digest] = self._admin_identity.wallet_address

    @classmethod
    def for_admin(cls, admin_key: KeyPair, admin_id: str = "administrator") -> "IdentityRegistry":
        return cls(admin_key.public, admin_key.scheme, admin_id)

    @property
    def admin_address(self) -> bytes:
        return self._admin_identity.wallet_address

    def _check_admin(self, admin_key: KeyPair) -> None:
        if admin_key.public != self.admin_public_key:
            raise NotAdministrator("key is not the administrator's signing key")

    def register_operator(self, admin_key: KeyPair, operator_id: str, public_key: bytes) -> OperatorIdentity:
        self._check_admin(admin_key)
        digest = id_digest(operator_id)
        wallet = address_from_public_key(public_key)
        if digest in self._by_digest:
            raise DuplicateId(operator_id)
        if wallet in self._by_address:
            raise DuplicateId(f"public key already bound to {wallet.hex()}")
        cert = admin_key.sign(certificate_message(digest, public_key, wallet))
        identity = OperatorIdentity(operator_id, digest, public_key, cert, wallet)
        self._insert(identity)
        return identity

    def add_certified(self, digest: bytes, public_key: bytes, certificate: bytes) -> OperatorIdentity:
        """Admit an identity published on-chain; the certificate must verify."""
        wallet = address_from_public_key(public_key)
        if not verify_signature(
            self.admin_public_key, certificate_message(digest, public_key, wallet), certificate, self.scheme
        ):
            raise BadCertificate(wallet.hex())
        if digest in self._by_digest or wallet in self._by_address:
            raise DuplicateId(wallet.hex())
        identity = OperatorIdentity(None, digest, public_key, certificate, wallet)
        self._insert(identity)
        return identity

    def _insert(self, identity: OperatorIdentity) -> None:
        self._by_address[identity.wallet_address] = identity
        self._by_digest[identity.id_digest] = identity.wallet_address

    def revoke(self, admin_key: KeyPair | None, address: bytes) -> None:
        """Mark an identity revoked. ``admin_key`` may be None when replaying an
        admin-signed revocation already checked by the ledger."""
        if admin_key is not None:
            self._check_admin(admin_key)
        identity = self._by_address.get(address)
        if identity is None:
            raise UnknownIdentity(address.hex())
        if identity.wallet_address == self.admin_address:
            raise RegistryError("administrator cannot be revoked")
        self._by_address[address] = replace(identity, revoked=True)

    def verify_certificate(self, identity: OperatorIdentity) -> bool:
        if identity.wallet_address != address_from_public_key(identity.public_key):
            return False
        msg = certificate_message(identity.id_digest, identity.public_key, identity.wallet_address)
        return verify_signature(self.admin_public_key, msg, identity.certificate, self.scheme)

    def get(self, address: bytes) -> OperatorIdentity | None:
        return self._by_address.get(address)

    def lookup_id(self, operator_id: str) -> OperatorIdentity | None:
        addr = self._by_digest.get(id_digest(operator_id))
        return None if addr is None else self._by_address[addr]

    def public_key_for(self, address: bytes) -> bytes | None:
        """Verification key for an active member, None otherwise."""
        identity = self._by_address.get(address)
        if identity is None or identity.revoked:
            return None
        return identity.public_key

    def is_member(self, address: bytes) -> bool:
        return self.public_key_for(address) is not None

    def identities(self) -> list[OperatorIdentity]:
        return list(self._by_address.values())

    def __len__(self) -> int:
        return len(self._by_address)

    def copy(self) -> "IdentityRegistry":
        clone = object.__new__(IdentityRegistry)
        clone.admin_public_key = self.admin_public_key
        clone.scheme = self.scheme
        clone._admin_identity = self._admin_identity
        clone._by_address = dict(self._by_address)
        clone._by_digest = dict(self._by_digest)
        return clone


@dataclass(frozen=True)
class OperatorProfile:
    identity: OperatorIdentity | None
    role: Role
    offered_or_demanded_mhz: int
    unit_price_gwei_per_mhz: int
    total_bandwidth_mhz: int = 0
    required_bandwidth_mhz: int = 0

    def __post_init__(self) -> None:
        for name in ("offered_or_demanded_mhz", "unit_price_gwei_per_mhz",
                     "total_bandwidth_mhz", "required_bandwidth_mhz"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value!r}")


def validate_seller_constraint(profile: OperatorProfile) -> bool:
    """Seller keeps enough spectrum for itself: total - offered >= required."""
    if profile.role is not Role.SELLER:
        raise WrongRole("bandwidth constraint applies to sellers only")
    left = profile.total_bandwidth_mhz - profile.offered_or_demanded_mhz
    return left >= profile.required_bandwidth_mhz
