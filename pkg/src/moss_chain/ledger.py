"""Hash-chained block store: transactions, merkle roots, mempool, chain file.

Canonical byte layouts (all fields through :mod:`moss_chain.encoding`)::

    tx signing message  ["moss-chain/tx/v1", sender, function_id, payload,
                         value_wei, nonce, timestamp]
    tx bytes            [sender, function_id, payload, value_wei, nonce,
                         timestamp, signature]
    block header        ["moss-chain/block/v1", height, prev_hash,
                         merkle_root, timestamp, proposer_id]
    block bytes         [height, prev_hash, merkle_root, timestamp,
                         proposer_id, [tx bytes, ...]]

    commit vote         ["moss-chain/commit/v1", view, sequence, block digest,
                         replica_id]

Chain file: ``b"MOSC"`` magic, big-endian u32 format version, then one record
per block: u32 length followed by ``[block bytes, certificate]`` where the
certificate is a list of ``[replica_id, view, signature]`` commit votes.
"""

from __future__ import annotations

import enum
import struct
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .crypto import ZERO_HASH, KeyPair, address_from_public_key, sha256, verify_signature
from .encoding import DecodeError, decode, encode
from .identity import IdentityRegistry, RegistryError

CHAIN_MAGIC = b"MOSC"
CHAIN_FORMAT_VERSION = 1


class FunctionId(enum.IntEnum):
    GENESIS = 0
    REGISTER = 1
    REVOKE = 2
    DEPLOY = 10
    BID_OR_ASK_SUBMIT = 11
    REGISTRATION_END = 12
    SORT_ASK_BY_INCREASE = 13
    SORT_BID_BY_DECREASE = 14
    DOUBLE_AUCTION = 15
    FREE_TRADE_BEGIN = 16
    ORDER_RESPONSE = 17
    DELETE_ORDER = 18
    MARKET_END = 19
    PAY_OR_NOT = 20
    INCREASE_FUNDS = 21
    WITHDRAW = 22
    CHANGE_OWNER = 23
    SELF_DESTRUCT = 24

    @property
    def is_system(self) -> bool:
        return self < FunctionId.DEPLOY


SYSTEM_FUNCTIONS = frozenset(f for f in FunctionId if f.is_system)


class LedgerError(Exception):
    pass


class BadLinkage(LedgerError):
    pass


class BadHeight(LedgerError):
    pass


class BadMerkleRoot(LedgerError):
    pass


class BadSignature(LedgerError):
    pass


class BadNonce(LedgerError):
    pass


class UnknownSender(LedgerError):
    pass


class NonMonotoneTimestamp(LedgerError):
    pass


class BadGenesis(LedgerError):
    pass


class BadSystemTransaction(LedgerError):
    pass


class BadCommitCertificate(LedgerError):
    pass


class CorruptFile(LedgerError):
    pass


class CorruptRecord(CorruptFile):
    """A framed record whose contents do not decode; ``index`` is its height."""

    def __init__(self, index: int, message: str):
        super().__init__(message)
        self.index = index


class DuplicateTransaction(LedgerError):
    pass


@dataclass(frozen=True)
class Transaction:
    sender: bytes
    function_id: FunctionId
    payload: bytes
    value_wei: int
    nonce: int
    timestamp: int
    signature: bytes = b""

    def __post_init__(self) -> None:
        if self.value_wei < 0:
            raise ValueError("value_wei must be non-negative")
        if self.nonce < 0 or self.timestamp < 0:
            raise ValueError("nonce and timestamp must be non-negative")

    def signing_message(self) -> bytes:
        return encode([
            "moss-chain/tx/v1", self.sender, int(self.function_id), self.payload,
            self.value_wei, self.nonce, self.timestamp,
        ])

    def to_bytes(self) -> bytes:
        return encode(self._fields())

    def _fields(self) -> list[Any]:
        return [self.sender, int(self.function_id), self.payload, self.value_wei,
                self.nonce, self.timestamp, self.signature]

    @classmethod
    def from_fields(cls, fields: Any) -> "Transaction":
        if not isinstance(fields, list) or len(fields) != 7:
            raise DecodeError("transaction must be a 7-field list")
        sender, fid, payload, value, nonce, ts, sig = fields
        if not (isinstance(sender, bytes) and isinstance(payload, bytes) and isinstance(sig, bytes)):
            raise DecodeError("transaction byte fields malformed")
        if not all(isinstance(x, int) and not isinstance(x, bool) for x in (fid, value, nonce, ts)):
            raise DecodeError("transaction integer fields malformed")
        try:
            function_id = FunctionId(fid)
            return cls(sender, function_id, payload, value, nonce, ts, sig)
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc

    @classmethod
    def from_bytes(cls, data: bytes) -> "Transaction":
        return cls.from_fields(decode(data))

    @cached_property
    def digest(self) -> bytes:
        return sha256(self.to_bytes())

    @property
    def args(self) -> dict[str, Any]:
        value = decode(self.payload)
        if not isinstance(value, dict):
            raise DecodeError("payload is not a dict")
        return value

    @property
    def key(self) -> tuple[bytes, int]:
        return (self.sender, self.nonce)


def make_transaction(
    key: KeyPair,
    function_id: FunctionId,
    args: Mapping[str, Any] | None = None,
    *,
    nonce: int,
    timestamp: int,
    value_wei: int = 0,
) -> Transaction:
    unsigned = Transaction(
        sender=key.address,
        function_id=FunctionId(function_id),
        payload=encode(dict(args or {})),
        value_wei=value_wei,
        nonce=nonce,
        timestamp=timestamp,
    )
    return replace(unsigned, signature=key.sign(unsigned.signing_message()))


def merkle_root(tx_digests: list[bytes]) -> bytes:
    """Binary merkle root; an odd node at any level is paired with itself."""
    if not tx_digests:
        return ZERO_HASH
    level = list(tx_digests)
    while True:
        if len(level) % 2:
            level.append(level[-1])
        level = [sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
        if len(level) == 1:
            return level[0]


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    merkle_root: bytes
    timestamp: int
    proposer_id: int
    transactions: tuple[Transaction, ...] = field(default_factory=tuple)

    @classmethod
    def build(cls, height: int, prev_hash: bytes, timestamp: int, proposer_id: int,
              transactions: Iterable[Transaction]) -> "Block":
        txs = tuple(transactions)
        return cls(height, prev_hash, merkle_root([t.digest for t in txs]), timestamp, proposer_id, txs)

    def header_bytes(self) -> bytes:
        return encode(["moss-chain/block/v1", self.height, self.prev_hash, self.merkle_root,
                       self.timestamp, self.proposer_id])

    @cached_property
    def digest(self) -> bytes:
        return sha256(self.header_bytes())

    def to_bytes(self) -> bytes:
        return encode([self.height, self.prev_hash, self.merkle_root, self.timestamp,
                       self.proposer_id, [t._fields() for t in self.transactions]])

    @classmethod
    def from_bytes(cls, data: bytes) -> "Block":
        fields = decode(data)
        if not isinstance(fields, list) or len(fields) != 6:
            raise DecodeError("block must be a 6-field list")
        height, prev, root, ts, proposer, txs = fields
        if not (isinstance(prev, bytes) and isinstance(root, bytes) and isinstance(txs, list)):
            raise DecodeError("block fields malformed")
        if not all(isinstance(x, int) and not isinstance(x, bool) for x in (height, ts, proposer)):
            raise DecodeError("block integer fields malformed")
        return cls(height, prev, root, ts, proposer, tuple(Transaction.from_fields(t) for t in txs))

    def computed_merkle_root(self) -> bytes:
        return merkle_root([t.digest for t in self.transactions])


def commit_message(view: int, sequence: int, digest: bytes, replica_id: int) -> bytes:
    return encode(["moss-chain/commit/v1", view, sequence, digest, replica_id])


def fault_tolerance(n: int) -> int:
    return (n - 1) // 3


def quorum_size(n: int) -> int:
    return 2 * fault_tolerance(n) + 1


@dataclass(frozen=True)
class CommitVote:
    replica_id: int
    view: int
    signature: bytes


Certificate = tuple[CommitVote, ...]


class TxCheck(str, enum.Enum):
    OK = "ok"
    UNKNOWN_SENDER = "unknown_sender"
    BAD_SIGNATURE = "bad_signature"
    BAD_NONCE = "bad_nonce"


def check_transaction(tx: Transaction, registry: IdentityRegistry,
                      nonces: Mapping[bytes, int] | None = None) -> TxCheck:
    """Diagnostic form of :func:`verify_transaction`."""
    public_key = registry.public_key_for(tx.sender)
    if public_key is None:
        return TxCheck.UNKNOWN_SENDER
    if not verify_signature(public_key, tx.signing_message(), tx.signature, registry.scheme):
        return TxCheck.BAD_SIGNATURE
    expected = (nonces or {}).get(tx.sender, 0)
    if tx.nonce != expected:
        return TxCheck.BAD_NONCE
    return TxCheck.OK


def verify_transaction(tx: Transaction, registry: IdentityRegistry,
                       nonces: Mapping[bytes, int] | None = None) -> bool:
    """True iff the sender is an active member, the signature verifies and the
    nonce is the next one expected for that sender (0 when unseen)."""
    return check_transaction(tx, registry, nonces) is TxCheck.OK


_CHECK_ERRORS = {
    TxCheck.UNKNOWN_SENDER: UnknownSender,
    TxCheck.BAD_SIGNATURE: BadSignature,
    TxCheck.BAD_NONCE: BadNonce,
}


class Mempool:
    """Pending transactions in arrival order, unique per (sender, nonce)."""

    def __init__(self) -> None:
        self._pending: OrderedDict[tuple[bytes, int], Transaction] = OrderedDict()

    def add(self, tx: Transaction) -> None:
        if tx.key in self._pending:
            raise DuplicateTransaction(f"{tx.sender.hex()} nonce {tx.nonce}")
        self._pending[tx.key] = tx

    def drain(self, limit: int) -> list[Transaction]:
        out = []
        while self._pending and len(out) < limit:
            out.append(self._pending.popitem(last=False)[1])
        return out

    def __len__(self) -> int:
        return len(self._pending)

    def __iter__(self) -> Iterator[Transaction]:
        return iter(list(self._pending.values()))

    def __contains__(self, key: object) -> bool:
        return key in self._pending


def genesis_payload(admin_key: KeyPair, alloc: Mapping[bytes, int],
                    settings: Mapping[str, Any] | None = None) -> dict[str, Any]:
    return {
        "admin_public_key": admin_key.public,
        "scheme": admin_key.scheme,
        "alloc": [[addr, int(wei)] for addr, wei in sorted(alloc.items())],
        "settings": dict(settings or {}),
    }


def make_genesis_block(admin_key: KeyPair, alloc: Mapping[bytes, int], timestamp: int,
                       registrations: Iterable[Transaction] = (),
                       settings: Mapping[str, Any] | None = None) -> Block:
    """Genesis block: the admin's self-signed setup transaction followed by any
    admin-signed REGISTER transactions (nonces 1, 2, ...)."""
    setup = make_transaction(admin_key, FunctionId.GENESIS, genesis_payload(admin_key, alloc, settings),
                             nonce=0, timestamp=timestamp)
    return Block.build(0, ZERO_HASH, timestamp, 0, [setup, *registrations])


def register_transaction(admin_key: KeyPair, identity, *, nonce: int, timestamp: int) -> Transaction:
    return make_transaction(admin_key, FunctionId.REGISTER, {
        "id_digest": identity.id_digest,
        "public_key": identity.public_key,
        "certificate": identity.certificate,
    }, nonce=nonce, timestamp=timestamp)


class Chain:
    """Validated, append-only chain with its membership set and nonce table.

    REGISTER / REVOKE system transactions are ledger-level: they are applied
    to the membership set as blocks are appended so later transactions in the
    same or following blocks verify against the updated set.
    """

    def __init__(self, genesis: Block):
        registry, nonces, config = self._validate_genesis(genesis)
        self.blocks: list[Block] = [genesis]
        self.certificates: list[Certificate] = [()]
        self.registry = registry
        self.nonces = nonces
        self.genesis_config = config
        self.replica_keys: list[bytes] = list(config.get("settings", {}).get("replicas", []))

    @staticmethod
    def _validate_genesis(block: Block) -> tuple[IdentityRegistry, dict[bytes, int], dict[str, Any]]:
        if block.height != 0 or block.prev_hash != ZERO_HASH:
            raise BadGenesis("genesis must be height 0 with all-zero prev_hash")
        if block.merkle_root != block.computed_merkle_root():
            raise BadMerkleRoot("genesis merkle root mismatch")
        if not block.transactions or block.transactions[0].function_id is not FunctionId.GENESIS:
            raise BadGenesis("first genesis transaction must be GENESIS")
        setup = block.transactions[0]
        try:
            config = setup.args
            admin_pk = config["admin_public_key"]
            scheme = config["scheme"]
        except (DecodeError, KeyError) as exc:
            raise BadGenesis(f"malformed genesis payload: {exc}") from exc
        if address_from_public_key(admin_pk) != setup.sender:
            raise BadGenesis("genesis sender does not match admin key")
        try:
            ok = verify_signature(admin_pk, setup.signing_message(), setup.signature, scheme)
        except ValueError as exc:
            raise BadGenesis(str(exc)) from exc
        if not ok:
            raise BadSignature("genesis transaction signature")
        if setup.nonce != 0:
            raise BadNonce("genesis nonce must be 0")
        if block.timestamp != setup.timestamp or block.proposer_id != 0:
            raise BadGenesis("genesis header must carry the setup timestamp and proposer 0")
        registry = IdentityRegistry(admin_pk, scheme)
        nonces = {setup.sender: 1}
        Chain._apply_transactions(block.transactions[1:], registry, nonces, allow_calls=False)
        return registry, nonces, config

    @staticmethod
    def _apply_transactions(txs: Iterable[Transaction], registry: IdentityRegistry,
                            nonces: dict[bytes, int], allow_calls: bool = True) -> None:
        for tx in txs:
            if tx.function_id is FunctionId.GENESIS:
                raise BadSystemTransaction("GENESIS outside block 0")
            check = check_transaction(tx, registry, nonces)
            if check is not TxCheck.OK:
                raise _CHECK_ERRORS[check](f"tx {tx.digest.hex()[:16]}: {check.value}")
            if tx.function_id in SYSTEM_FUNCTIONS:
                if tx.sender != registry.admin_address:
                    raise BadSystemTransaction("system transactions are administrator-only")
                try:
                    args = tx.args
                    if tx.function_id is FunctionId.REGISTER:
                        registry.add_certified(args["id_digest"], args["public_key"], args["certificate"])
                    else:
                        registry.revoke(None, args["address"])
                except (DecodeError, KeyError, RegistryError) as exc:
                    raise BadSystemTransaction(f"{tx.function_id.name}: {exc!r}") from exc
            elif not allow_calls:
                raise BadGenesis("genesis may contain only system transactions")
            nonces[tx.sender] = tx.nonce + 1

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.head.height

    @property
    def head_digest(self) -> bytes:
        return self.head.digest

    def __len__(self) -> int:
        return len(self.blocks)

    def validate_block(self, block: Block) -> tuple[IdentityRegistry, dict[bytes, int]]:
        """Full validity check against the head. Returns the membership set and
        nonce table as they would be after the block; the chain is untouched."""
        head = self.head
        if block.height != head.height + 1:
            raise BadHeight(f"expected height {head.height + 1}, got {block.height}")
        if block.prev_hash != head.digest:
            raise BadLinkage(f"block {block.height} prev_hash does not match parent digest")
        if block.timestamp <= head.timestamp:
            raise NonMonotoneTimestamp(f"block {block.height}: {block.timestamp} <= {head.timestamp}")
        if block.merkle_root != block.computed_merkle_root():
            raise BadMerkleRoot(f"block {block.height}")
        registry = self.registry.copy()
        nonces = dict(self.nonces)
        self._apply_transactions(block.transactions, registry, nonces)
        return registry, nonces

    def verify_certificate(self, block: Block, certificate: Certificate) -> None:
        """Require commit votes from a quorum of the genesis replica set.

        Every vote in the certificate must be valid and from a distinct
        replica, so the stored certificate has no slack bytes a mutation could
        hide in. Chains whose genesis names no replicas accept blocks without
        votes."""
        if not self.replica_keys:
            if certificate:
                raise BadCommitCertificate(f"block {block.height}: votes on a chain without replicas")
            return
        n = len(self.replica_keys)
        good: set[int] = set()
        for vote in certificate:
            if not 0 <= vote.replica_id < n or vote.replica_id in good:
                raise BadCommitCertificate(f"block {block.height}: bad or duplicate voter {vote.replica_id}")
            msg = commit_message(vote.view, block.height, block.digest, vote.replica_id)
            if not verify_signature(self.replica_keys[vote.replica_id], msg, vote.signature, self.registry.scheme):
                raise BadCommitCertificate(f"block {block.height}: invalid vote from {vote.replica_id}")
            good.add(vote.replica_id)
        if len(good) < quorum_size(n):
            raise BadCommitCertificate(
                f"block {block.height}: {len(good)} valid commit votes, need {quorum_size(n)}")

    def append_block(self, block: Block, certificate: Iterable[CommitVote] = ()) -> "Chain":
        certificate = tuple(certificate)
        registry, nonces = self.validate_block(block)
        self.verify_certificate(block, certificate)
        self.blocks.append(block)
        self.certificates.append(certificate)
        self.registry = registry
        self.nonces = nonces
        return self

    def save(self, path: str | Path) -> None:
        write_chain_file(path, zip(self.blocks, self.certificates))

    @classmethod
    def from_records(cls, records: Iterable[tuple[Block, Certificate]]) -> "Chain":
        it = iter(records)
        try:
            genesis, _ = next(it)
        except StopIteration:
            raise BadGenesis("empty block list") from None
        chain = cls(genesis)
        for block, cert in it:
            chain.append_block(block, cert)
        return chain


def write_chain_file(path: str | Path, records: Iterable[tuple[Block, Certificate]]) -> None:
    with open(path, "wb") as fh:
        fh.write(CHAIN_MAGIC + struct.pack(">I", CHAIN_FORMAT_VERSION))
        for block, cert in records:
            data = encode([block.to_bytes(), [[v.replica_id, v.view, v.signature] for v in cert]])
            fh.write(struct.pack(">I", len(data)))
            fh.write(data)


def _decode_record(data: bytes) -> tuple[Block, Certificate]:
    fields = decode(data)
    if not isinstance(fields, list) or len(fields) != 2 or not isinstance(fields[0], bytes):
        raise DecodeError("record must be [block bytes, certificate]")
    votes = []
    for item in fields[1] if isinstance(fields[1], list) else [None]:
        if (not isinstance(item, list) or len(item) != 3 or not isinstance(item[0], int)
                or not isinstance(item[1], int) or not isinstance(item[2], bytes)):
            raise DecodeError("malformed commit vote")
        votes.append(CommitVote(*item))
    return Block.from_bytes(fields[0]), tuple(votes)


def read_chain_file(path: str | Path) -> list[tuple[Block, Certificate]]:
    """Parse a chain file into (block, certificate) records without validating them."""
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != CHAIN_MAGIC:
        raise CorruptFile("missing chain-file magic")
    (version,) = struct.unpack(">I", data[4:8])
    if version != CHAIN_FORMAT_VERSION:
        raise CorruptFile(f"unsupported chain-file version {version}")
    records = []
    pos = 8
    while pos < len(data):
        if pos + 4 > len(data):
            raise CorruptFile(f"truncated record header at byte {pos}")
        (length,) = struct.unpack(">I", data[pos:pos + 4])
        pos += 4
        if pos + length > len(data):
            raise CorruptFile(f"truncated block record {len(records)}")
        try:
            records.append(_decode_record(data[pos:pos + length]))
        except (DecodeError, ValueError) as exc:
            raise CorruptRecord(len(records), f"undecodable block record {len(records)}: {exc}") from exc
        pos += length
    if not records:
        raise CorruptFile("chain file holds no blocks")
    return records
