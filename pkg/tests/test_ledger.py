import hashlib
from dataclasses import replace

import pytest

from moss_chain.crypto import ZERO_HASH, KeyPair
from moss_chain.identity import IdentityRegistry
from moss_chain.ledger import (
    BadCommitCertificate,
    BadLinkage,
    BadMerkleRoot,
    BadNonce,
    BadSignature,
    Block,
    Chain,
    CommitVote,
    CorruptFile,
    CorruptRecord,
    DuplicateTransaction,
    FunctionId,
    Mempool,
    NonMonotoneTimestamp,
    Transaction,
    TxCheck,
    UnknownSender,
    check_transaction,
    commit_message,
    make_genesis_block,
    make_transaction,
    merkle_root,
    quorum_size,
    read_chain_file,
    register_transaction,
    verify_transaction,
    write_chain_file,
)

SCHEME = "hmac-sha256"


def h(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


D1, D2, D3 = h(b"tx-1"), h(b"tx-2"), h(b"tx-3")


class TestMerkle:
    def test_empty(self):
        assert merkle_root([]) == bytes(32)

    def test_single_leaf_duplicated(self):
        assert merkle_root([D1]) == h(D1 + D1)

    def test_three_leaves(self):
        assert merkle_root([D1, D2, D3]) == h(h(D1 + D2) + h(D3 + D3))

    def test_three_leaves_fixed_vector(self):
        # frozen from a hashlib computation of the leaves above
        expected = "b61d242561be7938cb795e6a1fec3aaf669f2ff0d27fc31ad90ff713b2500d11"
        assert merkle_root([D1, D2, D3]).hex() == expected

    def test_order_sensitive(self):
        assert merkle_root([D1, D2]) != merkle_root([D2, D1])

    def test_five_leaves(self):
        l1 = [h(D1 + D2), h(D3 + D1), h(D2 + D2)]
        l2 = [h(l1[0] + l1[1]), h(l1[2] + l1[2])]
        assert merkle_root([D1, D2, D3, D1, D2]) == h(l2[0] + l2[1])


@pytest.fixture
def world():
    admin = KeyPair.from_seed("admin", SCHEME)
    op = KeyPair.from_seed("op1", SCHEME)
    reg = IdentityRegistry.for_admin(admin)
    ident = reg.register_operator(admin, "OP1", op.public)
    genesis = make_genesis_block(admin, {op.address: 10**20}, 100,
                                 [register_transaction(admin, ident, nonce=1, timestamp=100)])
    return admin, op, Chain(genesis)


def call(key, nonce, ts=200, fid=FunctionId.REGISTRATION_END):
    return make_transaction(key, fid, {}, nonce=nonce, timestamp=ts)


def next_block(chain, txs, ts=None):
    head = chain.head
    return Block.build(head.height + 1, head.digest, ts or head.timestamp + 1, 0, txs)


class TestChain:
    def test_genesis_state(self, world):
        admin, op, chain = world
        assert chain.height == 0
        assert chain.head.prev_hash == ZERO_HASH
        assert chain.registry.is_member(op.address)
        assert chain.nonces[admin.address] == 2

    def test_append_valid_block(self, world):
        _, op, chain = world
        chain.append_block(next_block(chain, [call(op, 0)]))
        assert len(chain) == 2
        assert chain.nonces[op.address] == 1

    def test_bad_linkage(self, world):
        _, op, chain = world
        b = Block.build(1, h(b"elsewhere"), 200, 0, [call(op, 0)])
        with pytest.raises(BadLinkage):
            chain.append_block(b)

    def test_tampered_transaction_byte(self, world):
        _, op, chain = world
        b = next_block(chain, [call(op, 0)])
        tx = b.transactions[0]
        bad = replace(b, transactions=(replace(tx, timestamp=tx.timestamp + 1),))
        with pytest.raises(BadMerkleRoot):
            chain.append_block(bad)

    def test_bad_signature(self, world):
        _, op, chain = world
        tx = call(op, 0)
        forged = replace(tx, signature=bytes(len(tx.signature)))
        with pytest.raises(BadSignature):
            chain.append_block(next_block(chain, [forged]))

    def test_unknown_sender(self, world):
        _, _, chain = world
        stranger = KeyPair.from_seed("stranger", SCHEME)
        with pytest.raises(UnknownSender):
            chain.append_block(next_block(chain, [call(stranger, 0)]))

    def test_non_monotone_timestamp(self, world):
        _, op, chain = world
        with pytest.raises(NonMonotoneTimestamp):
            chain.append_block(next_block(chain, [call(op, 0)], ts=chain.head.timestamp))

    def test_replayed_nonce_rejected(self, world):
        _, op, chain = world
        tx = call(op, 0)
        chain.append_block(next_block(chain, [tx]))
        with pytest.raises(BadNonce):
            chain.append_block(next_block(chain, [tx]))

    def test_nonce_gap_in_block_rejected(self, world):
        _, op, chain = world
        with pytest.raises(BadNonce):
            chain.append_block(next_block(chain, [call(op, 0), call(op, 2)]))

    def test_failed_append_leaves_chain_untouched(self, world):
        _, op, chain = world
        head = chain.head_digest
        with pytest.raises(BadNonce):
            chain.append_block(next_block(chain, [call(op, 0), call(op, 0)]))
        assert chain.head_digest == head and chain.nonces.get(op.address, 0) == 0

    def test_revocation_locks_out_operator(self, world):
        admin, op, chain = world
        revoke = make_transaction(admin, FunctionId.REVOKE, {"address": op.address},
                                  nonce=2, timestamp=150)
        chain.append_block(next_block(chain, [revoke]))
        with pytest.raises(UnknownSender):
            chain.append_block(next_block(chain, [call(op, 0)]))


class TestVerifyTransaction:
    def test_registered_and_signed(self, world):
        _, op, chain = world
        assert verify_transaction(call(op, 0), chain.registry, chain.nonces)

    def test_unregistered(self, world):
        _, _, chain = world
        tx = call(KeyPair.from_seed("nobody", SCHEME), 0)
        assert not verify_transaction(tx, chain.registry, chain.nonces)
        assert check_transaction(tx, chain.registry) is TxCheck.UNKNOWN_SENDER

    def test_stale_nonce_after_submitting_twice(self, world):
        _, op, chain = world
        tx = call(op, 0)
        chain.append_block(next_block(chain, [tx]))
        assert check_transaction(tx, chain.registry, chain.nonces) is TxCheck.BAD_NONCE


def test_transaction_bytes_round_trip(world):
    _, op, _ = world
    tx = make_transaction(op, FunctionId.BID_OR_ASK_SUBMIT, {"role": "seller", "bandwidth_mhz": 3},
                          nonce=4, timestamp=9, value_wei=10**18)
    back = Transaction.from_bytes(tx.to_bytes())
    assert back == tx and back.digest == tx.digest
    assert back.args == {"role": "seller", "bandwidth_mhz": 3}


def test_block_bytes_round_trip(world):
    _, op, chain = world
    b = next_block(chain, [call(op, 0), call(op, 1)])
    assert Block.from_bytes(b.to_bytes()) == b
    assert b.computed_merkle_root() == b.merkle_root


class TestMempool:
    def test_fifo_and_unique(self, world):
        _, op, _ = world
        pool = Mempool()
        a, b = call(op, 0), call(op, 1)
        pool.add(a)
        pool.add(b)
        with pytest.raises(DuplicateTransaction):
            pool.add(call(op, 0, ts=999))
        assert (op.address, 0) in pool
        assert pool.drain(1) == [a]
        assert list(pool) == [b]
        assert len(pool) == 1


class TestCertificates:
    def _chain(self, n=4):
        admin = KeyPair.from_seed("admin", SCHEME)
        replicas = [KeyPair.from_seed(f"r{i}", SCHEME) for i in range(n)]
        genesis = make_genesis_block(admin, {}, 10, settings={"replicas": [k.public for k in replicas]})
        return admin, replicas, Chain(genesis)

    def _votes(self, replicas, block, ids):
        return [CommitVote(i, 0, replicas[i].sign(commit_message(0, block.height, block.digest, i)))
                for i in ids]

    def test_quorum_required(self):
        admin, replicas, chain = self._chain()
        b = next_block(chain, [call(admin, 1)])
        with pytest.raises(BadCommitCertificate):
            chain.append_block(b, self._votes(replicas, b, [0, 1]))
        chain.append_block(b, self._votes(replicas, b, [0, 1, 3]))
        assert chain.height == 1

    def test_duplicate_vote_rejected(self):
        admin, replicas, chain = self._chain()
        b = next_block(chain, [call(admin, 1)])
        votes = self._votes(replicas, b, [0, 1, 2])
        with pytest.raises(BadCommitCertificate):
            chain.append_block(b, votes + votes[:1])

    def test_invalid_spare_vote_rejected(self):
        # a quorum plus one corrupted vote is still a corrupted certificate
        admin, replicas, chain = self._chain()
        b = next_block(chain, [call(admin, 1)])
        votes = self._votes(replicas, b, [0, 1, 2, 3])
        votes[3] = replace(votes[3], signature=bytes(len(votes[3].signature)))
        with pytest.raises(BadCommitCertificate):
            chain.append_block(b, votes)

    def test_votes_on_chain_without_replicas(self, world):
        _, op, chain = world
        b = next_block(chain, [call(op, 0)])
        with pytest.raises(BadCommitCertificate):
            chain.append_block(b, [CommitVote(0, 0, b"x")])

    @pytest.mark.parametrize("n,q", [(1, 1), (4, 3), (7, 5), (10, 7)])
    def test_quorum_size(self, n, q):
        assert quorum_size(n) == q


class TestChainFile:
    def test_round_trip(self, world, tmp_path):
        _, op, chain = world
        chain.append_block(next_block(chain, [call(op, 0)]))
        chain.save(tmp_path / "c.bin")
        again = Chain.from_records(read_chain_file(tmp_path / "c.bin"))
        assert again.head_digest == chain.head_digest

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "c.bin"
        p.write_bytes(b"NOPE\x00\x00\x00\x01")
        with pytest.raises(CorruptFile):
            read_chain_file(p)

    def test_truncated(self, world, tmp_path):
        _, _, chain = world
        p = tmp_path / "c.bin"
        chain.save(p)
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(CorruptFile):
            read_chain_file(p)

    def test_garbled_record_reports_index(self, world, tmp_path):
        _, op, chain = world
        chain.append_block(next_block(chain, [call(op, 0)]))
        p = tmp_path / "c.bin"
        write_chain_file(p, zip(chain.blocks, chain.certificates))
        raw = bytearray(p.read_bytes())
        raw[-5] = 0xFF  # inside the last record's tag stream
        p.write_bytes(bytes(raw))
        try:
            records = read_chain_file(p)
        except CorruptRecord as exc:
            assert exc.index == 1
        else:
            with pytest.raises(Exception):
                Chain.from_records(records)
