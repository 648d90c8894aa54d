import json
from dataclasses import replace

import pytest

from moss_chain.consensus import (
    CORRUPTING,
    EQUIVOCATING,
    SILENT,
    ConsensusConfig,
    EmptyBatchRejected,
    NotPrimary,
    PbftCluster,
    Replica,
    StepBudgetExhausted,
    audit_trace,
)
from moss_chain.crypto import KeyPair
from moss_chain.identity import IdentityRegistry
from moss_chain.ledger import FunctionId, fault_tolerance, make_genesis_block, make_transaction, quorum_size, register_transaction

SCHEME = "hmac-sha256"


class Setup:
    def __init__(self, config: ConsensusConfig, n_ops: int = 2):
        self.config = config
        self.admin = KeyPair.from_seed("admin", SCHEME)
        self.ops = [KeyPair.from_seed(f"op{i}", SCHEME) for i in range(n_ops)]
        reg = IdentityRegistry.for_admin(self.admin)
        regs = [register_transaction(self.admin, reg.register_operator(self.admin, f"OP{i}", k.public),
                                     nonce=i + 1, timestamp=10)
                for i, k in enumerate(self.ops)]
        self.keys = config.replica_keys(SCHEME)
        alloc = {k.address: 10**20 for k in self.ops}
        self.genesis = make_genesis_block(self.admin, alloc, 10, regs,
                                          {"replicas": [k.public for k in self.keys]})
        self.nonce = [0] * n_ops

    def tx(self, i: int, ts: int = 100):
        t = make_transaction(self.ops[i], FunctionId.REGISTRATION_END, {}, nonce=self.nonce[i], timestamp=ts)
        self.nonce[i] += 1
        return t

    def cluster(self, batches: int = 10, per_batch: int = 3) -> PbftCluster:
        cl = PbftCluster(self.genesis, self.keys, self.config)
        for b in range(batches):
            cl.submit([self.tx(k % len(self.ops)) for k in range(per_batch)], 100 + b)
        return cl

    def replica(self, rid: int, **kw) -> Replica:
        return Replica(rid, self.keys[rid], [k.public for k in self.keys], self.genesis, **kw)


def heads(cluster):
    return {r.chain.head_digest for r in cluster.honest}


class TestPropose:
    def test_three_valid_transactions(self):
        s = Setup(ConsensusConfig())
        msg = s.replica(0).propose([s.tx(0), s.tx(1), s.tx(0)], 50)
        assert msg.kind == "pre-prepare" and msg.seq == 1
        assert len(msg.block.transactions) == 3
        assert msg.block.merkle_root == msg.block.computed_merkle_root()
        assert msg.digest == msg.block.digest

    def test_non_primary(self):
        s = Setup(ConsensusConfig())
        with pytest.raises(NotPrimary):
            s.replica(1).propose([s.tx(0)], 50)

    def test_forged_transaction_excluded(self):
        s = Setup(ConsensusConfig())
        good, bad = s.tx(0), s.tx(1)
        bad = replace(bad, signature=bytes(len(bad.signature)))
        msg = s.replica(0).propose([bad, good], 50)
        assert msg.block.transactions == (good,)

    def test_empty_batch(self):
        s = Setup(ConsensusConfig())
        with pytest.raises(EmptyBatchRejected):
            s.replica(0).propose([], 50)
        assert s.replica(0, allow_empty=True).propose([], 50).block.transactions == ()


class TestRuns:
    def test_all_honest_commit_everywhere(self):
        cl = Setup(ConsensusConfig(seed=3)).cluster()
        cl.run()
        assert [r.chain.height for r in cl.replicas] == [10] * 4
        assert len(heads(cl)) == 1
        assert cl.audit() == []

    def test_one_silent_backup(self):
        cl = Setup(ConsensusConfig(seed=4, behaviors={3: SILENT})).cluster()
        cl.run()
        assert [r.chain.height for r in cl.honest] == [10] * 3
        assert len(heads(cl)) == 1

    @pytest.mark.parametrize("behavior", [EQUIVOCATING, CORRUPTING])
    @pytest.mark.parametrize("rid", [1, 2, 3])
    def test_one_byzantine_backup(self, behavior, rid):
        cl = Setup(ConsensusConfig(seed=rid, behaviors={rid: behavior})).cluster(batches=4)
        cl.run()
        assert [r.chain.height for r in cl.honest] == [4] * 3
        assert len(heads(cl)) == 1
        assert len({r.executor.state_digest() for r in cl.honest}) == 1

    @pytest.mark.parametrize("behavior", [SILENT, EQUIVOCATING, CORRUPTING])
    def test_byzantine_primary_is_safe_but_stalls(self, behavior):
        cl = Setup(ConsensusConfig(seed=5, behaviors={0: behavior})).cluster(batches=3)
        cl.run()
        assert cl.audit() == []
        assert len(heads(cl)) == 1

    @pytest.mark.parametrize("pair", [(0, 1), (1, 2), (2, 3), (0, 3)])
    @pytest.mark.parametrize("behavior", [EQUIVOCATING, CORRUPTING, SILENT])
    def test_two_byzantine_never_conflict(self, pair, behavior):
        config = ConsensusConfig(seed=11, behaviors={i: behavior for i in pair}, max_steps=20_000)
        cl = Setup(config).cluster(batches=3)
        try:
            cl.run()
        except StepBudgetExhausted:
            pass
        assert cl.audit() == []

    def test_seed_gives_identical_trace(self):
        a = Setup(ConsensusConfig(seed=42)).cluster()
        b = Setup(ConsensusConfig(seed=42)).cluster()
        assert a.run().trace_jsonl() == b.run().trace_jsonl()

    def test_different_seed_different_schedule(self):
        a = Setup(ConsensusConfig(seed=1)).cluster()
        b = Setup(ConsensusConfig(seed=2)).cluster()
        ra, rb = a.run(), b.run()
        assert ra.trace_jsonl() != rb.trace_jsonl()
        assert heads(a) == heads(b)

    def test_trace_is_json_lines(self):
        cl = Setup(ConsensusConfig(seed=1)).cluster(batches=1)
        text = cl.run().trace_jsonl()
        records = [json.loads(line) for line in text.splitlines()]
        assert {r["event"] for r in records} >= {"send", "deliver", "commit"}

    def test_lossy_delay_heavy_network_stays_safe(self):
        config = ConsensusConfig(seed=9, max_delay=40, drop_edges=[(0, 1), (2, 1), (1, 3)],
                                 drop_rate=0.6, max_steps=5_000)
        cl = Setup(config).cluster()
        try:
            cl.run()
        except StepBudgetExhausted as exc:
            assert exc.result.steps <= 5_000
        assert cl.audit() == []

    def test_lagging_replica_catches_up_by_fetch(self):
        # half the primary's messages to replica 3 are lost, pre-prepares included
        config = ConsensusConfig(seed=8, drop_edges=[(0, 3)], drop_rate=0.5)
        cl = Setup(config).cluster(batches=5)
        result = cl.run()
        kinds = [(r["event"], r.get("kind")) for r in result.trace]
        assert ("drop", "pre-prepare") in kinds and ("send", "fetch") in kinds
        assert [r.chain.height for r in cl.replicas] == [5] * 4
        assert len({r.chain.head_digest for r in cl.replicas}) == 1

    def test_budget_exhaustion(self):
        cl = Setup(ConsensusConfig(seed=1)).cluster()
        with pytest.raises(StepBudgetExhausted):
            cl.run(max_steps=10)

    def test_invalid_budget(self):
        with pytest.raises(ValueError):
            Setup(ConsensusConfig()).cluster().run(max_steps=0)


class TestQuorum:
    @pytest.mark.parametrize("n", [4, 7, 10])
    def test_commit_certificates_hold_a_quorum(self, n):
        cl = Setup(ConsensusConfig(n=n, seed=n)).cluster(batches=2)
        cl.run()
        for r in cl.replicas:
            for cert in r.chain.certificates[1:]:
                assert len({v.replica_id for v in cert}) >= quorum_size(n) == 2 * fault_tolerance(n) + 1

    @pytest.mark.parametrize("n", [4, 7, 10])
    def test_exactly_f_silent_is_live(self, n):
        f = fault_tolerance(n)
        behaviors = {n - 1 - i: SILENT for i in range(f)}
        cl = Setup(ConsensusConfig(n=n, seed=1, behaviors=behaviors)).cluster(batches=2)
        cl.run()
        assert all(r.chain.height == 2 for r in cl.honest)

    @pytest.mark.parametrize("n", [4, 7, 10])
    def test_f_plus_one_silent_blocks_commit(self, n):
        f = fault_tolerance(n)
        behaviors = {n - 1 - i: SILENT for i in range(f + 1)}
        cl = Setup(ConsensusConfig(n=n, seed=1, behaviors=behaviors, max_steps=50_000)).cluster(batches=2)
        try:
            cl.run()
        except StepBudgetExhausted:
            pass
        assert all(r.chain.height == 0 for r in cl.honest)


def test_audit_flags_conflicts():
    trace = [
        {"event": "commit", "replica": 0, "height": 1, "digest": "aa"},
        {"event": "commit", "replica": 1, "height": 1, "digest": "bb"},
        {"event": "commit", "replica": 2, "height": 1, "digest": "aa"},
    ]
    assert audit_trace(trace, [0, 2]) == []
    assert audit_trace(trace, [0, 1]) != []


def test_config_rejects_bad_behavior():
    with pytest.raises(ValueError):
        ConsensusConfig(n=4, behaviors={5: SILENT})
