"""Simplified PBFT (pre-prepare / prepare / commit) over a simulated network.

There is no view change: the view-0 primary proposes every block, and a stuck
or faulty primary shows up as :class:`StepBudgetExhausted`. A replica that
sees f+1 commits for a block it never received fetches it from the voters;
the reply carries the responder's commit certificate, so honest replicas
converge on the same chain without trusting any single peer.
"""

from __future__ import annotations

import heapq
import json
import random
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Iterable

from .crypto import KeyPair, sha256, verify_signature
from .encoding import encode
from .executor import Executor, Receipt
from .ledger import (
    Block,
    Chain,
    CommitVote,
    LedgerError,
    Mempool,
    Transaction,
    commit_message,
    fault_tolerance,
    quorum_size,
)

HONEST = "honest"
SILENT = "silent"
EQUIVOCATING = "equivocating"
CORRUPTING = "corrupting"
BEHAVIORS = (HONEST, SILENT, EQUIVOCATING, CORRUPTING)

PRE_PREPARE = "pre-prepare"
PREPARE = "prepare"
COMMIT = "commit"
FETCH = "fetch"
BLOCK = "block"


class ConsensusError(Exception):
    pass


class NotPrimary(ConsensusError):
    pass


class EmptyBatchRejected(ConsensusError):
    pass


class StepBudgetExhausted(ConsensusError):
    """No progress within the step budget, or the network drained with work
    still pending. A liveness failure, never a safety violation."""

    def __init__(self, message: str, result: "RunResult | None" = None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class Message:
    kind: str
    view: int
    seq: int
    digest: bytes
    sender: int
    signature: bytes = b""
    block: Block | None = None
    certificate: tuple[CommitVote, ...] = ()  # BLOCK replies only

    def signing_message(self) -> bytes:
        if self.kind == COMMIT:
            return commit_message(self.view, self.seq, self.digest, self.sender)
        return encode(["moss-chain/pbft/v1", self.kind, self.view, self.seq, self.digest, self.sender])

    def summary(self) -> dict[str, Any]:
        return {"kind": self.kind, "view": self.view, "seq": self.seq,
                "digest": self.digest.hex()[:16], "sender": self.sender}


@dataclass
class Slot:
    block: Block | None = None  # accepted pre-prepare (or fetched block)
    prepares: dict[bytes, set[int]] = field(default_factory=dict)
    commits: dict[bytes, dict[int, bytes]] = field(default_factory=dict)
    prepared: bool = False
    commit_sent: bool = False
    fetched: bool = False
    fetch_sent: bool = False

    @property
    def digest(self) -> bytes | None:
        return None if self.block is None else self.block.digest


class Replica:
    def __init__(self, replica_id: int, key: KeyPair, replica_keys: list[bytes], genesis: Block,
                 behavior: str = HONEST, *, max_batch: int = 64, allow_empty: bool = False,
                 seed: int = 0):
        if behavior not in BEHAVIORS:
            raise ValueError(f"unknown behavior {behavior!r}")
        self.id = replica_id
        self.key = key
        self.replica_keys = replica_keys
        self.n = len(replica_keys)
        self.f = fault_tolerance(self.n)
        self.behavior = behavior
        self.view = 0
        self.max_batch = max_batch
        self.allow_empty = allow_empty
        self.chain = Chain(genesis)
        self.executor = Executor(self.chain.genesis_config)
        self.executor.apply_block(genesis)
        self.receipts: list[Receipt] = []
        self.slots: dict[int, Slot] = {}
        self.buffered: dict[int, list[Message]] = {}
        self.fetch_waiters: dict[int, list[Message]] = {}  # fetches that arrived before our commit
        self.mempool = Mempool()
        self.batches: deque[list[int]] = deque()  # [timestamp, remaining tx count]
        self.in_flight: int | None = None
        self.committed: list[tuple[int, bytes]] = []
        self.dropped = 0
        self._rng = random.Random(f"replica/{seed}/{replica_id}")

    # -- helpers --------------------------------------------------------------

    @property
    def primary_id(self) -> int:
        return self.view % self.n

    @property
    def is_primary(self) -> bool:
        return self.primary_id == self.id

    def _slot(self, seq: int) -> Slot:
        return self.slots.setdefault(seq, Slot())

    def _sign(self, msg: Message) -> Message:
        return replace(msg, signature=self.key.sign(msg.signing_message()))

    def _broadcast(self, msg: Message) -> list[tuple[int, Message]]:
        return [(dst, msg) for dst in range(self.n) if dst != self.id]

    def _valid_signature(self, msg: Message) -> bool:
        if not 0 <= msg.sender < self.n:
            return False
        return verify_signature(self.replica_keys[msg.sender], msg.signing_message(), msg.signature,
                                self.key.scheme)

    # -- proposing ------------------------------------------------------------

    def enqueue(self, txs: Iterable[Transaction], timestamp: int) -> None:
        count = 0
        for tx in txs:
            self.mempool.add(tx)
            count += 1
        self.batches.append([timestamp, count])

    def propose(self, txs: list[Transaction], timestamp: int) -> Message:
        """Build and sign a pre-prepare for the next height.

        Transactions that fail signature, membership or nonce checks against
        the head (plus earlier transactions of the batch) are left out.
        """
        if not self.is_primary:
            raise NotPrimary(f"replica {self.id} is not primary of view {self.view}")
        registry = self.chain.registry.copy()
        nonces = dict(self.chain.nonces)
        accepted = []
        for tx in txs:
            try:
                Chain._apply_transactions([tx], registry, nonces)
            except LedgerError:
                self.dropped += 1
                continue
            accepted.append(tx)
        if not accepted and not self.allow_empty:
            raise EmptyBatchRejected("no valid transactions in batch")
        head = self.chain.head
        block = Block.build(head.height + 1, head.digest, max(timestamp, head.timestamp + 1),
                            self.id, accepted)
        return self._sign(Message(PRE_PREPARE, self.view, block.height, block.digest, self.id,
                                  block=block))

    def _maybe_propose(self) -> list[tuple[int, Message]]:
        out: list[tuple[int, Message]] = []
        while self.is_primary and self.in_flight is None and self.batches and self.behavior != SILENT:
            timestamp, remaining = self.batches[0]
            take = min(remaining, self.max_batch)
            txs = self.mempool.drain(take)
            if take == remaining:
                self.batches.popleft()
            else:
                self.batches[0][1] = remaining - take
            try:
                msg = self.propose(txs, timestamp)
            except EmptyBatchRejected:
                continue
            self.in_flight = msg.seq
            self._accept_block(msg.seq, msg.block)
            out += self._outbound_pre_prepare(msg)
        return out

    # -- byzantine outbound shaping ---------------------------------------------

    def _outbound_pre_prepare(self, msg: Message) -> list[tuple[int, Message]]:
        if self.behavior == EQUIVOCATING:
            out = []
            for dst in range(self.n):
                if dst == self.id:
                    continue
                if dst % 2:
                    b = msg.block
                    alt = Block.build(b.height, b.prev_hash, b.timestamp + 1, b.proposer_id, b.transactions)
                    out.append((dst, self._sign(replace(msg, digest=alt.digest, block=alt))))
                else:
                    out.append((dst, msg))
            return out
        if self.behavior == CORRUPTING:
            b = msg.block
            if b.transactions:
                tx = b.transactions[0]
                bad_tx = replace(tx, value_wei=tx.value_wei + 1)
                bad = Block(b.height, b.prev_hash, b.merkle_root, b.timestamp, b.proposer_id,
                            (bad_tx,) + b.transactions[1:])
            else:
                bad = replace(b, merkle_root=sha256(b.merkle_root))
            return self._broadcast(self._sign(replace(msg, block=bad, digest=bad.digest)))
        return self._broadcast(msg)

    def _outbound_vote(self, msg: Message) -> list[tuple[int, Message]]:
        if self.behavior == EQUIVOCATING:
            fake = self._sign(replace(msg, digest=sha256(msg.digest + b"equivocate")))
            return [(dst, fake if dst % 2 else msg) for dst in range(self.n) if dst != self.id]
        if self.behavior == CORRUPTING:
            sig = bytearray(msg.signature)
            sig[self._rng.randrange(len(sig))] ^= 1 << self._rng.randrange(8)
            return self._broadcast(replace(msg, signature=bytes(sig)))
        return self._broadcast(msg)

    # -- protocol -------------------------------------------------------------

    def step(self, msg: Message) -> tuple[list[tuple[int, Message]], list[Block]]:
        """Handle one delivered message. Returns (outbound, newly committed)."""
        before = self.chain.height
        out = self._handle(msg) + self._drive()
        committed = self.chain.blocks[before + 1:]
        if self.behavior == SILENT:
            out = []
        return out, committed

    def kick(self) -> tuple[list[tuple[int, Message]], list[Block]]:
        """Let an idle primary start on queued batches."""
        before = self.chain.height
        out = self._drive()
        return ([] if self.behavior == SILENT else out), self.chain.blocks[before + 1:]

    def _drive(self) -> list[tuple[int, Message]]:
        out: list[tuple[int, Message]] = []
        while True:
            mark = (self.chain.height, self.in_flight)
            out += self._progress()
            out += self._maybe_propose()
            if (self.chain.height, self.in_flight) == mark:
                return out

    def _handle(self, msg: Message) -> list[tuple[int, Message]]:
        if msg.view != self.view or not self._valid_signature(msg):
            self.dropped += 1
            return []
        if msg.kind == PRE_PREPARE:
            return self._on_pre_prepare(msg)
        if msg.kind == PREPARE:
            self._slot(msg.seq).prepares.setdefault(msg.digest, set()).add(msg.sender)
            return []
        if msg.kind == COMMIT:
            self._slot(msg.seq).commits.setdefault(msg.digest, {})[msg.sender] = msg.signature
            return []
        if msg.kind == FETCH:
            return self._on_fetch(msg)
        if msg.kind == BLOCK:
            return self._on_block(msg)
        self.dropped += 1
        return []

    def _on_pre_prepare(self, msg: Message) -> list[tuple[int, Message]]:
        if msg.sender != self.primary_id or msg.block is None or msg.block.digest != msg.digest \
                or msg.block.height != msg.seq:
            self.dropped += 1
            return []
        if msg.seq <= self.chain.height:
            return []
        if msg.seq > self.chain.height + 1:
            self.buffered.setdefault(msg.seq, []).append(msg)
            return []
        slot = self._slot(msg.seq)
        if slot.block is not None:
            if slot.digest != msg.digest:
                self.dropped += 1  # conflicting pre-prepare: keep the first
            return []
        try:
            self.chain.validate_block(msg.block)
        except LedgerError:
            self.dropped += 1
            return []
        return self._accept_block(msg.seq, msg.block)

    def _accept_block(self, seq: int, block: Block) -> list[tuple[int, Message]]:
        slot = self._slot(seq)
        slot.block = block
        if self.id == self.primary_id:
            return []
        vote = self._sign(Message(PREPARE, self.view, seq, block.digest, self.id))
        slot.prepares.setdefault(block.digest, set()).add(self.id)
        return self._outbound_vote(vote)

    def _on_fetch(self, msg: Message) -> list[tuple[int, Message]]:
        if 1 <= msg.seq <= self.chain.height and self.chain.blocks[msg.seq].digest == msg.digest:
            reply = self._sign(Message(BLOCK, self.view, msg.seq, msg.digest, self.id,
                                       block=self.chain.blocks[msg.seq],
                                       certificate=self.chain.certificates[msg.seq]))
            return [(msg.sender, reply)]
        if msg.seq > self.chain.height:
            self.fetch_waiters.setdefault(msg.seq, []).append(msg)
        return []

    def _on_block(self, msg: Message) -> list[tuple[int, Message]]:
        slot = self._slot(msg.seq)
        if msg.block is None or msg.block.digest != msg.digest or msg.block.height != msg.seq:
            self.dropped += 1
            return []
        if slot.fetched or msg.seq <= self.chain.height:
            return []
        voters = slot.commits.setdefault(msg.digest, {})
        if self.chain.replica_keys:
            try:
                self.chain.verify_certificate(msg.block, msg.certificate)
            except LedgerError:
                self.dropped += 1
                return []
            for vote in msg.certificate:
                voters.setdefault(vote.replica_id, vote.signature)
        elif len(voters) < quorum_size(self.n):
            return []
        # A commit quorum vouches for this digest, overriding any conflicting
        # pre-prepare we may have accepted.
        slot.block = msg.block
        slot.fetched = True
        return []

    def _progress(self) -> list[tuple[int, Message]]:
        out: list[tuple[int, Message]] = []
        q = quorum_size(self.n)
        while True:
            seq = self.chain.height + 1
            slot = self._slot(seq)
            if slot.block is None and seq in self.buffered:
                for m in self.buffered.pop(seq):
                    out += self._on_pre_prepare(m)
                continue
            d = slot.digest
            if d is not None and not slot.prepared and not slot.fetched:
                backers = slot.prepares.get(d, set()) - {self.primary_id}
                if len(backers) >= 2 * self.f:
                    slot.prepared = True
            if slot.prepared and not slot.commit_sent:
                slot.commit_sent = True
                vote = self._sign(Message(COMMIT, self.view, seq, d, self.id))
                slot.commits.setdefault(d, {})[self.id] = vote.signature
                out += self._outbound_vote(vote)
            if d is not None and (slot.prepared or slot.fetched) and len(slot.commits.get(d, {})) >= q:
                if self._commit(seq, slot):
                    for waiting in self.fetch_waiters.pop(seq, []):
                        out += self._on_fetch(waiting)
                    continue
                break
            # f+1 commits mean at least one honest replica is committing a
            # block we do not hold
            for digest, votes in sorted(slot.commits.items()):
                if len(votes) > self.f and digest != d and not slot.fetch_sent:
                    slot.fetch_sent = True
                    ask = self._sign(Message(FETCH, self.view, seq, digest, self.id))
                    out += [(voter, ask) for voter in sorted(votes) if voter != self.id]
            break
        return out

    def _commit(self, seq: int, slot: Slot) -> bool:
        block = slot.block
        cert = tuple(CommitVote(rid, self.view, sig) for rid, sig in sorted(slot.commits[block.digest].items()))
        try:
            self.chain.append_block(block, cert)
        except LedgerError:
            self.dropped += 1
            return False
        self.receipts.extend(self.executor.apply_block(block))
        self.committed.append((seq, block.digest))
        if self.in_flight == seq:
            self.in_flight = None
        return True

    @property
    def idle(self) -> bool:
        return not (self.is_primary and (self.batches or self.in_flight is not None))


class SimNetwork:
    """Seeded message scheduler with bounded random delays and lossy edges."""

    def __init__(self, seed: int = 0, min_delay: int = 1, max_delay: int = 3,
                 drop_edges: Iterable[tuple[int, int]] = (), drop_rate: float = 0.0):
        if not 0 <= min_delay <= max_delay:
            raise ValueError("need 0 <= min_delay <= max_delay")
        self.seed = seed
        self.rng = random.Random(seed)
        self.min_delay = min_delay
        self.max_delay = max_delay
        self.drop_edges = {tuple(e) for e in drop_edges}
        self.drop_rate = drop_rate
        self.now = 0
        self._queue: list[tuple[int, int, int, int, Message]] = []
        self._counter = 0
        self.trace: list[dict[str, Any]] = []

    def send(self, src: int, dst: int, msg: Message) -> None:
        record = {"t": self.now, "src": src, "dst": dst, **msg.summary()}
        if (src, dst) in self.drop_edges and self.rng.random() < self.drop_rate:
            self.trace.append({"event": "drop", **record})
            return
        at = self.now + self.rng.randint(self.min_delay, self.max_delay)
        heapq.heappush(self._queue, (at, self._counter, src, dst, msg))
        self._counter += 1
        self.trace.append({"event": "send", "deliver_at": at, **record})

    def pop(self) -> tuple[int, int, Message] | None:
        if not self._queue:
            return None
        at, _, src, dst, msg = heapq.heappop(self._queue)
        self.now = at
        self.trace.append({"event": "deliver", "t": at, "src": src, "dst": dst, **msg.summary()})
        return src, dst, msg

    def __len__(self) -> int:
        return len(self._queue)

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.trace)


@dataclass
class RunResult:
    chains: list[Chain]
    trace: list[dict[str, Any]]
    steps: int

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.trace)


def run_until_quiescent(net: SimNetwork, replicas: list[Replica], max_steps: int) -> RunResult:
    if max_steps <= 0:
        raise ValueError("max_steps must be positive")

    def dispatch(src: int, outbound: list[tuple[int, Message]]) -> None:
        for dst, m in outbound:
            net.send(src, dst, m)

    def note_commits(rid: int, blocks: list[Block]) -> None:
        for b in blocks:
            net.trace.append({"event": "commit", "t": net.now, "replica": rid, "height": b.height,
                              "digest": b.digest.hex()})

    for r in replicas:
        outbound, committed = r.kick()
        note_commits(r.id, committed)
        dispatch(r.id, outbound)
    steps = 0
    while True:
        item = net.pop()
        if item is None:
            result = RunResult([r.chain for r in replicas], net.trace, steps)
            pending = [r.id for r in replicas if not r.idle and r.behavior == HONEST]
            if pending:
                raise StepBudgetExhausted(f"network drained with work pending at {pending}", result)
            return result
        if steps >= max_steps:
            raise StepBudgetExhausted(f"step budget {max_steps} exhausted",
                                      RunResult([r.chain for r in replicas], net.trace, steps))
        steps += 1
        _, dst, msg = item
        outbound, committed = replicas[dst].step(msg)
        note_commits(dst, committed)
        dispatch(dst, outbound)


def audit_trace(trace: Iterable[dict[str, Any]], honest: Iterable[int]) -> list[str]:
    """Safety violations: two honest replicas committing different digests at
    one height, or one replica committing a height twice."""
    honest = set(honest)
    by_height: dict[int, dict[int, str]] = {}
    problems = []
    for rec in trace:
        if rec.get("event") != "commit" or rec["replica"] not in honest:
            continue
        seen = by_height.setdefault(rec["height"], {})
        if rec["replica"] in seen:
            problems.append(f"replica {rec['replica']} committed height {rec['height']} twice")
        seen[rec["replica"]] = rec["digest"]
    for height, digests in sorted(by_height.items()):
        if len(set(digests.values())) > 1:
            problems.append(f"height {height}: conflicting commits {digests}")
    return problems


@dataclass
class ConsensusConfig:
    n: int = 4
    behaviors: dict[int, str] = field(default_factory=dict)
    seed: int = 0
    min_delay: int = 1
    max_delay: int = 3
    drop_edges: list[tuple[int, int]] = field(default_factory=list)
    drop_rate: float = 0.0
    max_batch: int = 64
    allow_empty: bool = False
    max_steps: int = 1_000_000
    key_seed: str = "replica"

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("need at least one replica")
        for rid, b in self.behaviors.items():
            if not 0 <= rid < self.n or b not in BEHAVIORS:
                raise ValueError(f"bad behavior entry {rid}: {b!r}")

    def replica_keys(self, scheme: str = "ed25519") -> list[KeyPair]:
        return [KeyPair.from_seed(f"{self.key_seed}-{i}", scheme) for i in range(self.n)]

    @property
    def honest_ids(self) -> list[int]:
        return [i for i in range(self.n) if self.behaviors.get(i, HONEST) == HONEST]


class PbftCluster:
    """n replicas plus their network, driven batch by batch."""

    def __init__(self, genesis: Block, keys: list[KeyPair], config: ConsensusConfig):
        if len(keys) != config.n:
            raise ValueError("one key per replica")
        self.config = config
        public = [k.public for k in keys]
        self.replicas = [
            Replica(i, keys[i], public, genesis, config.behaviors.get(i, HONEST),
                    max_batch=config.max_batch, allow_empty=config.allow_empty, seed=config.seed)
            for i in range(config.n)
        ]
        self.net = SimNetwork(config.seed, config.min_delay, config.max_delay,
                              config.drop_edges, config.drop_rate)

    @property
    def primary(self) -> Replica:
        return self.replicas[0]

    @property
    def honest(self) -> list[Replica]:
        return [self.replicas[i] for i in self.config.honest_ids]

    def submit(self, txs: Iterable[Transaction], timestamp: int) -> None:
        self.primary.enqueue(txs, timestamp)

    def run(self, max_steps: int | None = None) -> RunResult:
        return run_until_quiescent(self.net, self.replicas,
                                   self.config.max_steps if max_steps is None else max_steps)

    def audit(self) -> list[str]:
        return audit_trace(self.net.trace, self.config.honest_ids)
