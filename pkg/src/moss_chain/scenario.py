"""Scenario configs and the end-to-end pipeline driver.

A scenario is a YAML file (``format_version: 1``)::

    name: paper_table2
    signature_scheme: ed25519          # or hmac-sha256 for fast tests
    admin: {id: administrator, key_seed: admin, balance_eth: 100}
    operators:
      - {id: OP1, role: seller, bandwidth_mhz: 20, price_gwei: 2000000,
         total_bandwidth_mhz: 40, required_bandwidth_mhz: 15,
         key_seed: op1, balance_eth: 100}
    timing: {t0: 1000, t_bid: 600, t1_offset: 700, t_free: 600, tb: 1400, te: 2000}
    consensus: {replicas: 4, seed: 42, behaviors: {3: silent},
                min_delay: 1, max_delay: 3, drop_edges: [], drop_rate: 0.0,
                max_batch: 64, max_steps: 1000000}
    gas: {price_gwei: "4.3", overrides: {MarketEnd: 21776}}
    allow_reverts: false
    script:
      - {at: 0, actor: admin, action: deploy}
      - {at: 10, actor: OP1, action: submit, deposit_eth: 1}
      - {at: 720, actor: OP6, action: purchase, target: OP1,
         price_gwei: 1800000, bandwidth_mhz: 8}
      - {at: 2002, actor: OP2, action: withdraw, expect: InvalidOp}

``timing.t0`` is absolute; ``at``, ``t1_offset``, ``tb`` and ``te`` are
offsets from t0. Every distinct ``at`` becomes one block (split further only
when it exceeds ``max_batch``), so window boundaries are exact.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

import yaml

from .consensus import ConsensusConfig, PbftCluster, StepBudgetExhausted, audit_trace
from .crypto import KeyPair, format_address
from .executor import Executor, Receipt, event_json, match_json
from .gas import DEFAULT_GAS, GasSchedule, WEI_PER_ETHER, parse_gwei, wei_to_ether
from .identity import IdentityRegistry, OperatorProfile, Role, validate_seller_constraint
from .ledger import (
    Chain,
    CorruptFile,
    CorruptRecord,
    FunctionId,
    LedgerError,
    Transaction,
    make_genesis_block,
    make_transaction,
    read_chain_file,
    register_transaction,
)

FORMAT_VERSION = 1
BUNDLED = ("paper_table2", "empty", "fuzz_template")

ACTIONS: dict[str, FunctionId] = {
    "deploy": FunctionId.DEPLOY,
    "submit": FunctionId.BID_OR_ASK_SUBMIT,
    "registration_end": FunctionId.REGISTRATION_END,
    "sort_asks": FunctionId.SORT_ASK_BY_INCREASE,
    "sort_bids": FunctionId.SORT_BID_BY_DECREASE,
    "double_auction": FunctionId.DOUBLE_AUCTION,
    "free_trade_begin": FunctionId.FREE_TRADE_BEGIN,
    "resubmit": FunctionId.ORDER_RESPONSE,
    "purchase": FunctionId.ORDER_RESPONSE,
    "delete": FunctionId.DELETE_ORDER,
    "market_end": FunctionId.MARKET_END,
    "punish": FunctionId.PAY_OR_NOT,
    "pay_or_not": FunctionId.PAY_OR_NOT,
    "increase_funds": FunctionId.INCREASE_FUNDS,
    "withdraw": FunctionId.WITHDRAW,
    "change_owner": FunctionId.CHANGE_OWNER,
    "self_destruct": FunctionId.SELF_DESTRUCT,
    "revoke": FunctionId.REVOKE,
}


class ConfigInvalid(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


class ScenarioDiverged(RuntimeError):
    """A script action did not produce its expected outcome."""


class VerificationFailed(RuntimeError):
    def __init__(self, height: int, reason: str):
        super().__init__(f"block {height}: {reason}")
        self.height = height
        self.reason = reason


# -- config model ---------------------------------------------------------------


@dataclass
class OperatorSpec:
    profile: OperatorProfile
    id: str
    key_seed: str
    balance_wei: int


@dataclass
class Action:
    at: int
    actor: str
    action: str
    params: dict[str, Any]
    expect: str | None = None


@dataclass
class Timing:
    t0: int
    t_bid: int
    t1_offset: int
    t_free: int
    tb: int
    te: int


@dataclass
class Scenario:
    name: str
    admin_id: str
    admin_seed: str
    admin_balance_wei: int
    operators: list[OperatorSpec]
    timing: Timing
    consensus: ConsensusConfig
    schedule: GasSchedule
    script: list[Action]
    scheme: str = "ed25519"
    allow_reverts: bool = False


def _wei(value: Any, unit: int) -> int:
    amount = Decimal(str(value)) * unit
    if amount != amount.to_integral_value() or amount < 0:
        raise ValueError(f"{value!r} is not a non-negative whole number of wei")
    return int(amount)


def _amount(entry: dict, eth_key: str, wei_key: str, default_wei: int | None = None) -> int:
    if wei_key in entry:
        return _wei(entry[wei_key], 1)
    if eth_key in entry:
        return _wei(entry[eth_key], WEI_PER_ETHER)
    if default_wei is None:
        raise KeyError(eth_key)
    return default_wei


def parse_scenario(raw: dict[str, Any], *, seed: int | None = None,
                   gas_price: str | None = None) -> Scenario:
    """Validate a decoded config; raises ConfigInvalid listing every problem."""
    problems: list[str] = []

    def need(obj: Any, key: str, where: str, kind: type | tuple = int) -> Any:
        if not isinstance(obj, dict) or key not in obj:
            problems.append(f"{where}.{key}: missing")
            return None
        value = obj[key]
        if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
            problems.append(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {value!r}")
            return None
        return value

    if not isinstance(raw, dict):
        raise ConfigInvalid(["<root>: expected a mapping"])
    if raw.get("format_version") != FORMAT_VERSION:
        problems.append(f"format_version: must be {FORMAT_VERSION}")
    name = str(raw.get("name", "scenario"))
    scheme = raw.get("signature_scheme", "ed25519")
    if scheme not in ("ed25519", "hmac-sha256"):
        problems.append(f"signature_scheme: unknown {scheme!r}")

    admin = raw.get("admin", {}) or {}
    admin_id = str(admin.get("id", "administrator"))
    admin_seed = str(admin.get("key_seed", "admin"))
    try:
        admin_balance = _amount(admin, "balance_eth", "balance_wei", 100 * WEI_PER_ETHER)
    except (ValueError, InvalidOperation) as exc:
        problems.append(f"admin.balance: {exc}")
        admin_balance = 0

    operators: list[OperatorSpec] = []
    seen_ids = {admin_id}
    for i, op in enumerate(raw.get("operators", []) or []):
        where = f"operators[{i}]"
        op_id = need(op, "id", where, str)
        role = need(op, "role", where, str)
        bw = need(op, "bandwidth_mhz", where)
        price = need(op, "price_gwei", where)
        if op_id is None or role is None or bw is None or price is None:
            continue
        if op_id in seen_ids:
            problems.append(f"{where}.id: duplicate {op_id!r}")
        seen_ids.add(op_id)
        if role not in ("seller", "buyer"):
            problems.append(f"{where}.role: must be seller or buyer")
            continue
        try:
            profile = OperatorProfile(
                identity=None, role=Role(role), offered_or_demanded_mhz=bw,
                unit_price_gwei_per_mhz=price,
                total_bandwidth_mhz=op.get("total_bandwidth_mhz", bw if role == "seller" else 0),
                required_bandwidth_mhz=op.get("required_bandwidth_mhz", 0),
            )
            balance = _amount(op, "balance_eth", "balance_wei", 100 * WEI_PER_ETHER)
        except (ValueError, InvalidOperation) as exc:
            problems.append(f"{where}: {exc}")
            continue
        if profile.role is Role.SELLER and not validate_seller_constraint(profile):
            problems.append(f"{where}: seller keeps {profile.total_bandwidth_mhz - bw} MHz "
                            f"< required {profile.required_bandwidth_mhz} MHz")
        operators.append(OperatorSpec(profile, op_id, str(op.get("key_seed", op_id.lower())), balance))

    t = raw.get("timing", {}) or {}
    vals = {k: need(t, k, "timing") for k in ("t0", "t_bid", "t1_offset", "t_free", "tb", "te")}
    timing = None
    if None not in vals.values():
        timing = Timing(**vals)
        if timing.t0 < 1:
            problems.append("timing.t0: must be >= 1")
        if not timing.t_bid < timing.t1_offset:
            problems.append("timing: need t0 + t_bid < t1")
        if not timing.t1_offset + timing.t_free < timing.tb < timing.te:
            problems.append("timing: need t1 + t_free < tb < te")

    c = raw.get("consensus", {}) or {}
    try:
        behaviors = {int(k): str(v) for k, v in (c.get("behaviors") or {}).items()}
        consensus = ConsensusConfig(
            n=int(c.get("replicas", 4)), behaviors=behaviors,
            seed=int(seed if seed is not None else c.get("seed", 0)),
            min_delay=int(c.get("min_delay", 1)), max_delay=int(c.get("max_delay", 3)),
            drop_edges=[tuple(e) for e in c.get("drop_edges", []) or []],
            drop_rate=float(c.get("drop_rate", 0.0)),
            max_batch=int(c.get("max_batch", 64)),
            max_steps=int(c.get("max_steps", 1_000_000)),
        )
    except (TypeError, ValueError) as exc:
        problems.append(f"consensus: {exc}")
        consensus = ConsensusConfig()

    g = raw.get("gas", {}) or {}
    try:
        price = gas_price if gas_price is not None else g.get("price_gwei", "4.3")
        schedule = GasSchedule().with_overrides(g.get("overrides") or {}, parse_gwei(str(price)))
    except (ValueError, InvalidOperation, ZeroDivisionError) as exc:
        problems.append(f"gas: {exc}")
        schedule = GasSchedule()

    actors = seen_ids | {"admin"}  # ids with other problems still count, to avoid cascades
    script: list[Action] = []
    last_at = -1
    for i, entry in enumerate(raw.get("script", []) or []):
        where = f"script[{i}]"
        at = need(entry, "at", where)
        actor = need(entry, "actor", where, str)
        action = need(entry, "action", where, str)
        if at is None or actor is None or action is None:
            continue
        if at < last_at:
            problems.append(f"{where}.at: script must be in non-decreasing time order")
        if at < 0:
            problems.append(f"{where}.at: must be >= 0 (offset from t0)")
        last_at = max(last_at, at)
        if actor not in actors:
            problems.append(f"{where}.actor: unknown {actor!r}")
        if action not in ACTIONS:
            problems.append(f"{where}.action: unknown {action!r}")
        params = {k: v for k, v in entry.items() if k not in ("at", "actor", "action", "expect")}
        for ref in ("target", "operator", "new_owner"):
            if ref in params and params[ref] not in actors:
                problems.append(f"{where}.{ref}: unknown {params[ref]!r}")
        script.append(Action(at, "admin" if actor == admin_id else actor, action, params,
                             entry.get("expect")))

    if problems:
        raise ConfigInvalid(problems)
    return Scenario(name, admin_id, admin_seed, admin_balance, operators, timing, consensus,
                    schedule, script, scheme, bool(raw.get("allow_reverts", False)))


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("moss_chain") / "scenarios" / f"{name}.yaml"))


def load_raw(config: str | Path) -> dict[str, Any]:
    path = Path(config)
    if not path.exists() and str(config) in BUNDLED:
        path = bundled_path(str(config))
    try:
        with open(path) as fh:
            return yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigInvalid([f"{config}: no such file or bundled scenario"]) from None
    except yaml.YAMLError as exc:
        raise ConfigInvalid([f"{config}: YAML error: {exc}"]) from None


def load_scenario(config: str | Path, **kwargs: Any) -> Scenario:
    return parse_scenario(load_raw(config), **kwargs)


# -- fuzz generation ------------------------------------------------------------


def fuzz_scenario(seed: int, template: dict[str, Any] | None = None) -> dict[str, Any]:
    """Random scenario config drawn from the bounds in ``fuzz_template``."""
    tpl = template if template is not None else load_raw("fuzz_template")
    b = tpl["fuzz"]
    rng = random.Random(seed)
    n_sell = rng.randint(0, b["max_sellers"])
    n_buy = rng.randint(0, b["max_buyers"])
    operators = []
    for i in range(n_sell + n_buy):
        role = "seller" if i < n_sell else "buyer"
        bw = rng.randint(1, b["max_bandwidth_mhz"])
        operators.append({
            "id": f"F{i}", "role": role, "bandwidth_mhz": bw,
            "price_gwei": rng.randint(b["min_price_gwei"], b["max_price_gwei"]),
            "total_bandwidth_mhz": bw + rng.randint(0, 10), "required_bandwidth_mhz": 0,
            "key_seed": f"fuzz-{seed}-{i}",
            "balance_eth": rng.choice(b["balances_eth"]),
        })
    ids = [o["id"] for o in operators]
    sellers = ids[:n_sell]
    buyers = ids[n_sell:]
    script: list[dict[str, Any]] = [{"at": 0, "actor": "admin", "action": "deploy"}]
    for op in operators:
        if rng.random() < b["submit_probability"]:
            script.append({"at": 10, "actor": op["id"], "action": "submit",
                           "deposit_eth": rng.choice(b["deposits_eth"])})
    if rng.random() < 0.3 and ids:
        script.append({"at": 20, "actor": rng.choice(ids), "action": "increase_funds",
                       "amount_eth": "0.5"})
    script += [
        {"at": 601, "actor": "admin", "action": "registration_end"},
        {"at": 602, "actor": "admin", "action": "sort_asks"},
        {"at": 602, "actor": "admin", "action": "sort_bids"},
        {"at": 603, "actor": "admin", "action": "double_auction"},
        {"at": 700, "actor": "admin", "action": "free_trade_begin"},
    ]
    at = 710
    for _ in range(rng.randint(0, b["max_market_actions"])):
        kind = rng.choice(["resubmit", "purchase", "delete"])
        if kind == "resubmit" and sellers:
            script.append({"at": at, "actor": rng.choice(sellers), "action": "resubmit",
                           "price_gwei": rng.randint(b["min_price_gwei"], b["max_price_gwei"]),
                           "bandwidth_mhz": rng.randint(1, b["max_bandwidth_mhz"])})
        elif kind == "purchase" and sellers and buyers:
            script.append({"at": at, "actor": rng.choice(buyers), "action": "purchase",
                           "target": rng.choice(sellers),
                           "price_gwei": rng.randint(b["min_price_gwei"], b["max_price_gwei"]),
                           "bandwidth_mhz": rng.randint(1, b["max_bandwidth_mhz"])})
        elif ids:
            script.append({"at": at, "actor": rng.choice(ids), "action": "delete"})
        at += rng.randint(0, 20)
    script.append({"at": 1301, "actor": "admin", "action": "market_end"})
    for op_id in ids:
        if rng.random() < b["punish_probability"]:
            script.append({"at": 2001, "actor": "admin", "action": "punish", "operator": op_id})
    for op_id in ids:
        if rng.random() < 0.8:
            script.append({"at": 2002, "actor": op_id, "action": "withdraw"})
    if rng.random() < 0.5:
        script.append({"at": 2003, "actor": "admin", "action": "self_destruct"})
    return {
        "format_version": FORMAT_VERSION,
        "name": f"fuzz-{seed}",
        "signature_scheme": tpl.get("signature_scheme", "hmac-sha256"),
        "admin": {"id": "administrator", "key_seed": f"fuzz-admin-{seed}", "balance_eth": 100},
        "operators": operators,
        "timing": tpl["timing"],
        "consensus": {**tpl.get("consensus", {}), "seed": seed},
        "gas": tpl.get("gas", {}),
        "allow_reverts": True,
        "script": script,
    }


# -- pipeline ---------------------------------------------------------------------


@dataclass
class RunOutcome:
    scenario: Scenario
    chain: Chain
    executor: Executor
    receipts: list[Receipt]
    action_receipts: list[tuple[Action, Receipt | None]]
    trace: list[dict[str, Any]]
    names: dict[bytes, str]
    state_digest: str
    audit_problems: list[str] = field(default_factory=list)
    elapsed_s: float = 0.0

    @property
    def matches(self):
        return [] if self.executor.contract is None else list(self.executor.contract.state.matches)

    @property
    def rejections(self) -> list[tuple[Action, Receipt]]:
        return [(a, r) for a, r in self.action_receipts if r is not None and not r.ok]

    def name(self, addr: bytes) -> str:
        return self.names.get(addr, format_address(addr))


class ScenarioBuilder:
    """Turns a scenario's script into signed transactions grouped by block time."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        self.admin_key = KeyPair.from_seed(sc.admin_seed, sc.scheme)
        self.keys = {"admin": self.admin_key}
        for op in sc.operators:
            self.keys[op.id] = KeyPair.from_seed(op.key_seed, sc.scheme)
        self.registry = IdentityRegistry.for_admin(self.admin_key, sc.admin_id)
        self.identities = {op.id: self.registry.register_operator(self.admin_key, op.id,
                                                                  self.keys[op.id].public)
                           for op in sc.operators}
        self.profiles = {op.id: op.profile for op in sc.operators}
        self.names = {self.admin_key.address: sc.admin_id}
        self.names.update({self.keys[op.id].address: op.id for op in sc.operators})
        self.nonces: dict[str, int] = {k: 0 for k in self.keys}

    def genesis(self, replica_public_keys: list[bytes]):
        sc = self.sc
        alloc = {self.admin_key.address: sc.admin_balance_wei}
        alloc.update({self.keys[op.id].address: op.balance_wei for op in sc.operators})
        ts = sc.timing.t0 - 1
        self.nonces["admin"] = 1
        regs = []
        for op in sc.operators:
            regs.append(register_transaction(self.admin_key, self.identities[op.id],
                                             nonce=self.nonces["admin"], timestamp=ts))
            self.nonces["admin"] += 1
        settings = {"scenario": sc.name, "gas_schedule": sc.schedule.to_payload(),
                    "replicas": replica_public_keys}
        return make_genesis_block(self.admin_key, alloc, ts, regs, settings)

    def _addr(self, actor: str) -> bytes:
        if actor in ("admin", self.sc.admin_id):
            return self.admin_key.address
        if actor not in self.keys:
            raise ConfigInvalid([f"unknown operator {actor!r}"])
        return self.keys[actor].address

    def transaction(self, action: Action) -> Transaction:
        sc, p = self.sc, action.params
        key = self.keys[action.actor]
        fid = ACTIONS[action.action]
        args: dict[str, Any] = {}
        value = 0
        try:
            if action.action == "deploy":
                args = {"t_bid": sc.timing.t_bid, "t_free": sc.timing.t_free}
            elif action.action == "submit":
                prof = self.profiles[action.actor]
                args = {"role": prof.role.value,
                        "bandwidth_mhz": int(p.get("bandwidth_mhz", prof.offered_or_demanded_mhz)),
                        "unit_price_gwei": int(p.get("price_gwei", prof.unit_price_gwei_per_mhz))}
                value = _amount(p, "deposit_eth", "deposit_wei", WEI_PER_ETHER)
            elif action.action == "resubmit":
                args = {"target": key.address, "price_gwei": int(p["price_gwei"]),
                        "bandwidth_mhz": int(p["bandwidth_mhz"])}
            elif action.action == "purchase":
                args = {"target": self._addr(p["target"]), "price_gwei": int(p["price_gwei"]),
                        "bandwidth_mhz": int(p["bandwidth_mhz"])}
            elif action.action in ("punish", "pay_or_not"):
                args = {"operator": self._addr(p["operator"]),
                        "executed": bool(p.get("executed", action.action == "pay_or_not"))}
            elif action.action == "increase_funds":
                value = _amount(p, "amount_eth", "amount_wei")
            elif action.action == "change_owner":
                args = {"new_owner": self._addr(p["new_owner"])}
            elif action.action == "revoke":
                args = {"address": self._addr(p["operator"])}
        except (KeyError, ValueError, TypeError, InvalidOperation) as exc:
            raise ConfigInvalid([f"{action.actor} {action.action} at {action.at}: bad parameter {exc!r}"]) from None
        nonce = self.nonces[action.actor]
        self.nonces[action.actor] += 1
        return make_transaction(key, fid, args, nonce=nonce, timestamp=sc.timing.t0 + action.at,
                                value_wei=value)

    def batches(self) -> list[tuple[int, list[tuple[Action, Transaction]]]]:
        groups: dict[int, list[tuple[Action, Transaction]]] = {}
        for action in self.sc.script:
            groups.setdefault(action.at, []).append((action, self.transaction(action)))
        return [(self.sc.timing.t0 + at, items) for at, items in sorted(groups.items())]


def replay_chain(chain_or_blocks: Chain | Iterable) -> tuple[Executor, list[str]]:
    """Re-execute every block from genesis, auditing conservation per height."""
    blocks = chain_or_blocks.blocks if isinstance(chain_or_blocks, Chain) else list(chain_or_blocks)
    executor = Executor(Chain(blocks[0]).genesis_config)
    problems: list[str] = []
    for block in blocks:
        executor.apply_block(block)
        problems += executor.audit()
    return executor, problems


def run_scenario(sc: Scenario) -> RunOutcome:
    """Drive the scenario through consensus; raises ScenarioDiverged on any
    unexpected outcome or failed audit."""
    started = time.perf_counter()
    builder = ScenarioBuilder(sc)
    replica_keys = sc.consensus.replica_keys(sc.scheme)
    genesis = builder.genesis([k.public for k in replica_keys])
    cluster = PbftCluster(genesis, replica_keys, sc.consensus)
    batches = builder.batches()
    for timestamp, items in batches:
        cluster.submit([tx for _, tx in items], timestamp)
    try:
        result = cluster.run()
    except StepBudgetExhausted as exc:
        raise ScenarioDiverged(f"consensus made no progress: {exc}") from exc

    problems = audit_trace(result.trace, sc.consensus.honest_ids)
    honest = cluster.honest
    if not honest:
        raise ScenarioDiverged("no honest replica to read results from")
    ref = honest[0]
    for r in honest[1:]:
        if r.chain.head_digest != ref.chain.head_digest:
            problems.append(f"replica {r.id} head differs from replica {ref.id}")
        if r.executor.state_digest() != ref.executor.state_digest():
            problems.append(f"replica {r.id} state differs from replica {ref.id}")

    replayed, audit = replay_chain(ref.chain)
    problems += audit
    if replayed.state_digest() != ref.executor.state_digest():
        problems.append("replayed state differs from live state")

    by_digest = {rc.tx_digest: rc for rc in ref.executor.receipts}
    action_receipts = [(a, by_digest.get(tx.digest)) for _, items in batches for a, tx in items]
    outcome = RunOutcome(sc, ref.chain, ref.executor, list(ref.executor.receipts), action_receipts,
                         result.trace, builder.names, ref.executor.state_digest(), problems,
                         time.perf_counter() - started)
    if problems:
        raise ScenarioDiverged("invariant audit failed: " + "; ".join(problems))
    for action, receipt in action_receipts:
        if receipt is None:
            raise ScenarioDiverged(f"{action.actor} {action.action} at +{action.at}: "
                                   "transaction was not committed")
        got = None if receipt.ok else receipt.error
        if action.expect is not None and action.expect != got:
            raise ScenarioDiverged(f"{action.actor} {action.action} at +{action.at}: expected "
                                   f"{action.expect}, got {got or 'success'} {receipt.message}")
        if action.expect is None and got is not None and not sc.allow_reverts:
            raise ScenarioDiverged(f"{action.actor} {action.action} at +{action.at}: reverted "
                                   f"with {got}: {receipt.message}")
    return outcome


def verify_chain(path: str | Path) -> tuple[Chain, Executor]:
    """Re-verify linkage, merkle roots, signatures, nonces, commit certificates,
    and replay contract state with conservation audits."""
    try:
        records = read_chain_file(path)
    except CorruptRecord as exc:
        raise VerificationFailed(exc.index, str(exc)) from exc
    genesis, _ = records[0]
    try:
        chain = Chain(genesis)
    except LedgerError as exc:
        raise VerificationFailed(0, f"{type(exc).__name__}: {exc}") from exc
    for block, cert in records[1:]:
        try:
            chain.append_block(block, cert)
        except LedgerError as exc:
            raise VerificationFailed(len(chain.blocks), f"{type(exc).__name__}: {exc}") from exc
    executor, problems = replay_chain(chain)
    if problems:
        raise VerificationFailed(chain.height, "; ".join(problems))
    return chain, executor


# -- artifacts ----------------------------------------------------------------------


def _eth(wei: int) -> str:
    return f"{Decimal(wei) / WEI_PER_ETHER:.9f}"


def _gwei_text(price) -> str:
    return str((Decimal(price.numerator) / price.denominator).normalize())


def events_jsonl(executor: Executor) -> str:
    return "".join(json.dumps(event_json(e), sort_keys=True) + "\n" for e in executor.events())


def events_text(outcome: RunOutcome) -> str:
    lines = []
    for e in outcome.executor.events():
        payload = ", ".join(f"{k}={outcome.name(v) if isinstance(v, bytes) else v}"
                            for k, v in sorted(e.payload.items()))
        lines.append(f"[{e.block_height}:{e.index}] {e.kind.value}({payload})")
    return "\n".join(lines) + ("\n" if lines else "")


def settlement_report(outcome: RunOutcome) -> str:
    ex = outcome.executor
    st = ex.contract.state if ex.contract is not None else None
    lines = [f"MOSS settlement report: {outcome.scenario.name}", ""]
    lines.append("Matches")
    lines.append(f"  {'stage':<12}{'seller':<16}{'buyer':<16}{'MHz':>5}{'Gwei/MHz':>12}{'total eth':>16}")
    for m in outcome.matches:
        lines.append(f"  {m.stage.value:<12}{outcome.name(m.seller):<16}{outcome.name(m.buyer):<16}"
                     f"{m.amount_mhz:>5}{m.unit_price_gwei:>12}{_eth(m.total_wei):>16}")
    if not outcome.matches:
        lines.append("  (none)")
    lines += ["", "Rejected actions"]
    for action, receipt in outcome.rejections:
        lines.append(f"  +{action.at:<6} {action.actor:<16}{action.action:<18}{receipt.error}")
    if not outcome.rejections:
        lines.append("  (none)")
    lines += ["", "Punished operators"]
    punished = [a for a, ok in sorted(st.execute_or_not.items()) if not ok] if st else []
    lines += [f"  {outcome.name(a)}" for a in punished] or ["  (none)"]
    lines += ["", "Final balances"]
    lines.append(f"  {'account':<16}{'address':<44}{'external eth':>22}{'deposit eth':>16}")
    for addr, bal in sorted(ex.balances.items(), key=lambda kv: outcome.name(kv[0])):
        dep = st.deposit.get(addr, 0) if st else 0
        lines.append(f"  {outcome.name(addr):<16}{format_address(addr):<44}{_eth(bal):>22}{_eth(dep):>16}")
    lines += ["", f"Fees collected: {_eth(ex.fees_collected)} eth",
              f"Gas price: {_gwei_text(outcome.scenario.schedule.gas_price_gwei)} Gwei",
              f"Phase: {st.phase.name if st else 'NOT DEPLOYED'}",
              f"Chain height: {outcome.chain.height}",
              f"Head digest: {outcome.chain.head_digest.hex()}",
              f"State digest: {outcome.state_digest}"]
    return "\n".join(lines) + "\n"


def report_dict(outcome: RunOutcome) -> dict[str, Any]:
    st = outcome.executor.contract.state if outcome.executor.contract is not None else None
    return {
        "scenario": outcome.scenario.name,
        "matches": [{**match_json(m), "seller_id": outcome.name(m.seller), "buyer_id": outcome.name(m.buyer)}
                    for m in outcome.matches],
        "rejections": [{"actor": a.actor, "action": a.action, "at": a.at, "error": r.error}
                       for a, r in outcome.rejections],
        "balances": {outcome.name(a): str(v) for a, v in outcome.executor.balances.items()},
        "punished": [outcome.name(a) for a, ok in sorted(st.execute_or_not.items()) if not ok] if st else [],
        "state_digest": outcome.state_digest,
        "head_digest": outcome.chain.head_digest.hex(),
    }


def write_artifacts(outcome: RunOutcome, out_dir: str | Path, report_path: str | Path | None = None,
                    log_format: str = "jsonl") -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "chain": out / "chain.bin",
        "events": out / ("events.jsonl" if log_format == "jsonl" else "events.txt"),
        "report": Path(report_path) if report_path else out / "report.txt",
        "trace": out / "trace.jsonl",
    }
    outcome.chain.save(paths["chain"])
    paths["events"].write_text(events_jsonl(outcome.executor) if log_format == "jsonl" else events_text(outcome))
    paths["report"].write_text(settlement_report(outcome))
    paths["trace"].write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in outcome.trace))
    return paths


__all__ = [
    "ACTIONS", "BUNDLED", "ConfigInvalid", "RunOutcome", "Scenario", "ScenarioDiverged",
    "VerificationFailed", "CorruptFile", "fuzz_scenario", "load_raw", "load_scenario",
    "parse_scenario", "replay_chain", "run_scenario", "settlement_report", "verify_chain",
    "write_artifacts", "DEFAULT_GAS", "wei_to_ether",
]
