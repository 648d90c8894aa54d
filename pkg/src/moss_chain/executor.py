"""Applies committed blocks to the world state: external balances, gas fees and
the MOSS contract.

Reverted calls keep their fee (the fee sink still collects it) but leave
contract state and deposits untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Callable

from .contract import (
    CallResult,
    ContractError,
    Event,
    MossContract,
    _error,
)
from .crypto import address_from_public_key, format_address, sha256
from .gas import FUNCTION_GAS_KEYS, FeeUnpayable, GasSchedule, charge
from .identity import Role
from .ledger import Block, FunctionId, Transaction
from .encoding import DecodeError

NotDeployed = _error("NotDeployed")
AlreadyDeployed = _error("AlreadyDeployed")
NotPayable = _error("NotPayable")
BadArguments = _error("BadArguments")
InsufficientFunds = _error("InsufficientFunds")

PAYABLE = frozenset({FunctionId.BID_OR_ASK_SUBMIT, FunctionId.INCREASE_FUNDS})


@dataclass(frozen=True)
class Receipt:
    tx_digest: bytes
    block_height: int
    index: int
    sender: bytes
    function: FunctionId
    status: str  # "ok" | "reverted" | "rejected" | "system"
    error: str | None = None
    message: str = ""
    gas_key: str | None = None
    fee_wei: int = 0
    value: Any = None

    @property
    def ok(self) -> bool:
        return self.status in ("ok", "system")


def gas_key_for(tx: Transaction) -> str:
    if tx.function_id is FunctionId.ORDER_RESPONSE:
        try:
            seller_path = tx.args.get("target") == tx.sender
        except DecodeError:
            seller_path = False
        return "orderResponse.seller" if seller_path else "orderResponse.buyer"
    return FUNCTION_GAS_KEYS[tx.function_id]


class Executor:
    """Deterministic world-state machine fed one committed block at a time."""

    def __init__(self, genesis_config: dict[str, Any]):
        settings = genesis_config.get("settings", {})
        self.schedule = (GasSchedule.from_payload(settings["gas_schedule"])
                         if "gas_schedule" in settings else GasSchedule())
        self.balances: dict[bytes, int] = {addr: wei for addr, wei in genesis_config["alloc"]}
        self.administrator = _admin_address(genesis_config)
        self.fees_collected = 0
        self.contract: MossContract | None = None
        self.receipts: list[Receipt] = []
        self.height = -1
        self.initial_supply = self.total_supply()

    # -- accounting ---------------------------------------------------------------

    @property
    def contract_balance(self) -> int:
        return 0 if self.contract is None else self.contract.state.balance_wei

    def total_supply(self) -> int:
        return sum(self.balances.values()) + self.contract_balance + self.fees_collected

    def audit(self) -> list[str]:
        """Conservation violations at the current height (empty when clean)."""
        problems = []
        if self.total_supply() != self.initial_supply:
            problems.append(f"height {self.height}: supply {self.total_supply()} != {self.initial_supply}")
        if any(v < 0 for v in self.balances.values()):
            problems.append(f"height {self.height}: negative external balance")
        if self.contract is not None:
            s = self.contract.state
            if any(v < 0 for v in s.deposit.values()):
                problems.append(f"height {self.height}: negative deposit")
            if s.balance_wei != s.total_deposited_wei - s.total_paid_out_wei:
                problems.append(f"height {self.height}: contract ledger mismatch")
        return problems

    # -- block application ------------------------------------------------------

    def apply_block(self, block: Block) -> list[Receipt]:
        if block.height != self.height + 1:
            raise ValueError(f"executor at height {self.height} cannot apply block {block.height}")
        self.height = block.height
        if self.contract is not None:
            self.contract.block_height = block.height
        out = [self.apply_transaction(tx, block.timestamp, block.height, i)
               for i, tx in enumerate(block.transactions)]
        self.receipts.extend(out)
        return out

    def apply_transaction(self, tx: Transaction, now: int, height: int, index: int) -> Receipt:
        base = dict(tx_digest=tx.digest, block_height=height, index=index,
                    sender=tx.sender, function=tx.function_id)
        if tx.function_id.is_system:
            return Receipt(status="system", **base)
        key = gas_key_for(tx)
        try:
            fee = charge(self.balances, tx.sender, key, self.schedule)
        except FeeUnpayable as exc:
            return Receipt(status="rejected", error="FeeUnpayable", message=str(exc), gas_key=key, **base)
        self.fees_collected += fee
        base.update(gas_key=key, fee_wei=fee)

        snap = self.contract.snapshot() if self.contract is not None else None
        try:
            result = self._dispatch(tx, now, height)
        except ContractError as exc:
            if snap is not None and self.contract is not None:
                self.contract.restore(snap)
            return Receipt(status="reverted", error=exc.code, message=str(exc), **base)
        if tx.value_wei:
            self.balances[tx.sender] -= tx.value_wei
        for addr, wei in result.payouts:
            self.balances[addr] = self.balances.get(addr, 0) + wei
        return Receipt(status="ok", value=result.value, **base)

    def _dispatch(self, tx: Transaction, now: int, height: int) -> CallResult:
        fid = tx.function_id
        try:
            args = tx.args
        except DecodeError as exc:
            raise BadArguments(str(exc)) from exc
        if tx.value_wei and fid not in PAYABLE:
            raise NotPayable(fid.name)
        if tx.value_wei > self.balances.get(tx.sender, 0):
            raise InsufficientFunds("attached value exceeds external balance")
        try:
            if fid is FunctionId.DEPLOY:
                return self._deploy(tx, args, now, height)
            if self.contract is None:
                raise NotDeployed("contract not deployed")
            return _HANDLERS[fid](self.contract, tx, args, now)
        except (KeyError, TypeError, ValueError) as exc:
            raise BadArguments(repr(exc)) from exc

    def _deploy(self, tx: Transaction, args: dict, now: int, height: int) -> CallResult:
        if self.contract is not None:
            raise AlreadyDeployed("one contract instance per chain")
        t_bid, t_free = _ints(args, "t_bid", "t_free")
        self.contract = MossContract.deploy(tx.sender, t_bid, t_free, now, self.administrator)
        self.contract.block_height = height
        return CallResult(now)

    # -- inspection -------------------------------------------------------------

    def events(self) -> list[Event]:
        return [] if self.contract is None else list(self.contract.state.events)

    def snapshot_dict(self) -> dict[str, Any]:
        """Plain-JSON view of the whole world state (addresses as 0x-hex)."""
        c = self.contract.state if self.contract is not None else None
        out: dict[str, Any] = {
            "height": self.height,
            "balances": {format_address(a): str(v) for a, v in sorted(self.balances.items())},
            "fees_collected": str(self.fees_collected),
            "contract": None,
        }
        if c is not None:
            out["contract"] = {
                "owner": format_address(c.owner),
                "t0": c.t0, "t_bid": c.t_bid, "t1": c.t1, "t_free": c.t_free,
                "phase": c.phase.name,
                "double_auction_finish": c.double_auction_finish,
                "asks": [_order_json(o) for o in c.asks],
                "bids": [_order_json(o) for o in c.bids],
                "deposit": {format_address(a): str(v) for a, v in sorted(c.deposit.items())},
                "execute_or_not": {format_address(a): v for a, v in sorted(c.execute_or_not.items())},
                "matches": [match_json(m) for m in c.matches],
                "events": [event_json(e) for e in c.events],
            }
        return out

    def state_digest(self) -> str:
        blob = json.dumps(self.snapshot_dict(), sort_keys=True, separators=(",", ":"))
        return sha256(blob.encode()).hex()


def _admin_address(genesis_config: dict[str, Any]) -> bytes:
    return address_from_public_key(genesis_config["admin_public_key"])


def _ints(args: dict, *names: str) -> list[int]:
    out = []
    for name in names:
        value = args[name]
        if not isinstance(value, int) or isinstance(value, bool):
            raise BadArguments(f"{name} must be an integer")
        out.append(value)
    return out


def _addr(args: dict, name: str) -> bytes:
    value = args[name]
    if not isinstance(value, bytes) or len(value) != 20:
        raise BadArguments(f"{name} must be a 20-byte address")
    return value


def _order_json(o) -> dict[str, Any]:
    return {"owner": format_address(o.owner), "role": o.role.value, "price": o.unit_price_gwei,
            "bandwidth": o.bandwidth_mhz, "registered": o.registered_mhz, "traded": o.traded_mhz}


def match_json(m) -> dict[str, Any]:
    return {"seller": format_address(m.seller), "buyer": format_address(m.buyer),
            "amount_mhz": m.amount_mhz, "unit_price_gwei": m.unit_price_gwei,
            "stage": m.stage.value, "total_wei": str(m.total_wei)}


def _json_value(v: Any) -> Any:
    if isinstance(v, bytes):
        return format_address(v) if len(v) == 20 else v.hex()
    return v


def event_json(e: Event) -> dict[str, Any]:
    return {"block_height": e.block_height, "index": e.index, "kind": e.kind.value,
            "payload": {k: _json_value(v) for k, v in e.payload.items()}}


def _submit(c: MossContract, tx: Transaction, a: dict, now: int) -> CallResult:
    role = a["role"]
    if role not in (Role.SELLER.value, Role.BUYER.value):
        raise BadArguments(f"role must be seller or buyer, got {role!r}")
    bw, price = _ints(a, "bandwidth_mhz", "unit_price_gwei")
    return c.bid_or_ask_submit(tx.sender, role, bw, price, tx.value_wei, now)


def _order_response(c: MossContract, tx: Transaction, a: dict, now: int) -> CallResult:
    price, bw = _ints(a, "price_gwei", "bandwidth_mhz")
    return c.order_response(tx.sender, _addr(a, "target"), price, bw, now)


def _pay_or_not(c: MossContract, tx: Transaction, a: dict, now: int) -> CallResult:
    executed = a["executed"]
    if not isinstance(executed, bool):
        raise BadArguments("executed must be a bool")
    return c.pay_or_not(tx.sender, _addr(a, "operator"), executed)


_HANDLERS: dict[FunctionId, Callable[[MossContract, Transaction, dict, int], CallResult]] = {
    FunctionId.BID_OR_ASK_SUBMIT: _submit,
    FunctionId.REGISTRATION_END: lambda c, tx, a, now: c.registration_end(now),
    FunctionId.SORT_ASK_BY_INCREASE: lambda c, tx, a, now: c.sort_ask_by_increase(tx.sender),
    FunctionId.SORT_BID_BY_DECREASE: lambda c, tx, a, now: c.sort_bid_by_decrease(tx.sender),
    FunctionId.DOUBLE_AUCTION: lambda c, tx, a, now: c.double_auction(tx.sender),
    FunctionId.FREE_TRADE_BEGIN: lambda c, tx, a, now: c.free_trade_begin(tx.sender, now),
    FunctionId.ORDER_RESPONSE: _order_response,
    FunctionId.DELETE_ORDER: lambda c, tx, a, now: c.delete_order(tx.sender),
    FunctionId.MARKET_END: lambda c, tx, a, now: c.market_end(now),
    FunctionId.PAY_OR_NOT: _pay_or_not,
    FunctionId.INCREASE_FUNDS: lambda c, tx, a, now: c.increase_funds(tx.sender, tx.value_wei),
    FunctionId.WITHDRAW: lambda c, tx, a, now: c.withdraw(tx.sender, now),
    FunctionId.CHANGE_OWNER: lambda c, tx, a, now: c.change_owner(tx.sender, _addr(a, "new_owner")),
    FunctionId.SELF_DESTRUCT: lambda c, tx, a, now: c.self_destruct(tx.sender),
}

assert set(_HANDLERS) | {FunctionId.DEPLOY} == set(FUNCTION_GAS_KEYS) | {FunctionId.ORDER_RESPONSE}
