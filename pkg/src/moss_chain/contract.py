"""The MOSS spectrum-trading contract as a deterministic state machine.

Each public method is one contract function. ``now`` is the containing
block's timestamp and ``sender`` the transaction sender. A method either
returns a :class:`CallResult` or raises a :class:`ContractError`; callers
that need all-or-nothing semantics restore a :meth:`MossContract.snapshot`
on error (the executor does).

Units: prices in Gwei per MHz, bandwidth in whole MHz, money in wei.
"""

from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field
from typing import Any

from ._kernels import MATCH, match_books
from .identity import Role

WEI_PER_GWEI = 10**9
MIN_DEPOSIT_WEI = 10**18


class Phase(enum.IntEnum):
    REGISTRATION = 0
    AUCTION_READY = 1
    AUCTIONED = 2
    FREE_TRADING = 3
    CLEARED = 4
    DESTROYED = 5


class Stage(str, enum.Enum):
    AUCTION = "auction"
    FREE_MARKET = "free_market"


class EventKind(str, enum.Enum):
    LOG_REGISTER_OP = "LogRegisterOp"
    LOG_DEAL_RECORD = "LogDealRecord"
    LOG_FREE_MARKET_ORDER = "LogFreeMarketOrder"
    # diagnostics beyond the three trading events
    LOG_BUYER_UNDERFUNDED = "LogBuyerUnderfunded"
    LOG_WITHDRAW = "LogWithdraw"


class ContractError(Exception):
    """A reverted call. ``code`` is the class name, e.g. ``"InvalidOp"``."""

    @property
    def code(self) -> str:
        return type(self).__name__


def _error(name: str) -> type[ContractError]:
    return type(name, (ContractError,), {"__module__": __name__})


NotAdministrator = _error("NotAdministrator")
WrongPhase = _error("WrongPhase")
RegistrationClosed = _error("RegistrationClosed")
InsufficientDeposit = _error("InsufficientDeposit")
DuplicateRegistration = _error("DuplicateRegistration")
ZeroQuantity = _error("ZeroQuantity")
AlreadyAuctioned = _error("AlreadyAuctioned")
TooEarly = _error("TooEarly")
MarketClosed = _error("MarketClosed")
MarketNotOpened = _error("MarketNotOpened")
UnknownTarget = _error("UnknownTarget")
PriceMismatch = _error("PriceMismatch")
BuyerUnderfunded = _error("BuyerUnderfunded")
ExceedsOffer = _error("ExceedsOffer")
ExceedsDemand = _error("ExceedsDemand")
WrongRole = _error("WrongRole")
NoOrder = _error("NoOrder")
UnknownOperator = _error("UnknownOperator")
NotRegistered = _error("NotRegistered")
ZeroValue = _error("ZeroValue")
InvalidOp = _error("InvalidOp")
NothingToWithdraw = _error("NothingToWithdraw")
ContractDestroyed = _error("ContractDestroyed")


@dataclass
class Order:
    owner: bytes
    role: Role
    unit_price_gwei: int
    bandwidth_mhz: int
    registered_mhz: int
    traded_mhz: int = 0


@dataclass(frozen=True)
class MatchRecord:
    seller: bytes
    buyer: bytes
    amount_mhz: int
    unit_price_gwei: int
    stage: Stage
    # prices the two parties had registered (auction) / posted (free market)
    ask_price_gwei: int = 0
    bid_price_gwei: int = 0

    @property
    def total_wei(self) -> int:
        return self.amount_mhz * self.unit_price_gwei * WEI_PER_GWEI


@dataclass(frozen=True)
class Event:
    kind: EventKind
    payload: dict[str, Any]
    block_height: int
    index: int


@dataclass
class CallResult:
    value: Any = None
    payouts: list[tuple[bytes, int]] = field(default_factory=list)


@dataclass
class ContractState:
    owner: bytes
    t0: int
    t_bid: int
    t_free: int
    t1: int | None = None
    phase: Phase = Phase.REGISTRATION
    asks: list[Order] = field(default_factory=list)
    bids: list[Order] = field(default_factory=list)
    deposit: dict[bytes, int] = field(default_factory=dict)
    execute_or_not: dict[bytes, bool] = field(default_factory=dict)
    registered: dict[bytes, Role] = field(default_factory=dict)
    registered_mhz: dict[bytes, int] = field(default_factory=dict)
    double_auction_finish: bool = False
    asks_sorted: bool = False
    bids_sorted: bool = False
    matches: list[MatchRecord] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)
    total_deposited_wei: int = 0
    total_paid_out_wei: int = 0

    @property
    def balance_wei(self) -> int:
        return sum(self.deposit.values())


class MossContract:
    def __init__(self, state: ContractState):
        self.state = state
        self.block_height = 0
        self._event_height = -1
        self._event_index = 0

    @classmethod
    def deploy(cls, sender: bytes, t_bid: int, t_free: int, now: int,
               administrator: bytes | None = None) -> "MossContract":
        """Deploy at ``now``; the registration window is [now, now + t_bid]."""
        if administrator is not None and sender != administrator:
            raise NotAdministrator("only the administrator deploys the contract")
        if t_bid < 0 or t_free < 0:
            raise ValueError("window lengths must be non-negative")
        return cls(ContractState(owner=sender, t0=now, t_bid=t_bid, t_free=t_free))

    # -- plumbing -----------------------------------------------------------

    def snapshot(self) -> tuple:
        s = self.state
        # events and matches are append-only: remember lengths, copy the rest
        saved = {k: v for k, v in vars(s).items() if k not in ("events", "matches")}
        return (copy.deepcopy(saved), len(s.events), len(s.matches),
                self._event_height, self._event_index)

    def restore(self, snap: tuple) -> None:
        saved, n_events, n_matches, eh, ei = snap
        s = self.state
        for key, value in saved.items():
            setattr(s, key, value)
        del s.events[n_events:]
        del s.matches[n_matches:]
        self._event_height, self._event_index = eh, ei

    def _emit(self, kind: EventKind, **payload: Any) -> None:
        if self._event_height != self.block_height:
            self._event_height = self.block_height
            self._event_index = 0
        self.state.events.append(Event(kind, payload, self.block_height, self._event_index))
        self._event_index += 1

    def _alive(self) -> ContractState:
        if self.state.phase is Phase.DESTROYED:
            raise ContractDestroyed("contract has self-destructed")
        return self.state

    def _owner_only(self, sender: bytes) -> ContractState:
        s = self._alive()
        if sender != s.owner:
            raise NotAdministrator("ownerOnly")
        return s

    def _find(self, book: list[Order], addr: bytes) -> int | None:
        for i, order in enumerate(book):
            if order.owner == addr:
                return i
        return None

    def _transfer(self, buyer: bytes, seller: bytes, wei: int) -> None:
        s = self.state
        if s.deposit.get(buyer, 0) < wei:
            raise BuyerUnderfunded(f"deposit {s.deposit.get(buyer, 0)} < {wei}")
        s.deposit[buyer] -= wei
        s.deposit[seller] = s.deposit.get(seller, 0) + wei

    # -- registration ---------------------------------------------------------

    def bid_or_ask_submit(self, sender: bytes, role: Role | str, bandwidth_mhz: int,
                          unit_price_gwei: int, value_wei: int, now: int) -> CallResult:
        s = self._alive()
        role = Role(role)
        if now > s.t0 + s.t_bid or s.phase is not Phase.REGISTRATION:
            raise RegistrationClosed(f"now={now} > t0+t_bid={s.t0 + s.t_bid}")
        if sender in s.registered:
            raise DuplicateRegistration("one order per operator per round")
        if bandwidth_mhz <= 0 or unit_price_gwei <= 0:
            raise ZeroQuantity("bandwidth and price must be positive")
        if value_wei < MIN_DEPOSIT_WEI:
            raise InsufficientDeposit(f"{value_wei} wei < 1 ether")
        s.registered[sender] = role
        s.registered_mhz[sender] = bandwidth_mhz
        s.execute_or_not[sender] = True
        s.deposit[sender] = s.deposit.get(sender, 0) + value_wei
        s.total_deposited_wei += value_wei
        order = Order(sender, role, unit_price_gwei, bandwidth_mhz, bandwidth_mhz)
        (s.asks if role is Role.SELLER else s.bids).append(order)
        s.asks_sorted = s.bids_sorted = False
        self._emit(EventKind.LOG_REGISTER_OP, address=sender, role=role.value,
                   bandwidth=bandwidth_mhz, price=unit_price_gwei)
        return CallResult()

    def registration_end(self, now: int) -> CallResult:
        s = self._alive()
        ended = now > s.t0 + s.t_bid
        if ended and s.phase is Phase.REGISTRATION:
            s.phase = Phase.AUCTION_READY
        return CallResult(ended)

    # -- spectrum auction -----------------------------------------------------

    def sort_ask_by_increase(self, sender: bytes) -> CallResult:
        s = self._owner_only(sender)
        if s.phase is not Phase.AUCTION_READY:
            raise WrongPhase(f"phase is {s.phase.name}")
        s.asks.sort(key=lambda o: o.unit_price_gwei)
        s.asks_sorted = True
        return CallResult([o.owner for o in s.asks])

    def sort_bid_by_decrease(self, sender: bytes) -> CallResult:
        s = self._owner_only(sender)
        if s.phase is not Phase.AUCTION_READY:
            raise WrongPhase(f"phase is {s.phase.name}")
        s.bids.sort(key=lambda o: -o.unit_price_gwei)
        s.bids_sorted = True
        return CallResult([o.owner for o in s.bids])

    def double_auction(self, sender: bytes) -> CallResult:
        s = self._owner_only(sender)
        if s.double_auction_finish:
            raise AlreadyAuctioned("one auction per round")
        if s.phase is not Phase.AUCTION_READY:
            raise WrongPhase(f"phase is {s.phase.name}")
        if not (s.asks_sorted and s.bids_sorted):
            raise WrongPhase("both books must be sorted first")

        asks, bids = s.asks, s.bids
        budgets = [s.deposit[o.owner] // WEI_PER_GWEI for o in bids]
        steps, ask_left, bid_left = match_books(
            [o.unit_price_gwei for o in asks], [o.bandwidth_mhz for o in asks],
            [o.unit_price_gwei for o in bids], [o.bandwidth_mhz for o in bids], budgets,
        )
        new_matches = []
        for kind, i, j, amount, price in steps:
            seller, buyer = asks[i], bids[j]
            if kind != MATCH:
                self._emit(EventKind.LOG_BUYER_UNDERFUNDED, buyer=buyer.owner,
                           amount=amount, price=price)
                continue
            record = MatchRecord(seller.owner, buyer.owner, amount, price, Stage.AUCTION,
                                 seller.unit_price_gwei, buyer.unit_price_gwei)
            self._transfer(buyer.owner, seller.owner, record.total_wei)
            seller.traded_mhz += amount
            buyer.traded_mhz += amount
            s.matches.append(record)
            new_matches.append(record)
            self._emit(EventKind.LOG_DEAL_RECORD, seller=seller.owner, buyer=buyer.owner,
                       amount=amount, price=price, stage=Stage.AUCTION.value)
        for order, left in zip(asks, ask_left):
            order.bandwidth_mhz = left
        for order, left in zip(bids, bid_left):
            order.bandwidth_mhz = left
        s.asks = [o for o in asks if o.bandwidth_mhz > 0]
        s.bids = [o for o in bids if o.bandwidth_mhz > 0]
        s.double_auction_finish = True
        s.phase = Phase.AUCTIONED
        return CallResult(new_matches)

    # -- free-trading market --------------------------------------------------

    def free_trade_begin(self, sender: bytes, now: int) -> CallResult:
        s = self._owner_only(sender)
        if s.phase is not Phase.AUCTIONED:
            raise WrongPhase(f"phase is {s.phase.name}")
        if now <= s.t0 + s.t_bid:
            raise TooEarly("free trading opens after the registration window")
        s.t1 = now
        s.phase = Phase.FREE_TRADING
        return CallResult(now)

    def order_response(self, sender: bytes, target_addr: bytes, price_gwei: int,
                       bandwidth_mhz: int, now: int) -> CallResult:
        """Seller resubmit (target is the sender) or buyer purchase."""
        s = self._alive()
        if s.phase is Phase.CLEARED or (
            s.phase is Phase.FREE_TRADING and not s.t1 <= now <= s.t1 + s.t_free
        ):
            raise MarketClosed("outside [t1, t1 + t_free]")
        if s.phase is not Phase.FREE_TRADING:
            raise WrongPhase(f"phase is {s.phase.name}")
        if bandwidth_mhz <= 0 or price_gwei <= 0:
            raise ZeroQuantity("bandwidth and price must be positive")
        ai = self._find(s.asks, sender)
        bi = self._find(s.bids, sender)

        if target_addr == sender:
            if ai is None:
                raise (WrongRole if bi is not None else NoOrder)("only sellers resubmit orders")
            ask = s.asks[ai]
            if bandwidth_mhz > ask.registered_mhz - ask.traded_mhz:
                raise ExceedsOffer(f"{bandwidth_mhz} MHz > unsold {ask.registered_mhz - ask.traded_mhz}")
            ask.unit_price_gwei = price_gwei
            ask.bandwidth_mhz = bandwidth_mhz
            self._emit(EventKind.LOG_FREE_MARKET_ORDER, address=sender, price=price_gwei,
                       bandwidth=bandwidth_mhz)
            return CallResult()

        if bi is None:
            raise (WrongRole if ai is not None else NoOrder)("only buyers purchase")
        ti = self._find(s.asks, target_addr)
        if ti is None:
            raise UnknownTarget("no posted seller order at target address")
        bid, ask = s.bids[bi], s.asks[ti]
        if price_gwei != ask.unit_price_gwei:
            raise PriceMismatch(f"{price_gwei} != posted {ask.unit_price_gwei}")
        if bandwidth_mhz > bid.bandwidth_mhz:
            raise ExceedsDemand(f"{bandwidth_mhz} MHz > remaining demand {bid.bandwidth_mhz}")
        traded = min(bandwidth_mhz, ask.bandwidth_mhz)
        record = MatchRecord(ask.owner, bid.owner, traded, price_gwei, Stage.FREE_MARKET,
                             ask.unit_price_gwei, bid.unit_price_gwei)
        self._transfer(bid.owner, ask.owner, record.total_wei)
        bid.bandwidth_mhz -= traded
        bid.traded_mhz += traded
        ask.bandwidth_mhz -= traded
        ask.traded_mhz += traded
        s.asks = [o for o in s.asks if o.bandwidth_mhz > 0]
        s.bids = [o for o in s.bids if o.bandwidth_mhz > 0]
        s.matches.append(record)
        self._emit(EventKind.LOG_DEAL_RECORD, seller=ask.owner, buyer=bid.owner, amount=traded,
                   price=price_gwei, stage=Stage.FREE_MARKET.value)
        return CallResult(record)

    def delete_order(self, sender: bytes) -> CallResult:
        s = self._alive()
        if s.phase not in (Phase.AUCTIONED, Phase.FREE_TRADING):
            raise WrongPhase(f"phase is {s.phase.name}")
        for book in (s.asks, s.bids):
            i = self._find(book, sender)
            if i is not None:
                del book[i]
                return CallResult()
        raise NoOrder("no residual order for sender")

    def market_end(self, now: int) -> CallResult:
        s = self._alive()
        if s.t1 is None:
            raise MarketNotOpened("freeTradeBegin has not been called")
        ended = now > s.t1 + s.t_free
        if ended and s.phase is Phase.FREE_TRADING:
            s.phase = Phase.CLEARED
        return CallResult(ended)

    # -- payment clearing -----------------------------------------------------

    def pay_or_not(self, sender: bytes, op_addr: bytes, executed: bool) -> CallResult:
        s = self._owner_only(sender)
        if op_addr not in s.registered:
            raise UnknownOperator(op_addr.hex())
        s.execute_or_not[op_addr] = bool(executed)
        return CallResult()

    def increase_funds(self, sender: bytes, value_wei: int) -> CallResult:
        s = self._alive()
        if sender not in s.registered:
            raise NotRegistered("only registered operators hold a deposit")
        if value_wei <= 0:
            raise ZeroValue("nothing attached")
        s.deposit[sender] += value_wei
        s.total_deposited_wei += value_wei
        return CallResult(s.deposit[sender])

    def withdraw(self, sender: bytes, now: int) -> CallResult:
        s = self._alive()
        if s.phase is not Phase.CLEARED:
            raise WrongPhase(f"phase is {s.phase.name}")
        if not s.execute_or_not.get(sender, True):
            raise InvalidOp("Invalid op")
        amount = s.deposit.get(sender, 0)
        if amount <= 0:
            raise NothingToWithdraw("no deposit left")
        s.deposit[sender] = 0
        s.total_paid_out_wei += amount
        self._emit(EventKind.LOG_WITHDRAW, address=sender, amount=amount)
        return CallResult(amount, [(sender, amount)])

    def change_owner(self, sender: bytes, new_owner: bytes) -> CallResult:
        s = self._owner_only(sender)
        s.owner = new_owner
        return CallResult()

    def self_destruct(self, sender: bytes) -> CallResult:
        s = self._owner_only(sender)
        if s.phase is not Phase.CLEARED:
            raise WrongPhase(f"phase is {s.phase.name}")
        payouts = []
        for addr in sorted(s.deposit):
            amount = s.deposit[addr]
            if amount > 0:
                payee = addr if s.execute_or_not.get(addr, True) else s.owner
                payouts.append((payee, amount))
                s.deposit[addr] = 0
                s.total_paid_out_wei += amount
        s.phase = Phase.DESTROYED
        return CallResult(sum(a for _, a in payouts), payouts)
