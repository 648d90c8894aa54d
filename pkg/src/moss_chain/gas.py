"""Flat per-function gas schedule and ether-cost conversion.

Default gas figures are the whole-function costs measured for the contract on
a real EVM (administrator table and operator table). They are configuration
constants here, not something this package's state machine derives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Mapping, MutableMapping

from .ledger import FunctionId

WEI_PER_GWEI = 10**9
WEI_PER_ETHER = 10**18
DEFAULT_GAS_PRICE_GWEI = Fraction(43, 10)

# Gas-entry names follow the contract's function names. orderResponse has a
# separate entry per caller path.
DEFAULT_GAS: dict[str, int] = {
    "deploy": 4767204,
    "RegistrationEnd": 21799,
    "sortAskByIncrease": 70696,
    "sortBidByDecrease": 116557,
    "DoubleAuction": 368357,
    "freeTradeBegin": 42413,
    "MarketEnd": 21776,
    "payORnot": 29018,
    "changeOwner": 28811,
    "selfDestruct": 13495,
    "BidOrAskSubmit": 216416,
    "deleteOrder": 21229,
    "orderResponse.buyer": 24277,
    "orderResponse.seller": 35085,
    "withdraw": 22188,
    "increaseFunds": 26757,
}

FUNCTION_GAS_KEYS: dict[FunctionId, str] = {
    FunctionId.DEPLOY: "deploy",
    FunctionId.BID_OR_ASK_SUBMIT: "BidOrAskSubmit",
    FunctionId.REGISTRATION_END: "RegistrationEnd",
    FunctionId.SORT_ASK_BY_INCREASE: "sortAskByIncrease",
    FunctionId.SORT_BID_BY_DECREASE: "sortBidByDecrease",
    FunctionId.DOUBLE_AUCTION: "DoubleAuction",
    FunctionId.FREE_TRADE_BEGIN: "freeTradeBegin",
    FunctionId.DELETE_ORDER: "deleteOrder",
    FunctionId.MARKET_END: "MarketEnd",
    FunctionId.PAY_OR_NOT: "payORnot",
    FunctionId.INCREASE_FUNDS: "increaseFunds",
    FunctionId.WITHDRAW: "withdraw",
    FunctionId.CHANGE_OWNER: "changeOwner",
    FunctionId.SELF_DESTRUCT: "selfDestruct",
}


@dataclass(frozen=True)
class PublishedGasRow:
    table: int
    function: str
    gas: tuple[int, ...]
    printed_ether: tuple[Decimal, ...]
    consistent: bool = True


# Printed ether values exactly as published (mantissa x 10^exp).
PUBLISHED_ROWS: tuple[PublishedGasRow, ...] = (
    PublishedGasRow(3, "deploy", (4767204,), (Decimal("2.04989e-2"),)),
    PublishedGasRow(3, "RegistrationEnd", (21799,), (Decimal("9.37357e-5"),)),
    PublishedGasRow(3, "sortAskByIncrease", (70696,), (Decimal("3.0399e-4"),)),
    PublishedGasRow(3, "sortBidByDecrease", (116557,), (Decimal("5.01195e-4"),)),
    PublishedGasRow(3, "DoubleAuction", (368357,), (Decimal("1.583935e-3"),)),
    PublishedGasRow(3, "freeTradeBegin", (42413,), (Decimal("1.82375e-4"),)),
    PublishedGasRow(3, "MarketEnd", (21776,), (Decimal("9.35938e-5"),), consistent=False),
    PublishedGasRow(3, "payORnot", (29018,), (Decimal("1.24777e-4"),)),
    PublishedGasRow(3, "changeOwner", (28811,), (Decimal("1.23887e-4"),)),
    PublishedGasRow(3, "selfDestruct", (13495,), (Decimal("5.8028e-5"),)),
    PublishedGasRow(4, "BidOrAskSubmit", (216416,), (Decimal("1.00362e-3"),), consistent=False),
    PublishedGasRow(4, "deleteOrder", (21229,), (Decimal("9.12847e-5"),)),
    PublishedGasRow(4, "orderResponse", (24277, 35085), (Decimal("1.0439e-4"), Decimal("1.5086e-4"))),
    PublishedGasRow(4, "withdraw", (22188,), (Decimal("9.5408e-5"),)),
    PublishedGasRow(4, "increaseFunds", (26757,), (Decimal("1.15055e-4"),)),
)


class FeeUnpayable(Exception):
    pass


def parse_gwei(value: str | int | float | Decimal | Fraction) -> Fraction:
    """Exact Gwei amount; floats go through their shortest decimal repr."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        value = repr(value)
    return Fraction(Decimal(value)) if isinstance(value, str) else Fraction(value)


def ether_cost(gas_units: int, gas_price_gwei: Fraction | int | str = DEFAULT_GAS_PRICE_GWEI) -> Fraction:
    """gas x price, in wei, as an exact rational (integral for 0.1-Gwei prices)."""
    if gas_units < 0:
        raise ValueError("gas_units must be non-negative")
    return gas_units * parse_gwei(gas_price_gwei) * WEI_PER_GWEI


def wei_to_ether(wei: int | Fraction) -> Fraction:
    return Fraction(wei) / WEI_PER_ETHER


@dataclass(frozen=True)
class GasSchedule:
    per_function_gas: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_GAS))
    gas_price_gwei: Fraction = DEFAULT_GAS_PRICE_GWEI

    def __post_init__(self) -> None:
        object.__setattr__(self, "gas_price_gwei", parse_gwei(self.gas_price_gwei))
        object.__setattr__(self, "per_function_gas", dict(self.per_function_gas))
        if self.gas_price_gwei <= 0:
            raise ValueError("gas price must be positive")
        if (self.gas_price_gwei * WEI_PER_GWEI).denominator != 1:
            raise ValueError("gas price must be a whole number of wei")
        for name, gas in self.per_function_gas.items():
            # Zero is allowed for custom schedules; the defaults are all positive.
            if not isinstance(gas, int) or gas < 0:
                raise ValueError(f"gas for {name!r} must be a non-negative integer")

    def with_overrides(self, gas: Mapping[str, int] | None = None,
                       gas_price_gwei: Fraction | str | None = None) -> "GasSchedule":
        unknown = set(gas or {}) - set(self.per_function_gas)
        if unknown:
            raise ValueError(f"unknown gas entries: {sorted(unknown)}")
        return GasSchedule(
            {**self.per_function_gas, **(gas or {})},
            self.gas_price_gwei if gas_price_gwei is None else parse_gwei(gas_price_gwei),
        )

    def gas_for(self, key: str) -> int:
        return self.per_function_gas[key]

    def fee_wei(self, key: str) -> int:
        cost = ether_cost(self.gas_for(key), self.gas_price_gwei)
        assert cost.denominator == 1
        return cost.numerator

    def to_payload(self) -> dict:
        price = self.gas_price_gwei
        return {"gas": dict(self.per_function_gas),
                "price_gwei": [price.numerator, price.denominator]}

    @classmethod
    def from_payload(cls, payload: Mapping) -> "GasSchedule":
        num, den = payload["price_gwei"]
        return cls(dict(payload["gas"]), Fraction(num, den))


def charge(balances: MutableMapping[bytes, int], sender: bytes, gas_key: str,
           schedule: GasSchedule) -> int:
    """Deduct the fee for one call from ``sender``'s external balance in place.

    Returns the fee in wei so the caller can credit its fee sink.
    """
    fee = schedule.fee_wei(gas_key)
    balance = balances.get(sender, 0)
    if balance < fee:
        raise FeeUnpayable(f"balance {balance} wei < fee {fee} wei")
    balances[sender] = balance - fee
    return fee
