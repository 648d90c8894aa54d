from decimal import Decimal
from fractions import Fraction

import pytest

from moss_chain.gas import (
    DEFAULT_GAS,
    PUBLISHED_ROWS,
    FeeUnpayable,
    GasSchedule,
    charge,
    ether_cost,
    parse_gwei,
    wei_to_ether,
)

ETH = 10**18
A = b"\x01" * 20


def rel_err(gas: int, printed: Decimal) -> float:
    exact = wei_to_ether(ether_cost(gas, "4.3"))
    return abs(float(exact - Fraction(printed)) / float(printed))


def test_double_auction_cost():
    assert wei_to_ether(ether_cost(368357, "4.3")) == Fraction("0.0015839351")


def test_registration_end_cost():
    assert wei_to_ether(ether_cost(21799, "4.3")) == Fraction("0.0000937357")


def test_zero_gas_costs_nothing():
    assert ether_cost(0) == 0


def test_cost_is_exact_wei():
    assert ether_cost(1, "4.3") == 4_300_000_000


@pytest.mark.parametrize("row", [r for r in PUBLISHED_ROWS if r.consistent], ids=lambda r: r.function)
def test_consistent_rows_within_printed_precision(row):
    for gas, printed in zip(row.gas, row.printed_ether):
        assert rel_err(gas, printed) < 1e-4


@pytest.mark.parametrize("row", [r for r in PUBLISHED_ROWS if not r.consistent], ids=lambda r: r.function)
def test_flagged_rows_are_really_off(row):
    assert any(rel_err(g, p) >= 1e-4 for g, p in zip(row.gas, row.printed_ether))


def test_thirteen_of_fifteen_rows_consistent():
    assert len(PUBLISHED_ROWS) == 15
    assert sum(r.consistent for r in PUBLISHED_ROWS) == 13


def test_schedule_matches_published_gas():
    for row in PUBLISHED_ROWS:
        keys = ["orderResponse.buyer", "orderResponse.seller"] if row.function == "orderResponse" else [row.function]
        assert tuple(DEFAULT_GAS[k] for k in keys) == row.gas


class TestCharge:
    def test_submit_leaves_roughly_98_99_eth(self):
        balances = {A: 100 * ETH}
        fee = charge(balances, A, "BidOrAskSubmit", GasSchedule())
        after_deposit = balances[A] - ETH
        assert fee == 216416 * 4_300_000_000
        assert abs(after_deposit / ETH - 98.99) < 0.01

    def test_zero_cost_entry_leaves_balance(self):
        schedule = GasSchedule().with_overrides({"MarketEnd": 0})
        balances = {A: 5}
        assert charge(balances, A, "MarketEnd", schedule) == 0
        assert balances[A] == 5

    def test_repeated_polls_charge_each_time(self):
        schedule = GasSchedule()
        balances = {A: ETH}
        for _ in range(7):
            charge(balances, A, "MarketEnd", schedule)
        assert balances[A] == ETH - 7 * 21776 * 4_300_000_000

    def test_unpayable(self):
        balances = {A: 10}
        with pytest.raises(FeeUnpayable):
            charge(balances, A, "withdraw", GasSchedule())
        assert balances[A] == 10


class TestSchedule:
    def test_payload_round_trip(self):
        s = GasSchedule().with_overrides({"deploy": 1}, "2.5")
        assert GasSchedule.from_payload(s.to_payload()) == s

    def test_rejects_sub_wei_price(self):
        with pytest.raises(ValueError):
            GasSchedule(gas_price_gwei=Fraction(1, 10**10))

    def test_rejects_unknown_override(self):
        with pytest.raises(ValueError):
            GasSchedule().with_overrides({"nope": 1})

    def test_parse_gwei_is_exact(self):
        assert parse_gwei("4.3") == Fraction(43, 10)
        assert parse_gwei(4.3) == Fraction(43, 10)
