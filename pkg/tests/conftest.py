import pytest

from moss_chain.contract import MossContract
from moss_chain.crypto import KeyPair

ETH = 10**18

ADMIN = b"\xad" * 20
OP = {i: bytes([i]) * 20 for i in range(1, 7)}

# (role, bandwidth MHz, price Gwei/MHz) for OP1..OP6
TABLE2 = {
    1: ("seller", 20, 2_000_000),
    2: ("seller", 10, 1_600_000),
    3: ("seller", 15, 2_400_000),
    4: ("buyer", 10, 1_500_000),
    5: ("buyer", 12, 2_500_000),
    6: ("buyer", 8, 1_800_000),
}

T0, T_BID, T_FREE = 1000, 600, 600


def fresh_contract() -> MossContract:
    return MossContract.deploy(ADMIN, T_BID, T_FREE, T0, ADMIN)


def registered_contract(orders=TABLE2, deposit=ETH) -> MossContract:
    c = fresh_contract()
    for i, (role, bw, price) in orders.items():
        c.bid_or_ask_submit(OP[i], role, bw, price, deposit, T0 + 10)
    return c


def auctioned_contract() -> MossContract:
    c = registered_contract()
    assert c.registration_end(T0 + T_BID + 1).value
    c.sort_ask_by_increase(ADMIN)
    c.sort_bid_by_decrease(ADMIN)
    c.double_auction(ADMIN)
    return c


@pytest.fixture
def admin_key():
    return KeyPair.from_seed("admin", "hmac-sha256")
