"""Reference double-auction matcher used to cross-check the contract.

Deliberately naive and self-contained: it shares no code with the contract
or the matching kernels. Both-heads-exhausted removes both orders and the
deal price is the floored midpoint, matching the contract's conventions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable


@dataclass
class OracleInstance:
    asks: list[tuple[int, int, Hashable]] = field(default_factory=list)  # (price, bandwidth, tag)
    bids: list[tuple[int, int, Hashable]] = field(default_factory=list)


def _insertion_sort(rows, descending):
    out = []
    for row in rows:
        pos = len(out)
        # walk left past strictly worse prices only, so ties keep arrival order
        while pos > 0 and (out[pos - 1][0] < row[0] if descending else out[pos - 1][0] > row[0]):
            pos -= 1
        out.insert(pos, row)
    return out


def oracle_match(instance: OracleInstance) -> list[tuple[Hashable, Hashable, int, int]]:
    asks = [[p, b, t] for p, b, t in _insertion_sort(instance.asks, descending=False)]
    bids = [[c, w, t] for c, w, t in _insertion_sort(instance.bids, descending=True)]
    asks = [a for a in asks if a[1] > 0]
    bids = [b for b in bids if b[1] > 0]
    result = []
    while len(bids) != 0 and len(asks) != 0 and bids[0][0] >= asks[0][0]:
        p1, b1, seller = asks[0]
        c1, w1, buyer = bids[0]
        deal_price = (p1 + c1) // 2
        deal_amount = b1 if b1 < w1 else w1
        result.append((seller, buyer, deal_amount, deal_price))
        asks[0][1] = b1 - deal_amount
        bids[0][1] = w1 - deal_amount
        if bids[0][1] == 0:
            bids.pop(0)
        if asks[0][1] == 0:
            asks.pop(0)
    return result
