"""Pure-Python double-auction matching loop (reference backend)."""

from __future__ import annotations

MATCH = 0
UNDERFUNDED = 1


def match_books(ask_prices, ask_bw, bid_prices, bid_bw, bid_budget):
    """Walk sorted ask/bid books head to head.

    Asks must be price-ascending and bids price-descending. ``bid_budget`` is
    each buyer's spendable deposit in Gwei. Returns ``(steps, ask_left,
    bid_left)`` where each step is ``(kind, ask_index, bid_index, amount,
    price)``; an UNDERFUNDED step removes the bid without trading.
    """
    ask_left = list(ask_bw)
    bid_left = list(bid_bw)
    budget = list(bid_budget)
    steps = []
    i = j = 0
    m, n = len(ask_left), len(bid_left)
    while True:
        while i < m and ask_left[i] <= 0:
            i += 1
        while j < n and bid_left[j] <= 0:
            j += 1
        if i >= m or j >= n or bid_prices[j] < ask_prices[i]:
            break
        price = (ask_prices[i] + bid_prices[j]) // 2
        amount = min(ask_left[i], bid_left[j])
        cost = price * amount
        if budget[j] < cost:
            steps.append((UNDERFUNDED, i, j, amount, price))
            bid_left[j] = 0
            continue
        budget[j] -= cost
        ask_left[i] -= amount
        bid_left[j] -= amount
        steps.append((MATCH, i, j, amount, price))
    return steps, ask_left, bid_left
