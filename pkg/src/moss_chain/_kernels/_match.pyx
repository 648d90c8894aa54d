# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled double-auction matching loop; same contract as ``_match_py``."""

from libc.stdlib cimport malloc, free

MATCH = 0
UNDERFUNDED = 1


def match_books(ask_prices, ask_bw, bid_prices, bid_bw, bid_budget):
    cdef Py_ssize_t m = len(ask_prices), n = len(bid_prices)
    cdef Py_ssize_t i = 0, j = 0, k
    cdef long long price, amount, cost
    cdef long long *ap = <long long *> malloc((m + 1) * sizeof(long long))
    cdef long long *al = <long long *> malloc((m + 1) * sizeof(long long))
    cdef long long *bp = <long long *> malloc((n + 1) * sizeof(long long))
    cdef long long *bl = <long long *> malloc((n + 1) * sizeof(long long))
    cdef long long *bb = <long long *> malloc((n + 1) * sizeof(long long))
    if not (ap and al and bp and bl and bb):
        free(ap); free(al); free(bp); free(bl); free(bb)
        raise MemoryError()
    steps = []
    try:
        for k in range(m):
            ap[k] = ask_prices[k]
            al[k] = ask_bw[k]
        for k in range(n):
            bp[k] = bid_prices[k]
            bl[k] = bid_bw[k]
            bb[k] = bid_budget[k]
        while True:
            while i < m and al[i] <= 0:
                i += 1
            while j < n and bl[j] <= 0:
                j += 1
            if i >= m or j >= n or bp[j] < ap[i]:
                break
            price = (ap[i] + bp[j]) // 2
            amount = al[i] if al[i] < bl[j] else bl[j]
            cost = price * amount
            if bb[j] < cost:
                steps.append((UNDERFUNDED, i, j, amount, price))
                bl[j] = 0
                continue
            bb[j] -= cost
            al[i] -= amount
            bl[j] -= amount
            steps.append((MATCH, i, j, amount, price))
        ask_left = [al[k] for k in range(m)]
        bid_left = [bl[k] for k in range(n)]
    finally:
        free(ap); free(al); free(bp); free(bl); free(bb)
    return steps, ask_left, bid_left
