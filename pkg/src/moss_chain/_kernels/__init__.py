"""Hot kernels with a compiled backend and a pure-Python fallback.

The compiled module is used when it imported successfully and the inputs fit
its 64-bit arithmetic; set ``MOSS_CHAIN_PURE_PYTHON=1`` to force the
fallback everywhere.
"""

from __future__ import annotations

import os

from . import _match_py
from ._match_py import MATCH, UNDERFUNDED

try:
    from . import _match as _match_ext
except ImportError:  # extension not built
    _match_ext = None

if os.environ.get("MOSS_CHAIN_PURE_PYTHON", "") not in ("", "0"):
    _match_ext = None

BACKEND = "cython" if _match_ext is not None else "python"

# price * amount must stay below 2**63 in the compiled loop.
_EXT_LIMIT = 2**31
_BUDGET_CAP = 2**62

match_books_py = _match_py.match_books
match_books_ext = _match_ext.match_books if _match_ext is not None else None


def match_books(ask_prices, ask_bw, bid_prices, bid_bw, bid_budget):
    if (
        match_books_ext is not None
        and all(0 <= v < _EXT_LIMIT for seq in (ask_prices, ask_bw, bid_prices, bid_bw) for v in seq)
        and all(0 <= b < _BUDGET_CAP for b in bid_budget)
    ):
        return match_books_ext(ask_prices, ask_bw, bid_prices, bid_bw, bid_budget)
    return match_books_py(ask_prices, ask_bw, bid_prices, bid_bw, bid_budget)


__all__ = ["BACKEND", "MATCH", "UNDERFUNDED", "match_books", "match_books_py", "match_books_ext"]
