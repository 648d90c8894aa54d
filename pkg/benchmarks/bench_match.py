"""Compare the compiled and pure-Python double-auction kernels.

    python benchmarks/bench_match.py [--orders 2000] [--repeat 5]
"""

import argparse
import random
import timeit

from moss_chain._kernels import BACKEND, match_books_ext, match_books_py


def make_books(n: int, seed: int = 0):
    rng = random.Random(seed)
    asks = sorted((rng.randint(1, 3_000_000), rng.randint(1, 40)) for _ in range(n))
    bids = sorted(((rng.randint(1, 3_000_000), rng.randint(1, 40)) for _ in range(n)), reverse=True)
    budgets = [rng.randint(10**6, 10**11) for _ in range(n)]
    return ([p for p, _ in asks], [b for _, b in asks], [p for p, _ in bids], [b for _, b in bids], budgets)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--orders", type=int, nargs="+", default=[8, 64, 512, 4096])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    print(f"selected backend: {BACKEND}")
    if match_books_ext is None:
        print("compiled kernel not built; only the Python timings are shown")
    print(f"{'orders/side':>12} {'python ms':>12} {'cython ms':>12} {'speedup':>9}")
    for n in args.orders:
        books = make_books(n)
        number = max(1, 20_000 // n)
        py = min(timeit.repeat(lambda: match_books_py(*books), number=number, repeat=args.repeat)) / number
        if match_books_ext is None:
            print(f"{n:>12} {py * 1e3:>12.4f} {'-':>12} {'-':>9}")
            continue
        assert match_books_ext(*books) == match_books_py(*books)
        ext = min(timeit.repeat(lambda: match_books_ext(*books), number=number, repeat=args.repeat)) / number
        print(f"{n:>12} {py * 1e3:>12.4f} {ext * 1e3:>12.4f} {py / ext:>8.1f}x")


if __name__ == "__main__":
    main()
