"""Command-line driver: ``moss-chain run <config>`` and ``moss-chain verify <chain>``.

Exit codes: 0 all auditors passed, 1 run diverged or verification failed,
2 bad config or unreadable chain file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .gas import parse_gwei
from .ledger import CorruptFile
from .scenario import (
    ConfigInvalid,
    ScenarioDiverged,
    VerificationFailed,
    load_scenario,
    run_scenario,
    verify_chain,
    write_artifacts,
)

log = logging.getLogger("moss_chain")


def _gwei(text: str) -> str:
    try:
        parse_gwei(text)
    except (ValueError, ArithmeticError) as exc:
        raise argparse.ArgumentTypeError(f"bad gas price {text!r}: {exc}") from None
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moss-chain", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario through consensus and settle it")
    run.add_argument("config", help="scenario YAML path or bundled name (paper_table2, empty, fuzz_template)")
    run.add_argument("--seed", type=int, help="consensus network seed (overrides the config)")
    run.add_argument("--report", type=Path, help="settlement report path (default <out-dir>/report.txt)")
    run.add_argument("--log-format", choices=("jsonl", "text"), default="jsonl",
                     help="event log format")
    run.add_argument("--gas-price", type=_gwei, metavar="GWEI", help="gas price override, e.g. 4.3")
    run.add_argument("--out-dir", type=Path, help="artifact directory (default ./moss-out/<name>)")

    verify = sub.add_parser("verify", help="re-verify a chain file and replay its state")
    verify.add_argument("chain", type=Path)
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.config, seed=args.seed, gas_price=args.gas_price)
    except ConfigInvalid as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    try:
        outcome = run_scenario(scenario)
    except ScenarioDiverged as exc:
        print(f"scenario diverged: {exc}", file=sys.stderr)
        return 1
    out_dir = args.out_dir or Path("moss-out") / scenario.name
    paths = write_artifacts(outcome, out_dir, args.report, args.log_format)
    log.info("run finished in %.3fs", outcome.elapsed_s)
    print(paths["report"].read_text(), end="")
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    try:
        chain, executor = verify_chain(args.chain)
    except FileNotFoundError:
        print(f"no such file: {args.chain}", file=sys.stderr)
        return 2
    except VerificationFailed as exc:
        print(json.dumps({"ok": False, "height": exc.height, "reason": exc.reason}))
        return 1
    except CorruptFile as exc:
        print(json.dumps({"ok": False, "error": "CorruptFile", "reason": str(exc)}))
        return 2
    print(json.dumps({"ok": True, "height": chain.height, "head_digest": chain.head_digest.hex(),
                      "state_digest": executor.state_digest()}))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    return cmd_run(args) if args.command == "run" else cmd_verify(args)


if __name__ == "__main__":
    sys.exit(main())
