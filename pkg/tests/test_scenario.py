import copy
import json
import subprocess
import sys

import pytest

from moss_chain.cli import main
from moss_chain.contract import EventKind, Stage
from moss_chain.ledger import CorruptFile
from moss_chain.scenario import (
    ConfigInvalid,
    ScenarioDiverged,
    VerificationFailed,
    events_jsonl,
    fuzz_scenario,
    load_raw,
    load_scenario,
    parse_scenario,
    report_dict,
    run_scenario,
    settlement_report,
    verify_chain,
    write_artifacts,
)

ETH = 10**18


@pytest.fixture(scope="module")
def golden():
    return run_scenario(load_scenario("paper_table2"))


@pytest.fixture
def raw():
    r = copy.deepcopy(load_raw("paper_table2"))
    r["signature_scheme"] = "hmac-sha256"
    return r


def named(outcome):
    return [(outcome.name(m.seller), outcome.name(m.buyer), m.amount_mhz, m.unit_price_gwei, m.stage)
            for m in outcome.matches]


class TestGolden:
    def test_matches(self, golden):
        assert named(golden) == [
            ("OP2", "OP5", 10, 2_050_000, Stage.AUCTION),
            ("OP1", "OP5", 2, 2_250_000, Stage.AUCTION),
            ("OP1", "OP6", 8, 1_800_000, Stage.FREE_MARKET),
        ]

    def test_op2_rejected_with_invalid_op(self, golden):
        assert [(a.actor, a.action, r.error) for a, r in golden.rejections] == [("OP2", "withdraw", "InvalidOp")]

    def test_op1_ends_above_100_eth(self, golden):
        op1 = next(a for a, n in golden.names.items() if n == "OP1")
        assert golden.executor.balances[op1] > 100 * ETH

    def test_op5_withdraws_auction_residual(self, golden):
        (w,) = [e for e in golden.executor.events()
                if e.kind is EventKind.LOG_WITHDRAW and golden.name(e.payload["address"]) == "OP5"]
        assert w.payload["amount"] == 975 * 10**15

    def test_chain_is_deploy_block_plus_call_blocks(self, golden):
        blocks = golden.chain.blocks
        assert [tx.function_id.name for tx in blocks[1].transactions] == ["DEPLOY"]
        assert all(b.transactions for b in blocks[1:])

    def test_report_mentions_every_deal_once(self, golden):
        report = settlement_report(golden)
        deals = [e for e in golden.executor.events() if e.kind is EventKind.LOG_DEAL_RECORD]
        rows = [line for line in report.splitlines() if line.strip().startswith(("auction", "free_market"))]
        assert len(rows) == len(deals) == 3
        for d, row in zip(deals, rows):
            assert golden.name(d.payload["seller"]) in row and str(d.payload["price"]) in row
        assert "InvalidOp" in report and golden.state_digest in report

    def test_report_dict(self, golden):
        d = report_dict(golden)
        assert d["punished"] == ["OP2"]
        assert len(d["matches"]) == 3


def test_empty_scenario():
    out = run_scenario(load_scenario("empty"))
    assert out.matches == []
    assert out.chain.height == 1
    assert "(none)" in settlement_report(out)


def test_network_seed_does_not_change_settlement(raw):
    a = run_scenario(parse_scenario(raw, seed=1))
    b = run_scenario(parse_scenario(raw, seed=2))
    assert a.trace != b.trace
    assert settlement_report(a) == settlement_report(b)


def test_gas_price_override(raw):
    cheap = run_scenario(parse_scenario(raw, gas_price="1"))
    dear = run_scenario(parse_scenario(raw, gas_price="4.3"))
    assert cheap.executor.fees_collected * 43 == dear.executor.fees_collected * 10


class TestConfigInvalid:
    def problems(self, raw):
        with pytest.raises(ConfigInvalid) as exc:
            parse_scenario(raw)
        return exc.value.problems

    def test_timing(self, raw):
        raw["timing"]["t1_offset"] = 500
        raw["timing"]["te"] = 1000
        probs = self.problems(raw)
        assert any("t0 + t_bid < t1" in p for p in probs)
        assert any("tb < te" in p for p in probs)

    def test_seller_bandwidth_constraint(self, raw):
        raw["operators"][0]["required_bandwidth_mhz"] = 25
        assert any(p.startswith("operators[0]") for p in self.problems(raw))

    def test_missing_field(self, raw):
        del raw["operators"][3]["price_gwei"]
        assert "operators[3].price_gwei: missing" in self.problems(raw)

    def test_unknown_actor_and_action(self, raw):
        raw["script"].append({"at": 3000, "actor": "OP9", "action": "dance"})
        probs = self.problems(raw)
        assert any("actor: unknown" in p for p in probs) and any("action: unknown" in p for p in probs)

    def test_unknown_target(self, raw):
        raw["script"].append({"at": 3000, "actor": "OP6", "action": "purchase", "target": "OP7",
                              "price_gwei": 1, "bandwidth_mhz": 1})
        assert "script[22].target: unknown 'OP7'" in self.problems(raw)

    def test_script_time_order(self, raw):
        raw["script"].append({"at": 5, "actor": "admin", "action": "market_end"})
        assert any("non-decreasing" in p for p in self.problems(raw))

    def test_version(self, raw):
        raw["format_version"] = 2
        assert any(p.startswith("format_version") for p in self.problems(raw))

    def test_collects_all_problems(self, raw):
        raw["format_version"] = 0
        raw["operators"][0]["role"] = "broker"
        assert len(self.problems(raw)) == 2


class TestDiverged:
    def test_unexpected_revert(self, raw):
        raw["script"].insert(1, {"at": 5, "actor": "OP1", "action": "submit", "deposit_eth": "0.5"})
        with pytest.raises(ScenarioDiverged, match="InsufficientDeposit"):
            run_scenario(parse_scenario(raw))

    def test_expected_failure_that_succeeds(self, raw):
        raw["script"][-1]["expect"] = "InvalidOp"
        with pytest.raises(ScenarioDiverged, match="expected InvalidOp"):
            run_scenario(parse_scenario(raw))

    def test_stalled_primary(self, raw):
        raw["consensus"]["behaviors"] = {0: "silent"}
        with pytest.raises(ScenarioDiverged):
            run_scenario(parse_scenario(raw))

    def test_allow_reverts(self, raw):
        raw["script"].insert(1, {"at": 5, "actor": "OP1", "action": "delete"})
        raw["allow_reverts"] = True
        out = run_scenario(parse_scenario(raw))
        assert ("OP1", "delete") in [(a.actor, a.action) for a, _ in out.rejections]


class TestVerify:
    def test_round_trip_digest(self, golden, tmp_path):
        paths = write_artifacts(golden, tmp_path)
        chain, executor = verify_chain(paths["chain"])
        assert executor.state_digest() == golden.state_digest
        assert chain.head_digest == golden.chain.head_digest

    def test_flipped_byte(self, golden, tmp_path):
        p = write_artifacts(golden, tmp_path)["chain"]
        data = bytearray(p.read_bytes())
        data[len(data) // 2] ^= 0x40
        p.write_bytes(bytes(data))
        with pytest.raises(VerificationFailed) as exc:
            verify_chain(p)
        assert 0 <= exc.value.height <= golden.chain.height

    def test_truncated(self, golden, tmp_path):
        p = write_artifacts(golden, tmp_path)["chain"]
        p.write_bytes(p.read_bytes()[:-10])
        with pytest.raises(CorruptFile):
            verify_chain(p)


def test_event_log_is_json_lines(golden):
    lines = [json.loads(x) for x in events_jsonl(golden.executor).splitlines()]
    kinds = [x["kind"] for x in lines]
    assert kinds.count("LogRegisterOp") == 6 and kinds.count("LogDealRecord") == 3
    assert kinds.count("LogFreeMarketOrder") == 1


def test_fuzz_generator_is_deterministic():
    assert fuzz_scenario(3) == fuzz_scenario(3)
    assert fuzz_scenario(3) != fuzz_scenario(4)
    parse_scenario(fuzz_scenario(3))


class TestCli:
    def test_run_and_verify(self, tmp_path, capsys):
        report = tmp_path / "settle.txt"
        assert main(["run", "paper_table2", "--seed", "5", "--out-dir", str(tmp_path),
                     "--report", str(report), "--log-format", "jsonl", "--gas-price", "4.3"]) == 0
        assert "OP1" in report.read_text()
        assert (tmp_path / "events.jsonl").exists() and (tmp_path / "trace.jsonl").exists()
        capsys.readouterr()
        assert main(["verify", str(tmp_path / "chain.bin")]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["ok"] and out["height"] == 11

    def test_text_log(self, tmp_path):
        assert main(["run", "empty", "--out-dir", str(tmp_path), "--log-format", "text"]) == 0
        assert (tmp_path / "events.txt").exists()

    def test_bad_config_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("format_version: 1\ntiming: {}\n")
        assert main(["run", str(bad), "--out-dir", str(tmp_path)]) == 2
        assert "timing.t0: missing" in capsys.readouterr().err

    def test_missing_config_exit_2(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.yaml")]) == 2

    def test_diverged_exit_1(self, raw, tmp_path):
        raw["script"][-1]["expect"] = "InvalidOp"
        cfg = tmp_path / "s.yaml"
        import yaml
        cfg.write_text(yaml.safe_dump(raw))
        assert main(["run", str(cfg), "--out-dir", str(tmp_path)]) == 1

    def test_verify_failures(self, tmp_path, capsys):
        main(["run", "empty", "--out-dir", str(tmp_path)])
        chain = tmp_path / "chain.bin"
        data = bytearray(chain.read_bytes())
        data[-3] ^= 1
        chain.write_bytes(bytes(data))
        assert main(["verify", str(chain)]) == 1
        chain.write_bytes(b"junk")
        assert main(["verify", str(chain)]) == 2
        assert main(["verify", str(tmp_path / "missing.bin")]) == 2

    def test_bad_gas_price_flag(self):
        with pytest.raises(SystemExit):
            main(["run", "empty", "--gas-price", "abc"])

    def test_console_script(self, tmp_path):
        out = subprocess.run([sys.executable, "-m", "moss_chain.cli", "run", "empty",
                              "--out-dir", str(tmp_path)], capture_output=True, text=True)
        assert out.returncode == 0, out.stderr
