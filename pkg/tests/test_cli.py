import json
import subprocess
import sys

import pytest

from cimsim.cli import SCHEDULE_CSV_HEADER, main
from cimsim.costmodel import DataflowKind, MatmulDims, TileDims, dram_access
from cimsim.nonlinear import lut_from_csv


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_cost_matches_library(capsys):
    code, out, err = run_cli(capsys, "cost", "64", "64", "64",
                             "--tile", "16", "16", "16", "--oracle")
    assert code == 0 and err == ""
    payload = json.loads(out)
    expected = dram_access(MatmulDims(64, 64, 64), TileDims(16, 16, 16),
                           DataflowKind.WS_OCS)
    assert payload["counts"] == expected.as_dict()
    assert payload["oracle_match"] is True
    assert payload["metadata"]["seed"] == 0


def test_cost_warm_start_drops_first_stripe(capsys):
    _, cold, _ = run_cli(capsys, "cost", "64", "64", "64",
                         "--tile", "16", "16", "16")
    _, warm, _ = run_cli(capsys, "cost", "64", "64", "64",
                         "--tile", "16", "16", "16", "--warm-start")
    delta = (json.loads(cold)["counts"]["input_elems"]
             - json.loads(warm)["counts"]["input_elems"])
    assert delta == 16 * 64


def test_cost_oracle_guard(capsys):
    code, _, err = run_cli(capsys, "cost", "512", "512", "512", "--oracle")
    assert code == 1
    assert "too large" in err


def test_cost_bad_dataflow(capsys):
    code, _, err = run_cli(capsys, "cost", "8", "8", "8",
                           "--dataflow", "sideways")
    assert code == 1
    assert "unknown dataflow" in err


def test_usage_error_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["cost", "8", "8"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["schedule"])  # --phase is required
    assert exc.value.code == 2


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


def test_schedule_csv_shape(capsys):
    code, out, _ = run_cli(capsys, "schedule", "--phase", "decode",
                           "--format", "csv")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == SCHEDULE_CSV_HEADER
    assert len(lines) == 11  # ten GEMM groups
    q = lines[1].split(",")
    assert q[0] == "q_proj"
    assert [int(v) for v in q[1:4]] == [1, 4096, 4096]
    assert int(q[8]) == 32 * 1024  # roofline cycles for the group


def test_schedule_json_feature_toggles(capsys):
    _, out, _ = run_cli(capsys, "schedule", "--phase", "decode")
    base = json.loads(out)
    assert base["total_cycles"] == 436_032
    _, out, _ = run_cli(capsys, "schedule", "--phase", "decode", "--no-rcw")
    serial = json.loads(out)
    assert serial["total_cycles"] == 436_032 + 403_264
    assert serial["pipeline"] == "serialized"


def test_schedule_output_is_deterministic(capsys):
    _, first, _ = run_cli(capsys, "schedule", "--phase", "prefill")
    _, second, _ = run_cli(capsys, "schedule", "--phase", "prefill")
    assert first == second


def test_config_file_and_flag_precedence(capsys, tmp_path):
    cfg = tmp_path / "chip.cfg"
    cfg.write_text("freq_mhz = 200  # doubled clock\ndram_efficiency = 0.87\n")
    _, out, _ = run_cli(capsys, "schedule", "--phase", "decode",
                        "--config", str(cfg))
    doubled = json.loads(out)
    assert doubled["compute_seconds"] == pytest.approx(436_032 / 2e8)
    assert doubled["dram_seconds"] == pytest.approx(3_303_538_688 / 89.088e9)
    _, out, _ = run_cli(capsys, "schedule", "--phase", "decode",
                        "--config", str(cfg), "--dram-efficiency", "1.0")
    assert json.loads(out)["dram_seconds"] == pytest.approx(
        3_303_538_688 / 102.4e9)


def test_config_file_rejects_unknown_key(capsys, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("warp_factor = 9\n")
    code, _, err = run_cli(capsys, "schedule", "--phase", "decode",
                           "--config", str(cfg))
    assert code == 1
    assert "unknown key" in err


def test_reproduce_all_passes(capsys):
    code, out, _ = run_cli(capsys, "reproduce", "all")
    assert code == 0
    assert "FAIL" not in out
    # ungated reference rows are reported but never gate the exit code
    assert out.count("INFO") == 4


def test_reproduce_json_gates_and_rows(capsys):
    code, out, _ = run_cli(capsys, "reproduce", "all", "--format", "json")
    assert code == 0
    payload = json.loads(out)
    assert payload["metadata"]["dram_efficiency"] == 0.87
    by_name = {r["quantity"]: r for r in payload["rows"]}
    assert by_name["update_reduction_vs_ws_os"]["simulated"] == 0.875
    assert by_name["decode_tokens_per_s"]["status"] == "PASS"
    fig9a = [r for r in payload["rows"] if r["figure"] == "fig9a"]
    assert fig9a and all(r["status"] == "INFO" for r in fig9a)


def test_reproduce_detects_misses(capsys):
    # halving channel utilization drops decode throughput out of tolerance
    code, out, _ = run_cli(capsys, "reproduce", "table2",
                           "--dram-efficiency", "0.5")
    assert code == 1
    assert "FAIL" in out


def test_reproduce_byte_identical(capsys):
    _, first, _ = run_cli(capsys, "reproduce", "all", "--format", "json")
    _, second, _ = run_cli(capsys, "reproduce", "all", "--format", "json")
    assert first == second


def test_nonlinear_report(capsys, tmp_path):
    dump = tmp_path / "exp_lut.csv"
    code, out, _ = run_cli(capsys, "nonlinear", "--dump-lut", str(dump))
    assert code == 0
    payload = json.loads(out)
    assert payload["max_abs_error"] == pytest.approx(2.1322688755737174e-3,
                                                     rel=1e-9)
    assert payload["monotone"] is True
    assert payload["softmax_row"]["baseline_cycles"] == 928
    assert payload["rmsnorm_row"]["fused_cycles"] == 768
    table = lut_from_csv(dump.read_text())
    assert len(table.segments) == 64


def test_nonlinear_minimax_smaller_error(capsys):
    _, endpoint, _ = run_cli(capsys, "nonlinear")
    _, minimax, _ = run_cli(capsys, "nonlinear", "--method", "minimax")
    assert (json.loads(minimax)["max_abs_error"]
            < json.loads(endpoint)["max_abs_error"])


def test_trace_reference_tile(capsys):
    args = ["trace", "--m", "10", "--n", "10", "--k", "8",
            "--precision", "int8", "--next-rows", "30"]
    _, out, _ = run_cli(capsys, *args, "--mode", "serialized")
    serial = json.loads(out)
    assert serial["total_cycles"] == 131
    _, out, _ = run_cli(capsys, *args, "--mode", "rcw")
    rcw = json.loads(out)
    assert rcw["total_cycles"] == 101
    assert rcw["output_sum"] == serial["output_sum"]


def test_trace_csv_events(capsys):
    code, out, _ = run_cli(capsys, "trace", "--format", "csv",
                           "--next-rows", "8")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "cycle,bank,event,duration"
    kinds = {ln.split(",")[2] for ln in lines[1:]}
    assert {"latch", "mac", "update_hidden"} <= kinds


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "cimsim.cli",
                           "reproduce", "fig7b", "--format", "json"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["rows"][0]["status"] == "PASS"
