import json
import re
from pathlib import Path

import pytest

from rxint import cli

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def run_cli(*argv):
    return cli.main(list(argv))


class TestRun:
    def test_run_writes_results_and_exits_zero(self, tmp_path, capsys):
        code = run_cli(
            "run", str(SCENARIOS / "workflow_manual_map.scn"), "--out", str(tmp_path / "out")
        )
        out = capsys.readouterr().out
        assert code == 0
        assert (tmp_path / "out" / "result.json").is_file()
        assert (tmp_path / "out" / "stats.json").is_file()
        assert (tmp_path / "out" / "export_snapshot.json").is_file()
        detections = [
            json.loads(line.split(" ", 1)[1])
            for line in out.splitlines()
            if line.startswith("DETECTION ")
        ]
        assert any(d["heuristic"] == "H1_NEW_PRIVATE_EXEC" for d in detections)

    def test_missing_scenario_exits_two(self, capsys):
        assert run_cli("run", "missing.scn") == 2
        assert "missing.scn" in capsys.readouterr().err

    def test_expected_mismatch_exits_one(self, tmp_path, capsys):
        bad = tmp_path / "bad.scn"
        bad.write_text(
            "name: bad\n"
            "horizon: 300\n"
            "fixtures:\n"
            "  - {name: ntdll.dll, builtin: true}\n"
            "setup:\n"
            "  - {op: load, fixture: ntdll.dll}\n"
            "monitor: {poll_interval: 100, detectors: [rx]}\n"
            "actions:\n"
            "  - {at: 10, op: alloc, size: 0x1000, protection: rw}\n"
            "expected: {rx: Detected}\n"
        )
        assert run_cli("run", str(bad), "--out", str(tmp_path / "out")) == 1


class TestMatrix:
    def test_matrix_matches_and_prints_table(self, capsys):
        assert run_cli("matrix") == 0
        out = capsys.readouterr().out
        assert "module_stomping" in out
        assert out.count("CELL ") == 8
        assert "matrix matches the expected outcomes" in out


class TestSweep:
    def test_sweep_prints_rates(self, capsys):
        assert run_cli("sweep", str(SCENARIOS / "toctou.scn"), "--samples", "25") == 0
        out = capsys.readouterr().out
        assert "rx: 100.0%" in out
        match = re.search(r"SWEEP_RESULT (\{.*\})", out)
        payload = json.loads(match.group(1))
        assert payload["samples"] == 25
        assert payload["hits"]["rx"] == 25


class TestResolveAndStats:
    def test_resolve_round_trips_a_dump(self, tmp_path, capsys):
        out_dir = tmp_path / "out"
        assert run_cli("run", str(SCENARIOS / "workflow_manual_map.scn"), "--out", str(out_dir)) == 0
        first = capsys.readouterr().out
        dump = next(
            line.split(" ", 1)[1]
            for line in first.splitlines()
            if line.startswith("ARTIFACT ") and line.endswith(".bin")
        )
        code = run_cli(
            "resolve",
            dump,
            "--base",
            "0x7FFBFBBE1000",
            "--snapshot",
            str(out_dir / "export_snapshot.json"),
        )
        out = capsys.readouterr().out
        assert code == 0
        assert out.splitlines()[0].startswith("RX-INT IMPORT ANALYSIS ")
        assert "user32.dll!MessageBoxW" in out
        assert out.rstrip().endswith("RESOLVED: 1")

    def test_stats_reads_run_output(self, tmp_path, capsys):
        out_dir = tmp_path / "out"
        run_cli("run", str(SCENARIOS / "workflow_manual_map.scn"), "--out", str(out_dir))
        capsys.readouterr()
        assert run_cli("stats", "--out", str(out_dir)) == 0
        out = capsys.readouterr().out
        assert "baseline_bytes" in out and "detections: 2" in out

    def test_stats_without_runs_exits_two(self, tmp_path, capsys, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert run_cli("stats") == 2


class TestUsage:
    def test_no_command_exits_two(self, capsys):
        with pytest.raises(SystemExit) as info:
            run_cli()
        assert info.value.code == 2

    def test_unknown_command_exits_two(self, capsys):
        with pytest.raises(SystemExit) as info:
            run_cli("explode")
        assert info.value.code == 2
