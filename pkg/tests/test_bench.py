import csv
import io
import json
import subprocess
import sys
from collections import Counter

import pytest

from fabsp.bench import RunStats, build_configs, emit_report, main, parse_args, run_benchmark
from fabsp.miniapps import APP_NAMES
from fabsp.miniapps.common import gen_indices

SMALL = ["--updates-per-pe", "200", "--table-per-pe", "20", "--reads-per-pe", "200", "--rows-per-pe", "30",
         "--nnz-per-row", "4", "--elements-per-pe", "50"]


def test_parse_example():
    a = parse_args(["--app", "histogram", "--pes", "8", "--updates-per-pe", "100000"])
    assert (a.app, a.pes, a.updates_per_pe) == ("histogram", 8, 100000)
    assert (a.buffer_items, a.ring_capacity, a.seed, a.validate) == (1024, 64, 0, "on")


def test_defaults_and_env(monkeypatch):
    monkeypatch.delenv("FABSP_PES", raising=False)
    assert parse_args(["--app", "ig"]).pes == 4
    monkeypatch.setenv("FABSP_PES", "3")
    assert parse_args(["--app", "ig"]).pes == 3
    assert parse_args(["--app", "ig", "--pes", "2"]).pes == 2


@pytest.mark.parametrize("argv", [[], ["--app", "ig", "--pes", "0"], ["--app", "bogus"],
                                  ["--app", "ig", "--frobnicate"], ["--app", "ig", "--format", "xml"],
                                  ["--app", "ig", "--buffer-items", "0"], ["--app", "ig", "--rows-per-pe", "-1"]])
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as ei:
        parse_args(argv)
    assert ei.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_bad_env_is_usage_error(monkeypatch):
    monkeypatch.setenv("FABSP_PES", "zero")
    with pytest.raises(SystemExit) as ei:
        parse_args(["--app", "ig"])
    assert ei.value.code == 2


def test_missing_app_lists_apps(capsys):
    with pytest.raises(SystemExit):
        parse_args([])
    err = capsys.readouterr().err
    assert all(a in err for a in APP_NAMES)


def test_json_report_round_trips(capsys):
    assert main(["--app", "histogram", "--pes", "2", *SMALL]) == 0
    line = capsys.readouterr().out.strip()
    d = json.loads(line)
    assert d["valid"] is True and d["app"] == "histogram"
    st = RunStats.from_dict(d)
    assert json.loads(emit_report([st], "json")) == d
    assert list(d) == ["app", "pes", "sizes", "seed", "wall_time_seconds", "items_sent_total",
                       "frames_sent_total", "aggregation_ratio", "valid", "checksum", "rounds"]


def test_all_emits_seven_in_order(capsys):
    assert main(["--app", "all", "--pes", "2", "--format", "csv", *SMALL]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["app"] for r in rows] == list(APP_NAMES)
    assert rows[0]["app"] == "histogram" and rows[-1]["app"] == "triangles"
    assert all(r["valid"] == "True" for r in rows)
    assert rows[APP_NAMES.index("randperm")]["rounds"] != ""


def test_human_table(capsys):
    assert main(["--app", "ig", "--pes", "1", "--format", "human", *SMALL]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split()[:2] == ["app", "pes"] and lines[1].startswith("ig")


def test_ratio_at_least_one_when_items_sent(capsys):
    assert main(["--app", "all", "--pes", "4", "--reads-per-pe", "1", "--updates-per-pe", "1",
                 "--rows-per-pe", "2", "--elements-per-pe", "1"]) == 0
    for line in capsys.readouterr().out.splitlines():
        d = json.loads(line)
        if d["items_sent_total"]:
            assert d["aggregation_ratio"] >= 1


def test_histogram_ratio_matches_frame_count_oracle():
    """With no backpressure every destination ships floor(n/B) full frames plus one partial."""
    P, U, T, B = 4, 100_000, 1000, 1024
    args = parse_args(["--app", "histogram", "--pes", str(P), "--updates-per-pe", str(U),
                       "--buffer-items", str(B), "--inbox-capacity", "100000"])
    st = run_benchmark(build_configs(args)[0])
    frames = 0
    for r in range(P):
        per_dest = Counter((gen_indices(0, r, U, P * T) % P).tolist())
        frames += sum(-(-n // B) for n in per_dest.values())
    assert st.frames_sent_total == frames
    assert st.aggregation_ratio == pytest.approx(P * U / frames)
    assert B / 2 <= st.aggregation_ratio <= B


def test_validity_failure_exits_1(monkeypatch, capsys):
    import fabsp.bench as bench

    real = bench.run_app

    def broken(cfg):
        rep = real(cfg)
        rep.valid = False
        return rep

    monkeypatch.setattr(bench, "run_app", broken)
    assert main(["--app", "ig", "--pes", "1", *SMALL]) == 1
    assert "failed validation" in capsys.readouterr().err
    assert main(["--app", "ig", "--pes", "1", "--validate", "off", *SMALL]) == 0


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fabsp", "--app", "triangles", "--pes", "2", *SMALL],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["valid"] is True
    bad = subprocess.run([sys.executable, "-m", "fabsp", "--nope"], capture_output=True, text=True, timeout=60)
    assert bad.returncode == 2 and bad.stdout == ""
