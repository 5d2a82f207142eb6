"""Scenario runner and CLI: file formats, reproducibility, exit semantics."""

import math

import numpy as np
import pytest

from branchbox.cli import main
from branchbox.config import config_lines, parse_config
from branchbox.runner import CSV_COLUMNS, run_scenario
from branchbox.stats import (
    coarse_entropy,
    effective_branch_count,
    ensemble_position_mean,
    ensemble_position_variance,
    position_histogram,
    tv_to_uniform,
)
from branchbox.branching import midbox_ensemble


def small_midbox(tmp_path, seed=7, steps=30):
    return parse_config("", {
        "scenario": "midbox", "steps": steps, "max_branches": 2000,
        "seed": seed, "output_dir": str(tmp_path / "out"),
    })


def read_rows(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    rows = [[float(v) for v in line.split(",")] for line in lines[1:]]
    return header, rows


# ---------------------------------------------------------------------------
# series and summary files


def test_run_writes_named_files(tmp_path):
    summary = run_scenario(small_midbox(tmp_path))
    out = tmp_path / "out"
    assert (out / "midbox_series.csv").exists()
    assert (out / "midbox_summary.txt").exists()
    assert summary.series_path == str(out / "midbox_series.csv")
    assert summary.summary_path == str(out / "midbox_summary.txt")
    assert not list(out.glob("*.tmp"))  # atomic writes leave no debris


def test_series_schema_and_length(tmp_path):
    c = small_midbox(tmp_path)
    run_scenario(c)
    header, rows = read_rows(tmp_path / "out" / "midbox_series.csv")
    assert header == list(CSV_COLUMNS)
    assert len(rows) == c.steps + 1  # initial state plus one row per step
    times = [r[0] for r in rows]
    assert times == [float(k) for k in range(c.steps + 1)]


def test_series_first_row_matches_initial_state(tmp_path):
    c = small_midbox(tmp_path)
    run_scenario(c)
    _, rows = read_rows(tmp_path / "out" / "midbox_series.csv")
    e = midbox_ensemble(c.params)
    h = position_histogram(e, c.params, c.bins)
    expected = [
        0.0, 1.0, effective_branch_count(e), ensemble_position_mean(e),
        ensemble_position_variance(e), coarse_entropy(h), tv_to_uniform(h),
    ]
    assert rows[0] == pytest.approx(expected, rel=1e-15)


def test_series_full_precision(tmp_path):
    run_scenario(small_midbox(tmp_path))
    text = (tmp_path / "out" / "midbox_series.csv").read_text()
    line = text.splitlines()[5]
    entropies = line.split(",")[5]
    # 17 significant digits survive the round trip
    assert float(entropies) == float(format(float(entropies), ".17g"))
    assert len(entropies.replace(".", "").replace("-", "").lstrip("0")) >= 16


def test_summary_format(tmp_path):
    c = small_midbox(tmp_path)
    summary = run_scenario(c)
    lines = (tmp_path / "out" / "midbox_summary.txt").read_text().splitlines()
    assert lines[0] == "# branchbox run summary"
    assert lines[1:15] == config_lines(c)
    assert "series = midbox_series.csv" in lines
    metric_keys = [
        line.split(" = ")[0].removeprefix("metric.")
        for line in lines if line.startswith("metric.")
    ]
    assert metric_keys == list(summary.metrics)
    for ch in summary.checks:
        assert f"check.{ch.name} = {'pass' if ch.passed else 'fail'}" in lines
    assert f"checks_passed = {len(summary.checks)}/{len(summary.checks)}" in lines
    assert "exit_status = 0" in lines
    # wall-clock duration stays off the files
    assert not any("duration" in line for line in lines)
    assert summary.duration_seconds > 0.0


def test_short_run_declares_no_equilibration_claims(tmp_path):
    # 30 steps cannot attest equilibration at t_eq = 8000; the runner
    # must not declare those checks rather than fail or fake them
    summary = run_scenario(small_midbox(tmp_path))
    names = [ch.name for ch in summary.checks]
    assert names == ["tag_uniqueness"]
    assert summary.passed


def test_rerun_is_byte_identical(tmp_path):
    c = small_midbox(tmp_path)
    run_scenario(c)
    series1 = (tmp_path / "out" / "midbox_series.csv").read_bytes()
    summary1 = (tmp_path / "out" / "midbox_summary.txt").read_bytes()
    run_scenario(c)
    assert (tmp_path / "out" / "midbox_series.csv").read_bytes() == series1
    assert (tmp_path / "out" / "midbox_summary.txt").read_bytes() == summary1


def test_different_seed_changes_series(tmp_path):
    run_scenario(small_midbox(tmp_path, seed=7))
    a = (tmp_path / "out" / "midbox_series.csv").read_bytes()
    run_scenario(small_midbox(tmp_path, seed=8))
    b = (tmp_path / "out" / "midbox_series.csv").read_bytes()
    assert a != b


def test_failed_check_sets_exit_status(tmp_path):
    # a freespread run starved of branches cannot hold its effective-size
    # floor; the summary must record the failure and exit status 1
    c = parse_config("", {
        "scenario": "freespread", "L": 10_000.0, "steps": 25,
        "max_branches": 50, "seed": 3, "output_dir": str(tmp_path / "bad"),
    })
    summary = run_scenario(c)
    assert not summary.passed
    by_name = {ch.name: ch for ch in summary.checks}
    assert not by_name["effective_branches"].passed
    text = (tmp_path / "bad" / "freespread_summary.txt").read_text()
    assert "exit_status = 1" in text
    assert "check.effective_branches = fail" in text


def test_unwritable_output_dir_raises(tmp_path):
    target = tmp_path / "blocked"
    target.write_text("a file, not a directory")
    c = parse_config("", {
        "scenario": "midbox", "steps": 5, "max_branches": 100,
        "output_dir": str(target),
    })
    with pytest.raises(OSError):
        run_scenario(c)


# ---------------------------------------------------------------------------
# CLI


def test_cli_runs_and_reports(tmp_path, capsys):
    code = main([
        "midbox", "--steps", "20", "--seed", "5",
        "--out", str(tmp_path / "cli"),
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert "PASS tag_uniqueness:" in out
    assert "1/1 checks passed" in out
    assert str(tmp_path / "cli" / "midbox_series.csv") in out
    assert (tmp_path / "cli" / "midbox_summary.txt").exists()


def test_cli_reads_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "scenario = midbox\nsteps = 15\nmax_branches = 500\n"
        f"output_dir = {tmp_path / 'fromfile'}\n"
    )
    code = main(["midbox", "--config", str(cfg)])
    assert code == 0
    _, rows = read_rows(tmp_path / "fromfile" / "midbox_series.csv")
    assert len(rows) == 16


def test_cli_flags_override_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("steps = 15\nmax_branches = 500\n")
    code = main([
        "midbox", "--config", str(cfg), "--steps", "8",
        "--out", str(tmp_path / "flags"),
    ])
    assert code == 0
    _, rows = read_rows(tmp_path / "flags" / "midbox_series.csv")
    assert len(rows) == 9


def test_cli_subcommand_sets_scenario(tmp_path, capsys):
    # the config file says midbox; the subcommand wins
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"scenario = midbox\noutput_dir = {tmp_path / 's'}\n")
    code = main([
        "collapse_compare", "--config", str(cfg), "--mode", "collapse",
        "--steps", "10",
    ])
    assert code == 0
    assert (tmp_path / "s" / "collapse_compare_series.csv").exists()


def test_cli_missing_config_is_usage_error(tmp_path, capsys):
    code = main(["midbox", "--config", str(tmp_path / "absent.cfg")])
    assert code == 2
    assert "cannot read config" in capsys.readouterr().err


def test_cli_config_error_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("steps = -3\n")
    code = main(["midbox", "--config", str(cfg)])
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_cli_failed_checks_exit_one(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "L = 10000\nsteps = 25\nmax_branches = 50\n"
        f"output_dir = {tmp_path / 'fail'}\n"
    )
    code = main(["freespread", "--config", str(cfg), "--seed", "3"])
    assert code == 1
    assert "FAIL effective_branches:" in capsys.readouterr().out


def test_cli_rejects_unknown_scenario(capsys):
    with pytest.raises(SystemExit):
        main(["teleport"])
