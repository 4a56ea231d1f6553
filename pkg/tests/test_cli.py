import hashlib
import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from sfperc.cli import (EXIT_USAGE, ExperimentConfig, UsageError, Writer, emit_summary,
                        main, parse_config)
from sfperc.experiments import PercolationRecord, limit_constants


def digest(folder: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(folder.iterdir())}


def test_grow_writes_stable_parent_file(tmp_path):
    args = ["grow", "--beta", "0", "--n", "5", "--trials", "1", "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    text = (tmp_path / "a" / "tree_n5_trial0.txt").read_text()
    assert len(text.splitlines()) == 5
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_usage_errors(tmp_path, capsys):
    assert main(["theorem1", "--c", "20", "--n", "100"]) == EXIT_USAGE
    assert "ln(min n) > c" in capsys.readouterr().err
    assert main(["theorem1", "--n", "1000", "--n", "100"]) == EXIT_USAGE
    assert main(["theorem1", "--trials", "0"]) == EXIT_USAGE
    assert main(["nosuch"]) == EXIT_USAGE
    assert main(["grow", "--bogus"]) == EXIT_USAGE
    assert main(["grow", "--format", "xml"]) == EXIT_USAGE
    assert main(["bp-limits", "--p", "1.0"]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["grow", "--config", str(bad)]) == EXIT_USAGE
    bad.write_text('{"colour": 1}')
    assert main(["grow", "--config", str(bad)]) == EXIT_USAGE


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"beta": 1.5, "n": [50, 60], "trials": 3}))
    c = parse_config(["grow", "--config", str(cfg), "--trials", "2"])
    assert c.beta == 1.5 and c.n == [50, 60] and c.trials == 2


def test_jobs_from_environment(monkeypatch):
    from sfperc.experiments import choose_jobs
    monkeypatch.setenv("SFPERC_JOBS", "3")
    assert choose_jobs(None) == 3
    assert choose_jobs(1) == 1
    # the memory cap never drops below one worker
    assert choose_jobs(8, n_max=10**15) == 1


def _run_theorem1(out, jobs, fmt="csv"):
    return main(["theorem1", "--n", "200", "--n", "2000", "--trials", "6", "--seed", "3",
                 "--k", "4", "--format", fmt, "--jobs", str(jobs), "--out", str(out)])


def test_theorem1_outputs_are_byte_identical_across_workers(tmp_path):
    codes = {_run_theorem1(tmp_path / "one", 1), _run_theorem1(tmp_path / "two", 2)}
    assert codes <= {0, 1, 2}
    assert len(codes) == 1
    assert digest(tmp_path / "one") == digest(tmp_path / "two")
    lines = (tmp_path / "one" / "trials.csv").read_bytes().split(b"\r\n")
    assert lines[0].startswith(b"# config: ")
    assert lines[1] == b"trial,n,C0_over_n,x1,x2,x3,x4,delta"
    assert len([ln for ln in lines[2:] if ln]) == 12
    rows = (tmp_path / "one" / "reports.jsonl").read_text().splitlines()
    assert "config" in json.loads(rows[0])
    assert {json.loads(r)["verdict"] for r in rows[1:]} <= {"pass", "fail", "inconclusive"}


def test_json_format(tmp_path):
    _run_theorem1(tmp_path / "j", 1, "json")
    rows = [json.loads(r) for r in (tmp_path / "j" / "aggregate.jsonl").read_text().splitlines()]
    assert rows[0]["config"]["command"] == "theorem1"
    assert {r["quantity"] for r in rows[1:]} == {"C0_over_n", "inverse_x1", "delta"}
    assert all(r["n"] in (200, 2000) for r in rows[1:])


def _record(trial, n, c0):
    return PercolationRecord(trial, n, 0.9, c0, (0.5, 0.25), (1, 2), 0, 3)


def test_emit_summary_edge_cases(tmp_path):
    law = limit_constants(0.0, math.log(2))
    cfg = ExperimentConfig("theorem1", out=str(tmp_path / "empty")).validate()
    emit_summary(Writer(cfg), [], [1000], law, 2)
    for name in ("trials.csv", "aggregate.csv"):
        lines = (tmp_path / "empty" / name).read_text().splitlines()
        assert len(lines) == 2  # config comment and header only
    cfg = ExperimentConfig("theorem1", out=str(tmp_path / "one")).validate()
    emit_summary(Writer(cfg), [_record(0, 1000, 0.6)], [1000], law, 2)
    rows = (tmp_path / "one" / "aggregate.csv").read_text().splitlines()[2:]
    first = rows[0].split(",")
    assert first[:4] == ["1000", "C0_over_n", "0.59999999999999998", ""]


def test_emit_summary_ladder_rows(tmp_path):
    law = limit_constants(0.0, math.log(2))
    recs = [_record(t, n, 0.7) for t in range(2) for n in (10**4, 10**5, 10**6)]
    cfg = ExperimentConfig("theorem1", out=str(tmp_path)).validate()
    emit_summary(Writer(cfg), recs, [10**4, 10**5, 10**6], law, 2)
    rows = [r.split(",") for r in (tmp_path / "aggregate.csv").read_text().splitlines()[2:]]
    giant = [r for r in rows if r[1] == "C0_over_n"]
    assert [int(r[0]) for r in giant] == [10**4, 10**5, 10**6]


def test_other_commands_run(tmp_path):
    assert main(["percolate", "--n", "300", "--trials", "2", "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "clusters_n300_trial1.csv").exists()
    code = main(["yule-check", "--n", "100", "--trials", "200", "--t", "2",
                 "--out", str(tmp_path / "y")])
    assert code in (0, 1)
    code = main(["bp-limits", "--p", "0.9", "--trials", "50", "--out", str(tmp_path / "b")])
    assert code in (0, 1, 2)
    code = main(["spacings", "--n", "5000", "--trials", "30", "--out", str(tmp_path / "s")])
    assert code in (0, 1, 2)


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "sfperc", "theorem1", "--c", "20", "--n", "100",
                          "--out", str(tmp_path)], capture_output=True)
    assert res.returncode == 64


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["grow", "--n", "3", "--out", str(blocker / "sub")]) == 74
