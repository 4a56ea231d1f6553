"""Command line front end: ``sfperc <command> [flags]``.

Exit status is 0 when every verdict passes, 1 on any fail, 2 when the
worst verdict is inconclusive and 64 on a usage error.  Every output
file starts with the effective configuration: a ``#`` comment line in
CSV and a ``{"config": ...}`` first line in JSONL.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

from . import experiments as ex
from .percolation import write_cluster_rows
from .stats import DEFAULT_LEVEL, FAIL, INCONCLUSIVE, PASS, StatReport, combine_verdicts
from .tree_gen import BETA_FLOOR, GrowthParams, grow_tree
from . import rng as streams

COMMANDS = ("grow", "percolate", "theorem1", "bp-limits", "yule-check", "spacings")
PERCOLATION_COMMANDS = ("percolate", "theorem1", "spacings")
EXIT_CODES = {PASS: 0, FAIL: 1, INCONCLUSIVE: 2}
EXIT_USAGE = 64


class UsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    command: str
    beta: float = 0.0
    c: float = math.log(2)
    n: list = field(default_factory=lambda: [10_000])
    trials: int = 1
    seed: int = 0
    k: int = 10
    level: float = DEFAULT_LEVEL
    out: str = "results"
    format: str = "csv"
    jobs: int | None = None
    p: list = field(default_factory=lambda: [0.9, 0.99, 0.999])
    r: float = 1.0
    t: float = 8.0
    spacing_k: int = 3

    def validate(self) -> "ExperimentConfig":
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if isinstance(self.n, (int, float)):
            self.n = [self.n]
        if isinstance(self.p, (int, float)):
            self.p = [self.p]
        try:
            self.n = [int(v) for v in self.n]
            self.p = [float(v) for v in self.p]
            self.beta, self.c, self.level = float(self.beta), float(self.c), float(self.level)
            self.r, self.t = float(self.r), float(self.t)
            self.trials, self.seed, self.k = int(self.trials), int(self.seed), int(self.k)
            self.spacing_k = int(self.spacing_k)
            self.jobs = None if self.jobs is None else int(self.jobs)
        except (TypeError, ValueError) as err:
            raise UsageError(f"bad config value: {err}") from None
        if self.trials < 1:
            raise UsageError("trials must be >= 1")
        if not self.n or any(b <= a for a, b in zip(self.n, self.n[1:])):
            raise UsageError(f"n ladder must be strictly increasing, got {self.n}")
        if self.n[0] < 1:
            raise UsageError("n must be >= 1")
        if not (math.isfinite(self.beta) and self.beta > BETA_FLOOR):
            raise UsageError(f"beta must exceed -1, got {self.beta}")
        if not self.c > 0:
            raise UsageError(f"c must be positive, got {self.c}")
        if not 0 < self.level < 1:
            raise UsageError(f"level must lie in (0, 1), got {self.level}")
        if self.k < 1 or self.spacing_k < 1:
            raise UsageError("k must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise UsageError("seed must be a 64-bit unsigned integer")
        if self.format not in ("csv", "json"):
            raise UsageError(f"format must be csv or json, got {self.format!r}")
        if self.jobs is not None and self.jobs < 1:
            raise UsageError("jobs must be >= 1")
        if self.command in PERCOLATION_COMMANDS:
            if self.n[0] < 2 or math.log(self.n[0]) <= self.c:
                raise UsageError(f"need ln(min n) > c; ln {self.n[0]} <= {self.c}")
        if self.command == "bp-limits" and any(not 0 < p < 1 for p in self.p):
            raise UsageError(f"p values must lie in (0, 1), got {self.p}")
        if self.t < 0:
            raise UsageError("t must be nonnegative")
        return self

    def header(self) -> dict:
        d = asdict(self)
        d.pop("jobs")   # worker count never changes results
        d.pop("out")
        return d


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--beta", type=float, default=S, help="attachment parameter (> -1)")
    common.add_argument("--c", type=float, default=S, help="percolation constant")
    common.add_argument("--n", type=int, action="append", default=S,
                        help="tree size; repeat for a ladder")
    common.add_argument("--trials", type=int, default=S)
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("--k", type=int, default=S, help="top clusters tracked (default 10)")
    common.add_argument("--spacing-k", dest="spacing_k", type=int, default=S,
                        help="spacings tested (default 3)")
    common.add_argument("--level", type=float, default=S, help="test level (default 0.01)")
    common.add_argument("--out", default=S, help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default=S)
    common.add_argument("--jobs", type=int, default=S, help="worker processes (env SFPERC_JOBS)")
    common.add_argument("--config", default=None, help="JSON config file; flags win")
    common.add_argument("--p", type=float, action="append", default=S,
                        help="retention probability for bp-limits; repeatable")
    common.add_argument("--r", type=float, default=S, help="time offset for the generation count")
    common.add_argument("--t", type=float, default=S, help="horizon for the gamma-limit check")
    parser = _Parser(prog="sfperc", description="Percolation on scale-free trees.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def parse_config(argv: Sequence[str] | None = None) -> ExperimentConfig:
    ns = vars(build_parser().parse_args(argv))
    merged = {}
    cfg_path = ns.pop("config", None)
    if cfg_path:
        try:
            merged = json.loads(Path(cfg_path).read_text())
        except OSError as err:
            raise UsageError(f"cannot read config {cfg_path}: {err.strerror}") from None
        except json.JSONDecodeError as err:
            raise UsageError(f"config {cfg_path} is not valid JSON: {err}") from None
        if not isinstance(merged, dict):
            raise UsageError(f"config {cfg_path} must hold a JSON object")
        known = {f.name for f in fields(ExperimentConfig)}
        unknown = set(merged) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        merged.pop("command", None)
    merged.update(ns)
    return ExperimentConfig(**merged).validate()


# output --------------------------------------------------------------------


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return "" if not math.isfinite(v) else f"{v:.17g}"
    if isinstance(v, (dict, list)):
        return json.dumps(_clean(v))
    return str(v)


class Writer:
    """Writes tables under ``out`` in the configured format."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.root = Path(cfg.out)
        self.written: list[Path] = []
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as err:
            raise OSError(f"cannot create output directory {self.root}: {err.strerror}") from err

    def open(self, name: str):
        path = self.root / name
        self.written.append(path)
        try:
            return open(path, "w", newline="", encoding="utf-8")
        except OSError as err:
            raise OSError(f"cannot write {path}: {err.strerror}") from err

    def config_line(self) -> str:
        return json.dumps(_clean(self.cfg.header()))

    def table(self, stem: str, columns: Sequence[str], rows: Sequence[Sequence]) -> Path:
        if self.cfg.format == "csv":
            with self.open(stem + ".csv") as fh:
                fh.write("# config: " + self.config_line() + "\r\n")
                w = csv.writer(fh, lineterminator="\r\n")
                w.writerow(columns)
                for row in rows:
                    w.writerow([_cell(v) for v in row])
        else:
            with self.open(stem + ".jsonl") as fh:
                fh.write(json.dumps({"config": _clean(self.cfg.header())}) + "\n")
                for row in rows:
                    fh.write(json.dumps(_clean(dict(zip(columns, row)))) + "\n")
        return self.written[-1]

    def reports(self, reports: Sequence[StatReport]) -> Path:
        with self.open("reports.jsonl") as fh:
            fh.write(json.dumps({"config": _clean(self.cfg.header())}) + "\n")
            for r in reports:
                fh.write(json.dumps(_clean(r.to_dict())) + "\n")
        return self.written[-1]

    def text(self, name: str, body: str) -> Path:
        with self.open(name) as fh:
            fh.write(body)
        return self.written[-1]


def trial_table(records, k: int) -> tuple[list, list]:
    cols = ["trial", "n", "C0_over_n"] + [f"x{i + 1}" for i in range(k)] + ["delta"]
    rows = [[r.trial, r.n, r.c0_over_n, *r.scaled_top[:k], r.delta] for r in records]
    return cols, rows


def aggregate_table(records, ladder, law) -> tuple[list, list]:
    cols = ["n", "quantity", "mean", "stderr", "theory", "rel_error"]
    rows = []
    quantities = [("C0_over_n", lambda r: r.c0_over_n, law.giant_fraction),
                  ("inverse_x1", lambda r: r.inv_x1, 1.0 / law.intensity_const),
                  ("delta", lambda r: r.delta, 0.0)]
    for n in ladder:
        recs = ex.records_at(records, n)
        if not recs:
            continue
        for name, get, theory in quantities:
            mean, se = ex.mean_and_stderr([get(r) for r in recs])
            rel = abs(mean - theory) / abs(theory) if theory else math.nan
            rows.append([n, name, mean, se, theory, rel])
    return cols, rows


def emit_summary(writer: Writer, records, ladder, law, k: int) -> list[Path]:
    """Per-trial and aggregate tables, ready for external plotting."""
    cols, rows = trial_table(records, k)
    a = writer.table("trials", cols, rows)
    cols, rows = aggregate_table(records, ladder, law)
    b = writer.table("aggregate", cols, rows)
    return [a, b]


# commands ------------------------------------------------------------------


def cmd_grow(cfg: ExperimentConfig, w: Writer) -> list[StatReport]:
    # parent-array files stay bare; the config goes to a sidecar
    w.text("config.json", w.config_line() + "\n")
    for t in range(cfg.trials):
        tree = grow_tree(GrowthParams(cfg.beta, cfg.n[-1]),
                         streams.stream(cfg.seed, t, streams.TREE))
        for n in cfg.n:
            w.text(f"tree_n{n}_trial{t}.txt", tree.prefix(n).to_text())
    return []


def cmd_percolate(cfg: ExperimentConfig, w: Writer) -> list[StatReport]:
    law = ex.limit_constants(cfg.beta, cfg.c)
    for t in range(cfg.trials):
        for n, _, d, _ in ex.ladder_decompositions(t, beta=cfg.beta, c=cfg.c,
                                                    ladder=cfg.n, seed=cfg.seed):
            if cfg.format == "csv":
                with w.open(f"clusters_n{n}_trial{t}.csv") as fh:
                    fh.write("# config: " + w.config_line() + "\r\n")
                    write_cluster_rows(fh, d)
            else:
                cols = ["cluster_index", "birth_rank", "generation", "size", "half_edges",
                        "y_value", "root_vertex"]
                rows = [[i, i, int(d.generation[i]), int(d.size[i]), int(d.half_edges[i]),
                         float(d.y_value[i]), int(d.root_vertex[i])] for i in range(len(d))]
                w.table(f"clusters_n{n}_trial{t}", cols, rows)
    records = ex.run_percolation(beta=cfg.beta, c=cfg.c, ladder=cfg.n, trials=cfg.trials,
                                 k=cfg.k, seed=cfg.seed, r=cfg.r, jobs=cfg.jobs)
    emit_summary(w, records, cfg.n, law, cfg.k)
    return []


def cmd_theorem1(cfg: ExperimentConfig, w: Writer) -> list[StatReport]:
    res = ex.theorem1(beta=cfg.beta, c=cfg.c, ladder=cfg.n, trials=cfg.trials, k=cfg.k,
                      seed=cfg.seed, level=cfg.level, r=cfg.r, k_spacing=cfg.spacing_k,
                      jobs=cfg.jobs)
    emit_summary(w, res.records, res.ladder, ex.limit_constants(cfg.beta, cfg.c), cfg.k)
    return res.reports


def cmd_spacings(cfg: ExperimentConfig, w: Writer) -> list[StatReport]:
    law = ex.limit_constants(cfg.beta, cfg.c)
    records = ex.run_percolation(beta=cfg.beta, c=cfg.c, ladder=cfg.n, trials=cfg.trials,
                                 k=max(cfg.k, cfg.spacing_k), seed=cfg.seed, r=cfg.r,
                                 jobs=cfg.jobs)
    emit_summary(w, records, cfg.n, law, cfg.k)
    return ex.spacing_reports(records, sorted(cfg.n), law, cfg.spacing_k, cfg.level)


def cmd_yule(cfg: ExperimentConfig, w: Writer) -> list[StatReport]:
    reps = []
    for n in cfg.n:
        reps += ex.yule_mean_check(beta=cfg.beta, n=n, trials=cfg.trials, seed=cfg.seed,
                                   jobs=cfg.jobs)
    reps.append(ex.gamma_limit_check(beta=cfg.beta, t=cfg.t, trials=cfg.trials,
                                     seed=cfg.seed, level=cfg.level))
    vals = ex.gamma_limit_samples(beta=cfg.beta, t=cfg.t, trials=cfg.trials, seed=cfg.seed)
    w.table("gamma_samples", ["trial", "scaled_y"], [[i, float(v)] for i, v in enumerate(vals)])
    return reps


def cmd_bp(cfg: ExperimentConfig, w: Writer) -> list[StatReport]:
    reps, points = ex.birth_time_scaling(beta=cfg.beta, ps=cfg.p, trials=cfg.trials,
                                         seed=cfg.seed, level=cfg.level, jobs=cfg.jobs)
    w.table("first_birth_ks", ["p", "n", "statistic", "p_value", "ks_verdict"],
            [[r.params["p"], r.n_samples, r.statistic, r.p_value, r.verdict] for r in points])
    reps += ex.martingale_bound_reports(beta=cfg.beta, z=2 + 2 * cfg.beta, trials=cfg.trials,
                                        seed=cfg.seed)
    return reps


HANDLERS = {"grow": cmd_grow, "percolate": cmd_percolate, "theorem1": cmd_theorem1,
            "spacings": cmd_spacings, "yule-check": cmd_yule, "bp-limits": cmd_bp}


def run(cfg: ExperimentConfig) -> int:
    w = Writer(cfg)
    reports = HANDLERS[cfg.command](cfg, w)
    if reports:
        w.reports(reports)
    for r in reports:
        print(f"{r.verdict.upper():13s} {r.test} statistic={_cell(float(r.statistic))}")
    return EXIT_CODES[combine_verdicts(reports)]


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = parse_config(argv)
    except UsageError as err:
        print(f"sfperc: usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run(cfg)
    except OSError as err:
        print(f"sfperc: {err}", file=sys.stderr)
        return 74


if __name__ == "__main__":
    sys.exit(main())
