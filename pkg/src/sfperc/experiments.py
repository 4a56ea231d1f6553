"""Trial pipelines shared by the command line and the acceptance suite.

A trial is a pure function of ``(config, trial index)``; its randomness
comes from :func:`sfperc.rng.stream`.  Percolation trials grow one tree at
the largest ``n`` of the ladder and read every smaller ``n`` off its
prefix, with the same edge uniforms thresholded at ``p(n)``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np

from . import rng as streams
from .bp_mutations import (BPConfig, BranchingSystem, Constant, StopRule, dirac_transition,
                           deviation_bound_check, gen1_birth_times, terminal_martingale)
from .percolation import decompose, edge_uniforms, largest_nonroot, p_of_n
from .stats import (DEFAULT_LEVEL, Exponential, Gamma, StatReport, age_vs_size_ordering,
                    ks_test, limit_constants, mean_and_stderr, monotone_trend,
                    one_sided_bound, poisson_spacing_check, within_relative)
from .tree_gen import GrowthParams, grow_tree, grow_until, holding_times, yule_value

BYTES_PER_VERTEX = 96


@dataclass(frozen=True)
class PercolationRecord:
    trial: int
    n: int
    p: float
    c0_over_n: float
    scaled_top: tuple
    top_ranks: tuple
    delta: int
    n_clusters: int

    @property
    def inv_x1(self) -> float:
        x1 = self.scaled_top[0] if self.scaled_top else 0.0
        return 1.0 / x1 if x1 > 0 else math.inf


def ladder_decompositions(trial: int, *, beta: float, c: float, ladder: Sequence[int],
                          seed: int):
    """Yield ``(n, p, decomposition, birth_time)`` for every ``n`` of the ladder.

    One tree, one set of edge uniforms and one clock are drawn at the
    largest ``n``; smaller ``n`` reuse their prefixes.
    """
    ladder = sorted(int(n) for n in ladder)
    n_max = ladder[-1]
    tree = grow_tree(GrowthParams(beta, n_max), streams.stream(seed, trial, streams.TREE))
    u = edge_uniforms(n_max, streams.stream(seed, trial, streams.MARKS))
    bt = np.zeros(n_max + 1)
    bt[2:] = np.cumsum(holding_times(beta, n_max, streams.stream(seed, trial, streams.CLOCK)))
    for n in ladder:
        p = p_of_n(c, n)
        yield n, p, decompose(tree.prefix(n), u[:n] <= p), bt[: n + 1]


def percolation_trial(trial: int, *, beta: float, c: float, ladder: Sequence[int], k: int,
                      seed: int, r: float = 1.0) -> list[PercolationRecord]:
    """One trial across the whole ``n`` ladder.

    ``delta`` counts clusters of generation >= 2 among vertices born by
    time ``ln ln n / (2 + beta) + r``.
    """
    out = []
    for n, p, d, bt in ladder_decompositions(trial, beta=beta, c=c, ladder=ladder, seed=seed):
        sizes, ranks = largest_nonroot(d, k)
        t_n = math.log(math.log(n)) / (2 + beta) + r
        last = int(np.searchsorted(bt, t_n, side="right")) - 1
        out.append(PercolationRecord(
            trial=trial, n=n, p=p, c0_over_n=float(d.size[0]) / n,
            scaled_top=tuple(float(s) * math.log(n) / n for s in sizes),
            top_ranks=tuple(int(x) for x in ranks),
            delta=d.delta_until(last), n_clusters=d.n_clusters))
    return out


def choose_jobs(jobs: int | None, n_max: int = 0) -> int:
    """Worker count after the ``SFPERC_JOBS`` default and the memory cap."""
    if jobs is None:
        jobs = int(os.environ.get("SFPERC_JOBS", "1") or 1)
    jobs = max(1, int(jobs))
    if n_max:
        try:
            avail = os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
            jobs = min(jobs, max(1, int(0.5 * avail // (BYTES_PER_VERTEX * n_max))))
        except (ValueError, OSError, AttributeError):
            pass
    return jobs


def map_trials(fn: Callable[[int], object], trials: int, jobs: int = 1) -> list:
    """Apply ``fn`` to ``0..trials-1`` and return results in trial order."""
    if jobs <= 1 or trials <= 1:
        return [fn(t) for t in range(trials)]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, range(trials), chunksize=max(1, trials // (4 * jobs))))


def run_percolation(*, beta: float, c: float, ladder: Sequence[int], trials: int, k: int,
                    seed: int, r: float = 1.0, jobs: int | None = None) -> list[PercolationRecord]:
    """All trials, flattened in (trial, n) order."""
    ladder = sorted(int(n) for n in ladder)
    for n in ladder:
        p_of_n(c, n)
    fn = partial(percolation_trial, beta=beta, c=c, ladder=ladder, k=k, seed=seed, r=r)
    per_trial = map_trials(fn, trials, choose_jobs(jobs, ladder[-1]))
    return [rec for recs in per_trial for rec in recs]


def records_at(records: Sequence[PercolationRecord], n: int) -> list[PercolationRecord]:
    return [r for r in records if r.n == n]


# giant cluster, spacings, generation count, ordering ------------------------


@dataclass
class Theorem1Result:
    ladder: list
    records: list
    reports: list = field(default_factory=list)


def giant_reports(records, ladder, law, tol=0.05) -> list[StatReport]:
    errs, reps = [], []
    for n in ladder:
        vals = [r.c0_over_n for r in records_at(records, n)]
        m, se = mean_and_stderr(vals)
        errs.append(abs(m - law.giant_fraction) / law.giant_fraction)
        if n == ladder[-1]:
            rep = within_relative(m, law.giant_fraction, tol, len(vals), "giant_fraction", se)
            rep.params.update({"n": n, "beta": law.beta, "c": law.c})
            reps.append(rep)
    if len(ladder) > 1:
        reps.append(monotone_trend(errs, "giant_fraction_trend", labels=ladder))
    return reps


def spacing_reports(records, ladder, law, k_spacing=3, level=DEFAULT_LEVEL,
                    tol=0.10) -> list[StatReport]:
    n = ladder[-1]
    recs = records_at(records, n)
    reps = []
    scaled = np.array([r.scaled_top[:k_spacing] for r in recs])
    # a trial with fewer than k non-root clusters has no k-th atom
    full = np.all(scaled > 0, axis=1)
    rep = poisson_spacing_check(scaled[full], law, k_spacing, level=level)
    rep.params["n"] = n
    rep.details["dropped_trials"] = int(np.count_nonzero(~full))
    reps.append(rep)
    target = 1.0 / law.intensity_const
    errs = []
    for m in ladder:
        vals = [r.inv_x1 for r in records_at(records, m)]
        mean, se = mean_and_stderr(vals)
        errs.append(abs(mean - target) / target)
        if m == n:
            rep = within_relative(mean, target, tol, len(vals), "inverse_x1_mean", se)
            rep.details["pushforward_target"] = 1.0 / law.pushforward_intensity
            rep.params["n"] = n
            reps.append(rep)
    if len(ladder) > 1:
        reps.append(monotone_trend(errs, "inverse_x1_trend", labels=ladder))
    return reps


def delta_reports(records, ladder, threshold=0.1) -> list[StatReport]:
    means = []
    for n in ladder:
        means.append(mean_and_stderr([r.delta for r in records_at(records, n)]))
    reps = []
    if len(ladder) > 1:
        reps.append(monotone_trend([m for m, _ in means], "generation_dominance_trend",
                                   strict=True, labels=ladder))
    m, se = means[-1]
    ok = m < threshold
    reps.append(StatReport("generation_dominance_level", m, math.nan,
                           len(records_at(records, ladder[-1])),
                           "pass" if ok else "fail", {"threshold": threshold, "n": ladder[-1]},
                           {"stderr": se}))
    return reps


def ordering_reports(records, n, k=2, l=10, l_ladder=(2, 3, 5, 10, 20),
                     threshold=0.95) -> list[StatReport]:
    ranks = [r.top_ranks for r in records_at(records, n)]
    prob = age_vs_size_ordering(ranks, k, l)
    ls = [x for x in l_ladder if x >= k]
    probs = [age_vs_size_ordering(ranks, k, x) for x in ls]
    return [
        StatReport("age_size_ordering", prob, math.nan, len(ranks),
                   "pass" if prob >= threshold else "fail",
                   {"k": k, "l": l, "threshold": threshold, "n": n}, {}),
        monotone_trend(probs, "age_size_ordering_trend", increasing=True, labels=ls),
    ]


def theorem1(*, beta, c, ladder, trials, k=10, seed=0, level=DEFAULT_LEVEL, r=1.0,
             k_spacing=3, jobs=None) -> Theorem1Result:
    ladder = sorted(int(n) for n in ladder)
    law = limit_constants(beta, c)
    recs = run_percolation(beta=beta, c=c, ladder=ladder, trials=trials, k=max(k, k_spacing, 2),
                           seed=seed, r=r, jobs=jobs)
    reports = giant_reports(recs, ladder, law)
    reports += spacing_reports(recs, ladder, law, k_spacing, level)
    reports += delta_reports(recs, ladder)
    reports += ordering_reports(recs, ladder[-1])
    return Theorem1Result(ladder, recs, reports)


# Yule embedding and gamma limit ---------------------------------------------


def timed_jumps_exact(timed) -> bool:
    """True when ``Y`` read off the timed tree moves by single jumps of ``2 + beta``.

    Arrivals must have distinct times and attach to an earlier vertex, so
    each raises the degree total by two (the newcomer and its parent).
    """
    parent, beta = timed.tree.parent, timed.tree.beta
    bt = timed.birth_time[1:]
    if bt.size > 1 and not np.all(np.diff(bt) > 0):
        return False
    labels = np.arange(1, parent.size)
    attached = (parent[1:] >= 0) & (parent[1:] < labels)
    deg_total = np.cumsum(np.where(attached, 2, 0))
    y = deg_total + beta * (labels + 1)
    return bool(np.all(attached) and np.allclose(np.diff(y), 2 + beta, rtol=0, atol=1e-9)
                and abs(y[0] - (2 + 2 * beta)) < 1e-9)


def yule_trial(trial: int, *, beta: float, t: float, seed: int) -> tuple[float, bool]:
    """``Y(t)`` from a timed tree grown to time ``t``, and whether every jump equals ``2 + beta``."""
    timed = grow_until(beta, t, streams.stream(seed, trial, streams.TREE))
    exact = timed_jumps_exact(timed)
    return float(yule_value(timed.size_at(t), beta)), exact


def yule_mean_check(*, beta, n, trials, seed, tol=0.05, jobs=None) -> list[StatReport]:
    t = math.log(n) / (2 + beta)
    fn = partial(yule_trial, beta=beta, t=t, seed=seed)
    res = map_trials(fn, trials, choose_jobs(jobs, 4 * n))
    ys = np.array([y for y, _ in res])
    jumps_ok = all(ok for _, ok in res)
    target = 2 * (1 + beta) * math.exp((2 + beta) * t)
    m, se = mean_and_stderr(ys)
    rep = within_relative(m, target, tol, trials, "yule_mean", se)
    rep.params.update({"beta": beta, "n": n, "t": t})
    jump = StatReport("yule_jump_sizes", 0.0 if jumps_ok else 1.0, math.nan, trials,
                      "pass" if jumps_ok else "fail", {"jump": 2 + beta}, {})
    return [jump, rep]


def gamma_limit_samples(*, beta, t, trials, seed) -> np.ndarray:
    """``exp(-(2+beta) t) Y'(t)`` for ``Y'`` started at ``1 + beta``."""
    a = 2 + beta
    y = dirac_transition(np.full(trials, 1 + beta), a, t, streams.stream(seed, 0, streams.AUX))
    return np.exp(-a * t) * y


def gamma_limit_check(*, beta, t, trials, seed, level=DEFAULT_LEVEL) -> StatReport:
    w = gamma_limit_samples(beta=beta, t=t, trials=trials, seed=seed)
    alpha = (1 + beta) / (2 + beta)
    rep = ks_test(w, Gamma(alpha, 2 + beta), level=level, name="gamma_limit")
    rep.params.update({"beta": beta, "t": t})
    return rep


# branching-process limits ------------------------------------------------------


def first_birth_trial(trial: int, *, beta: float, p: float, seed: int,
                      z0: float | None = None) -> tuple[float, float]:
    """First generation-1 birth time and an exact ``W(inf)`` draw for the Dirac system."""
    cfg = BPConfig(beta, p, Constant(1.0), 2 + 2 * beta if z0 is None else z0)
    rng = streams.stream(seed, trial, streams.BRANCHING)
    traj = BranchingSystem(cfg, rng).run(StopRule(gen1=1))
    b1 = float(gen1_birth_times(traj)[0])
    w_inf, _ = terminal_martingale(cfg, float(traj.total), traj.stop_time, rng)
    return b1, w_inf


def rescaled_first_births(*, beta, p, trials, seed, jobs=None) -> np.ndarray:
    cfg = BPConfig(beta, p, Constant(1.0), 2 + 2 * beta)
    fn = partial(first_birth_trial, beta=beta, p=p, seed=seed)
    res = np.array(map_trials(fn, trials, choose_jobs(jobs)))
    return (1 - p) / cfg.m1 * res[:, 1] * np.exp(cfg.m1p * res[:, 0])


def birth_time_scaling(*, beta, ps, trials, seed, level=DEFAULT_LEVEL,
                       jobs=None) -> tuple[list[StatReport], list[StatReport]]:
    """KS distance to ``Exp(1)`` of the rescaled first birth time along a ladder of ``p``.

    Returns ``(verdicts, points)``: the verdicts are the KS test at the
    largest ``p`` and the decreasing-distance trend; ``points`` holds the KS
    result at every ``p`` of the ladder.
    """
    ps = sorted(ps)
    points = []
    for p in ps:
        s = rescaled_first_births(beta=beta, p=p, trials=trials, seed=seed, jobs=jobs)
        rep = ks_test(s, Exponential(1.0), level=level, name="first_birth_scaling")
        rep.params.update({"beta": beta, "p": p})
        points.append(rep)
    verdicts = [points[-1]]
    if len(ps) > 1:
        verdicts.append(monotone_trend([r.statistic for r in points],
                                       "first_birth_scaling_trend", strict=True, labels=ps))
    return verdicts, points


def martingale_bound_reports(*, beta=0.0, xi=1.0, z=2.0, ts=(0, 1, 2, 3), trials, seed,
                             n_se=3.0) -> list[StatReport]:
    cfg = BPConfig(beta, 1.0, Constant(xi), z)
    return [deviation_bound_check(cfg, float(t), trials, streams.stream(seed, i, streams.AUX),
                                  n_se=n_se)
            for i, t in enumerate(ts)]


__all__ = [
    "PercolationRecord", "Theorem1Result", "birth_time_scaling", "choose_jobs",
    "gamma_limit_check", "map_trials", "martingale_bound_reports", "one_sided_bound",
    "percolation_trial", "rescaled_first_births", "run_percolation", "theorem1",
    "yule_mean_check",
]
