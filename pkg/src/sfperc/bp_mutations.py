"""Pure-birth branching populations with rare neutral mutations.

Types are labelled by the Ulam tree: the ancestral type is ``()`` and the
``j``-th mutant type born inside type ``u`` is ``u + (j,)``.  Every unit of
mass reproduces at rate 1.  At a birth inside a population the children
have total mass ``xi + 1 + beta``; with probability ``p`` all of it is a
clone, otherwise ``xi`` is a clone and a new type of mass ``1 + beta`` is
founded.

:func:`simulate_bp` runs the multi-type system event by event.
:func:`simulate_total` and the Dirac helpers work on the total mass alone,
which is a plain branching process whatever ``p`` is.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .stats import INCONCLUSIVE, StatReport, one_sided_bound

Label = tuple

# reproduction laws for xi (nu is the law of xi + 1 + beta) ------------------


@dataclass(frozen=True)
class Constant:
    value: float

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("xi must be positive")

    @property
    def mean(self):
        return self.value

    @property
    def second_moment(self):
        return self.value * self.value

    def sample(self, rng, size):
        return np.full(size, float(self.value))


@dataclass(frozen=True)
class Discrete:
    values: tuple
    probs: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        q = np.asarray(self.probs, dtype=float)
        if v.shape != q.shape or v.size == 0:
            raise ValueError("values and probs must be nonempty and the same length")
        if np.any(v <= 0):
            raise ValueError("xi must be positive")
        if np.any(q < 0) or not math.isclose(q.sum(), 1.0, rel_tol=1e-12):
            raise ValueError("probs must be a probability vector")

    @property
    def mean(self):
        return float(np.dot(self.values, self.probs))

    @property
    def second_moment(self):
        return float(np.dot(np.square(self.values), self.probs))

    def sample(self, rng, size):
        return rng.choice(np.asarray(self.values, dtype=float), size=size,
                          p=np.asarray(self.probs, dtype=float))


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not 0 < self.low < self.high:
            raise ValueError("need 0 < low < high")

    @property
    def mean(self):
        return 0.5 * (self.low + self.high)

    @property
    def second_moment(self):
        a, b = self.low, self.high
        return (a * a + a * b + b * b) / 3.0

    def sample(self, rng, size):
        return rng.uniform(self.low, self.high, size)


@dataclass(frozen=True)
class Declared:
    """User sampler with declared moments; ``sampler(rng, size)`` must return positive values."""

    sampler: object
    mean: float
    second_moment: float

    def __post_init__(self):
        if not (self.mean > 0 and math.isfinite(self.second_moment)):
            raise ValueError("declared moments must be positive and finite")

    def sample(self, rng, size):
        x = np.asarray(self.sampler(rng, size), dtype=float)
        if np.any(x <= 0):
            raise ValueError("sampler produced xi <= 0")
        return x


@dataclass(frozen=True)
class BPConfig:
    beta: float
    retention_p: float
    reproduction: object = Constant(1.0)
    z0: float = 2.0

    def __post_init__(self):
        if not self.beta > -1:
            raise ValueError("beta must exceed -1")
        if not 0 <= self.retention_p <= 1:
            raise ValueError("retention_p must lie in [0, 1]")
        if not self.z0 > 0:
            raise ValueError("z0 must be positive")

    @property
    def m1(self) -> float:
        return self.reproduction.mean + 1 + self.beta

    @property
    def m1p(self) -> float:
        return self.reproduction.mean + self.retention_p * (1 + self.beta)

    @property
    def m2(self) -> float:
        b = 1 + self.beta
        r = self.reproduction
        return r.second_moment + 2 * b * r.mean + b * b

    @property
    def dirac(self) -> bool:
        return isinstance(self.reproduction, Constant)


def format_label(label: Label) -> str:
    return ".".join(str(j) for j in label)


def parse_label(text: str) -> Label:
    return tuple(int(j) for j in text.split(".")) if text else ()


# stop rules ------------------------------------------------------------------


@dataclass(frozen=True)
class StopRule:
    """Stop at the first of: time reaches ``time``, total reaches ``total``,
    ``events`` events, or ``gen1`` first-generation mutant types."""

    time: Optional[float] = None
    total: Optional[float] = None
    events: Optional[int] = None
    gen1: Optional[int] = None

    def __post_init__(self):
        if all(v is None for v in (self.time, self.total, self.events, self.gen1)):
            raise ValueError("a stop rule needs at least one condition")


class BudgetExhausted(RuntimeError):
    pass


class _Fenwick:
    """Prefix sums over a growing list of masses."""

    def __init__(self, zero=0.0):
        self.zero = zero
        self.cap = 1
        self.tree = [zero, zero]
        self.vals = []

    def append(self, v):
        self.vals.append(v)
        if len(self.vals) > self.cap:
            self.cap *= 2
            self.tree = [self.zero] * (self.cap + 1)
            for i, x in enumerate(self.vals, start=1):
                self._add(i, x)
        else:
            self._add(len(self.vals), v)

    def _add(self, i, v):
        tree, cap = self.tree, self.cap
        while i <= cap:
            tree[i] += v
            i += i & -i

    def add(self, idx, v):
        self.vals[idx] += v
        self._add(idx + 1, v)

    def find(self, u):
        """Index of the entry whose cumulative interval contains ``u``."""
        pos, bit, tree = 0, self.cap, self.tree
        while bit:
            nxt = pos + bit
            if nxt <= self.cap and tree[nxt] <= u:
                pos = nxt
                u -= tree[nxt]
            bit >>= 1
        return min(pos, len(self.vals) - 1)


@dataclass
class BPTrajectory:
    """Event history of one run.

    ``events`` rows are ``(time, type, clone_delta, mutant_label)`` where
    ``mutant_label`` is None for pure clone births.
    """

    config: BPConfig
    events: list = field(default_factory=list)
    populations: dict = field(default_factory=dict)
    birth_time: dict = field(default_factory=dict)
    total: float = 0.0
    stop_time: float = 0.0

    @property
    def n_events(self) -> int:
        return len(self.events)

    def labels(self) -> list:
        return list(self.populations)

    def population_path(self, label: Label) -> tuple[np.ndarray, np.ndarray]:
        """Jump times and post-jump masses of type ``label``."""
        if label not in self.birth_time:
            raise KeyError(f"type {format_label(label)!r} never appeared")
        if label == ():
            times, vals, z = [0.0], [self.config.z0], self.config.z0
        else:
            times, vals, z = [self.birth_time[label]], [1 + self.config.beta], 1 + self.config.beta
        for t, lab, delta, _ in self.events:
            if lab == label:
                z = z + delta
                times.append(t)
                vals.append(z)
        return np.asarray(times, dtype=float), np.asarray([float(v) for v in vals])

    def total_path(self) -> tuple[np.ndarray, np.ndarray]:
        b = 1 + self.config.beta
        times = [0.0] + [e[0] for e in self.events]
        jumps = [0.0] + [float(e[2]) + (b if e[3] is not None else 0.0) for e in self.events]
        return np.asarray(times), float(self.config.z0) + np.cumsum(jumps)

    def to_jsonl(self) -> str:
        lines = []
        for t, lab, delta, mut in self.events:
            lines.append(json.dumps({
                "t": float(t), "label": format_label(lab), "clone_delta": float(delta),
                "mutant": None if mut is None else format_label(mut)}))
        return "".join(line + "\n" for line in lines)

    def write_jsonl(self, path) -> None:
        Path(path).write_text(self.to_jsonl())


class BranchingSystem:
    """Event-driven simulation of the multi-type system; ``run`` may be called repeatedly."""

    block = 2048

    def __init__(self, config: BPConfig, rng: np.random.Generator, exact: bool = False,
                 max_events: int = 10_000_000):
        self.config = config
        self.rng = rng
        self.exact = exact
        self.max_events = max_events
        if exact:
            if not config.dirac:
                raise ValueError("exact mode needs a constant xi")
            conv = Fraction
            self._unit = Fraction(1) + Fraction(config.beta)
            self._xi = Fraction(config.reproduction.value)
            z0 = Fraction(config.z0)
            zero = Fraction(0)
        else:
            conv = float
            self._unit = 1.0 + config.beta
            self._xi = None
            z0 = float(config.z0)
            zero = 0.0
        self._conv = conv
        self.labels = [()]
        self.index = {(): 0}
        self.children = [0]
        self.fen = _Fenwick(zero)
        self.fen.append(z0)
        self.traj = BPTrajectory(config, populations={(): z0}, birth_time={(): 0.0},
                                 total=z0, stop_time=0.0)
        self.time = 0.0
        self.n_gen1 = 0
        self._buf = None
        self._pos = 0

    def _draw(self):
        if self._buf is None or self._pos >= self.block:
            b, rng = self.block, self.rng
            exp = rng.standard_exponential(b).tolist()
            sel = rng.random(b).tolist()
            eps = rng.random(b).tolist()
            xi = self.config.reproduction.sample(rng, b).tolist()
            self._buf = (exp, sel, eps, xi)
            self._pos = 0
        i = self._pos
        self._pos += 1
        e, s, m, x = self._buf
        return e[i], s[i], m[i], x[i]

    def run(self, stop: StopRule) -> BPTrajectory:
        cfg, traj, fen = self.config, self.traj, self.fen
        p, unit = cfg.retention_p, self._unit
        events, pops, births = traj.events, traj.populations, traj.birth_time
        total = traj.total
        start_events = len(events)
        t_stop = stop.time
        while True:
            if stop.total is not None and total >= stop.total:
                break
            if stop.events is not None and len(events) >= stop.events:
                break
            if stop.gen1 is not None and self.n_gen1 >= stop.gen1:
                break
            if len(events) - start_events >= self.max_events:
                raise BudgetExhausted(
                    f"stop rule not met after {self.max_events} events (t={self.time:.6g})")
            e, s, m, x = self._draw()
            h = e / float(total)
            if t_stop is not None and self.time + h >= t_stop:
                # the overshooting draw is discarded; resuming redraws by memorylessness
                self.time = max(self.time, t_stop)
                break
            self.time += h
            idx = fen.find(s * total if not self.exact else Fraction(s) * total)
            label = self.labels[idx]
            xi = self._xi if self.exact else x
            if m < p:
                delta = xi + unit
                fen.add(idx, delta)
                pops[label] += delta
                total += delta
                events.append((self.time, label, delta, None))
            else:
                fen.add(idx, xi)
                pops[label] += xi
                self.children[idx] += 1
                child = label + (self.children[idx],)
                self.index[child] = len(self.labels)
                self.labels.append(child)
                self.children.append(0)
                fen.append(unit)
                pops[child] = unit
                births[child] = self.time
                total += xi + unit
                if len(label) == 0:
                    self.n_gen1 += 1
                events.append((self.time, label, xi, child))
        traj.total = total
        traj.stop_time = self.time
        return traj


def simulate_bp(config: BPConfig, stop: StopRule, rng: np.random.Generator,
                exact: bool = False, max_events: int = 10_000_000) -> BPTrajectory:
    """Run the multi-type system from ``z0`` units of ancestral mass until ``stop``."""
    return BranchingSystem(config, rng, exact=exact, max_events=max_events).run(stop)


# martingales -----------------------------------------------------------------


@dataclass
class MartingalePath:
    """``exp(-rate t) Z(t)`` for a piecewise-constant ``Z`` given at jump times."""

    times: np.ndarray
    values: np.ndarray
    rate: float
    stop_time: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        z = np.where(idx >= 0, self.values[np.maximum(idx, 0)], 0.0)
        return np.exp(-self.rate * t) * z

    @property
    def terminal(self) -> float:
        return float(self(self.stop_time))


def martingale_path(traj: BPTrajectory, which="total") -> MartingalePath:
    """Discounted path of the total (rate ``m1``) or of one type (rate ``m1(p)``).

    ``which`` is ``"total"``, ``"ancestral"``, a label tuple or a dotted label string.
    """
    cfg = traj.config
    if isinstance(which, str) and which == "total":
        times, vals = traj.total_path()
        return MartingalePath(times, vals, cfg.m1, traj.stop_time)
    if isinstance(which, str):
        which = () if which == "ancestral" else parse_label(which)
    if which not in traj.birth_time:
        raise ValueError(f"unknown type {format_label(which)!r}")
    times, vals = traj.population_path(which)
    return MartingalePath(times, vals, cfg.m1p, traj.stop_time)


def gen1_birth_times(traj: BPTrajectory) -> np.ndarray:
    """Birth times of the first-generation mutant types, increasing."""
    return np.sort(np.array([t for lab, t in traj.birth_time.items() if len(lab) == 1]))


def rescaled_birth_times(traj: BPTrajectory, w_inf: float) -> np.ndarray:
    """``(1 - p) / m1 * W(inf) * exp(m1(p) b_i)`` for the first-generation births."""
    cfg = traj.config
    b = gen1_birth_times(traj)
    return (1 - cfg.retention_p) / cfg.m1 * w_inf * np.exp(cfg.m1p * b)


# total-mass process ----------------------------------------------------------


def simulate_total(config: BPConfig, horizon: float, rng: np.random.Generator,
                   z0: float | None = None, t0: float = 0.0,
                   max_events: int = 200_000_000) -> tuple[np.ndarray, np.ndarray]:
    """Jump times and post-jump values of the total mass on ``[t0, horizon]``.

    Entry 0 is ``(t0, z0)``.  Draws are vectorised in growing chunks.
    """
    z = float(config.z0 if z0 is None else z0)
    unit = 1.0 + config.beta
    t = float(t0)
    times, vals = [np.array([t])], [np.array([z])]
    chunk, count = 256, 0
    while True:
        jumps = config.reproduction.sample(rng, chunk) + unit
        zs = z + np.cumsum(jumps)
        before = np.concatenate(([z], zs[:-1]))
        ts = t + np.cumsum(rng.standard_exponential(chunk) / before)
        stop = int(np.searchsorted(ts, horizon, side="right"))
        times.append(ts[:stop])
        vals.append(zs[:stop])
        count += stop
        if stop < chunk:
            break
        if count > max_events:
            raise BudgetExhausted(f"more than {max_events} events before t={horizon}")
        t, z = float(ts[-1]), float(zs[-1])
        chunk = min(chunk * 2, 1 << 22)
    return np.concatenate(times), np.concatenate(vals)


def dirac_transition(z, jump: float, t: float, rng: np.random.Generator, size=None):
    """Exact sample of ``Z(t)`` from ``Z(0) = z`` when every birth adds ``jump``.

    ``Z / jump`` is a linear birth process with per-capita rate ``jump``, so
    the number of births is negative binomial with ``z / jump`` successes and
    success probability ``exp(-jump t)``.
    """
    z = np.asarray(z, dtype=float)
    k = rng.negative_binomial(z / jump, math.exp(-jump * t), size=size)
    return z + jump * k


def dirac_terminal(z, jump: float, rng: np.random.Generator, size=None):
    """Limit of ``exp(-jump s) Z(s)`` given ``Z(0) = z``: ``Gamma(z / jump, scale=jump)``."""
    return rng.gamma(np.asarray(z, dtype=float) / jump, jump, size=size)


def terminal_martingale(config: BPConfig, z: float, t: float, rng: np.random.Generator,
                        extra: float | None = None) -> tuple[float, float]:
    """Estimate ``W(inf)`` for the total process given ``Z(t) = z``.

    Returns ``(w_inf, relative_drift)``.  For constant ``xi`` the limit is
    sampled exactly and the drift is 0; otherwise the process is continued
    for ``extra`` time units and the drift is the relative change of ``W``
    over the last tenth of that stretch.
    """
    m1 = config.m1
    if config.dirac:
        return float(math.exp(-m1 * t) * dirac_terminal(z, m1, rng)), 0.0
    extra = 6.0 / m1 if extra is None else extra
    times, vals = simulate_total(config, t + extra, rng, z0=z, t0=t)
    end = t + extra
    w_end = math.exp(-m1 * end) * vals[-1]
    t_mid = end - 0.1 * extra
    idx = np.searchsorted(times, t_mid, side="right") - 1
    w_mid = math.exp(-m1 * t_mid) * vals[idx]
    return float(w_end), float(abs(w_end - w_mid) / w_end)


def _sup_sq_deviation(times, vals, m1, t, horizon, w_inf):
    # W is decreasing between jumps, so the extremes on each piece sit at its ends
    ends = np.append(times[1:], horizon)
    keep = ends > t
    left = np.maximum(times[keep], t)
    z = vals[keep]
    w_left = np.exp(-m1 * left) * z
    w_right = np.exp(-m1 * ends[keep]) * z
    dev = np.maximum(np.abs(w_left - w_inf), np.abs(w_right - w_inf))
    return float(dev.max() ** 2)


def deviation_bound_check(config: BPConfig, t: float, trials: int,
                          rng: np.random.Generator, horizon: float | None = None,
                          n_se: float = 3.0, drift_tol: float = 0.01) -> StatReport:
    """Monte Carlo estimate of ``E sup_{s >= t} |W(s) - W(inf)|^2`` against
    ``10 z m2 / m1 exp(-m1 t)``.

    The supremum is taken over ``[t, horizon]`` (default ``t + 2``);
    ``W(inf)`` comes from :func:`terminal_martingale` at the horizon.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if config.retention_p != 1:
        raise ValueError("the bound concerns the plain process: retention_p must be 1")
    m1, z = config.m1, config.z0
    horizon = t + 2.0 if horizon is None else horizon
    if horizon <= t:
        raise ValueError("horizon must exceed t")
    bound = 10 * z * config.m2 / m1 * math.exp(-m1 * t)
    sq = np.empty(trials)
    drift = np.empty(trials)
    for k in range(trials):
        times, vals = simulate_total(config, horizon, rng)
        w_inf, drift[k] = terminal_martingale(config, vals[-1], horizon, rng)
        sq[k] = _sup_sq_deviation(times, vals, m1, t, horizon, w_inf)
    est = float(sq.mean())
    se = float(sq.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.nan
    rms_drift = float(np.sqrt(np.mean(drift ** 2)))
    rep = one_sided_bound(est, se if trials > 1 else 0.0, bound, trials, n_se=n_se,
                          name="martingale_deviation_bound")
    rep.params.update({"t": t, "horizon": horizon, "z": z, "m1": m1, "m2": config.m2})
    rep.details["rms_terminal_drift"] = rms_drift
    if rms_drift > drift_tol:
        rep.verdict = INCONCLUSIVE
        rep.details["reason"] = "terminal proxy not stabilised over the horizon"
    return rep
