"""Statistical checks that turn simulation output into verdicts.

Kolmogorov-Smirnov machinery is scipy's; the reference laws, the spacing
construction and the ratio-law CDF are defined here.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy import integrate, special, stats

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
DEFAULT_LEVEL = 0.01
MIN_KS_SAMPLES = 20
EXACT_KS_BELOW = 35


@dataclass(frozen=True)
class LimitLaw:
    """Constants of the supercritical limit at ``(beta, c)``."""

    beta: float
    c: float
    alpha: float
    m1: float
    giant_fraction: float
    intensity_const: float

    @property
    def atom_mean_scale(self) -> float:
        """Scale anchor ``c e^{-alpha c} (1 + beta) / (2 + beta)`` of one age-ordered atom."""
        return self.intensity_const * (1 + self.beta) / (2 + self.beta)

    @property
    def pushforward_intensity(self) -> float:
        """Intensity constant of ``x^-2 dx`` obtained by mapping the age-ordered
        atoms ``K W'_i / S_i`` (gamma marks of mean ``1 + beta``)."""
        return self.alpha * self.intensity_const


def limit_constants(beta: float, c: float) -> LimitLaw:
    if not beta > -1:
        raise ValueError(f"beta must exceed -1, got {beta}")
    if not c > 0:
        raise ValueError(f"c must be positive, got {c}")
    alpha = (1 + beta) / (2 + beta)
    giant = math.exp(-alpha * c)
    return LimitLaw(beta=beta, c=c, alpha=alpha, m1=2 + beta,
                    giant_fraction=giant, intensity_const=c * giant)


@dataclass
class StatReport:
    test: str
    statistic: float
    p_value: float
    n_samples: int
    verdict: str
    params: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "StatReport":
        return cls(**json.loads(text))


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def combine_verdicts(reports: Sequence[StatReport]) -> str:
    verdicts = {r.verdict for r in reports}
    if FAIL in verdicts:
        return FAIL
    if INCONCLUSIVE in verdicts:
        return INCONCLUSIVE
    return PASS


# reference laws -------------------------------------------------------------

@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")

    def cdf(self, x):
        return stats.expon.cdf(x, scale=1 / self.rate)

    def describe(self) -> dict:
        return {"law": "exponential", "rate": self.rate}


@dataclass(frozen=True)
class Gamma:
    shape: float
    scale: float = 1.0

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("shape and scale must be positive")

    def cdf(self, x):
        return stats.gamma.cdf(x, self.shape, scale=self.scale)

    def describe(self) -> dict:
        return {"law": "gamma", "shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class Empirical:
    sample: Any

    def describe(self) -> dict:
        return {"law": "empirical", "size": int(np.size(self.sample))}


@dataclass(frozen=True)
class RatioLaw:
    """Law of ``const * G / S`` with ``G ~ Gamma(shape, scale)`` and
    ``S ~ Gamma(i, 1)`` independent; CDF by quadrature."""

    shape: float
    scale: float
    i: int
    const: float = 1.0
    tol: float = 1e-8

    def cdf(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.array([ratio_cdf(v, self.shape, self.scale, self.i, self.const, self.tol)
                        for v in x.ravel()])
        return out.reshape(x.shape)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        g = rng.gamma(self.shape, self.scale, size=size)
        s = rng.gamma(self.i, 1.0, size=size)
        return self.const * g / s

    def describe(self) -> dict:
        return {"law": "ratio", "shape": self.shape, "scale": self.scale,
                "i": self.i, "const": self.const}


def ratio_cdf(x: float, shape: float, scale: float, i: int, const: float = 1.0,
              tol: float = 1e-8) -> float:
    """``P(const * G / S <= x)`` for ``G ~ Gamma(shape, scale)``, ``S ~ Gamma(i, 1)``.

    Computed as ``E[F_G(x S / const)]`` integrated against the density of S.
    """
    if x <= 0:
        return 0.0
    a = x / (const * scale)

    log_norm = special.gammaln(i)

    def integrand(s):
        if s <= 0:
            return 0.0
        return special.gammainc(shape, a * s) * math.exp((i - 1) * math.log(s) - s - log_norm)

    # split at the mode region of S so quad sees the mass
    hi = stats.gamma.ppf(1 - 1e-16, i)
    mid = float(i)
    v1, _ = integrate.quad(integrand, 0.0, mid, epsabs=tol * 1e-2, epsrel=tol, limit=200)
    v2, _ = integrate.quad(integrand, mid, hi, epsabs=tol * 1e-2, epsrel=tol, limit=200)
    return float(min(1.0, max(0.0, v1 + v2)))


# tests ---------------------------------------------------------------------

def ks_test(samples, reference, level: float = DEFAULT_LEVEL, name: str = "ks") -> StatReport:
    """Two-sided KS test of ``samples`` against ``reference``.

    Uses the exact small-sample distribution below 35 samples and the
    asymptotic one otherwise.
    """
    x = np.asarray(samples, dtype=float).ravel()
    params = {"reference": reference.describe(), "level": level}
    if x.size < MIN_KS_SAMPLES:
        return StatReport(name, math.nan, math.nan, int(x.size), INCONCLUSIVE, params,
                          {"reason": f"fewer than {MIN_KS_SAMPLES} samples"})
    if isinstance(reference, Empirical):
        y = np.asarray(reference.sample, dtype=float).ravel()
        method = "exact" if max(x.size, y.size) < EXACT_KS_BELOW else "asymp"
        res = stats.ks_2samp(x, y, method=method)
    else:
        method = "exact" if x.size < EXACT_KS_BELOW else "asymp"
        res = stats.kstest(x, reference.cdf, method=method)
    stat, pval = float(res.statistic), float(res.pvalue)
    verdict = PASS if pval >= level else FAIL
    return StatReport(name, stat, pval, int(x.size), verdict, params, {"method": method})


def spacings(scaled_sizes) -> np.ndarray:
    """Rows ``(1/x1, 1/x2 - 1/x1, ...)`` from rows of decreasing atoms."""
    x = np.atleast_2d(np.asarray(scaled_sizes, dtype=float))
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise ValueError("scaled sizes must be positive and finite")
    if np.any(np.diff(x, axis=1) > 0):
        raise ValueError("each row of scaled sizes must be nonincreasing")
    inv = 1.0 / x
    return np.diff(inv, axis=1, prepend=0.0)


def poisson_spacing_check(scaled_sizes, law: LimitLaw, k: int, level: float = DEFAULT_LEVEL,
                          rate: float | None = None) -> StatReport:
    """KS-test the first ``k`` inverse-atom spacings against ``Exp(rate)``.

    ``scaled_sizes`` holds one row per trial: the largest non-root cluster
    sizes times ``ln n / n``, decreasing.  ``rate`` defaults to
    ``law.intensity_const``.  Each spacing position is tested separately
    at level ``level / k``.
    """
    x = np.atleast_2d(np.asarray(scaled_sizes, dtype=float))
    if k < 1 or x.shape[1] < k:
        raise ValueError(f"need at least k={k} atoms per trial")
    sp = spacings(x[:, :k])
    rate = law.intensity_const if rate is None else rate
    ref = Exponential(rate)
    per = [ks_test(sp[:, j], ref, level=level / k, name=f"spacing_{j + 1}") for j in range(k)]
    pvals = [r.p_value for r in per]
    if any(r.verdict == INCONCLUSIVE for r in per):
        verdict = INCONCLUSIVE
    else:
        verdict = PASS if min(pvals) >= level / k else FAIL
    p_adj = min(1.0, k * min(pvals)) if all(np.isfinite(pvals)) else math.nan
    return StatReport(
        "poisson_spacings", max(r.statistic for r in per), p_adj, int(x.shape[0]), verdict,
        {"k": k, "level": level, "rate": rate, "beta": law.beta, "c": law.c},
        {"positions": [{"statistic": r.statistic, "p_value": r.p_value} for r in per],
         "mean_spacing": sp.mean(axis=0).tolist(), "theory_mean": 1.0 / rate},
    )


def age_vs_size_ordering(top_ranks, k: int, l: int) -> float:
    """Fraction of trials whose ``k`` largest non-root clusters have birth rank <= ``l``.

    ``top_ranks`` is either a sequence of cluster decompositions or an array
    of birth ranks of the largest non-root clusters (one row per trial,
    largest first; ``-1`` marks a missing cluster).
    """
    if k > l:
        raise ValueError("k must not exceed l")
    rows = []
    for item in top_ranks:
        if hasattr(item, "size") and hasattr(item, "generation"):
            sizes = item.size[1:]
            order = np.argsort(-sizes, kind="stable")[:k]
            rows.append(np.pad(order + 1, (0, k - order.size), constant_values=-1))
        else:
            rows.append(np.asarray(item)[:k])
    if not rows:
        return math.nan
    r = np.asarray(rows)
    # a trial with fewer than k non-root clusters has them all among the oldest
    ok = np.all((r <= l), axis=1)
    return float(np.mean(ok))


def co3_reference(law: LimitLaw, i: int) -> RatioLaw:
    """Law of ``c e^{-alpha c} W' / ((2 + beta) S_i)``."""
    return RatioLaw(shape=law.alpha, scale=2 + law.beta, i=i,
                    const=law.intensity_const / (2 + law.beta))


def co3_marginal_check(decomps, law: LimitLaw, i: int, level: float = DEFAULT_LEVEL,
                       min_trials: int = 500) -> StatReport:
    """KS test of the rescaled ``i``-th generation-1 cluster size.

    Each decomposition contributes ``(ln n / n) * size`` of its ``i``-th
    oldest generation-1 cluster (0 if it has fewer).
    """
    if i < 1:
        raise ValueError("i must be >= 1")
    vals = []
    for d in decomps:
        g1 = d.generation1_sizes()
        size = g1[i - 1] if g1.size >= i else 0
        vals.append(size * math.log(d.n) / d.n)
    ref = co3_reference(law, i)
    if len(vals) < min_trials:
        return StatReport("co3_marginal", math.nan, math.nan, len(vals), INCONCLUSIVE,
                          {"i": i, "level": level},
                          {"reason": f"fewer than {min_trials} trials"})
    rep = ks_test(vals, ref, level=level, name="co3_marginal")
    rep.params.update({"i": i, "beta": law.beta, "c": law.c})
    return rep


def one_sided_bound(estimate: float, stderr: float, bound: float, n: int,
                    n_se: float = 3.0, name: str = "bound") -> StatReport:
    """Pass unless ``estimate`` exceeds ``bound`` by more than ``n_se`` standard errors."""
    if stderr > 0:
        z = (estimate - bound) / stderr
        pval = float(stats.norm.sf(z))
    else:
        z = math.inf if estimate > bound else -math.inf
        pval = 0.0 if estimate > bound else 1.0
    verdict = PASS if z <= n_se else FAIL
    return StatReport(name, estimate / bound if bound > 0 else math.inf, pval, n, verdict,
                      {"n_se": n_se},
                      {"estimate": estimate, "stderr": stderr, "bound": bound, "z": z})


def mean_and_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    if v.size == 1:
        return float(v[0]), math.nan
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def within_relative(value: float, target: float, tol: float, n: int,
                    name: str, stderr: float = math.nan) -> StatReport:
    rel = abs(value - target) / abs(target)
    verdict = PASS if rel <= tol else FAIL
    return StatReport(name, rel, math.nan, n, verdict, {"tolerance": tol},
                      {"value": value, "target": target, "stderr": stderr})


def monotone_trend(values: Sequence[float], name: str, increasing: bool = False,
                   strict: bool = False, labels: Sequence[Any] = ()) -> StatReport:
    """Pass when ``values`` are nonincreasing (or nondecreasing) in order."""
    v = np.asarray(values, dtype=float)
    d = np.diff(v)
    if increasing:
        ok = np.all(d > 0) if strict else np.all(d >= 0)
    else:
        ok = np.all(d < 0) if strict else np.all(d <= 0)
    return StatReport(name, float(d.max() if not increasing else -d.min()) if d.size else 0.0,
                      math.nan, int(v.size), PASS if ok else FAIL,
                      {"direction": "increasing" if increasing else "decreasing",
                       "strict": strict},
                      {"values": v.tolist(), "labels": list(labels)})
