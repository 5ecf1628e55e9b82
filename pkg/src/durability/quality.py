"""Variance estimators, confidence intervals, relative error and stopping rules."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .rng import Stream

VARIANCE_METHODS = ("analytic-SRS", "analytic-SMLSS", "two-level-skip", "bootstrap")


class InsufficientSamples(ValueError):
    pass


@dataclass(frozen=True)
class VarianceEstimate:
    value: float
    method: str

    def __post_init__(self):
        if self.method not in VARIANCE_METHODS:
            raise ValueError(f"unknown variance method {self.method!r}")
        if not self.value >= 0:
            raise ValueError(f"variance must be >= 0, got {self.value}")

    def __float__(self):
        return float(self.value)


def z_value(confidence: float) -> float:
    if confidence == 0.95:
        return 1.96
    return NormalDist().inv_cdf(0.5 + confidence / 2)


@dataclass(frozen=True)
class QualityTarget:
    """One active stopping criterion: CI half-width, relative error or step budget.

    ``budget`` doubles as a safety cap for CI and RE targets.
    """

    kind: str = "ci"
    ci_halfwidth: float = 0.01
    confidence: float = 0.95
    re_target: float = 0.10
    budget: int | None = None

    def __post_init__(self):
        if self.kind not in ("ci", "re", "budget"):
            raise ValueError(f"stop kind must be ci, re or budget, got {self.kind!r}")
        if self.kind == "budget" and self.budget is None:
            raise ValueError("a budget stopping rule needs a budget")
        for name in ("ci_halfwidth", "re_target"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")
        if self.budget is not None and self.budget <= 0:
            raise ValueError("budget must be > 0")

    def met(self, estimate: float, variance: float) -> bool:
        if self.kind == "ci":
            # a sample without hits says nothing about the interval width
            return estimate > 0 and z_value(self.confidence) * math.sqrt(variance) <= self.ci_halfwidth
        if self.kind == "re":
            re = relative_error(estimate, variance)
            return re is not None and re <= self.re_target
        return False

    def describe(self, estimate: float, variance: float) -> dict:
        lo, hi = confidence_interval(estimate, variance, self.confidence)
        return {
            "kind": self.kind,
            "confidence": self.confidence,
            "ci": [lo, hi],
            "halfwidth": (hi - lo) / 2,
            "re": relative_error(estimate, variance),
            "target": {"ci": self.ci_halfwidth, "re": self.re_target, "budget": self.budget}[self.kind],
            "met": self.met(estimate, variance),
        }

    def to_dict(self) -> dict:
        return {"kind": self.kind, "ci_halfwidth": self.ci_halfwidth, "confidence": self.confidence,
                "re_target": self.re_target, "budget": self.budget}

    @classmethod
    def from_dict(cls, d: dict) -> "QualityTarget":
        known = {"kind", "ci_halfwidth", "confidence", "re_target", "budget"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown stop fields {sorted(extra)}")
        return cls(**d)


def confidence_interval(estimate: float, variance: float, confidence: float = 0.95) -> tuple:
    if variance < 0:
        raise ValueError("variance must be >= 0")
    if not math.isfinite(variance):
        return (-math.inf, math.inf)
    h = z_value(confidence) * math.sqrt(variance)
    return (estimate - h, estimate + h)


def relative_error(estimate: float, variance: float):
    """sqrt(variance) / estimate; None when the estimate is 0."""
    if variance < 0:
        raise ValueError("variance must be >= 0")
    if estimate <= 0:
        return None
    return math.sqrt(variance) / estimate


def srs_variance(estimate: float, n: int) -> VarianceEstimate:
    if n < 1:
        raise InsufficientSamples("need at least one path")
    return VarianceEstimate(estimate * (1 - estimate) / n, "analytic-SRS")


def _hits_of(outcomes) -> np.ndarray:
    if hasattr(outcomes, "hits") and not isinstance(outcomes, (list, tuple)):
        return np.asarray(outcomes.hits, dtype=float)
    return np.array([o.target_hits if hasattr(o, "target_hits") else o for o in outcomes], dtype=float)


def smlss_variance(outcomes, r: int, m: int) -> VarianceEstimate:
    """Sample variance of per-root target hits scaled by 1 / (N0 r^(2(m-1)))."""
    hits = _hits_of(outcomes)
    n0 = hits.shape[0]
    if n0 < 2:
        raise InsufficientSamples(f"s-MLSS variance needs N0 >= 2, got {n0}")
    s2 = float(hits.var(ddof=1))
    return VarianceEstimate(s2 / (n0 * float(r) ** (2 * (m - 1))), "analytic-SMLSS")


def two_level_skip_variance(p01: float, p12: float, p02: float, var_N2_1: float, N0: int,
                            r: int) -> VarianceEstimate:
    """Variance of the two-level estimator when roots may skip straight to the target.

    p01: a root lands in level 1; p02: a root skips to the target; p12: an
    offspring started in level 1 reaches the target; var_N2_1: variance of
    the number of target hits among the r offspring of one landing state.
    """
    for name, p in (("p01", p01), ("p12", p12), ("p02", p02)):
        if not 0 <= p <= 1:
            raise ValueError(f"{name} must lie in [0, 1], got {p}")
    if p01 == 0:
        p12 = 0.0
    v = (p12 ** 2 * p01 * (1 - p01) + p01 * var_N2_1 / r ** 2 + p02 * (1 - p02)) / N0
    return VarianceEstimate(v, "two-level-skip")


def two_level_skip_inputs(records, r: int) -> dict:
    """Plug-in inputs of two_level_skip_variance from a two-level run's root records.

    p01 = N1/N0, p02 = (roots skipping into the target)/N0, p12 = (offspring
    hits)/(N1 r); var_N2_1 is the sample variance of offspring hits per landing root.
    """
    if records.m != 2:
        raise ValueError("two-level inputs need a partition with m = 2")
    n0 = len(records)
    landed = records.H[:, 1] > 0
    skipped = records.skip[:, 1] > 0
    n1 = int(landed.sum())
    per_landing = records.hits[landed].astype(float)
    p12 = float(per_landing.sum() / (n1 * r)) if n1 else 0.0
    var = float(per_landing.var(ddof=1)) if n1 > 1 else 0.0
    return {"p01": n1 / n0, "p02": float(skipped.sum()) / n0, "p12": p12, "var_N2_1": var, "N0": n0, "r": r}


def _gmlss_columns(records, weighted: bool) -> np.ndarray:
    if weighted:
        return records.hits_w[:, None].astype(float)
    return np.hstack([records.H, records.mu, records.skip, records.hits[:, None]]).astype(float)


def _gmlss_from_totals(tot: np.ndarray, n0: int, m: int, weighted: bool) -> np.ndarray:
    from .samplers import _gmlss_product

    if weighted:
        return tot[:, 0] / n0
    w = m + 1
    return _gmlss_product(tot[:, :w], tot[:, w:2 * w], tot[:, 2 * w:3 * w], tot[:, 3 * w], n0, m)


def bootstrap_variance(outcome_pool, n_boot_runs: int = 200, rng=None, weighted: bool = False) -> VarianceEstimate:
    """Resample root trees with replacement and take the spread of the g-MLSS estimate.

    ``outcome_pool`` is a RootRecords (one row per root tree).  Returns
    sum((tau_i - mean)^2) / N over N = n_boot_runs resamples of the pool size.
    """
    n = len(outcome_pool)
    if n < 2:
        raise InsufficientSamples("bootstrap needs at least two root trees")
    if n_boot_runs < 2:
        raise ValueError("n_boot_runs must be >= 2")
    gen = _generator(rng)
    cols = _gmlss_columns(outcome_pool, weighted)
    tot = np.empty((n_boot_runs, cols.shape[1]))
    for b in range(n_boot_runs):
        counts = np.bincount(gen.integers(0, n, n), minlength=n).astype(float)
        tot[b] = counts @ cols
    est = _gmlss_from_totals(tot, n, outcome_pool.m, weighted)
    return VarianceEstimate(float(np.mean((est - est.mean()) ** 2)), "bootstrap")


def _generator(rng) -> np.random.Generator:
    if rng is None:
        return np.random.default_rng(0)
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, Stream):
        return rng.numpy_generator()
    return np.random.default_rng(rng)


class BootstrapTracker:
    """Re-runs the bootstrap only when the pool has grown by ``spacing``; in between
    the last value is carried forward with 1/N0 scaling."""

    def __init__(self, n_runs: int, spacing: float, stream: Stream, weighted: bool = False):
        self.n_runs = n_runs
        self.spacing = spacing
        self.gen = stream.numpy_generator()
        self.weighted = weighted
        self.last_n = 0
        self.last_var = math.inf
        self.seconds = 0.0
        self.evaluations = 0

    def _compute(self, rec):
        t = time.perf_counter()
        self.last_var = bootstrap_variance(rec, self.n_runs, self.gen, self.weighted).value
        self.last_n = len(rec)
        self.seconds += time.perf_counter() - t
        self.evaluations += 1

    def variance(self, rec, force: bool = False) -> float:
        n = len(rec)
        if n < 2:
            return math.inf
        if force or self.last_n == 0 or n >= self.last_n * self.spacing:
            if n != self.last_n:
                self._compute(rec)
        return self.last_var * self.last_n / n


def current_variance(rec, method: str, r, boot: BootstrapTracker, final: bool = False):
    """(estimate, variance, variance method) for the records gathered so far."""
    from .samplers import records_estimate

    n0 = len(rec)
    est = float(records_estimate(rec, method, r or 1, boot.weighted))
    if method == "SRS" or rec.m == 1:
        return est, est * (1 - est) / n0, "analytic-SRS"
    if method == "SMLSS":
        if n0 < 2:
            return est, math.inf, "analytic-SMLSS"
        return est, smlss_variance(rec, r, rec.m).value, "analytic-SMLSS"
    return est, boot.variance(rec, force=final), "bootstrap"


def final_variance(rec, method: str, r, boot: BootstrapTracker):
    return current_variance(rec, method, r, boot, final=True)
