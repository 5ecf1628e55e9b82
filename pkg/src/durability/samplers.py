"""SRS, s-MLSS and g-MLSS samplers.

All three samplers share one depth-first split-tree kernel.  A path carries a
base level ``b`` (0 for roots); the first time its value reaches a level
``j > b`` it either hits the target (``j == m``) or lands in ``L_j``, where
it is replaced by ``ratios[j]`` offspring started from the landing state.
Levels ``b+1 .. j-1`` jumped over are recorded as skips.  The kernel only
accumulates counters, so every estimator below is a function of the per-root
counter rows.

Streams: root ``k`` uses ``derive(seed_key, k)``.  The first offspring of a
split continues its parent's stream; offspring ``c >= 1`` of a split at tree
depth ``d`` use ``derive(derive(parent_key, d), c)``.  Hence a split ratio of 1
replays exactly the unsplit path, and the result of a root never depends on
which thread simulated it.
"""

from __future__ import annotations

import logging
import math
from fractions import Fraction
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from . import rng
from .models import (
    BudgetExhausted,
    ExternalBlackBox,
    ModelSpec,
    StepBudget,
    builtin_fork,
    builtin_handle,
    builtin_step,
)
from .query import DurabilityQuery, LevelPartition, level_index, value_of

log = logging.getLogger(__name__)

METHODS = ("SRS", "SMLSS", "GMLSS")

# integer counter columns
I_HITS, I_STEPS, I_SKIPEV, I_BASE = 0, 1, 2, 3
# float counter columns
F_HITW, F_BASE = 0, 1


def _layout(m):
    """Column offsets of the per-level blocks (each of width m+1)."""
    w = m + 1
    ints = {"entries": I_BASE, "H": I_BASE + w, "skip": I_BASE + 2 * w, "succ": I_BASE + 3 * w,
            "width": I_BASE + 4 * w}
    floats = {"mu_w": F_BASE, "H_w": F_BASE + w, "skip_w": F_BASE + 2 * w, "width": F_BASE + 3 * w}
    return ints, floats


def _simulate_tree(step, fork, snapshot, model, init, horizon, bounds, beta, ratios, key, iout, fout):
    m = bounds.shape[0] - 1
    w1 = m + 1
    e_off = I_BASE
    h_off = I_BASE + w1
    s_off = I_BASE + 2 * w1
    succ_off = I_BASE + 3 * w1
    muw_off = F_BASE
    hw_off = F_BASE + w1
    sw_off = F_BASE + 2 * w1

    cap = max(m - 1, 1)
    ns = init.shape[0]
    st_state = np.empty((cap, ns))
    st_level = np.zeros(cap, dtype=np.int64)
    st_key = np.zeros(cap, dtype=np.uint64)
    st_ctr = np.zeros(cap, dtype=np.uint64)
    st_depth = np.zeros(cap, dtype=np.int64)
    st_next = np.zeros(cap, dtype=np.int64)
    st_r = np.zeros(cap, dtype=np.int64)
    st_w = np.zeros(cap)
    st_handle = np.zeros(cap, dtype=np.int64)
    sp = 0

    cur = init.copy()
    base = 0
    depth = 0
    weight = 1.0
    parent_r = 0
    ctr = np.uint64(0)
    fork(model, cur, -1, key, ctr)
    iout[e_off] += 1

    while True:
        while cur[0] < horizon:
            ctr = step(model, cur, key, ctr)
            iout[I_STEPS] += 1
            j = level_index(bounds, value_of(cur[1], beta))
            if j > base:
                if parent_r > 0:
                    iout[succ_off + base] += 1
                    fout[muw_off + base] += weight
                if j > base + 1:
                    iout[I_SKIPEV] += 1
                for k in range(base + 1, j):
                    iout[s_off + k] += 1
                    fout[sw_off + k] += weight
                iout[e_off + j] += 1
                if j == m:
                    iout[I_HITS] += 1
                    fout[F_HITW] += weight
                else:
                    iout[h_off + j] += 1
                    fout[hw_off + j] += weight
                    r = ratios[j]
                    st_state[sp, :] = cur
                    st_level[sp] = j
                    st_key[sp] = key
                    st_ctr[sp] = ctr
                    st_depth[sp] = depth
                    st_next[sp] = 0
                    st_r[sp] = r
                    st_w[sp] = weight / r
                    st_handle[sp] = snapshot(model, cur)
                    sp += 1
                break

        resumed = False
        while sp > 0:
            top = sp - 1
            c = st_next[top]
            if c >= st_r[top]:
                sp -= 1
                continue
            st_next[top] = c + 1
            cur[:] = st_state[top]
            base = st_level[top]
            depth = st_depth[top] + 1
            weight = st_w[top]
            parent_r = st_r[top]
            if c == 0:
                key = st_key[top]
                ctr = st_ctr[top]
            else:
                key = np.uint64(rng.derive2(st_key[top], st_depth[top], c))
                ctr = np.uint64(0)
            fork(model, cur, st_handle[top], key, ctr)
            resumed = True
            break
        if not resumed:
            break


_simulate_tree_jit = njit(nogil=True)(_simulate_tree)


@njit(nogil=True)
def _run_roots_jit(params, init, horizon, bounds, beta, ratios, skey, start, iout, fout):
    for i in range(iout.shape[0]):
        key = rng.derive(skey, start + i)
        _simulate_tree_jit(builtin_step, builtin_fork, builtin_handle, params, init, horizon, bounds, beta,
                           ratios, key, iout[i], fout[i])


def _run_roots_py(step, fork, snapshot, model, init, horizon, bounds, beta, ratios, skey, start, iout, fout):
    for i in range(iout.shape[0]):
        key = rng.derive(skey, np.uint64(start + i))
        _simulate_tree(step, fork, snapshot, model, init, horizon, bounds, beta, ratios, np.uint64(key),
                       iout[i], fout[i])


# ---------------------------------------------------------------------------
# per-root counters


@dataclass
class RootRecords:
    """Counter rows of a contiguous run of root trees (row k = root ``start + k``)."""

    m: int
    ints: np.ndarray
    floats: np.ndarray
    ratios: np.ndarray
    start: int = 0

    @classmethod
    def empty(cls, m: int, ratios, n: int = 0, start: int = 0) -> "RootRecords":
        il, fl = _layout(m)
        return cls(m, np.zeros((n, il["width"]), dtype=np.int64), np.zeros((n, fl["width"])),
                   _ratio_array(ratios, m), start)

    def __len__(self):
        return self.ints.shape[0]

    def _iblock(self, name):
        off = _layout(self.m)[0][name]
        return self.ints[:, off:off + self.m + 1]

    def _fblock(self, name):
        off = _layout(self.m)[1][name]
        return self.floats[:, off:off + self.m + 1]

    hits = property(lambda self: self.ints[:, I_HITS])
    steps = property(lambda self: self.ints[:, I_STEPS])
    skip_events = property(lambda self: self.ints[:, I_SKIPEV])
    entries = property(lambda self: self._iblock("entries"))
    H = property(lambda self: self._iblock("H"))
    skip = property(lambda self: self._iblock("skip"))
    hits_w = property(lambda self: self.floats[:, F_HITW])
    successes = property(lambda self: self._iblock("succ"))
    mu = property(lambda self: self.successes / self.ratios)
    mu_w = property(lambda self: self._fblock("mu_w"))
    H_w = property(lambda self: self._fblock("H_w"))
    skip_w = property(lambda self: self._fblock("skip_w"))

    def take(self, n: int) -> "RootRecords":
        return RootRecords(self.m, self.ints[:n], self.floats[:n], self.ratios, self.start)

    def select(self, idx) -> "RootRecords":
        return RootRecords(self.m, self.ints[idx], self.floats[idx], self.ratios, 0)

    def extend(self, other: "RootRecords") -> "RootRecords":
        return RootRecords(self.m, np.concatenate([self.ints, other.ints]),
                           np.concatenate([self.floats, other.floats]), self.ratios, self.start)

    def outcome(self, k: int) -> "RootPathOutcome":
        return RootPathOutcome(
            root_index=self.start + k,
            level_entries=tuple(int(v) for v in self.entries[k]),
            target_hits=int(self.hits[k]),
            steps=int(self.steps[k]),
            skip_events=int(self.skip_events[k]),
        )

    def gmlss_records(self) -> "GmlssRecords":
        return GmlssRecords(
            m=self.m,
            h_count=tuple(int(v) for v in self.H.sum(axis=0)),
            mu_sum=tuple(Fraction(int(c), int(r)) for c, r in zip(self.successes.sum(axis=0), self.ratios)),
            skip=tuple(int(v) for v in self.skip.sum(axis=0)),
            hits=int(self.hits.sum()),
            weighted_hits=float(self.hits_w.sum()),
        )


@dataclass(frozen=True)
class RootPathOutcome:
    root_index: int
    level_entries: tuple
    target_hits: int
    steps: int
    skip_events: int = 0


@dataclass(frozen=True)
class GmlssRecords:
    """Run-level g-MLSS counters per level: |H_i|, sum of mu(h) over H_i, n_i^skip."""

    m: int
    h_count: tuple
    mu_sum: tuple
    skip: tuple
    hits: int = 0
    weighted_hits: float = 0.0

    @classmethod
    def from_mu_lists(cls, mu_lists: Sequence[Sequence], skip: Sequence[int], hits: int = 0):
        """Build records from explicit per-level lists of mu(h); entry 0 stands for L_0 and is empty."""
        m = len(mu_lists)
        for level in mu_lists:
            for v in level:
                if not 0 <= v <= 1:
                    raise ValueError(f"mu(h) must lie in [0, 1], got {v}")
        mu = tuple(sum((Fraction(v) for v in level), Fraction(0)) for level in mu_lists) + (Fraction(0),)
        return cls(m, tuple(len(v) for v in mu_lists) + (0,), mu, tuple(skip) + (0,) * (m + 1 - len(skip)), hits)


# ---------------------------------------------------------------------------
# estimators


def srs_estimate(hits: int, n: int) -> float:
    return hits / n


def smlss_estimate(outcomes, r: int, m: int) -> float:
    """N_m / (N_0 r^(m-1)) over a list of RootPathOutcome (or a RootRecords)."""
    if isinstance(outcomes, RootRecords):
        n0, nm = len(outcomes), int(outcomes.hits.sum())
    else:
        n0, nm = len(outcomes), sum(o.target_hits for o in outcomes)
    if n0 < 1:
        raise ValueError("need at least one root outcome")
    # exact rational so that the g-MLSS product of a skip-free run matches bit for bit
    return float(Fraction(nm, n0 * int(r) ** (m - 1)))


def _gmlss_product(h, mu, skip, hits, n0, m):
    """Level-crossing product estimate; arrays have the level axis last."""
    h = np.asarray(h, dtype=float)
    mu = np.asarray(mu, dtype=float)
    skip = np.asarray(skip, dtype=float)
    n0 = np.asarray(n0, dtype=float)
    if m == 1:
        return np.asarray(hits, dtype=float) / n0
    est = (h[..., 1] + skip[..., 1]) / n0
    for i in range(1, m):
        den = h[..., i] + skip[..., i]
        num = mu[..., i] + skip[..., i]
        with np.errstate(invalid="ignore", divide="ignore"):
            est = est * np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return est


def gmlss_estimate(records: GmlssRecords, N0: int, weighted: bool = False) -> float:
    """Product of the per-boundary crossing estimates.

    The default follows the counting form: each landing state and each skipping
    path counts as one unit at its level.  ``weighted=True`` weights every unit
    by the product of inverse offspring counts along its lineage, which makes
    the product telescope to the weighted target hits over N0.
    """
    if N0 < 1:
        raise ValueError("N0 must be >= 1")
    if weighted and any(records.skip):
        return records.weighted_hits / N0
    # without skips both forms are the same rational number; use the exact one
    m = records.m
    if m == 1:
        return float(Fraction(records.hits, N0))
    est = Fraction(records.h_count[1] + records.skip[1], N0)
    for i in range(1, m):
        den = records.h_count[i] + records.skip[i]
        if den == 0:
            return 0.0
        est *= (Fraction(records.mu_sum[i]) + records.skip[i]) / den
    return float(est)


def records_estimate(rec: RootRecords, method: str, r: int = 1, weighted: bool = False) -> float:
    n0 = len(rec)
    if method == "SRS":
        return rec.hits.sum() / n0
    if method == "SMLSS":
        return smlss_estimate(rec, r, rec.m)
    return gmlss_estimate(rec.gmlss_records(), n0, weighted=weighted)


# ---------------------------------------------------------------------------
# simulation entry points


def _ratio_array(ratios, m) -> np.ndarray:
    out = np.ones(m + 1, dtype=np.int64)
    if isinstance(ratios, (int, np.integer)):
        out[:] = int(ratios)
    else:
        vals = list(ratios)
        if len(vals) == m + 1:
            out[:] = vals
        elif len(vals) == m - 1:
            out[1:m] = vals
        else:
            raise ValueError(f"per-level ratios need {m - 1} entries (levels 1..{m - 1}), got {len(vals)}")
    if (out[1:m] < 1).any():
        raise ValueError("split ratios must be >= 1")
    return out


class _Engine:
    """Binds a model and query to the tree kernel."""

    def __init__(self, model: ModelSpec, query: DurabilityQuery, partition: LevelPartition, ratios,
                 session=None):
        model.validate()
        query.validate()
        self.model = model
        self.query = query
        self.partition = partition
        self.m = partition.m
        self.bounds = partition.array()
        self.ratios = _ratio_array(ratios, self.m)
        self.init = model.initial_array()
        self.params = model.params()
        self.session = session
        if not model.compiled and session is None:
            raise ValueError("external models need an open ExternalSession")

    def run(self, skey, start: int, count: int, threads: int = 1) -> RootRecords:
        rec = RootRecords.empty(self.m, self.ratios, count, start)
        skey = np.uint64(skey)
        if count == 0:
            return rec
        args = (self.init, self.query.horizon_s, self.bounds, float(self.query.threshold_beta), self.ratios)
        if self.session is not None:
            s = self.session
            _run_roots_py(s.kernel_step, s.kernel_fork, s.kernel_snapshot, s, *args, skey, start,
                          rec.ints, rec.floats)
            return rec
        threads = max(1, min(threads, count))
        if threads == 1:
            _run_roots_jit(self.params, *args, skey, start, rec.ints, rec.floats)
            return rec
        edges = np.linspace(0, count, threads + 1).astype(int)

        def work(a, b):
            _run_roots_jit(self.params, *args, skey, start + a, rec.ints[a:b], rec.floats[a:b])

        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(lambda ab: work(*ab), zip(edges[:-1], edges[1:])))
        return rec


def simulate_roots(model, query, partition, ratios, seed: int, start: int, count: int, threads: int = 1,
                   session=None) -> RootRecords:
    """Counter rows of roots ``start .. start+count-1`` for the given seed."""
    return _Engine(model, query, partition, ratios, session).run(rng.seed_key(seed), start, count, threads)


def _single_root(model, query, partition, ratios, stream, budget, session):
    eng = _Engine(model, query, partition, ratios, session)
    rec = RootRecords.empty(eng.m, eng.ratios, 1)
    args = (eng.init, query.horizon_s, eng.bounds, float(query.threshold_beta), eng.ratios)
    if session is not None:
        _simulate_tree(session.kernel_step, session.kernel_fork, session.kernel_snapshot, session, *args,
                       np.uint64(stream.key), rec.ints[0], rec.floats[0])
    else:
        _simulate_tree_jit(builtin_step, builtin_fork, builtin_handle, eng.params, *args, np.uint64(stream.key),
                           rec.ints[0], rec.floats[0])
    if budget is not None:
        budget.charge(int(rec.steps[0]))
    return rec


def smlss_simulate_root(model, query, partition, r: int, stream: rng.Stream, budget: StepBudget | None = None,
                        session=None) -> RootPathOutcome:
    """One s-MLSS root tree.  ``skip_events`` counts steps that crossed more than
    one boundary; a nonzero value means s-MLSS results are unsound for the model."""
    rec = _single_root(model, query, partition, r, stream, budget, session)
    out = rec.outcome(0)
    if out.skip_events:
        log.warning("level skipping detected in s-MLSS root (%d events)", out.skip_events)
    return out


def gmlss_simulate_root(model, query, partition, ratios, stream: rng.Stream, budget: StepBudget | None = None,
                        session=None):
    rec = _single_root(model, query, partition, ratios, stream, budget, session)
    return rec.gmlss_records(), rec.outcome(0)


def srs_run(model, query, n_paths: int, seed: int = 0, threads: int = 1, budget: StepBudget | None = None,
            session=None) -> "EstimateReport":
    """Fixed-size simple random sampling."""
    from .quality import QualityTarget, confidence_interval, relative_error

    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    t0 = time.perf_counter()
    rec = simulate_roots(model, query, LevelPartition.trivial(), 1, seed, 0, n_paths, threads, session)
    discarded = 0
    if budget is not None:
        cum = np.cumsum(rec.steps)
        room = budget.remaining
        keep = int(np.searchsorted(cum, room, side="right")) if room is not None else n_paths
        discarded = n_paths - keep
        rec = rec.take(keep)
        budget.consumed += int(rec.steps.sum())
    n = len(rec)
    est = float(rec.hits.sum() / n) if n else 0.0
    var = est * (1 - est) / n if n else math.inf
    return EstimateReport(
        method="SRS", estimate=est, variance=var, variance_method="analytic-SRS", roots_N0=n,
        steps_total=int(rec.steps.sum()), wallclock=time.perf_counter() - t0, seed=seed,
        status="truncated" if discarded else "complete", discarded_roots=discarded,
        quality=QualityTarget().describe(est, var),
    )


# ---------------------------------------------------------------------------
# driver


@dataclass
class SamplerConfig:
    method: str = "SMLSS"
    split_ratio: object = 3
    partition: LevelPartition = field(default_factory=LevelPartition.trivial)
    seed: int = 0
    stop: object = None  # QualityTarget
    threads: int = 1
    min_roots: int = 100
    batch_growth: float = 0.05
    min_batch: int = 64
    max_roots: int | None = None
    bootstrap_runs: int = 200
    bootstrap_spacing: float = 1.25
    weighted: bool = False
    record_series: bool = True

    def validate(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.method == "SMLSS" and not isinstance(self.split_ratio, (int, np.integer)):
            raise ValueError("s-MLSS needs a single integer split ratio")
        _ratio_array(self.split_ratio, self.partition.m)
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def effective(self):
        """(partition, ratios) actually used by the kernel."""
        if self.method == "SRS":
            return LevelPartition.trivial(), 1
        return self.partition, self.split_ratio

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "split_ratio": self.split_ratio if isinstance(self.split_ratio, int) else list(self.split_ratio),
            "boundaries": self.partition.to_list(),
            "seed": self.seed,
            "threads": self.threads,
            "min_roots": self.min_roots,
            "batch_growth": self.batch_growth,
            "min_batch": self.min_batch,
            "max_roots": self.max_roots,
            "bootstrap_runs": self.bootstrap_runs,
            "weighted": self.weighted,
        }
        if self.stop is not None:
            d["stop"] = self.stop.to_dict()
        return d


@dataclass
class EstimateReport:
    method: str
    estimate: float
    variance: float
    variance_method: str
    roots_N0: int
    steps_total: int
    wallclock: float
    seed: int
    status: str
    quality: dict = field(default_factory=dict)
    skip_events: int = 0
    discarded_roots: int = 0
    bootstrap_seconds: float = 0.0
    series: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    records: RootRecords | None = field(default=None, repr=False)

    def to_dict(self, include_series: bool = False) -> dict:
        d = {
            "method": self.method,
            "estimate": self.estimate,
            "variance": self.variance,
            "variance_method": self.variance_method,
            "quality": self.quality,
            "roots_N0": self.roots_N0,
            "steps_total": self.steps_total,
            "skip_events": self.skip_events,
            "discarded_roots": self.discarded_roots,
            "status": self.status,
            "seed": self.seed,
            # all timing lives under one key so reports compare equal without it
            "wallclock": {"total": self.wallclock, "bootstrap": self.bootstrap_seconds},
            "config": self.config,
        }
        if include_series:
            d["series"] = self.series
        return d


def run_query(model: ModelSpec, query: DurabilityQuery, config: SamplerConfig, session=None) -> EstimateReport:
    """Simulate root trees in batches until the stopping rule holds at a barrier."""
    from . import quality as Q

    config.validate()
    stop = config.stop or Q.QualityTarget()
    partition, ratios = config.effective()
    eng = _Engine(model, query, partition, ratios, session)
    r = int(ratios) if isinstance(ratios, (int, np.integer)) else None
    skey = np.uint64(rng.seed_key(config.seed))
    threads = 1 if session is not None else config.threads
    budget = stop.budget
    t_start = time.perf_counter()

    rec = RootRecords.empty(eng.m, eng.ratios)
    series = []
    status = "running"
    discarded = 0
    boot = Q.BootstrapTracker(config.bootstrap_runs, config.bootstrap_spacing,
                              rng.Stream(rng.derive(skey, np.uint64(2**63))), config.weighted)
    next_batch = max(config.min_roots, 2)
    while True:
        if config.max_roots is not None:
            next_batch = min(next_batch, config.max_roots - len(rec))
        if budget is not None and len(rec):
            spent = int(rec.steps.sum())
            mean_cost = spent / len(rec)
            # enough roots to cover the remaining budget, plus slack for the overshooting root
            next_batch = min(next_batch, max(1, int(math.ceil((budget - spent) / max(mean_cost, 1.0) * 1.1)) + 1))
        batch = eng.run(skey, len(rec), next_batch, threads)
        if budget is not None:
            spent = int(rec.steps.sum())
            cum = spent + np.cumsum(batch.steps)
            keep = int(np.searchsorted(cum, budget, side="right"))
            if keep < len(batch):
                discarded = 1
                rec = rec.extend(batch.take(keep))
                status = "budget-exhausted"
            else:
                rec = rec.extend(batch)
        else:
            rec = rec.extend(batch)

        n0 = len(rec)
        est, var, vmethod = Q.current_variance(rec, config.method, r, boot)
        qual = stop.describe(est, var)
        if config.record_series:
            series.append({"steps": int(rec.steps.sum()), "estimate": est, "lo": qual["ci"][0],
                           "hi": qual["ci"][1], "re": qual["re"]})
        if status == "budget-exhausted":
            if stop.kind == "budget":
                status = "budget-reached"
            break
        if budget is not None and int(rec.steps.sum()) >= budget:
            status = "budget-reached" if stop.kind == "budget" else "budget-exhausted"
            break
        if stop.kind != "budget" and n0 >= config.min_roots and stop.met(est, var):
            status = "target-met"
            break
        if config.max_roots is not None and n0 >= config.max_roots:
            status = "max-roots"
            break
        next_batch = max(config.min_batch, int(n0 * config.batch_growth))

    n0 = len(rec)
    if n0 == 0:
        est, var, vmethod = 0.0, math.inf, "none"
    else:
        est, var, vmethod = Q.final_variance(rec, config.method, r, boot)
    qual = stop.describe(est, var)
    if series:
        series[-1].update({"estimate": est, "lo": qual["ci"][0], "hi": qual["ci"][1], "re": qual["re"]})
    skips = int(rec.skip_events.sum())
    if config.method == "SMLSS" and skips:
        log.warning("s-MLSS run saw %d level-skipping steps; the estimate is unreliable for this model", skips)
    return EstimateReport(
        method=config.method, estimate=float(est), variance=float(var), variance_method=vmethod,
        roots_N0=n0, steps_total=int(rec.steps.sum()), wallclock=time.perf_counter() - t_start,
        seed=config.seed, status=status, quality=qual, skip_events=skips, discarded_roots=discarded,
        bootstrap_seconds=boot.seconds, series=series, config=config.to_dict(), records=rec,
    )
