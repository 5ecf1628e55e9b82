"""Partition plan evaluation from pilot runs and the adaptive greedy search.

Pilot budgets are counted in simulator invocations.  A pilot keeps the roots
that finish within the budget; the root that would overrun it is dropped, and
the evaluation is charged the full budget.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .query import DurabilityQuery, LevelPartition
from .samplers import RootRecords, _Engine, _ratio_array, records_estimate

log = logging.getLogger(__name__)


@dataclass
class PlanEvaluation:
    plan: LevelPartition
    eval_value: float
    pilot_roots: int
    mean_root_cost_cB: float
    var_target_hits: float
    r: int = 3
    t0: int = 0
    steps_charged: int = 0
    informative: bool = True
    estimate: float = 0.0
    records: RootRecords | None = field(default=None, repr=False)
    skip_events: int = 0
    rejected: str | None = None

    @property
    def score(self) -> float:
        """Ranking value: the evaluation, or infinity for a rejected plan."""
        return math.inf if self.rejected else self.eval_value

    def to_dict(self) -> dict:
        return {
            "boundaries": self.plan.to_list(),
            "eval": self.eval_value if math.isfinite(self.eval_value) else None,
            "informative": self.informative,
            "pilot_roots": self.pilot_roots,
            "c_B": self.mean_root_cost_cB if math.isfinite(self.mean_root_cost_cB) else None,
            "var_target_hits": self.var_target_hits,
            "pilot_estimate": self.estimate,
            "steps_charged": self.steps_charged,
            "skip_events": self.skip_events,
            "rejected": self.rejected,
        }


def _seed_for(seed: int, *tags: int) -> int:
    key = np.uint64(rng.seed_key(seed))
    for t in tags:
        key = np.uint64(rng.derive(key, np.uint64(t)))
    return int(key) & 0x7FFF_FFFF_FFFF_FFFF


def _pilot(model, query, plan, r, t0, seed, threads=1, session=None):
    eng = _Engine(model, query, plan, r, session)
    skey = rng.seed_key(seed)
    rec = RootRecords.empty(plan.m, eng.ratios)
    spent = 0
    truncated = False
    batch = 32
    while True:
        new = eng.run(skey, len(rec), batch, threads)
        cum = spent + np.cumsum(new.steps)
        keep = int(np.searchsorted(cum, t0, side="right"))
        rec = rec.extend(new.take(keep))
        spent = int(cum[keep - 1]) if keep else spent
        if keep < len(new):
            truncated = True
            break
        if spent >= t0:
            break
        mean_cost = spent / len(rec)
        batch = max(32, min(4 * len(rec), int(math.ceil((t0 - spent) / max(mean_cost, 1.0) * 1.1)) + 1))
    return rec, (t0 if truncated else spent)


def eval_partition(model, query: DurabilityQuery, plan: LevelPartition, r: int = 3, trial_budget_t0: int = 100_000,
                   rng_seed: int = 0, threads: int = 1, session=None, allow_skips: bool = True) -> PlanEvaluation:
    """Pilot-run evaluation var(N_m per root) * c_B / (r^(2(m-1)) * t0).

    A pilot without target hits has evaluation 0 but cannot rank plans, so it
    is marked uninformative and rejected.  A pilot in which no root finished
    has infinite cost.  With ``allow_skips=False`` (tuning for s-MLSS) a pilot
    that skipped a level rejects the plan, since s-MLSS would be unsound on it.
    """
    if trial_budget_t0 <= 0:
        raise ValueError("trial budget must be > 0")
    rec, charged = _pilot(model, query, plan, r, int(trial_budget_t0), rng_seed, threads, session)
    n = len(rec)
    m = plan.m
    if n == 0:
        return PlanEvaluation(plan, math.inf, 0, math.inf, 0.0, r, trial_budget_t0, charged, False, 0.0, rec,
                              rejected="no finished roots")
    c_b = trial_budget_t0 / n
    # Per-root hits weighted by inverse offspring counts, rescaled by the full
    # split factor.  Without skips this is exactly the raw hit count; with
    # skips (for instance two boundaries between the same integer scores) it
    # stops crediting splits that never happen.
    scale = float(np.prod(rec.ratios[1:m].astype(float)))
    hits = rec.hits_w * scale
    var = float(hits.var(ddof=1)) if n > 1 else 0.0
    value = var * c_b / (scale ** 2 * trial_budget_t0)
    informative = bool(rec.hits.sum() > 0) and n > 1
    method = "SMLSS" if isinstance(r, (int, np.integer)) else "GMLSS"
    est = float(records_estimate(rec, method, r))
    skips = int(rec.skip_events.sum())
    rejected = None
    if not informative:
        rejected = "no target hits"
    elif skips and not allow_skips:
        rejected = "level skipping"
    return PlanEvaluation(plan, value, n, c_b, var, r, trial_budget_t0, charged, informative, est, rec, skips,
                          rejected)


def estimate_advancement_probs(pilot, plan: LevelPartition | None = None, r=3):
    """Per-level advancement probabilities p_1 = N_1/N_0, p_i = N_i/(r N_{i-1}).

    ``pilot`` is a RootRecords, a PlanEvaluation or a sequence of entry
    counts N_0..N_m.  Returns (probs, low_confidence) where low_confidence
    flags levels whose previous level was never entered.
    """
    if isinstance(pilot, PlanEvaluation):
        plan = plan or pilot.plan
        r = pilot.r
        pilot = pilot.records
    if isinstance(pilot, RootRecords):
        counts = [int(v) for v in pilot.entries.sum(axis=0)]
        ratios = pilot.ratios
    else:
        counts = [int(v) for v in pilot]
        ratios = _ratio_array(r, len(counts) - 1)
    m = len(counts) - 1
    if plan is not None and plan.m != m:
        raise ValueError(f"plan has {plan.m} levels but counters cover {m}")
    probs, low = [], []
    for i in range(1, m + 1):
        denom = counts[i - 1] * (1 if i == 1 else int(ratios[i - 1]))
        probs.append(counts[i] / denom if denom else 0.0)
        low.append(denom == 0)
    return probs, low


def balanced_growth_variance(tau: float, m: int, N0: int) -> float:
    """Branching-process variance m(1-p)p^(2m-1)/N0 with p = tau^(1/m)."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    if m < 1 or N0 < 1:
        raise ValueError("m and N0 must be >= 1")
    p = tau ** (1.0 / m)
    return m * (1 - p) * p ** (2 * m - 1) / N0


def predicted_run_cost(best: PlanEvaluation, target) -> float | None:
    """Invocations a run under ``best.plan`` needs to meet ``target``.

    eval * t0 is the estimator variance times the budget spent, so a run
    of T invocations reaches variance eval * t0 / T.
    """
    if best is None or target is None or not math.isfinite(best.score):
        return None
    from .quality import z_value

    work = best.eval_value * best.t0
    if target.kind == "re":
        if best.estimate <= 0:
            return None
        return work / (target.re_target * best.estimate) ** 2
    if target.kind == "ci":
        return work * (z_value(target.confidence) / target.ci_halfwidth) ** 2
    return float(target.budget)


@dataclass
class TuningResult:
    plan: LevelPartition
    best: PlanEvaluation | None
    rounds: list
    overhead_steps: int
    warning: str | None = None
    stop_reason: str = ""

    @property
    def evaluations(self) -> list:
        return [e for rnd in self.rounds for e in rnd["evaluations"]]

    def audit(self) -> dict:
        return {
            "boundaries": self.plan.to_list(),
            "overhead_steps": self.overhead_steps,
            "warning": self.warning,
            "stop_reason": self.stop_reason,
            "rounds": [
                {
                    "round": rnd["round"],
                    "interval": rnd["interval"],
                    "candidates": rnd["candidates"],
                    "evals": [e.to_dict() for e in rnd["evaluations"]],
                    "chosen": rnd["chosen"],
                    "committed": rnd["committed"],
                    "best_eval": rnd["best_eval"],
                }
                for rnd in self.rounds
            ],
        }


def greedy_search(model, query: DurabilityQuery, r: int = 3, candidate_count: int = 5,
                  trial_budget_t0: int = 100_000, rng_seed: int = 0, threads: int = 1, max_rounds: int = 20,
                  session=None, allow_skips: bool = False, target=None, overhead_cap: float | None = 0.30
                  ) -> TuningResult:
    """Adaptive greedy partition search with its full audit trail.

    Each round draws ``candidate_count`` uniform boundaries inside the current
    interval and pilots every extended plan for ``trial_budget_t0``
    invocations.  The best candidate is committed if it beats the best
    evaluation so far; the search then narrows to the level with the smallest
    estimated advancement probability.

    With a quality ``target`` and ``overhead_cap`` set, no new round starts
    once tuning would exceed that share of the predicted total cost.
    """
    if candidate_count < 1:
        raise ValueError("candidate_count must be >= 1")
    gen = np.random.default_rng(_seed_for(rng_seed, 0))
    plan = LevelPartition.trivial()
    best: PlanEvaluation | None = None
    opt_eval = math.inf
    lo, hi = 0.0, 1.0
    rounds = []
    overhead = 0
    warning = None
    reason = "max rounds"
    for rnd in range(1, max_rounds + 1):
        if overhead_cap is not None and best is not None:
            final = predicted_run_cost(best, target)
            nxt = overhead + candidate_count * trial_budget_t0
            if final is not None and nxt > overhead_cap * (nxt + final):
                reason = "overhead cap"
                break
        cands = sorted(float(v) for v in gen.uniform(lo, hi, candidate_count) if lo < v < hi)
        evals = []
        for k, v in enumerate(cands):
            if v in plan.boundaries:
                continue
            ev = eval_partition(model, query, plan.with_boundary(v), r, trial_budget_t0,
                                _seed_for(rng_seed, rnd, k + 1), threads, session, allow_skips)
            overhead += ev.steps_charged
            evals.append(ev)
        # ties resolve to the smallest boundary since candidates are sorted
        winner = min(evals, key=lambda e: e.score) if evals else None
        entry = {"round": rnd, "interval": [lo, hi], "candidates": cands, "evaluations": evals,
                 "chosen": None, "committed": False, "best_eval": None}
        rounds.append(entry)
        if winner is None or not math.isfinite(winner.score):
            reason = "no usable candidate"
            if rnd == 1:
                warning = "first tuning round was uninformative (no usable pilot); using the trivial plan"
                log.warning(warning)
            break
        new_v = next(b for b in winner.plan.interior if b not in plan.boundaries)
        entry["chosen"] = new_v
        if winner.score < opt_eval:
            plan = winner.plan
            opt_eval = winner.score
            best = winner
            entry["committed"] = True
            entry["best_eval"] = opt_eval
            probs, _ = estimate_advancement_probs(winner)
            i = int(np.argmin(probs))
            lo, hi = plan.boundaries[i], plan.boundaries[i + 1]
        else:
            entry["best_eval"] = opt_eval
            reason = "no improvement"
            break
    return TuningResult(plan, best, rounds, overhead, warning, reason)


def greedy_partition(model, query: DurabilityQuery, r: int = 3, candidate_count: int = 5,
                     trial_budget_t0: int = 100_000, rng_seed: int = 0, threads: int = 1, session=None,
                     **kwargs) -> LevelPartition:
    return greedy_search(model, query, r, candidate_count, trial_budget_t0, rng_seed, threads,
                         session=session, **kwargs).plan


def pool_estimates(evaluations, final=None) -> tuple:
    """Inverse-variance pooling of per-plan pilot estimates (and optionally the
    final run's (estimate, variance)).  Off by default in the CLI because the
    pilot variances are themselves noisy.  Returns (estimate, variance)."""
    pairs = []
    for ev in evaluations:
        if ev.informative and ev.pilot_roots > 1 and isinstance(ev.r, (int, np.integer)):
            var = ev.var_target_hits / (ev.pilot_roots * float(ev.r) ** (2 * (ev.plan.m - 1)))
            if var > 0:
                pairs.append((ev.estimate, var))
    if final is not None and final[1] > 0:
        pairs.append(final)
    if not pairs:
        raise ValueError("no informative estimates to pool")
    w = np.array([1 / v for _, v in pairs])
    est = np.array([e for e, _ in pairs])
    return float((w * est).sum() / w.sum()), float(1 / w.sum())
