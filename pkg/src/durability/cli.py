"""Command-line front end: run, compare, tune, oracle and presets.

Exit codes: 0 success, 2 configuration error, 3 a run exhausted its step
budget without meeting its quality target.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import shutil
import sys
import tempfile
from contextlib import ExitStack

import numpy as np

from . import presets
from .config import ConfigError, RunConfig, load_config, parse_config
from .models import ExternalBlackBox, FiniteMarkovChain, ModelValidationError
from .query import DurabilityQuery, LevelPartition, QueryError
from .samplers import EstimateReport, run_query
from .tuner import _seed_for, greedy_search, pool_estimates

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3

SERIES_HEADER = ["steps", "estimate", "lo", "hi", "re"]

log = logging.getLogger("durability")


# ---------------------------------------------------------------------------
# helpers


def clean(obj):
    """Replace non-finite floats by None so the output is strict JSON."""
    if isinstance(obj, dict):
        return {k: clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(clean(obj), indent=2, sort_keys=True) + "\n"


def repeat_seed(seed: int, index: int) -> int:
    """Seed of repeat ``index``; derived so repeats never share streams."""
    return _seed_for(seed, 0x5EED, index)


def series_csv(series: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_HEADER)
    for row in series:
        w.writerow(["" if row[k] is None or (isinstance(row[k], float) and not math.isfinite(row[k]))
                    else repr(row[k]) for k in SERIES_HEADER])
    return buf.getvalue()


def aggregate(reports: list) -> dict:
    est = np.array([r.estimate for r in reports], dtype=float)
    steps = np.array([r.steps_total for r in reports], dtype=float)
    wall = np.array([r.wallclock for r in reports], dtype=float)
    n = len(reports)
    statuses: dict = {}
    for r in reports:
        statuses[r.status] = statuses.get(r.status, 0) + 1
    return {
        "repeats": n,
        "mean": float(est.mean()),
        "std": float(est.std(ddof=1)) if n > 1 else 0.0,
        "steps_mean": float(steps.mean()),
        "steps_total": int(steps.sum()),
        "wallclock": {"mean": float(wall.mean()), "total": float(wall.sum())},
        "statuses": statuses,
        "estimates": est.tolist(),
    }


def resolve_config(args, path=None, preset=None) -> RunConfig:
    if path is None and preset is None:
        path, preset = getattr(args, "config", None), getattr(args, "preset", None)
    if (path is None) == (preset is None):
        raise ConfigError("$", "give exactly one of --config or --preset")
    if preset is not None:
        try:
            data = presets.preset_config(preset)
        except KeyError as exc:
            raise ConfigError("preset", exc.args[0]) from exc
        cfg = parse_config(data)
    else:
        cfg = load_config(path)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        cfg.threads = args.threads
    if getattr(args, "repeats", None) is not None:
        if args.repeats < 1:
            raise ConfigError("repeats", "must be >= 1")
        cfg.repeats = args.repeats
    return cfg


class OutputDir:
    """Stage files in a scratch directory and move them into place only on success."""

    def __init__(self, path: str | None):
        self.path = path
        self.tmp = None

    def __enter__(self):
        if self.path is not None:
            parent = os.path.dirname(os.path.abspath(self.path)) or "."
            os.makedirs(parent, exist_ok=True)
            self.tmp = tempfile.mkdtemp(prefix=".durability-", dir=parent)
        return self

    def write(self, name: str, text: str) -> None:
        if self.tmp is None:
            return
        with open(os.path.join(self.tmp, name), "w") as fh:
            fh.write(text)

    def __exit__(self, exc_type, exc, tb):
        if self.tmp is None:
            return False
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        os.makedirs(self.path, exist_ok=True)
        for name in sorted(os.listdir(self.tmp)):
            os.replace(os.path.join(self.tmp, name), os.path.join(self.path, name))
        os.rmdir(self.tmp)
        return False


def open_session(stack: ExitStack, cfg: RunConfig):
    if isinstance(cfg.model, ExternalBlackBox):
        from .external import ExternalSession

        return stack.enter_context(ExternalSession(cfg.model))
    return None


def run_repeats(cfg: RunConfig, partition: LevelPartition | None = None, session=None) -> list:
    reports = []
    for i in range(cfg.repeats):
        sc = cfg.sampler_for(repeat_seed(cfg.seed, i), partition)
        rep = run_query(cfg.model, cfg.query, sc, session=session)
        rep.config = cfg.to_dict() | {"repeat": i, "repeat_seed": sc.seed}
        if partition is not None:
            rep.config["sampler"] = dict(rep.config["sampler"], boundaries=partition.to_list())
        log.info("repeat %d: estimate %.6g, %d steps, %s", i, rep.estimate, rep.steps_total, rep.status)
        reports.append(rep)
    return reports


def report_json(rep: EstimateReport) -> str:
    return dumps(rep.to_dict())


def _budget_failure(reports) -> bool:
    return any(r.status == "budget-exhausted" for r in reports)


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    with ExitStack() as stack:
        out = stack.enter_context(OutputDir(args.out))
        session = open_session(stack, cfg)
        reports = run_repeats(cfg, session=session)
        for i, rep in enumerate(reports):
            out.write(f"report-{i:03d}.json", report_json(rep))
            if args.format == "csv":
                out.write(f"series-{i:03d}.csv", series_csv(rep.series))
        agg = {"name": cfg.name, "method": cfg.sampler.method, "config": cfg.to_dict(), **aggregate(reports)}
        out.write("aggregate.json", dumps(agg))
    if args.format == "csv" and len(reports) == 1 and args.out is None:
        sys.stdout.write(series_csv(reports[0].series))
    else:
        sys.stdout.write(dumps(agg))
    return EXIT_BUDGET if _budget_failure(reports) else EXIT_OK


def cmd_compare(args) -> int:
    sources = [("config", p) for p in args.config or []] + [("preset", p) for p in args.preset or []]
    if len(sources) < 2:
        raise ConfigError("$", "compare needs at least two configs or presets")
    cfgs = []
    for kind, val in sources:
        cfg = resolve_config(args, path=val if kind == "config" else None, preset=val if kind == "preset" else None)
        cfgs.append(cfg)
    base = cfgs[0]
    for i, cfg in enumerate(cfgs[1:], start=1):
        if cfg.model.to_dict() != base.model.to_dict():
            raise ConfigError(f"[{i}].model", "compared configs must use the same model")
        if cfg.query != base.query:
            raise ConfigError(f"[{i}].query", "compared configs must use the same query")
    rows = []
    failed = False
    with ExitStack() as stack:
        out = stack.enter_context(OutputDir(args.out))
        for i, cfg in enumerate(cfgs):
            session = open_session(stack, cfg)
            warm_up(cfg, session)
            reports = run_repeats(cfg, session=session)
            failed |= _budget_failure(reports)
            agg = aggregate(reports)
            rows.append({
                "name": cfg.name or sources[i][1],
                "method": cfg.sampler.method,
                "estimate_mean": agg["mean"],
                "estimate_std": agg["std"],
                "steps_to_target": agg["steps_mean"],
                "wallclock_to_target": agg["wallclock"]["mean"],
                "bootstrap_seconds": float(np.mean([r.bootstrap_seconds for r in reports])),
                "statuses": agg["statuses"],
            })
            for j, rep in enumerate(reports):
                out.write(f"report-{i}-{j:03d}.json", report_json(rep))
        ref = rows[0]
        for row in rows:
            row["step_speedup"] = ref["steps_to_target"] / row["steps_to_target"] if row["steps_to_target"] else None
            row["time_speedup"] = (ref["wallclock_to_target"] / row["wallclock_to_target"]
                                   if row["wallclock_to_target"] else None)
        table = {"reference": ref["name"], "rows": rows}
        out.write("compare.json", dumps(table))
        if args.format == "csv":
            out.write("compare.csv", compare_csv(rows))
    sys.stdout.write(compare_csv(rows) if args.format == "csv" else dumps(table))
    return EXIT_BUDGET if failed else EXIT_OK


def warm_up(cfg: RunConfig, session=None) -> None:
    """Compile the kernels on a couple of roots so wallclock-to-target excludes it."""
    if session is not None:
        return
    sc = cfg.sampler_for(0)
    sc.min_roots, sc.max_roots, sc.record_series = 2, 2, False
    run_query(cfg.model, cfg.query, sc)


def compare_csv(rows) -> str:
    cols = ["name", "method", "estimate_mean", "estimate_std", "steps_to_target", "wallclock_to_target",
            "step_speedup", "time_speedup"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        w.writerow([row[c] for c in cols])
    return buf.getvalue()


def tune_and_run(cfg: RunConfig, run_final: bool = True, session=None):
    """Greedy search, then a final estimate on fresh roots.  Returns (result, report, summary)."""
    if cfg.sampler.method == "SRS":
        raise ConfigError("sampler.method", "tuning needs an MLSS method")
    if not isinstance(cfg.sampler.split_ratio, int):
        raise ConfigError("sampler.split_ratio", "tuning needs a single integer split ratio")
    ts = cfg.tune or presets_tune_default()
    result = greedy_search(
        cfg.model, cfg.query, cfg.sampler.split_ratio, ts.candidate_count, ts.trial_budget,
        rng_seed=_seed_for(cfg.seed, 0x7E4E), threads=cfg.threads, max_rounds=ts.max_rounds, session=session,
        allow_skips=cfg.sampler.method == "GMLSS", target=cfg.quality, overhead_cap=ts.overhead_cap,
    )
    summary = {"boundaries": result.plan.to_list(), "overhead_steps": result.overhead_steps,
               "committed_boundaries": len(result.plan.interior), "warning": result.warning,
               "stop_reason": result.stop_reason}
    report = None
    if run_final:
        sc = cfg.sampler_for(repeat_seed(cfg.seed, 0), result.plan)
        report = run_query(cfg.model, cfg.query, sc, session=session)
        report.config = cfg.to_dict() | {"tuned_boundaries": result.plan.to_list()}
        report.config["sampler"] = dict(report.config["sampler"], boundaries=result.plan.to_list())
        total = result.overhead_steps + report.steps_total
        summary.update({
            "final_steps": report.steps_total,
            "total_steps": total,
            "overhead_share": result.overhead_steps / total if total else 0.0,
            "estimate": report.estimate,
            "status": report.status,
        })
        if ts.pool:
            est, var = pool_estimates(result.evaluations, (report.estimate, report.variance))
            summary["pooled"] = {"estimate": est, "variance": var}
    return result, report, summary


def presets_tune_default():
    from .config import TuneSettings

    return TuneSettings()


def cmd_tune(args) -> int:
    cfg = resolve_config(args)
    with ExitStack() as stack:
        out = stack.enter_context(OutputDir(args.out))
        session = open_session(stack, cfg)
        result, report, summary = tune_and_run(cfg, not args.no_run, session)
        if result.warning:
            print(f"warning: {result.warning}", file=sys.stderr)
        out.write("plan.json", dumps({"boundaries": result.plan.to_list()}))
        out.write("audit.json", dumps(result.audit()))
        out.write("summary.json", dumps(summary))
        if report is not None:
            out.write("report.json", report_json(report))
            if args.format == "csv":
                out.write("series.csv", series_csv(report.series))
    if "overhead_share" in summary:
        print(f"tuning overhead: {summary['overhead_steps']} of {summary['total_steps']} invocations "
              f"({100 * summary['overhead_share']:.1f}%)", file=sys.stderr)
    sys.stdout.write(dumps(summary))
    return EXIT_BUDGET if report is not None and report.status == "budget-exhausted" else EXIT_OK


def load_chain(args):
    """(chain, horizon, beta, boundaries) from --chain JSON or a FiniteMarkovChain config/preset."""
    if args.chain is not None:
        try:
            with open(args.chain) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("$", f"cannot read chain file {args.chain}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("$", "chain file must be a JSON object")
        for key in ("transition", "z"):
            if key not in data:
                raise ConfigError(key, "is required")
        try:
            chain = FiniteMarkovChain(data["transition"], data["z"], data.get("start", 0))
            chain.validate()
        except ModelValidationError as exc:
            raise ConfigError(exc.field, str(exc).split(": ", 1)[-1]) from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError("transition", str(exc)) from exc
        horizon, beta = data.get("horizon"), data.get("beta")
        bounds = data.get("boundaries")
    else:
        cfg = resolve_config(args)
        if not isinstance(cfg.model, FiniteMarkovChain):
            raise ConfigError("model.variant", "the oracle needs a FiniteMarkovChain model")
        chain = cfg.model
        horizon, beta = cfg.query.horizon_s, cfg.query.threshold_beta
        bounds = cfg.sampler.partition.to_list()
    horizon = args.horizon if args.horizon is not None else horizon
    beta = args.beta if args.beta is not None else beta
    if args.boundaries is not None:
        bounds = [float(v) for v in args.boundaries.split(",")]
    if horizon is None:
        raise ConfigError("horizon", "is required")
    if beta is None:
        raise ConfigError("beta", "is required")
    try:
        query = DurabilityQuery(int(horizon), float(beta))
        query.validate()
        plan = LevelPartition(tuple(bounds)) if bounds is not None else LevelPartition.trivial()
    except (QueryError, ValueError) as exc:
        raise ConfigError("boundaries" if bounds is not None else "beta", str(exc)) from exc
    return chain, query, plan


def cmd_oracle(args) -> int:
    from .oracle import chain_balanced_plan, crossing_ratios, dp_boundary_crossing_probs, query_probability

    chain, query, plan = load_chain(args)
    probs = dp_boundary_crossing_probs(chain, plan, query)
    result = {
        "horizon": query.horizon_s,
        "beta": query.threshold_beta,
        "tau": query_probability(chain, query),
        "boundaries": plan.to_list(),
        "crossing_probs": list(probs),
        "crossing_ratios": crossing_ratios(probs),
    }
    if args.balanced is not None:
        result["balanced_plan"] = chain_balanced_plan(chain, query, args.balanced).to_list()
    sys.stdout.write(dumps(result))
    return EXIT_OK


def cmd_presets(args) -> int:
    for name in presets.preset_names():
        print(name)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _common(p, repeats=True):
    p.add_argument("--config", help="run-config JSON file")
    p.add_argument("--preset", help="shipped preset name (see 'presets')")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, help="root-tree worker threads")
    if repeats:
        p.add_argument("--repeats", type=int, help="override the number of repeats")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="durability", description="Durability query estimation by multilevel splitting")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a config or preset")
    _common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="compare configs on the same model and query")
    p.add_argument("--config", action="append", help="run-config JSON file (repeatable)")
    p.add_argument("--preset", action="append", help="preset name (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("tune", help="greedy partition search followed by a final run")
    _common(p, repeats=False)
    p.add_argument("--no-run", action="store_true", help="only search, skip the final estimate")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("oracle", help="exact probabilities for a finite Markov chain")
    p.add_argument("--chain", help='chain JSON {"transition", "z", "start", "horizon", "beta", "boundaries"}')
    p.add_argument("--config")
    p.add_argument("--preset")
    p.add_argument("--horizon", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--boundaries", help="comma separated boundaries including 0 and 1")
    p.add_argument("--balanced", type=int, metavar="M", help="also print the balanced plan with M levels")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("presets", help="list preset names")
    p.set_defaults(func=cmd_presets)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
