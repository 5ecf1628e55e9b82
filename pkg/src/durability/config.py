"""Run configuration: parsing, validation with field paths, serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .models import ModelSpec, ModelValidationError, model_from_dict
from .quality import QualityTarget
from .query import DurabilityQuery, LevelPartition, QueryError
from .samplers import METHODS, SamplerConfig


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


_SAMPLER_KEYS = {"method", "split_ratio", "boundaries", "min_roots", "batch_growth", "min_batch", "max_roots",
                 "bootstrap_runs", "bootstrap_spacing", "weighted"}
_TUNE_KEYS = {"candidate_count", "trial_budget", "overhead_cap", "max_rounds", "pool"}
_TOP_KEYS = {"name", "model", "query", "sampler", "stop", "tune", "repeats", "seed", "threads"}


@dataclass(frozen=True)
class TuneSettings:
    candidate_count: int = 5
    trial_budget: int = 100_000
    overhead_cap: float | None = 0.30
    max_rounds: int = 20
    pool: bool = False

    def to_dict(self) -> dict:
        return {"candidate_count": self.candidate_count, "trial_budget": self.trial_budget,
                "overhead_cap": self.overhead_cap, "max_rounds": self.max_rounds, "pool": self.pool}


@dataclass
class RunConfig:
    model: ModelSpec
    query: DurabilityQuery
    sampler: SamplerConfig
    quality: QualityTarget
    repeats: int = 1
    seed: int = 0
    threads: int = 1
    name: str = ""
    tune: TuneSettings | None = None

    def sampler_for(self, seed: int, partition: LevelPartition | None = None) -> SamplerConfig:
        s = self.sampler
        return SamplerConfig(
            method=s.method, split_ratio=s.split_ratio, partition=partition or s.partition, seed=seed,
            stop=self.quality, threads=self.threads, min_roots=s.min_roots, batch_growth=s.batch_growth,
            min_batch=s.min_batch, max_roots=s.max_roots, bootstrap_runs=s.bootstrap_runs,
            bootstrap_spacing=s.bootstrap_spacing, weighted=s.weighted,
        )

    def to_dict(self) -> dict:
        s = self.sampler
        d = {
            "name": self.name,
            "model": self.model.to_dict(),
            "query": self.query.to_dict(),
            "sampler": {
                "method": s.method,
                "split_ratio": s.split_ratio if isinstance(s.split_ratio, int) else list(s.split_ratio),
                "boundaries": s.partition.to_list(),
                "min_roots": s.min_roots,
                "batch_growth": s.batch_growth,
                "min_batch": s.min_batch,
                "max_roots": s.max_roots,
                "bootstrap_runs": s.bootstrap_runs,
                "bootstrap_spacing": s.bootstrap_spacing,
                "weighted": s.weighted,
            },
            "stop": self.quality.to_dict(),
            "repeats": self.repeats,
            "seed": self.seed,
            "threads": self.threads,
        }
        if self.tune is not None:
            d["tune"] = self.tune.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return parse_config(d)


def _need(d, key, path):
    if not isinstance(d, dict):
        raise ConfigError(path, "must be an object")
    if key not in d:
        raise ConfigError(f"{path}.{key}" if path else key, "is required")
    return d[key]


def _unknown(d, known, path):
    extra = sorted(set(d) - known)
    if extra:
        raise ConfigError(f"{path}.{extra[0]}" if path else extra[0], "unknown field")


def _int(v, path, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"must be an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(path, f"must be >= {lo}, got {v}")
    return v


def _num(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(path, f"must be a finite number, got {v!r}")
    return float(v)


def parse_config(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("$", "config must be a JSON object")
    _unknown(d, _TOP_KEYS, "")
    try:
        model = model_from_dict(_need(d, "model", ""))
        model.validate()
    except ModelValidationError as exc:
        path = exc.field if exc.field.startswith("model") else f"model.params.{exc.field}"
        raise ConfigError(path, str(exc).split(": ", 1)[-1]) from exc
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("model", str(exc)) from exc

    q = _need(d, "query", "")
    _unknown(q, {"horizon", "beta"}, "query")
    horizon = _int(_need(q, "horizon", "query"), "query.horizon", 1)
    beta = _num(_need(q, "beta", "query"), "query.beta")
    try:
        query = DurabilityQuery(horizon, beta)
        query.validate()
    except QueryError as exc:
        raise ConfigError("query.beta", str(exc)) from exc

    s = d.get("sampler", {})
    if not isinstance(s, dict):
        raise ConfigError("sampler", "must be an object")
    _unknown(s, _SAMPLER_KEYS, "sampler")
    method = s.get("method", "SMLSS")
    if method not in METHODS:
        raise ConfigError("sampler.method", f"must be one of {list(METHODS)}, got {method!r}")
    try:
        partition = LevelPartition(tuple(s.get("boundaries", (0.0, 1.0))))
    except (QueryError, TypeError, ValueError) as exc:
        raise ConfigError("sampler.boundaries", str(exc)) from exc
    ratio = s.get("split_ratio", 1 if method == "SRS" else 3)
    if isinstance(ratio, list):
        ratio = tuple(_int(v, f"sampler.split_ratio[{i}]", 1) for i, v in enumerate(ratio))
    else:
        ratio = _int(ratio, "sampler.split_ratio", 1)
    max_roots = s.get("max_roots")
    sampler = SamplerConfig(
        method=method, split_ratio=ratio, partition=partition,
        min_roots=_int(s.get("min_roots", 100), "sampler.min_roots", 2),
        batch_growth=_num(s.get("batch_growth", 0.05), "sampler.batch_growth"),
        min_batch=_int(s.get("min_batch", 64), "sampler.min_batch", 1),
        max_roots=None if max_roots is None else _int(max_roots, "sampler.max_roots", 1),
        bootstrap_runs=_int(s.get("bootstrap_runs", 200), "sampler.bootstrap_runs", 2),
        bootstrap_spacing=_num(s.get("bootstrap_spacing", 1.25), "sampler.bootstrap_spacing"),
        weighted=bool(s.get("weighted", False)),
    )
    try:
        sampler.validate()
    except ValueError as exc:
        raise ConfigError("sampler.split_ratio", str(exc)) from exc

    stop = d.get("stop", {"kind": "ci"})
    if not isinstance(stop, dict):
        raise ConfigError("stop", "must be an object")
    try:
        quality = QualityTarget.from_dict(stop)
    except (TypeError, ValueError) as exc:
        raise ConfigError("stop", str(exc)) from exc

    tune = None
    if "tune" in d and d["tune"] is not None:
        t = d["tune"]
        if not isinstance(t, dict):
            raise ConfigError("tune", "must be an object")
        _unknown(t, _TUNE_KEYS, "tune")
        cap = t.get("overhead_cap", 0.30)
        tune = TuneSettings(
            candidate_count=_int(t.get("candidate_count", 5), "tune.candidate_count", 1),
            trial_budget=_int(t.get("trial_budget", 100_000), "tune.trial_budget", 1),
            overhead_cap=None if cap is None else _num(cap, "tune.overhead_cap"),
            max_rounds=_int(t.get("max_rounds", 20), "tune.max_rounds", 1),
            pool=bool(t.get("pool", False)),
        )

    return RunConfig(
        model=model, query=query, sampler=sampler, quality=quality,
        repeats=_int(d.get("repeats", 1), "repeats", 1),
        seed=_int(d.get("seed", 0), "seed", 0),
        threads=_int(d.get("threads", 1), "threads", 1),
        name=str(d.get("name", "")),
        tune=tune,
    )


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError("$", f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON in {path}: {exc}") from exc
    return parse_config(data)
