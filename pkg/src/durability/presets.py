"""Shipped experiment presets.

Preset names are ``<model>-<query>-<method>``, for example
``queue-medium-srs`` or ``volatile-cpp-tiny-gmlss``.  Medium and Small
queries stop at a 0.01 absolute CI half-width, Tiny and Rare ones at 10%
relative error.  MLSS presets use r = 3 and the balanced-growth plans below,
produced by ``scripts/balanced_plans.py``.
"""

from __future__ import annotations

import numpy as np

from .models import CompoundPoisson, FiniteMarkovChain, TandemQueue, VolatileWrapper

HORIZON = 500

PRESET_QUERIES = {
    "queue-medium": ("queue", HORIZON, 20.0),
    "queue-small": ("queue", HORIZON, 26.0),
    "queue-tiny": ("queue", HORIZON, 40.0),
    "queue-rare": ("queue", HORIZON, 45.0),
    "cpp-medium": ("cpp", HORIZON, 300.0),
    "cpp-small": ("cpp", HORIZON, 350.0),
    "cpp-tiny": ("cpp", HORIZON, 450.0),
    "cpp-rare": ("cpp", HORIZON, 500.0),
    "volatile-cpp-tiny": ("volatile-cpp", HORIZON, 700.0),
    "volatile-cpp-rare": ("volatile-cpp", HORIZON, 1000.0),
    "volatile-queue-tiny": ("volatile-queue", HORIZON, 65.0),
    "volatile-queue-rare": ("volatile-queue", HORIZON, 75.0),
}

# interior boundaries of the balanced-growth plans (value-function units)
BALANCED_PLANS = {
    "queue-medium": [0.75],
    "queue-small": [0.6154, 0.8077],
    "queue-tiny": [0.4, 0.525, 0.65, 0.775, 0.9],
    "queue-rare": [0.3556, 0.4889, 0.6, 0.7111, 0.8, 0.9111],
    "cpp-medium": [0.7922],
    "cpp-small": [0.6895, 0.8704],
    "cpp-tiny": [0.5747, 0.7262, 0.8362, 0.9241],
    "cpp-rare": [0.5063, 0.6382, 0.736, 0.8117, 0.8777, 0.9437],
    "volatile-cpp-tiny": [0.5527, 0.7946],
    "volatile-cpp-rare": [0.3645, 0.5209, 0.6553, 0.7726, 0.885],
    "volatile-queue-tiny": [0.8923],
    "volatile-queue-rare": [0.8933],
}

METHOD_SUFFIX = {"srs": "SRS", "smlss": "SMLSS", "gmlss": "GMLSS"}

# service rate fitted to the reported answers of the four queue queries
QUEUE_SERVICE_RATE = 0.595


def queue_model() -> TandemQueue:
    return TandemQueue(lam=0.5, mu1=QUEUE_SERVICE_RATE, mu2=QUEUE_SERVICE_RATE)


def cpp_model() -> CompoundPoisson:
    return CompoundPoisson(u=15.0, c=4.5, lam=0.8, jump_low=5.0, jump_high=10.0, claims="single")


def preset_model(kind: str, horizon: int = HORIZON):
    if kind == "queue":
        return queue_model()
    if kind == "cpp":
        return cpp_model()
    if kind == "volatile-cpp":
        return VolatileWrapper(cpp_model(), jump_prob=0.005, jump_size=200.0, horizon=horizon)
    if kind == "volatile-queue":
        return VolatileWrapper(queue_model(), jump_prob=0.2, jump_size=5.0, horizon=horizon)
    if kind == "oracle-chain":
        return oracle_chain()
    raise KeyError(f"unknown preset model {kind!r}")


def birth_death_chain(n: int, up: float, down: float | None = None) -> FiniteMarkovChain:
    """Chain on 0..n-1 with z = state index, reflecting at 0 and absorbing at n-1."""
    down = 1.0 - up if down is None else down
    P = np.zeros((n, n))
    for i in range(n - 1):
        P[i, i + 1] = up
        P[i, max(i - 1, 0)] += down
        P[i, i] += 1.0 - up - down
    P[n - 1, n - 1] = 1.0
    return FiniteMarkovChain(P.tolist(), list(range(n)), 0)


def oracle_chain() -> FiniteMarkovChain:
    """25-state birth-death chain used for tuner checks against the exact oracle."""
    return birth_death_chain(25, 0.3, 0.4)


ORACLE_QUERY = (200, 24.0)


def preset_names() -> list:
    names = []
    for q in PRESET_QUERIES:
        for sfx in METHOD_SUFFIX:
            names.append(f"{q}-{sfx}")
    names.append("oracle-chain-tiny-smlss")
    return names


def preset_config(name: str) -> dict:
    """Run-config dictionary for a preset name."""
    from .query import DurabilityQuery

    base, _, sfx = name.rpartition("-")
    if sfx not in METHOD_SUFFIX:
        raise KeyError(f"unknown preset {name!r}; known presets: {', '.join(preset_names())}")
    method = METHOD_SUFFIX[sfx]
    if base == "oracle-chain-tiny":
        model = oracle_chain()
        query = DurabilityQuery(*ORACLE_QUERY)
        interior: list = []
        kind_q = "tiny"
    elif base in PRESET_QUERIES:
        kind, horizon, beta = PRESET_QUERIES[base]
        model = preset_model(kind, horizon)
        query = DurabilityQuery(horizon, beta)
        interior = list(BALANCED_PLANS.get(base, []))
        kind_q = base.rsplit("-", 1)[1]
    else:
        raise KeyError(f"unknown preset {name!r}; known presets: {', '.join(preset_names())}")
    if kind_q in ("medium", "small"):
        stop = {"kind": "ci", "ci_halfwidth": 0.01}
    else:
        stop = {"kind": "re", "re_target": 0.10}
    boundaries = [0.0, *interior, 1.0] if method != "SRS" else [0.0, 1.0]
    d = {
        "name": name,
        "model": model.to_dict(),
        "query": query.to_dict(),
        "sampler": {"method": method, "split_ratio": 3 if method != "SRS" else 1, "boundaries": boundaries},
        "stop": stop,
        "repeats": 1,
        "seed": 0,
        "threads": 1,
    }
    if method != "SRS":
        d["tune"] = {"candidate_count": 5, "trial_budget": 100_000, "overhead_cap": 0.30}
    return d
