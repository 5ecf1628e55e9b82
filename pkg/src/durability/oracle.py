"""Exact within-horizon hitting probabilities for finite Markov chains.

Hits are checked at t = 1..s only, never at the start state, matching the
samplers.  The DP runs in double precision with compensated summation; the
enumeration helper works in exact rationals and only suits tiny instances.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .models import FiniteMarkovChain, ModelValidationError
from .query import DurabilityQuery, LevelPartition

# the chain spec of the sampler doubles as the oracle's input type
FiniteChainSpec = FiniteMarkovChain

MAX_STATES = 10_000


def _check(chain: FiniteChainSpec) -> np.ndarray:
    chain.validate()
    if chain.n > MAX_STATES:
        raise ModelValidationError("transition", f"oracle supports at most {MAX_STATES} states, got {chain.n}")
    return chain.matrix()


def _target_mask(chain: FiniteChainSpec, target) -> np.ndarray:
    z = np.asarray(chain.z, dtype=float)
    if callable(target):
        mask = np.array([bool(target(i, z[i])) for i in range(chain.n)])
    else:
        mask = np.asarray(target)
        if mask.dtype != bool:
            idx = mask.astype(int)
            mask = np.zeros(chain.n, dtype=bool)
            mask[idx] = True
    if mask.shape != (chain.n,):
        raise ModelValidationError("target", f"target mask needs {chain.n} entries, got {mask.shape}")
    return mask


def _compensated_matvec(P: np.ndarray, v: np.ndarray) -> np.ndarray:
    """P @ v with Neumaier summation along rows."""
    terms = P * v[None, :]
    s = np.zeros(P.shape[0])
    c = np.zeros(P.shape[0])
    for j in range(P.shape[1]):
        x = terms[:, j]
        t = s + x
        big = np.abs(s) >= np.abs(x)
        c += np.where(big, (s - t) + x, (x - t) + s)
        s = t
    return s + c


def _dp(P: np.ndarray, masks: np.ndarray, s: int, compensated: bool) -> np.ndarray:
    """Hitting-probability vectors for several targets at once; masks has shape (k, n)."""
    w = np.zeros(masks.shape, dtype=float)
    hit = masks.astype(float)
    for _ in range(s):
        v = np.where(masks, 1.0, w)
        if compensated:
            w = np.stack([_compensated_matvec(P, row) for row in v])
        else:
            w = v @ P.T
    return w


def hitting_vector(chain: FiniteChainSpec, target, s: int, compensated: bool | None = None) -> np.ndarray:
    """w_s(x) for every start state x."""
    if not (isinstance(s, (int, np.integer)) and s >= 1):
        raise ValueError(f"horizon must be a positive integer, got {s!r}")
    P = _check(chain)
    mask = _target_mask(chain, target)
    if compensated is None:
        compensated = chain.n <= 200
    return _dp(P, mask[None, :], int(s), compensated)[0]


def dp_hitting_probability(chain: FiniteChainSpec, target, s: int, compensated: bool | None = None) -> float:
    """P(the chain started at ``chain.start`` visits ``target`` at some t in [1, s]).

    ``target`` is a boolean mask, a list of state indices or a predicate
    ``(index, z) -> bool``.
    """
    return float(hitting_vector(chain, target, s, compensated)[chain.start])


def query_probability(chain: FiniteChainSpec, query: DurabilityQuery) -> float:
    query.validate()
    return dp_hitting_probability(chain, lambda i, z: z >= query.threshold_beta, query.horizon_s)


def dp_boundary_crossing_probs(chain: FiniteChainSpec, plan: LevelPartition, horizon, beta: float | None = None
                               ) -> list:
    """Exact P(f crosses boundary b_i by the horizon) for i = 0..m.

    ``horizon`` may be a DurabilityQuery (then beta comes from it) or an int.
    Boundary 0 is always crossed.  The target of boundary b_i is the state set
    {f >= b_i}, so all boundaries are solved in one vectorised DP.
    """
    if isinstance(horizon, DurabilityQuery):
        beta, s = horizon.threshold_beta, horizon.horizon_s
    else:
        s = horizon
        if beta is None:
            raise ValueError("beta is required when the horizon is given as an integer")
    P = _check(chain)
    z = np.asarray(chain.z, dtype=float)
    f = np.where(z >= beta, 1.0, np.clip(z / beta, 0.0, np.nextafter(1.0, 0.0)))
    inner = np.array(plan.boundaries[1:])
    masks = f[None, :] >= inner[:, None]
    w = _dp(P, masks, int(s), chain.n <= 200)
    probs = [1.0] + [float(v) for v in w[:, chain.start]]
    # containment holds exactly in exact arithmetic; clip float drift
    for i in range(1, len(probs)):
        probs[i] = min(probs[i], probs[i - 1])
    return probs


def crossing_ratios(probs: Sequence[float]) -> list:
    """pi_i = P(cross b_i) / P(cross b_{i-1}) for i = 1..m (0 after an unreachable boundary)."""
    return [b / a if a > 0 else 0.0 for a, b in zip(probs, probs[1:])]


def enumerate_hitting_probability(transition, target: Sequence[int], start: int, s: int) -> Fraction:
    """Exhaustive path enumeration in exact rationals (tiny chains only).

    Entries of ``transition`` may be Fractions, ints, strings such as "3/10"
    or floats (converted exactly).
    """
    P = [[Fraction(v) for v in row] for row in transition]
    n = len(P)
    tgt = set(int(t) for t in target)
    succ = [[(j, p) for j, p in enumerate(row) if p != 0] for row in P]
    total = Fraction(0)
    stack = [(start, 0, Fraction(1))]
    while stack:
        x, t, prob = stack.pop()
        for y, p in succ[x]:
            q = prob * p
            if y in tgt:
                total += q
            elif t + 1 < s:
                stack.append((y, t + 1, q))
    if n == 0:
        raise ValueError("empty chain")
    return total


def balanced_plan(probs_fn: Callable[[float], float], tau: float, m: int, lo: float = 0.0, hi: float = 1.0,
                  tol: float = 1e-10) -> LevelPartition:
    """Boundaries b_i with P(cross b_i) = tau^(i/m), found by bisection on a
    non-increasing crossing-probability function of the boundary value."""
    if m < 1:
        raise ValueError("m must be >= 1")
    bounds = []
    for i in range(1, m):
        goal = tau ** (i / m)
        a, b = (bounds[-1] if bounds else lo), hi
        while b - a > tol:
            mid = (a + b) / 2
            if probs_fn(mid) >= goal:
                a = mid
            else:
                b = mid
        bounds.append(a)
    return LevelPartition.from_interior(bounds)


def chain_crossing_function(chain: FiniteChainSpec, query: DurabilityQuery) -> Callable[[float], float]:
    """v -> P(max f >= v within the horizon) for one boundary value v in (0, 1)."""

    def fn(v):
        return dp_boundary_crossing_probs(chain, LevelPartition((0.0, v, 1.0)), query)[1]

    return fn


def chain_balanced_plan(chain: FiniteChainSpec, query: DurabilityQuery, m: int) -> LevelPartition:
    """Balanced-growth plan for a finite chain.

    Crossing probabilities are step functions of the boundary, so each
    boundary is placed at the distinct f-value whose crossing probability is
    closest to tau^(i/m) in log scale.
    """
    z = np.asarray(chain.z, dtype=float)
    beta = query.threshold_beta
    cands = np.unique(np.clip(z / beta, 0, 1))
    cands = cands[(cands > 0) & (cands < 1)]
    if len(cands) == 0 or m == 1:
        return LevelPartition.trivial()
    probs = dp_boundary_crossing_probs(chain, LevelPartition((0.0, *cands, 1.0)), query)
    tau = probs[-1]
    if tau <= 0:
        raise ValueError("target unreachable within the horizon")
    inner = np.array(probs[1:-1])
    chosen = []
    for i in range(1, m):
        goal = math.log(tau) * i / m
        with np.errstate(divide="ignore"):
            dist = np.abs(np.log(inner) - goal)
        for k in np.argsort(dist, kind="stable"):
            if cands[k] not in chosen and (not chosen or cands[k] > max(chosen)):
                chosen.append(float(cands[k]))
                break
    return LevelPartition.from_interior(chosen)
