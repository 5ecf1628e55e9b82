"""Step-wise simulators for the built-in stochastic models.

Every model is described by an immutable spec object.  For simulation the spec
is flattened into a float64 parameter vector and states are float64 arrays laid
out as ``[t, z, *internals]``; :func:`builtin_step` advances such an array in
place by one time unit.  The samplers work on these arrays directly, while
:func:`init` / :func:`step` offer the same operations on :class:`ProcessState`
values for interactive use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from numba import njit

from . import rng

AR, MARKOV, TANDEM, CPP = 0, 1, 2, 3

# params header: kind, volatile flag, jump probability, jump size, onset time
_HDR = 5


class ModelValidationError(ValueError):
    """Invalid model parameter; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class BudgetExhausted(RuntimeError):
    pass


@dataclass
class StepBudget:
    """Counts simulator invocations against an optional limit."""

    limit: int | None = None
    consumed: int = 0

    @property
    def exhausted(self) -> bool:
        return self.limit is not None and self.consumed >= self.limit

    @property
    def remaining(self) -> int | None:
        return None if self.limit is None else max(self.limit - self.consumed, 0)

    def charge(self, n: int = 1) -> None:
        if self.limit is not None and self.consumed + n > self.limit:
            raise BudgetExhausted(f"step budget of {self.limit} invocations exhausted")
        self.consumed += n


@dataclass(frozen=True)
class ProcessState:
    t: int
    z: float
    internals: tuple = ()

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ProcessState":
        return cls(int(arr[0]), float(arr[1]), tuple(float(v) for v in arr[2:]))

    def to_array(self) -> np.ndarray:
        return np.array([self.t, self.z, *self.internals], dtype=np.float64)


# ---------------------------------------------------------------------------
# model specs


def _positive(name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ModelValidationError(name, f"must be a positive number, got {value!r}")


def _probability(name, value):
    if not (isinstance(value, (int, float)) and 0.0 <= value <= 1.0):
        raise ModelValidationError(name, f"must lie in [0, 1], got {value!r}")


class ModelSpec:
    """Base class for model specs."""

    variant: str = ""

    def validate(self) -> None:
        raise NotImplementedError

    def params(self) -> np.ndarray:
        raise NotImplementedError

    def initial_array(self) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    @property
    def compiled(self) -> bool:
        return True


def _header(kind):
    return [float(kind), 0.0, 0.0, 0.0, 0.0]


@dataclass(frozen=True)
class ARModel(ModelSpec):
    """AR(m) process v_t = sum_i phi_i v_{t-i} + eps_t with eps_t ~ N(0, sigma)."""

    phi: tuple = (0.5,)
    sigma: float = 1.0
    variant = "AR"

    def validate(self):
        if len(self.phi) < 1:
            raise ModelValidationError("phi", "AR lag m must be >= 1")
        for i, p in enumerate(self.phi):
            if not (isinstance(p, (int, float)) and math.isfinite(p)):
                raise ModelValidationError(f"phi[{i}]", f"must be finite, got {p!r}")
        _positive("sigma", self.sigma)

    def params(self):
        return np.array(_header(AR) + [len(self.phi), self.sigma, *self.phi], dtype=np.float64)

    def initial_array(self):
        return np.zeros(2 + len(self.phi))

    def to_dict(self):
        return {"variant": self.variant, "params": {"phi": list(self.phi), "sigma": self.sigma}}


@dataclass(frozen=True)
class FiniteMarkovChain(ModelSpec):
    """Time-homogeneous chain on states 0..n-1 with per-state score ``z``."""

    transition: tuple
    z: tuple
    start: int = 0
    variant = "FiniteMarkovChain"

    def __post_init__(self):
        object.__setattr__(self, "transition", tuple(tuple(float(p) for p in row) for row in self.transition))
        object.__setattr__(self, "z", tuple(float(v) for v in self.z))

    @property
    def n(self) -> int:
        return len(self.transition)

    def matrix(self) -> np.ndarray:
        return np.array(self.transition, dtype=np.float64)

    def validate(self):
        n = self.n
        if n < 1:
            raise ModelValidationError("transition", "needs at least one state")
        for i, row in enumerate(self.transition):
            if len(row) != n:
                raise ModelValidationError(f"transition[{i}]", f"row has {len(row)} entries, expected {n}")
            for j, p in enumerate(row):
                _probability(f"transition[{i}][{j}]", p)
            if abs(math.fsum(row) - 1.0) > 1e-9:
                raise ModelValidationError(f"transition[{i}]", f"row sums to {math.fsum(row)!r}, not 1")
        if len(self.z) != n:
            raise ModelValidationError("z", f"has {len(self.z)} scores for {n} states")
        if not (isinstance(self.start, int) and 0 <= self.start < n):
            raise ModelValidationError("start", f"must be a state index in [0, {n}), got {self.start!r}")

    def params(self):
        p = self.matrix()
        return np.concatenate([_header(MARKOV), [self.n, self.start], p.ravel(), self.z]).astype(np.float64)

    def initial_array(self):
        return np.array([0.0, self.z[self.start], float(self.start)])

    def to_dict(self):
        return {
            "variant": self.variant,
            "params": {"transition": [list(r) for r in self.transition], "z": list(self.z), "start": self.start},
        }


@dataclass(frozen=True)
class TandemQueue(ModelSpec):
    """Two M/M/1 queues in series observed at integer times; z = customers in queue 2.

    Arrivals are Poisson with rate ``lam``; ``mu1`` and ``mu2`` are service rates.
    Internals are ``[q1, q2, arrivals during the last step]``.
    """

    lam: float = 0.5
    mu1: float = 2.0
    mu2: float = 2.0
    variant = "TandemQueue"

    def validate(self):
        _positive("lam", self.lam)
        _positive("mu1", self.mu1)
        _positive("mu2", self.mu2)

    def params(self):
        return np.array(_header(TANDEM) + [self.lam, self.mu1, self.mu2], dtype=np.float64)

    def initial_array(self):
        return np.zeros(5)

    def to_dict(self):
        return {"variant": self.variant, "params": {"lam": self.lam, "mu1": self.mu1, "mu2": self.mu2}}


@dataclass(frozen=True)
class CompoundPoisson(ModelSpec):
    """Surplus process U(t) = u + c t - S(t) stepped one time unit at a time.

    Per unit step K ~ Poisson(lam) claims arrive.  With ``claims="compound"``
    all K claim sizes ~ Uni(jump_low, jump_high) are charged; with
    ``claims="single"`` at most one claim is charged per step (a claim occurs
    iff K >= 1).  Internals are ``[U, claims charged in the last step]``.
    """

    u: float = 15.0
    c: float = 4.5
    lam: float = 0.8
    jump_low: float = 5.0
    jump_high: float = 10.0
    claims: str = "compound"
    variant = "CompoundPoisson"

    def validate(self):
        if not math.isfinite(self.u):
            raise ModelValidationError("u", "must be finite")
        _positive("c", self.c)
        _positive("lam", self.lam)
        if self.lam > 500:
            raise ModelValidationError("lam", "must be <= 500 for the inversion sampler")
        if not (0 <= self.jump_low <= self.jump_high):
            raise ModelValidationError("jump_low", "need 0 <= jump_low <= jump_high")
        if self.claims not in ("compound", "single"):
            raise ModelValidationError("claims", f"must be 'compound' or 'single', got {self.claims!r}")

    def params(self):
        mode = 1.0 if self.claims == "single" else 0.0
        return np.array(
            _header(CPP) + [self.u, self.c, self.lam, self.jump_low, self.jump_high, mode], dtype=np.float64
        )

    def initial_array(self):
        return np.array([0.0, self.u, self.u, 0.0])

    def to_dict(self):
        return {
            "variant": self.variant,
            "params": {
                "u": self.u, "c": self.c, "lam": self.lam,
                "jump_low": self.jump_low, "jump_high": self.jump_high, "claims": self.claims,
            },
        }


@dataclass(frozen=True)
class VolatileWrapper(ModelSpec):
    """Adds an upward jump of ``jump_size`` with probability ``jump_prob`` after
    each base step once t > onset * horizon.  The jump is persistent: it is
    applied to the internal quantity that carries z."""

    base: ModelSpec
    jump_prob: float
    jump_size: float
    horizon: int
    onset: float = 0.8
    variant = "VolatileWrapper"

    def validate(self):
        if isinstance(self.base, (VolatileWrapper, ExternalBlackBox)) or not isinstance(self.base, ModelSpec):
            raise ModelValidationError("base", "must be a built-in, non-volatile model")
        if isinstance(self.base, FiniteMarkovChain):
            raise ModelValidationError("base", "jumps are not defined for finite Markov chains")
        self.base.validate()
        _probability("jump_prob", self.jump_prob)
        if not math.isfinite(self.jump_size):
            raise ModelValidationError("jump_size", "must be finite")
        if not (isinstance(self.horizon, int) and self.horizon >= 1):
            raise ModelValidationError("horizon", "must be a positive integer")
        _probability("onset", self.onset)

    def params(self):
        p = self.base.params().copy()
        p[1] = 1.0
        p[2] = self.jump_prob
        p[3] = self.jump_size
        p[4] = self.onset * self.horizon
        return p

    def initial_array(self):
        return self.base.initial_array()

    def to_dict(self):
        return {
            "variant": self.variant,
            "params": {
                "base": self.base.to_dict(), "jump_prob": self.jump_prob, "jump_size": self.jump_size,
                "horizon": self.horizon, "onset": self.onset,
            },
        }


@dataclass(frozen=True)
class ExternalBlackBox(ModelSpec):
    """A simulator running as a child process (see :mod:`durability.external`)."""

    command: tuple
    seed: int = 0
    timeout: float = 30.0
    initial_z: float = 0.0
    variant = "ExternalBlackBox"

    def __post_init__(self):
        object.__setattr__(self, "command", tuple(self.command))

    def validate(self):
        if not self.command:
            raise ModelValidationError("command", "must name an executable")
        _positive("timeout", self.timeout)

    @property
    def compiled(self):
        return False

    def params(self):
        return np.zeros(0)

    def initial_array(self):
        return np.array([0.0, self.initial_z, 0.0])

    def to_dict(self):
        return {
            "variant": self.variant,
            "params": {"command": list(self.command), "seed": self.seed, "timeout": self.timeout,
                       "initial_z": self.initial_z},
        }


_VARIANTS = {
    "AR": ARModel,
    "FiniteMarkovChain": FiniteMarkovChain,
    "TandemQueue": TandemQueue,
    "CompoundPoisson": CompoundPoisson,
    "VolatileWrapper": VolatileWrapper,
    "ExternalBlackBox": ExternalBlackBox,
}


def model_from_dict(d: dict) -> ModelSpec:
    try:
        variant = d["variant"]
        params = dict(d.get("params", {}))
    except (KeyError, TypeError) as exc:
        raise ModelValidationError("model", f"expected {{'variant': ..., 'params': {{...}}}}, got {d!r}") from exc
    if variant not in _VARIANTS:
        raise ModelValidationError("model.variant", f"unknown variant {variant!r}")
    if variant == "VolatileWrapper":
        params["base"] = model_from_dict(params.get("base", {}))
    if variant == "AR" and "phi" in params:
        params["phi"] = tuple(params["phi"])
    try:
        spec = _VARIANTS[variant](**params)
    except TypeError as exc:
        raise ModelValidationError(f"model.params", str(exc)) from exc
    spec.validate()
    return spec


# ---------------------------------------------------------------------------
# compiled stepping


@njit(nogil=True, cache=True)
def _ar_step(params, state, key, ctr):
    m = int(params[_HDR])
    sigma = params[_HDR + 1]
    eps, ctr = rng.normal(key, ctr, sigma)
    v = eps
    for i in range(m):
        v += params[_HDR + 2 + i] * state[2 + i]
    for i in range(m - 1, 0, -1):
        state[2 + i] = state[1 + i]
    state[2] = v
    state[1] = v
    return ctr


@njit(nogil=True, cache=True)
def _markov_step(params, state, key, ctr):
    n = int(params[_HDR])
    i = int(state[2])
    row = _HDR + 2 + i * n
    u, ctr = rng.uniform(key, ctr)
    acc = 0.0
    nxt = -1
    last = -1
    for j in range(n):
        p = params[row + j]
        if p > 0.0:
            last = j
            acc += p
            if u < acc:
                nxt = j
                break
    if nxt < 0:
        nxt = last
    state[2] = nxt
    state[1] = params[_HDR + 2 + n * n + nxt]
    return ctr


@njit(nogil=True, cache=True)
def _tandem_step(params, state, key, ctr):
    lam = params[_HDR]
    mu1 = params[_HDR + 1]
    mu2 = params[_HDR + 2]
    q1 = state[2]
    q2 = state[3]
    arrivals = 0
    remaining = 1.0
    while True:
        r1 = mu1 if q1 > 0 else 0.0
        r2 = mu2 if q2 > 0 else 0.0
        total = lam + r1 + r2
        dt, ctr = rng.exponential(key, ctr, total)
        if dt >= remaining:
            break
        remaining -= dt
        u, ctr = rng.uniform(key, ctr)
        u *= total
        if u < lam:
            q1 += 1
            arrivals += 1
        elif u < lam + r1:
            q1 -= 1
            q2 += 1
        else:
            q2 -= 1
    state[2] = q1
    state[3] = q2
    state[4] = arrivals
    state[1] = q2
    return ctr


@njit(nogil=True, cache=True)
def _cpp_step(params, state, key, ctr):
    c = params[_HDR + 1]
    lam = params[_HDR + 2]
    lo = params[_HDR + 3]
    hi = params[_HDR + 4]
    single = params[_HDR + 5] > 0.5
    k, ctr = rng.poisson(key, ctr, lam)
    if single and k > 1:
        k = 1
    jump = 0.0
    for _ in range(k):
        u, ctr = rng.uniform(key, ctr)
        jump += lo + (hi - lo) * u
    state[2] = state[2] + c - jump
    state[3] = k
    state[1] = state[2]
    return ctr


@njit(nogil=True, cache=True)
def _bump(kind, state, size):
    if kind == AR:
        state[2] += size
        state[1] = state[2]
    elif kind == TANDEM:
        state[3] += size
        state[1] = state[3]
    elif kind == CPP:
        state[2] += size
        state[1] = state[2]


@njit(nogil=True, cache=True)
def builtin_step(params, state, key, ctr):
    """Advance ``state`` by one time unit in place; returns the new stream counter."""
    kind = int(params[0])
    if kind == AR:
        ctr = _ar_step(params, state, key, ctr)
    elif kind == MARKOV:
        ctr = _markov_step(params, state, key, ctr)
    elif kind == TANDEM:
        ctr = _tandem_step(params, state, key, ctr)
    else:
        ctr = _cpp_step(params, state, key, ctr)
    state[0] += 1.0
    if params[1] > 0.5 and state[0] > params[4]:
        u, ctr = rng.uniform(key, ctr)
        if u < params[2]:
            _bump(kind, state, params[3])
    return ctr


@njit(nogil=True, cache=True)
def builtin_fork(params, state, handle, key, ctr):
    return 0


@njit(nogil=True, cache=True)
def builtin_handle(params, state):
    return 0


# ---------------------------------------------------------------------------
# Python-facing operations


def init(model: ModelSpec, stream: rng.Stream | None = None) -> ProcessState:
    """Initial state at t=0 (fixed per model; ``stream`` is accepted for symmetry)."""
    model.validate()
    return ProcessState.from_array(model.initial_array())


def step(model: ModelSpec, state: ProcessState, stream: rng.Stream, budget: StepBudget | None = None) -> ProcessState:
    if budget is not None:
        budget.charge(1)
    if not model.compiled:
        raise TypeError("external models are stepped through durability.external.ExternalSession")
    arr = state.to_array()
    stream.counter = builtin_step(model.params(), arr, stream.key, stream.counter)
    return ProcessState.from_array(arr)


def simulate_path(model: ModelSpec, length: int, stream: rng.Stream, budget: StepBudget | None = None) -> list:
    """States x_0..x_length of one unsplit path."""
    model.validate()
    params = model.params()
    arr = model.initial_array()
    out = [ProcessState.from_array(arr)]
    for _ in range(length):
        if budget is not None:
            budget.charge(1)
        stream.counter = builtin_step(params, arr, stream.key, stream.counter)
        out.append(ProcessState.from_array(arr))
    return out


def z_of(model: ModelSpec, internals: Sequence[float]) -> float:
    """Recompute the observable score from a state's internals."""
    if isinstance(model, VolatileWrapper):
        return z_of(model.base, internals)
    if isinstance(model, ARModel):
        return float(internals[0])
    if isinstance(model, FiniteMarkovChain):
        return model.z[int(internals[0])]
    if isinstance(model, TandemQueue):
        return float(internals[1])
    if isinstance(model, CompoundPoisson):
        return float(internals[0])
    raise TypeError(f"no internal score map for {type(model).__name__}")
