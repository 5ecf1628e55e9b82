"""Durability queries, the value function and level partitions."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

# largest double below 1; values that do not satisfy the query never map to 1
_BELOW_ONE = float(np.nextafter(1.0, 0.0))


class QueryError(ValueError):
    pass


@njit(nogil=True, cache=True)
def value_of(z, beta):
    if z >= beta:
        return 1.0
    f = z / beta
    if f < 0.0:
        return 0.0
    if f > _BELOW_ONE:
        return _BELOW_ONE
    return f


@njit(nogil=True, cache=True)
def level_index(bounds, f):
    """Index i with bounds[i] <= f < bounds[i+1]; the last index when f == 1."""
    m = bounds.shape[0] - 1
    if f >= 1.0:
        return m
    i = 0
    while i + 1 < m and bounds[i + 1] <= f:
        i += 1
    return i


@dataclass(frozen=True)
class DurabilityQuery:
    """Probability that z(x_t) >= threshold_beta for some t in [1, horizon_s]."""

    horizon_s: int
    threshold_beta: float

    def validate(self) -> None:
        if not (isinstance(self.horizon_s, int) and self.horizon_s >= 1):
            raise QueryError(f"horizon_s must be a positive integer, got {self.horizon_s!r}")
        if not (math.isfinite(self.threshold_beta) and self.threshold_beta > 0):
            raise QueryError(f"threshold_beta must be positive, got {self.threshold_beta!r}")

    def satisfied(self, z: float) -> bool:
        return z >= self.threshold_beta

    def value(self, z: float) -> float:
        self.validate()
        return value_of(float(z), float(self.threshold_beta))

    def to_dict(self) -> dict:
        return {"horizon": self.horizon_s, "beta": self.threshold_beta}

    @classmethod
    def from_dict(cls, d: dict) -> "DurabilityQuery":
        try:
            q = cls(int(d["horizon"]), float(d["beta"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise QueryError(f"query needs integer 'horizon' and float 'beta': {exc}") from exc
        q.validate()
        return q


def value(query: DurabilityQuery, state) -> float:
    """Value function min(z / beta, 1), clamped below at 0."""
    z = state.z if hasattr(state, "z") else state
    return query.value(z)


@dataclass(frozen=True)
class LevelPartition:
    """Boundaries 0 = b_0 < b_1 < ... < b_m = 1 in value-function units."""

    boundaries: tuple

    def __post_init__(self):
        b = tuple(float(v) for v in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if len(b) < 2:
            raise QueryError("a partition needs at least the boundaries 0 and 1")
        if b[0] != 0.0 or b[-1] != 1.0:
            raise QueryError(f"partition must start at 0 and end at 1, got {list(b)}")
        if any(lo >= hi for lo, hi in zip(b, b[1:])):
            raise QueryError(f"partition boundaries must be strictly increasing, got {list(b)}")

    @property
    def m(self) -> int:
        return len(self.boundaries) - 1

    @classmethod
    def trivial(cls) -> "LevelPartition":
        return cls((0.0, 1.0))

    @classmethod
    def from_interior(cls, interior: Sequence[float]) -> "LevelPartition":
        return cls((0.0, *sorted(interior), 1.0))

    @property
    def interior(self) -> tuple:
        return self.boundaries[1:-1]

    def array(self) -> np.ndarray:
        return np.array(self.boundaries, dtype=np.float64)

    def with_boundary(self, v: float) -> "LevelPartition":
        return LevelPartition.from_interior([*self.interior, v])

    def level_of(self, fval: float) -> int:
        if not (0.0 <= fval <= 1.0):
            raise QueryError(f"value {fval!r} outside [0, 1]")
        if fval >= 1.0:
            return self.m
        return bisect.bisect_right(self.boundaries, fval) - 1

    def crossings(self, prev_f: float, new_f: float) -> list:
        """Indices k with prev_f < b_k <= new_f, ascending."""
        for v in (prev_f, new_f):
            if not (0.0 <= v <= 1.0):
                raise QueryError(f"value {v!r} outside [0, 1]")
        if new_f <= prev_f:
            return []
        return [k for k, b in enumerate(self.boundaries) if prev_f < b <= new_f]

    def to_list(self) -> list:
        return list(self.boundaries)


def level_of(partition: LevelPartition, fval: float) -> int:
    return partition.level_of(fval)


def crossings(partition: LevelPartition, prev_f: float, new_f: float) -> list:
    return partition.crossings(prev_f, new_f)
