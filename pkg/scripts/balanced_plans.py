"""Derive balanced-growth partition plans for the shipped presets.

For each preset the running maximum of z over the horizon is sampled with
plain Monte Carlo; boundary i of an m-level plan is placed where the
crossing probability is closest to tau^(i/m) in log scale.  m is chosen so
that each advancement probability is near 1/r.  The printed plans are pasted
into durability/presets.py.

    python3 scripts/balanced_plans.py [paths]
"""

import math
import sys

import numpy as np
from numba import njit, prange

from durability import rng
from durability.models import builtin_step
from durability.presets import PRESET_QUERIES, preset_model


@njit(nogil=True)
def path_maxima(params, init, horizon, skey, n):
    out = np.empty(n)
    for k in range(n):
        key = rng.derive(skey, k)
        state = init.copy()
        ctr = np.uint64(0)
        best = -np.inf
        while state[0] < horizon:
            ctr = builtin_step(params, state, key, ctr)
            if state[1] > best:
                best = state[1]
        out[k] = best
    return out


def plan_for(maxima, beta, r=3, integer=False):
    tau = float(np.mean(maxima >= beta))
    m = max(2, round(math.log(tau) / math.log(1.0 / r)))
    if integer:
        grid = np.arange(1, int(math.ceil(beta)))
    else:
        grid = np.linspace(beta * 0.02, beta * 0.995, 400)
    srt = np.sort(maxima)
    probs = 1.0 - np.searchsorted(srt, grid, side="left") / len(srt)
    bounds = []
    for i in range(1, m):
        goal = math.log(tau) * i / m
        with np.errstate(divide="ignore"):
            k = int(np.argmin(np.abs(np.log(probs) - goal)))
        v = float(grid[k] / beta)
        if not bounds or v > bounds[-1]:
            bounds.append(round(v, 4))
    return tau, bounds


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 200_000
    for name, (kind, horizon, beta) in PRESET_QUERIES.items():
        model = preset_model(kind, horizon)
        mx = path_maxima(model.params(), model.initial_array(), horizon, np.uint64(rng.seed_key(12345)), n)
        tau, bounds = plan_for(mx, beta, integer=kind in ("queue", "volatile-queue"))
        print(f'    "{name}": {bounds},  # tau ~ {tau:.3g}')


if __name__ == "__main__":
    main()
