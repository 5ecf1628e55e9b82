"""Synthetic nonlinear price surrogate.

A small recurrent hidden state drives a two-component Gaussian mixture of
log-returns, standing in for a learned sequence model.  z is the price,
starting at 100.

Usage: python3 -m durability.sims.surrogate
"""

import math

import numpy as np

from . import serve

W_H, W_R, BIAS = 0.8, 12.0, -0.2
CALM = (0.0004, 0.008)
STORMY = (-0.002, 0.03)


def initial(gen):
    return {"h": 0.0, "r": 0.0, "price": 100.0}


def step(state, gen):
    h = math.tanh(W_H * state["h"] + W_R * state["r"] + BIAS)
    p_storm = 1.0 / (1.0 + math.exp(-3.0 * h))
    mean, sd = STORMY if gen.random() < p_storm * 0.3 else CALM
    r = gen.normal(mean, sd)
    state.update(h=h, r=r, price=state["price"] * math.exp(r))
    return state["price"]


def main():
    serve(initial, step)


if __name__ == "__main__":
    main()
