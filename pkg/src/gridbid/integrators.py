"""Classic fixed-step fourth-order Runge-Kutta."""

from __future__ import annotations

import math

import numpy as np


def rk4_step(f, t, x, h):
    k1 = f(t, x)
    k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = f(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_span(f, t0, x0, t1, h_max):
    """Integrate from ``t0`` to ``t1`` with equal steps no longer than ``h_max``."""
    span = t1 - t0
    if span <= 0:
        raise ValueError(f"integration span must be positive, got {span}")
    steps = max(1, math.ceil(span / h_max - 1e-9))
    h = span / steps
    x = np.array(x0, dtype=float)
    for s in range(steps):
        x = rk4_step(f, t0 + s * h, x, h)
    return x
