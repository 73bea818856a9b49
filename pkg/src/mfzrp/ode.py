"""Classical fixed-step 4th order Runge-Kutta stepping.

Shared by the fluid-limit integrator, the master-equation cross-check, and
the two-state coin model.  Fixed step keeps runs bit-reproducible; callers
pick the step from their own stability and accuracy budgets.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

Rhs = Callable[[float, np.ndarray], np.ndarray]


def rk4_step(f: Rhs, t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_span(f: Rhs, t0: float, y0: np.ndarray, t1: float,
             max_step: float) -> np.ndarray:
    """Integrate from t0 to t1 with equal substeps of size <= max_step.

    Negative spans are allowed (the substep is then negative).
    """
    span = t1 - t0
    if span == 0.0:
        return y0.copy()
    n = max(1, int(np.ceil(abs(span) / max_step)))
    h = span / n
    y = y0.copy()
    t = t0
    for _ in range(n):
        y = rk4_step(f, t, y, h)
        t += h
    return y
