"""Coin-flip ensemble with a closed-form fluid limit.

N coins start tails-up.  At rate N a uniformly chosen coin is tossed and
lands heads or tails with probability 1/2 each.  The heads fraction then
follows dx_H/dt = (x_T - x_H)/2 in the large-N limit, solved by
x_H(t) = (1 - e^{-t})/2.  Exactly solvable, so it doubles as a validation
case for the event engine and the shared RK4 integrator.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from math import exp
from typing import Sequence

import numpy as np

from . import __version__

_BATCH = 8192


@dataclass
class EhrenfestState:
    N: int
    heads: int
    time: float
    events: int
    seed: int
    rng: np.random.Generator


def init_all_tails(N: int, seed: int) -> EhrenfestState:
    if N < 1:
        raise ValueError("need N >= 1")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    return EhrenfestState(N=N, heads=0, time=0.0, events=0, seed=seed, rng=rng)


def simulate(N: int, T: float, seed: int,
             snapshot_times: Sequence[float]) -> list[tuple[float, float]]:
    """Heads fraction sampled at the requested times.

    Exchangeability makes the heads count a sufficient statistic: the
    tossed coin shows heads with probability heads/N, and its new side is
    an independent fair bit.
    """
    state = init_all_tails(N, seed)
    snaps = sorted(float(t) for t in snapshot_times)
    if snaps and (snaps[0] < 0.0 or snaps[-1] > T + 1e-12):
        raise ValueError("snapshot times must lie in [0, T]")
    rng = state.rng
    inv_n = 1.0 / N
    heads = 0
    t = 0.0
    out: list[tuple[float, float]] = []
    si, n_snaps = 0, len(snaps)
    done = False
    while not done:
        gaps = rng.exponential(inv_n, _BATCH).tolist()
        picks = rng.integers(0, N, _BATCH).tolist()
        new_sides = (rng.random(_BATCH) < 0.5).tolist()
        for i in range(_BATCH):
            t_next = t + gaps[i]
            while si < n_snaps and snaps[si] < t_next:
                out.append((snaps[si], heads * inv_n))
                si += 1
            if t_next > T:
                done = True
                break
            t = t_next
            was_heads = picks[i] < heads
            heads += new_sides[i] - was_heads
            state.events += 1
    while si < n_snaps:
        out.append((snaps[si], heads * inv_n))
        si += 1
    state.heads = heads
    state.time = T
    return out


def fluid_closed_form(t: float) -> tuple[float, float]:
    """(x_H, x_T) of the fluid limit started all tails."""
    if t < 0.0:
        raise ValueError("t must be >= 0")
    e = exp(-t)
    return (1.0 - e) / 2.0, (1.0 + e) / 2.0


def two_state_rhs(_t: float, y: np.ndarray) -> np.ndarray:
    """dx_H/dt = (x_T - x_H)/2 and symmetrically for x_T."""
    return np.array([(y[1] - y[0]) / 2.0, (y[0] - y[1]) / 2.0])


def path_to_csv(path: list[tuple[float, float]], N: int, seed: int) -> str:
    buf = io.StringIO()
    buf.write(f"# N={N}\n# seed={seed}\n# version={__version__}\n")
    buf.write("t,x_H\n")
    for t, xh in path:
        buf.write(f"{t!r},{xh!r}\n")
    return buf.getvalue()
