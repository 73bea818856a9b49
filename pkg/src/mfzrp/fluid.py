"""Truncated integration of the infinite fluid-limit ODE.

The limiting dynamics of the box occupancy distribution x(t): each level k
exchanges mass with its neighbours through the flow
m_k = x_k (1 - x_0) - x_{k+1}, giving dx_k/dt = m_{k-1} - m_k.  Mass and
mean are conserved; entropy increases; the unique stable point with mean R
is the geometric law with that mean.

The integrator works on a truncated window {0..d-1} plus two bookkeeping
components: ``leak`` (mass that crossed the truncation boundary, never
reflected back) and ``leak_mean`` (first moment carried by that mass).
Keeping them inside the integrated state makes mass and mean conservation
exact up to round-off, which the per-snapshot audits then verify.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import __version__
from .ode import rk4_step
from .pmf import GeometricFamily, Pmf, entropy, geometric, gibbs_geometric, kl_divergence

GROW_THRESHOLD = 1e-14
MASS_HARD_LIMIT = 1e-7
MASS_AUDIT_TOL = 1e-8
MEAN_AUDIT_TOL = 1e-6


class IntegrationError(RuntimeError):
    """Conservation audit failed; carries the offending state."""

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state


def initial_truncation(R: float) -> int:
    """Default truncation dimension: generous multiple of the mean so the
    geometric equilibrium tail is far below the growth threshold."""
    return max(math.ceil(4 * R), math.ceil(R) + 10 * math.ceil(math.sqrt(R)), 16)


def drift(x: Pmf | np.ndarray, d: int | None = None) -> tuple[np.ndarray, float]:
    """Level rates (m_{k-1} - m_k) on a window of dimension d and the flow
    over the truncation boundary.

    The boundary flow x_{d-1} (1 - x_0) is mass leaving the window per unit
    time; the returned rates sum to exactly its negative.  ``d`` defaults
    to the stored support size.
    """
    if isinstance(x, Pmf):
        v = np.zeros(max(x.last_point + 1, d or 0))
        v[x.offset: x.offset + len(x)] = x.weights
    else:
        v = np.asarray(x, dtype=float)
        if d is not None and d > v.size:
            v = np.concatenate([v, np.zeros(d - v.size)])
    d = v.size
    if d < 2:
        raise ValueError("need truncation dimension >= 2")
    x0 = v[0]
    m = v[:-1] * (1.0 - x0) - v[1:]
    boundary = v[-1] * (1.0 - x0)
    m_full = np.concatenate([m, [boundary]])
    rates = np.empty(d)
    rates[0] = -m_full[0]
    rates[1:] = m_full[:-1] - m_full[1:]
    return rates, float(boundary)


@dataclass(frozen=True)
class FluidState:
    """One snapshot of the truncated fluid limit."""

    x: Pmf
    time: float
    d: int
    leak: float
    R: float

    @property
    def x0(self) -> float:
        return self.x.prob(0)


class EntropyRate(NamedTuple):
    exact: float
    lower_bound: float


def entropy_rate(x: Pmf | np.ndarray) -> EntropyRate:
    """Entropy production of the flow dynamics at state x.

    exact        sum_k m_k log(x_k (1-x_0) / x_{k+1})
    lower_bound  sum_k m_k^2 / max(x_k (1-x_0), x_{k+1})

    Terms with m_k = 0 contribute zero.  A zero endpoint with nonzero flow
    makes the exact rate +inf (returned as math.inf, e.g. at a point mass).
    Trailing zero levels are the truncation frontier and are excluded; the
    flow into them is the boundary flow, accounted separately by `drift`.
    """
    if isinstance(x, Pmf):
        v = np.asarray(x.weights, dtype=float)
        if x.offset != 0:
            v = np.concatenate([np.zeros(x.offset), v])
    else:
        v = np.asarray(x, dtype=float)
    nz = np.nonzero(v)[0]
    if nz.size == 0:
        raise ValueError("x has no mass")
    v = v[: nz[-1] + 1]
    if v.size < 2:
        return EntropyRate(0.0, 0.0)
    x0 = v[0]
    out = v[:-1] * (1.0 - x0)
    inn = v[1:]
    m = out - inn
    denom = np.maximum(out, inn)
    active = m != 0.0
    lower_terms = np.zeros_like(m)
    lower_terms[active] = m[active] ** 2 / denom[active]
    lower = float(lower_terms.sum())
    if np.any(active & ((out <= 0.0) | (inn <= 0.0))):
        return EntropyRate(math.inf, lower)
    exact_terms = np.zeros_like(m)
    exact_terms[active] = m[active] * np.log(out[active] / inn[active])
    return EntropyRate(float(exact_terms.sum()), lower)


class KlMetrics(NamedTuple):
    to_gibbs: float
    to_self_bias: float


def kl_metrics(x: Pmf, R: float) -> KlMetrics:
    """KL divergences from x to the mean-R geometric law and to the
    geometric law with bias x_0.

    The second always dominates the first when x has mean R: among
    geometric laws, the mean-R one is closest in KL.
    """
    x0 = x.prob(0)
    if not 0.0 < x0 < 1.0:
        raise ValueError("x_0 must lie strictly inside (0, 1)")
    size = max(len(x) + x.offset, 4)
    to_gibbs = kl_divergence(x, gibbs_geometric(R, support_size=size))
    self_bias = geometric(GeometricFamily("infinite", x0), size)
    return KlMetrics(to_gibbs, kl_divergence(x, self_bias))


def kl_bias_decomposition(x: Pmf, R: float, a: float) -> tuple[float, float, float]:
    """Split of D(x || geometric mean R) into the bias-a pieces:

        D(x || G_R) = log[a (1-a)^R / (a_R (1-a_R)^R)] + D(x || geo(a))

    with a_R = 1/(R+1), valid whenever x has mass 1 and mean exactly R.
    Returns (lhs, normalizer_term, kl_to_geo_a).
    """
    if not 0.0 < a < 1.0:
        raise ValueError("bias a must lie in (0, 1)")
    size = max(len(x) + x.offset, 4)
    lhs = kl_divergence(x, gibbs_geometric(R, support_size=size))
    a_r = 1.0 / (R + 1.0)
    normalizer = math.log(a * (1.0 - a) ** R / (a_r * (1.0 - a_r) ** R))
    rest = kl_divergence(x, geometric(GeometricFamily("infinite", a), size))
    return lhs, normalizer, rest


@dataclass
class FluidTrajectory:
    """Time-ordered fluid snapshots with per-snapshot diagnostics."""

    R: float
    step: float
    states: list[FluidState] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    entropy: list[float] = field(default_factory=list)
    ds_exact: list[float] = field(default_factory=list)
    ds_lower: list[float] = field(default_factory=list)
    kl_gibbs: list[float] = field(default_factory=list)
    kl_self_bias: list[float] = field(default_factory=list)
    leak: list[float] = field(default_factory=list)
    mass_error: list[float] = field(default_factory=list)
    mean_error: list[float] = field(default_factory=list)

    def weights_at(self, t: float) -> np.ndarray:
        """Weight vector at time t, linearly interpolated between snapshots
        on a zero-padded common grid."""
        ts = self.times
        if not ts or t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise ValueError(f"time {t} outside snapshot range")
        i = int(np.searchsorted(ts, t))
        if i < len(ts) and abs(ts[i] - t) < 1e-12:
            return np.asarray(self.states[i].x.weights, dtype=float)
        lo, hi = self.states[i - 1], self.states[i]
        width = max(len(lo.x), len(hi.x))
        wl = np.zeros(width)
        wh = np.zeros(width)
        wl[: len(lo.x)] = lo.x.weights
        wh[: len(hi.x)] = hi.x.weights
        lam = (t - ts[i - 1]) / (ts[i] - ts[i - 1])
        return (1.0 - lam) * wl + lam * wh

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# R={self.R!r}\n# step={self.step!r}\n")
        buf.write(f"# version={__version__}\n")
        buf.write("t,k,x_k\n")
        for st in self.states:
            for k, w in enumerate(st.x.weights):
                buf.write(f"{st.time!r},{k},{float(w)!r}\n")
        return buf.getvalue()

    def diagnostics_to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# R={self.R!r}\n# step={self.step!r}\n")
        buf.write(f"# version={__version__}\n")
        buf.write("t,S,dSdt_exact,dSdt_lower,kl_gibbs,kl_selfbias,leak\n")
        rows = zip(self.times, self.entropy, self.ds_exact, self.ds_lower,
                   self.kl_gibbs, self.kl_self_bias, self.leak)
        for row in rows:
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()


def _fluid_rhs(_t: float, y: np.ndarray) -> np.ndarray:
    """Right-hand side on the augmented vector (x..., leak, leak_mean)."""
    x = y[:-2]
    rates, boundary = drift(x)
    out = np.empty_like(y)
    out[:-2] = rates
    out[-2] = boundary
    out[-1] = (x.size) * boundary
    return out


def _snapshot(y: np.ndarray, t: float, R: float, traj: FluidTrajectory) -> FluidState:
    x_raw = y[:-2]
    leak = max(float(y[-2]), 0.0)
    leak_mean = float(y[-1])
    mass_err = abs(x_raw.sum() + y[-2] - 1.0)
    if mass_err > MASS_HARD_LIMIT:
        bad = FluidState(Pmf(0, np.clip(x_raw, 0.0, None), tail=leak),
                         time=t, d=x_raw.size, leak=leak, R=R)
        raise IntegrationError(
            f"mass drift {mass_err:.3e} beyond {MASS_HARD_LIMIT} at t={t}",
            state=bad)
    x = Pmf(0, x_raw.copy(), tail=leak)
    state = FluidState(x=x, time=t, d=x_raw.size, leak=leak, R=R)
    mean_err = abs(x.mean() + leak_mean - R)
    rate = entropy_rate(x_raw)
    traj.states.append(state)
    traj.times.append(t)
    traj.entropy.append(entropy(x))
    traj.ds_exact.append(rate.exact)
    traj.ds_lower.append(rate.lower_bound)
    x0 = x.prob(0)
    if 0.0 < x0 < 1.0:
        km = kl_metrics(x, R)
        traj.kl_gibbs.append(km.to_gibbs)
        traj.kl_self_bias.append(km.to_self_bias)
    else:
        size = max(len(x), 4)
        traj.kl_gibbs.append(kl_divergence(x, gibbs_geometric(R, support_size=size)))
        traj.kl_self_bias.append(math.nan)
    traj.leak.append(leak)
    traj.mass_error.append(mass_err)
    traj.mean_error.append(mean_err)
    return state


def integrate(x0: Pmf, T: float, step: float = 0.01,
              snapshot_times: Sequence[float] | None = None,
              R: float | None = None,
              truncation: int | None = None) -> FluidTrajectory:
    """Integrate the fluid ODE from x0 up to time T with fixed-step RK4.

    Snapshots land exactly on the requested times (substeps are shortened
    to hit them).  The truncation window starts at ``truncation`` (default
    sized from R) and grows by half whenever mass approaches its edge, so
    the leak stays below the mass audit tolerance.  Raises
    IntegrationError if mass conservation degrades beyond 1e-7.
    """
    if step <= 0.0 or T < 0.0:
        raise ValueError("need step > 0 and T >= 0")
    x0.require_normalized(1e-8)
    if R is None:
        R = x0.mean(tail_mean=0.0)
    if snapshot_times is None:
        snapshot_times = np.linspace(0.0, T, 201)
    snaps = sorted(float(t) for t in snapshot_times)
    if snaps and (snaps[0] < 0.0 or snaps[-1] > T + 1e-12):
        raise ValueError("snapshot times must lie in [0, T]")

    d = max(truncation or initial_truncation(R), x0.last_point + 2)
    y = np.zeros(d + 2)
    y[x0.offset: x0.offset + len(x0)] = x0.weights
    # declared tail of the initial law counts as already-leaked mass, and
    # leak_mean starts at whatever first moment is missing from the window
    y[-2] = x0.tail
    y[-1] = R - x0.mean(tail_mean=0.0)

    traj = FluidTrajectory(R=R, step=step)
    t = 0.0
    pending = list(snaps)
    if pending and pending[0] <= 1e-15:
        _snapshot(y, 0.0, R, traj)
        pending.pop(0)

    targets = pending + ([T] if (not pending or pending[-1] < T) else [])
    for target in targets:
        span = target - t
        if span > 0.0:
            n_sub = max(1, math.ceil(span / step - 1e-12))
            h = span / n_sub
            for _ in range(n_sub):
                y = rk4_step(_fluid_rhs, t, y, h)
                t += h
                if y.size - 2 >= 2 and y[-4] > GROW_THRESHOLD:
                    grown = math.ceil(1.5 * (y.size - 2))
                    pad = grown - (y.size - 2)
                    y = np.concatenate([y[:-2], np.zeros(pad), y[-2:]])
            t = target
        if pending and abs(target - pending[0]) < 1e-12:
            _snapshot(y, t, R, traj)
            pending.pop(0)
    if not traj.times or traj.times[-1] < T - 1e-12:
        _snapshot(y, T, R, traj)
    return traj


class DecayFit(NamedTuple):
    slope: float
    intercept: float
    max_residual: float
    n_points: int


def fit_decay_rate(traj: FluidTrajectory, window: tuple[float, float],
                   kl_floor: float = 1e-15) -> DecayFit:
    """Least-squares line through (t, log KL-to-equilibrium) over a time
    window.  Needs at least 3 snapshots in the window whose divergence is
    meaningfully positive (above ``kl_floor``, the resolution left by
    truncation round-off)."""
    lo, hi = window
    ts, ys = [], []
    for t, kl in zip(traj.times, traj.kl_gibbs):
        if lo <= t <= hi:
            if not (kl > kl_floor and math.isfinite(kl)):
                raise ValueError(f"divergence not meaningfully positive at t={t}")
            ts.append(t)
            ys.append(math.log(kl))
    if len(ts) < 3:
        raise ValueError("need at least 3 snapshots in the window")
    ts_a = np.array(ts)
    ys_a = np.array(ys)
    slope, intercept = np.polyfit(ts_a, ys_a, 1)
    resid = np.abs(ys_a - (slope * ts_a + intercept)).max()
    return DecayFit(float(slope), float(intercept), float(resid), len(ts))
