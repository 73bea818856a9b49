"""End-to-end numerical verification of the relaxation argument.

Pieces, in the order the argument runs:

- envelope_audit: after a burn-in, the head of the distribution stays
  bounded (x_0 in a fixed band), the trajectory is sandwiched between two
  fixed-bias walk evolutions started from the burn-in state, each x_k obeys
  the explicit two-sided geometric bound, and the whole law sits below a
  shifted geometric.
- transient_decay_audit: from the point-mass start the divergence drops
  like exp(-c sqrt(t)) with c > 0, and its initial value is exactly
  (R+1) log(R+1) - R log R.
- decay_chain_audit: the five chained inequalities that convert entropy
  production into a linear differential inequality for the divergence,
  plus the two side conditions that make the chain quantitative.
- level_times: the times at which the divergence crosses the doubly
  exponential ladder exp(-exp(l)), which should only grow exponentially.
- full_report: orchestrates simulator replicas, the fluid integration and
  every audit into one machine-readable report.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import __version__
from .audit import AuditReport, check
from .brw import BrwSpec, evolve
from .fluid import FluidTrajectory, entropy_rate, fit_decay_rate, integrate, kl_metrics
from .pmf import (
    GeometricFamily,
    Pmf,
    distance,
    geometric,
    phi,
    stochastically_leq,
)
from .simulate import ReplicaConfig, replicate


# ---------------------------------------------------------------------------
# envelope bounds


@dataclass(frozen=True)
class EnvelopeConfig:
    """Sandwich parameters: bias band [a_lower, b_upper] containing the
    equilibrium head 1/(R+1), a right shift j for the dominating law, and
    the reference time s_ref from which the claims are audited."""

    R: float
    a_lower: float
    b_upper: float
    j: int
    s_ref: float

    def __post_init__(self):
        head = 1.0 / (self.R + 1.0)
        if not 0.0 < self.a_lower <= head <= self.b_upper < 1.0:
            raise ValueError("need 0 < a_lower <= 1/(R+1) <= b_upper < 1")
        if self.j < 0 or self.s_ref < 0.0:
            raise ValueError("need j >= 0 and s_ref >= 0")


def default_envelope_config(R: float, eps_upper: float = 0.25) -> EnvelopeConfig:
    """Defaults: lower head bound 1/(5R), upper bound 1 - eps capped to the
    equilibrium head, shift proportional to R log(R+1), burn-in
    5 R^2 (1 + log(R+1))."""
    head = 1.0 / (R + 1.0)
    return EnvelopeConfig(
        R=R,
        a_lower=min(1.0 / (5.0 * R), head),
        b_upper=max(1.0 - eps_upper, head),
        j=math.ceil(2.0 * R * math.log(R + 1.0)) + 1,
        s_ref=5.0 * R * R * (1.0 + math.log(R + 1.0)),
    )


def envelope_audit(traj: FluidTrajectory, config: EnvelopeConfig,
                   max_times: int = 20, order_tol: float = 5e-8) -> AuditReport:
    """Audit the post-burn-in envelopes along a fluid trajectory.

    For up to ``max_times`` snapshot times t >= s_ref: (i) x_0(t) inside
    [a_lower, b_upper]; (ii) evolved low-bias envelope dominates x(t) and
    x(t) dominates the evolved high-bias envelope; (iii) each x_k under the
    explicit bound (1-a)^k - (1-b)^(k+1) + TV slacks; (iv) x(t) below the
    shifted geometric with bias 1/(5R).  Also asserts the implication
    (ii) => (iii) explicitly rather than assuming it.

    The envelopes evolve at fixed bias from the burn-in state by the
    master-equation RK path, chained from one sampled time to the next;
    the strongly biased envelope sits far from its own equilibrium in the
    chi-square sense, which rules the eigenbasis path out here.
    """
    rep = AuditReport()
    times = [t for t in traj.times if t >= config.s_ref - 1e-9]
    if not times:
        raise ValueError("trajectory does not extend past s_ref")
    if len(times) > max_times:
        idx = np.linspace(0, len(times) - 1, max_times).round().astype(int)
        times = [times[i] for i in sorted(set(idx.tolist()))]
    i_ref = traj.times.index(times[0])
    x_ref = traj.states[i_ref].x.trimmed()
    a, b = config.a_lower, config.b_upper
    ref_bias = min(1.0 / (5.0 * config.R), 1.0 / (config.R + 1.0))
    shift_support = config.j + math.ceil(math.log(1e-13) / math.log(1.0 - ref_bias))
    shifted_ref = geometric(GeometricFamily("shifted", ref_bias, j=config.j),
                            shift_support)

    # envelope grids sized for the low-bias equilibrium tail plus slack
    n_env = max(x_ref.last_point + 1,
                math.ceil(math.log(1e-13) / math.log(1.0 - a))) + 20
    spec_a, spec_b = BrwSpec(n_env, a), BrwSpec(n_env, b)
    mu_a = evolve(x_ref, 0.0, spec_a, method="rk")
    mu_b = evolve(x_ref, 0.0, spec_b, method="rk")
    prev_t = times[0]

    for t in times:
        i = traj.times.index(t)
        x_t = traj.states[i].x.trimmed()
        x0 = x_t.prob(0)
        rep.add(check(f"x0_lower@t={t:g}", x0, ">=", a))
        rep.add(check(f"x0_upper@t={t:g}", x0, "<=", b))

        leg = t - prev_t
        if leg > 0.0:
            mu_a = evolve(mu_a, leg, spec_a, method="rk", rk_tol=1e-9)
            mu_b = evolve(mu_b, leg, spec_b, method="rk", rk_tol=1e-9)
            prev_t = t
        up = stochastically_leq(x_t, mu_a, tol=order_tol)
        dn = stochastically_leq(mu_b, x_t, tol=order_tol)
        e_up = rep.add(check(f"sandwich_upper@t={t:g}", up.worst_margin,
                             "<=", order_tol,
                             detail=f"worst cutoff {up.worst_cutoff}"))
        e_dn = rep.add(check(f"sandwich_lower@t={t:g}", dn.worst_margin,
                             "<=", order_tol,
                             detail=f"worst cutoff {dn.worst_cutoff}"))

        tv_a = distance(mu_a, geometric(GeometricFamily("infinite", a),
                                        mu_a.last_point + 1), "tv")
        tv_b = distance(mu_b, geometric(GeometricFamily("infinite", b),
                                        mu_b.last_point + 1), "tv")
        ks = np.arange(len(x_t))
        bound = ((1.0 - a) ** ks - (1.0 - b) ** (ks + 1) + tv_a + tv_b)
        worst_k = int(np.argmax(x_t.weights - bound))
        e_bound = rep.add(check(f"per_level_bound@t={t:g}",
                                float(x_t.weights[worst_k]), "<=",
                                float(bound[worst_k]), tol=order_tol,
                                detail=f"worst k={worst_k}"))
        if e_up.passed and e_dn.passed:
            rep.add(check(f"sandwich_implies_bound@t={t:g}",
                          1.0 if e_bound.passed else 0.0, ">=", 1.0))

        dom = stochastically_leq(x_t, shifted_ref, tol=order_tol)
        rep.add(check(f"shifted_dominance@t={t:g}", dom.worst_margin, "<=",
                      order_tol, detail=f"worst cutoff {dom.worst_cutoff}"))
    return rep


# ---------------------------------------------------------------------------
# transient decay


class TransientDecay(NamedTuple):
    initial_kl: float
    initial_kl_entry: object
    sqrt_coefficient: float
    sqrt_fit_rmse: float
    linear_fit_rmse: float
    entry: object


def transient_decay_audit(traj: FluidTrajectory, R: float,
                          window: tuple[float, float] | None = None) -> TransientDecay:
    """Fit log(KL(0)/KL(t)) = c sqrt(t) on an early window of a point-mass
    started trajectory and audit c > 0; also record how the sqrt-law fit
    compares against a plain linear law on the same window (diagnostic
    only, not a pass/fail)."""
    if window is None:
        s_ref = 5.0 * R * R * (1.0 + math.log(R + 1.0))
        window = (0.2 * s_ref, s_ref)
    d0_expect = (R + 1.0) * math.log(R + 1.0) - R * math.log(R)
    d0 = traj.kl_gibbs[0]
    d0_entry = check("initial_kl_exact", abs(d0 - d0_expect), "<=", 1e-9,
                     detail=f"measured {d0!r}")
    lo, hi = window
    ts, ys = [], []
    for t, kl in zip(traj.times, traj.kl_gibbs):
        if lo <= t <= hi and kl > 0.0 and math.isfinite(kl):
            ts.append(t)
            ys.append(math.log(d0 / kl))
    if len(ts) < 3:
        raise ValueError("window has fewer than 3 usable snapshots")
    ts_a, ys_a = np.array(ts), np.array(ys)
    roots = np.sqrt(ts_a)
    c = float((ys_a @ roots) / (roots @ roots))
    rmse_sqrt = float(np.sqrt(np.mean((ys_a - c * roots) ** 2)))
    c_lin = float((ys_a @ ts_a) / (ts_a @ ts_a))
    rmse_lin = float(np.sqrt(np.mean((ys_a - c_lin * ts_a) ** 2)))
    entry = check("transient_sqrt_coefficient_positive", c, ">=", 1e-6,
                  detail=f"rmse sqrt {rmse_sqrt:.3g} vs linear {rmse_lin:.3g}")
    return TransientDecay(d0, d0_entry, c, rmse_sqrt, rmse_lin, entry)


# ---------------------------------------------------------------------------
# the five-link decay chain


def level_window_size(kl: float, a: float) -> tuple[int, int]:
    """Ladder level l for the current divergence and the window size
    ceil(exp(l+2)/|log(1-a)|) that keeps the tail two rungs below."""
    if not 0.0 < kl < 1.0:
        raise ValueError("need divergence in (0, 1)")
    level = max(1, math.floor(math.log(-math.log(kl))))
    n = math.ceil(math.exp(level + 2) / (-math.log(1.0 - a)))
    return level, n


def decay_chain_audit(x: Pmf, R: float, n: int | None = None,
                      tol: float = 1e-12) -> AuditReport:
    """Audit the chained inequalities at one fluid state.

    With window n, head x_0, geometric comparison g_k = x_0 (1-x_0)^k and
    flows m_k = x_k (1-x_0) - x_{k+1}:

      (i)   exact entropy production >= windowed quadratic form
      (ii)  windowed quadratic form >= geometric-weighted form * head ratio
      (iii) geometric-weighted form >= (x_0^2/4) * windowed chi-square
      (iv)  windowed chi-square >= windowed phi sum
      (v)   full phi sum >= divergence to the mean-R geometric law

    Side conditions: (I) the phi tail beyond n stays under half the
    divergence; (II) the head ratio inf_k g_k/x_k is at least 1/2.
    """
    rep = AuditReport()
    x = x.trimmed()
    x0 = x.prob(0)
    if not 0.0 < x0 < 1.0:
        raise ValueError("x_0 must lie strictly inside (0, 1)")
    metrics = kl_metrics(x, R)
    if n is None:
        _, n = level_window_size(metrics.to_gibbs, x0)
    n = min(n, x.last_point + 1)
    if n < 3:
        raise ValueError("window too small")

    w = np.array([x.prob(k) for k in range(n)])
    g = x0 * np.power(1.0 - x0, np.arange(n))
    m = w[:-1] * (1.0 - x0) - w[1:]

    denom = np.maximum(w[:-1] * (1.0 - x0), w[1:])
    quad_terms = np.zeros(n - 1)
    act = m != 0.0
    quad_terms[act] = m[act] ** 2 / denom[act]
    quad = float(quad_terms.sum())

    exact = entropy_rate(x).exact
    rep.add(check("chain_i_entropy_vs_quadratic", exact, ">=", quad, tol=tol))

    geo_quad = float(np.sum(m * m / g[1:]))
    pos = w[:n] > 0.0
    head_ratio = float(np.min(g[pos] / w[:n][pos]))
    rep.add(check("chain_ii_quadratic_vs_geometric", quad, ">=",
                  geo_quad * head_ratio, tol=tol,
                  detail=f"head ratio {head_ratio!r}"))

    dev = w[1:] - g[1:]
    chi2 = float(np.sum(dev * dev / g[1:]))
    rep.add(check("chain_iii_geometric_vs_chi2", geo_quad, ">=",
                  0.25 * x0 * x0 * chi2, tol=tol))

    phi_window = float(sum(phi(g[k], w[k]) for k in range(1, n)))
    rep.add(check("chain_iv_chi2_vs_phi", chi2, ">=", phi_window, tol=tol))

    rep.add(check("chain_v_phi_vs_kl", metrics.to_self_bias, ">=",
                  metrics.to_gibbs, tol=tol))

    phi_tail = metrics.to_self_bias - float(
        sum(phi(g[k], w[k]) for k in range(1, n)))
    rep.add(check("side_I_phi_tail_small", phi_tail, "<=",
                  0.5 * metrics.to_gibbs, tol=tol,
                  detail=f"tail {phi_tail!r} vs kl {metrics.to_gibbs!r}"))
    rep.add(check("side_II_head_ratio", head_ratio, ">=", 0.5, tol=tol))
    return rep


# ---------------------------------------------------------------------------
# level times


@dataclass
class LevelTimes:
    """First crossing times of the ladder c_l = exp(-exp(l))."""

    R: float
    levels: list[int] = field(default_factory=list)
    times: list[float] = field(default_factory=list)

    @property
    def ratios(self) -> list[float]:
        return [b / a for a, b in zip(self.times, self.times[1:]) if a > 0]

    @property
    def normalized(self) -> list[float]:
        return [s / (self.R * self.R * math.exp(l))
                for l, s in zip(self.levels, self.times)]

    def to_json_dict(self) -> dict:
        return {"R": self.R, "levels": self.levels, "times": self.times,
                "ratios": self.ratios, "normalized": self.normalized}


def level_times(traj: FluidTrajectory, max_level: int = 12,
                kl_floor: float = 1e-13) -> LevelTimes:
    """Locate the ladder crossings of the divergence along a trajectory.

    Only the decay phase counts: snapshots after the divergence reaches
    its minimum, or below ``kl_floor`` (the numerical resolution of the
    truncated divergence), are ignored.  The decay phase must be strictly
    decreasing; crossings between snapshots are placed by log-linear
    interpolation.  Levels already passed at the first snapshot or not
    reached are skipped, so a trajectory resting at equilibrium reports
    no crossings at all.
    """
    kl = np.array(traj.kl_gibbs)
    ts = np.array(traj.times)
    cut = int(np.argmin(kl)) + 1
    kl, ts = kl[:cut], ts[:cut]
    good = kl > kl_floor
    kl, ts = kl[good], ts[good]
    if len(kl) < 2:
        return LevelTimes(R=traj.R)
    if not np.all(np.diff(kl) < 0.0):
        raise ValueError("divergence is not strictly decreasing")
    out = LevelTimes(R=traj.R)
    logs = np.log(kl)
    for level in range(1, max_level + 1):
        target = -math.exp(level)  # log c_l
        if target >= logs[0] or target < logs[-1]:
            continue
        i = int(np.searchsorted(-logs, -target)) - 1
        lam = (target - logs[i]) / (logs[i + 1] - logs[i])
        out.levels.append(level)
        out.times.append(float(ts[i] + lam * (ts[i + 1] - ts[i])))
    return out


# ---------------------------------------------------------------------------
# consolidated report


def full_report(R: int, N_list: Sequence[int], T: float, seeds: Sequence[int],
                out_dir: str | None = None, step: float = 0.01,
                fluid_horizon: float | None = None,
                sup_threshold: float | None = None) -> tuple[dict, AuditReport]:
    """Run simulator replicas against the fluid limit and every audit.

    Returns the report dict (what report.json contains) and the combined
    AuditReport.  Artifacts (report.json, figure CSVs) are written when
    ``out_dir`` is given.  All randomness is pinned by ``seeds``; reruns
    with identical arguments produce byte-identical artifacts.
    """
    cfg = default_envelope_config(R)
    horizon = fluid_horizon or max(T, cfg.s_ref + 25.0)
    n_grid = 201
    fluid_traj = integrate(Pmf.delta(R), horizon, step=step,
                           snapshot_times=np.linspace(0.0, horizon, n_grid))
    rep = AuditReport()

    rep.add(check("mass_conservation", max(fluid_traj.mass_error), "<=", 1e-8))
    rep.add(check("mean_conservation", max(fluid_traj.mean_error), "<=", 1e-6))
    s_arr = np.array(fluid_traj.entropy)
    rep.add(check("entropy_monotone", float(np.diff(s_arr).min()), ">=", -1e-9))
    kl_arr = np.array(fluid_traj.kl_gibbs)
    rep.add(check("kl_monotone", float(np.diff(kl_arr).max()), "<=", 0.0))
    finite = [(e, l) for e, l in zip(fluid_traj.ds_exact, fluid_traj.ds_lower)
              if math.isfinite(e)]
    worst_gap = min((e - l for e, l in finite), default=0.0)
    rep.add(check("entropy_rate_forms_ordered", worst_gap, ">=", -1e-12))

    decay_fit = fit_decay_rate(fluid_traj, (0.6 * horizon, horizon))
    rep.add(check("late_decay_slope_negative", decay_fit.slope, "<=", -1e-12))

    transient = transient_decay_audit(fluid_traj, float(R))
    rep.add(transient.initial_kl_entry)
    rep.add(transient.entry)

    rep.extend(envelope_audit(fluid_traj, cfg))

    late = [st for st, kl in zip(fluid_traj.states, fluid_traj.kl_gibbs)
            if 1e-10 < kl < math.exp(-math.e)]
    chain_states = late[-3:] if late else []
    for st in chain_states:
        chain = decay_chain_audit(st.x, float(R))
        for e in chain.entries:
            rep.add(check(f"{e.name}@t={st.time:g}", e.lhs, e.relation, e.rhs,
                          tol=1e-12, detail=e.detail))

    levels = level_times(fluid_traj)

    sim_snaps = tuple(float(t) for t in np.linspace(0.0, T, 11))
    sup_by_n: dict[int, float] = {}
    records = {}
    for n_boxes in N_list:
        out = replicate(ReplicaConfig(N=n_boxes, R=R, T=T,
                                      snapshot_times=sim_snaps), seeds,
                        fluid_traj=fluid_traj)
        sup_by_n[n_boxes] = out.max_sup
        records[n_boxes] = out.records
        rep.add(check(f"empirical_fluid_sup_N{n_boxes}", out.max_sup, "<=", 1.0,
                      detail=f"per seed {out.sup_distances}"))
    ns = sorted(sup_by_n)
    for small, big in zip(ns, ns[1:]):
        rep.add(check(f"sup_decreasing_N{small}_to_N{big}", sup_by_n[big],
                      "<=", sup_by_n[small]))
    if sup_threshold is not None and ns:
        rep.add(check(f"sup_threshold_N{ns[-1]}", sup_by_n[ns[-1]], "<=",
                      sup_threshold))

    report = {
        "config": {"R": R, "N_list": list(N_list), "T": T, "step": step,
                   "fluid_horizon": horizon,
                   "envelope": {"a_lower": cfg.a_lower, "b_upper": cfg.b_upper,
                                "j": cfg.j, "s_ref": cfg.s_ref}},
        "audits": rep.to_rows(),
        "level_times": [levels.to_json_dict()],
        "decay_fits": [{"window": [0.6 * horizon, horizon],
                        "slope": decay_fit.slope,
                        "intercept": decay_fit.intercept,
                        "max_residual": decay_fit.max_residual,
                        "transient_sqrt_coefficient": transient.sqrt_coefficient,
                        "transient_rmse_sqrt": transient.sqrt_fit_rmse,
                        "transient_rmse_linear": transient.linear_fit_rmse}],
        "sup_distances": {str(k): v for k, v in sup_by_n.items()},
        "provenance": {"seeds": list(seeds), "version": __version__},
        "all_passed": rep.all_passed,
    }

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
        _write_figures(out_dir, fluid_traj, records, sup_by_n)
    return report, rep


def _write_figures(out_dir: str, fluid_traj: FluidTrajectory, records: dict,
                   sup_by_n: dict) -> None:
    with open(os.path.join(out_dir, "fig_kl_decay.csv"), "w") as fh:
        fh.write("t,kl\n")
        for t, kl in zip(fluid_traj.times, fluid_traj.kl_gibbs):
            fh.write(f"{t!r},{kl!r}\n")
    with open(os.path.join(out_dir, "fig_sup_vs_N.csv"), "w") as fh:
        fh.write("N,max_sup\n")
        for n_boxes in sorted(sup_by_n):
            fh.write(f"{n_boxes},{sup_by_n[n_boxes]!r}\n")
    if records:
        biggest = max(records)
        with open(os.path.join(out_dir, "fig_snapshots.csv"), "w") as fh:
            fh.write("t,k,x_k\n")
            for t, p in records[biggest][0].snapshots:
                for k, w in enumerate(p.weights):
                    fh.write(f"{t!r},{k},{float(w)!r}\n")
