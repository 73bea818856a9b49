"""Command-line front door.

Subcommands: ``simulate`` (finite-N Monte Carlo), ``fluid`` (limit ODE),
``spectra`` (walk eigensystem and decay bounds), ``audit`` (inequality
battery for the walk), ``report`` (consolidated end-to-end run).

Every artifact embeds its provenance: the effective config, seeds and the
package version.  Exit codes are the machine contract: 0 success, 1 audit
failure, 2 usage error, 3 resource error.  Figures are emitted as CSV data
plus a small gnuplot script, never as rendered images.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import brw, fluid, harness, simulate
from .audit import AuditReport
from .pmf import Pmf

EXIT_OK = 0
EXIT_AUDIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_RESOURCE = 3


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    boxes: list[int] = field(default_factory=lambda: [1000])
    balls: int = 1
    time: float = 1.0
    step: float = 0.01
    truncation: int | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    snapshots: list[float] | None = None
    mode: str = "exponential"
    n: int = 16
    bias: float = 0.5
    start: int = 0
    out: str | None = None
    format: str = "csv"

    def to_json_dict(self) -> dict:
        d = dict(self.__dict__)
        d["version"] = __version__
        return d


def parse_snapshots(text: str) -> list[float]:
    """Comma list ("0.5,1,2") or "linspace:a:b:n"."""
    if text.startswith("linspace:"):
        parts = text.split(":")
        if len(parts) != 4:
            raise UsageError("linspace spec must be linspace:a:b:n")
        a, b, n = float(parts[1]), float(parts[2]), int(parts[3])
        if n < 1:
            raise UsageError("linspace needs n >= 1")
        return [float(v) for v in np.linspace(a, b, n)]
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError as exc:
        raise UsageError(f"bad snapshot list {text!r}") from exc


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v != ""]
    except ValueError as exc:
        raise UsageError(f"bad integer list {text!r}") from exc


_CONFIG_KEYS = {"boxes", "balls", "time", "step", "truncation", "seed",
                "seeds", "snapshots", "mode", "n", "bias", "start", "out",
                "format"}


def load_config_file(path: str) -> dict:
    """Flat key=value lines with # comments, or a JSON object."""
    with open(path) as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{") or path.endswith(".json"):
        data = json.loads(text)
        if not isinstance(data, dict):
            raise UsageError("config JSON must be an object")
    else:
        data = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"bad config line {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            data[key] = value
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return data


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfzrp",
        description="Mean-field zero-range process: simulate, integrate, audit.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *names):
        if "boxes" in names:
            p.add_argument("--boxes", help="number of boxes (comma list allowed)")
        if "balls" in names:
            p.add_argument("--balls", type=int, help="balls per box (R)")
        if "time" in names:
            p.add_argument("--time", type=float, help="horizon T")
        if "step" in names:
            p.add_argument("--step", type=float, help="integrator step")
        if "truncation" in names:
            p.add_argument("--truncation", type=int, help="fluid window size")
        if "seeds" in names:
            p.add_argument("--seed", type=int, help="single seed")
            p.add_argument("--seeds", help="comma list of seeds")
        if "snapshots" in names:
            p.add_argument("--snapshots",
                           help="comma list or linspace:a:b:n")
        if "mode" in names:
            p.add_argument("--mode",
                           choices=["exponential", "mean-holding"])
        p.add_argument("--config", help="key=value or JSON config file")
        p.add_argument("--out", help="output path (file or directory)")
        p.add_argument("--format", choices=["csv", "json"])

    p_sim = sub.add_parser("simulate", help="finite-N Monte Carlo run")
    common(p_sim, "boxes", "balls", "time", "seeds", "snapshots", "mode")
    p_fluid = sub.add_parser("fluid", help="fluid-limit integration")
    common(p_fluid, "balls", "time", "step", "truncation", "snapshots")
    p_spec = sub.add_parser("spectra", help="walk eigensystem and bounds")
    p_spec.add_argument("--n", type=int, help="state count")
    p_spec.add_argument("--bias", type=float, help="bias a in [0,1)")
    p_spec.add_argument("--time", type=float, help="bound evaluation time")
    p_spec.add_argument("--start", type=int, help="start state for bounds")
    common(p_spec)
    p_audit = sub.add_parser("audit", help="walk inequality battery")
    p_audit.add_argument("--n", type=int)
    p_audit.add_argument("--bias", type=float)
    p_audit.add_argument("--seed", type=int)
    common(p_audit)
    p_rep = sub.add_parser("report", help="consolidated experiment report")
    common(p_rep, "boxes", "balls", "time", "step", "seeds")
    return parser


def parse(argv: list[str]) -> RunConfig:
    """Parse flags (flags override config-file values)."""
    ns = _build_parser().parse_args(argv)
    values: dict = {}
    if getattr(ns, "config", None):
        values.update(load_config_file(ns.config))

    def pick(name, default=None):
        flag = getattr(ns, name, None)
        if flag is not None:
            return flag
        if name in values:
            return values[name]
        return default

    cfg = RunConfig(command=ns.command)
    boxes = pick("boxes")
    if boxes is not None:
        cfg.boxes = _parse_int_list(boxes)
    if pick("balls") is not None:
        cfg.balls = int(pick("balls"))
    if pick("time") is not None:
        cfg.time = float(pick("time"))
    if pick("step") is not None:
        cfg.step = float(pick("step"))
    if pick("truncation") is not None:
        cfg.truncation = int(pick("truncation"))
    seeds = pick("seeds")
    seed = pick("seed")
    if seeds is not None:
        cfg.seeds = _parse_int_list(seeds)
    elif seed is not None:
        cfg.seeds = [int(seed)]
    snaps = pick("snapshots")
    if snaps is not None:
        cfg.snapshots = parse_snapshots(str(snaps))
    mode = pick("mode")
    if mode is not None:
        cfg.mode = str(mode).replace("-", "_")
    if pick("n") is not None:
        cfg.n = int(pick("n"))
    if pick("bias") is not None:
        cfg.bias = float(pick("bias"))
    if pick("start") is not None:
        cfg.start = int(pick("start"))
    cfg.out = pick("out")
    if pick("format") is not None:
        cfg.format = str(pick("format"))

    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if any(n < 1 for n in cfg.boxes):
        raise UsageError("--boxes must be >= 1")
    if cfg.command == "simulate" and len(cfg.boxes) != 1:
        raise UsageError("simulate takes a single --boxes value")
    if cfg.balls < 0:
        raise UsageError("--balls must be >= 0")
    if cfg.time < 0.0:
        raise UsageError("--time must be >= 0")
    if cfg.step <= 0.0:
        raise UsageError("--step must be > 0")
    if cfg.truncation is not None and cfg.truncation < 2:
        raise UsageError("--truncation must be >= 2")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        raise UsageError("--seeds must be distinct")
    if cfg.mode not in simulate.MODES:
        raise UsageError(f"--mode must be one of {simulate.MODES}")
    if cfg.command in ("spectra", "audit"):
        if cfg.n < 2:
            raise UsageError("--n must be >= 2")
        if not 0.0 <= cfg.bias < 1.0:
            raise UsageError("--bias must lie in [0, 1)")
        if not 0 <= cfg.start < cfg.n:
            raise UsageError("--start must lie in {0..n-1}")
    if cfg.format not in ("csv", "json"):
        raise UsageError("--format must be csv or json")


# ---------------------------------------------------------------------------
# execution


def _provenance(cfg: RunConfig) -> dict:
    return {"config": cfg.to_json_dict(), "version": __version__}


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _gnuplot_script(csv_name: str, ylabel: str, logscale: bool) -> str:
    lines = [f'set datafile separator ","',
             f'set ylabel "{ylabel}"',
             'set xlabel "t"']
    if logscale:
        lines.append("set logscale y")
    lines.append(f'plot "{csv_name}" skip 1 using 1:2 with lines')
    return "\n".join(lines) + "\n"


def _execute_simulate(cfg: RunConfig) -> int:
    snaps = cfg.snapshots or [cfg.time]
    for seed in cfg.seeds:
        state = simulate.init_uniform(cfg.boxes[0], cfg.balls, seed)
        record = simulate.run_until(state, cfg.time, snaps, cfg.mode)
        suffix = f"_seed{seed}" if len(cfg.seeds) > 1 else ""
        if cfg.out:
            base, ext = os.path.splitext(cfg.out)
            if cfg.format == "json":
                payload = record.to_json_dict()
                payload["provenance"].update(_provenance(cfg))
                _write(f"{base}{suffix}{ext or '.json'}",
                       json.dumps(payload, sort_keys=True, indent=2))
            else:
                header = f"# config={json.dumps(cfg.to_json_dict(), sort_keys=True)}\n"
                _write(f"{base}{suffix}{ext or '.csv'}", header + record.to_csv())
        else:
            final_t, final = record.snapshots[-1]
            print(f"seed {seed}: t={final_t:g} events={state.events} "
                  f"support={final.last_point}")
    return EXIT_OK


def _execute_fluid(cfg: RunConfig) -> int:
    snaps = cfg.snapshots or [float(v) for v in
                              np.linspace(0.0, cfg.time, 201)]
    x0 = Pmf.delta(cfg.balls)
    traj = fluid.integrate(x0, cfg.time, step=cfg.step, snapshot_times=snaps,
                           truncation=cfg.truncation)
    if cfg.out:
        header = f"# config={json.dumps(cfg.to_json_dict(), sort_keys=True)}\n"
        if cfg.format == "json":
            payload = {
                "provenance": _provenance(cfg),
                "times": traj.times,
                "states": [st.x.to_json_dict() for st in traj.states],
                "diagnostics": {
                    "entropy": traj.entropy, "ds_exact": traj.ds_exact,
                    "ds_lower": traj.ds_lower, "kl_gibbs": traj.kl_gibbs,
                    "kl_self_bias": traj.kl_self_bias, "leak": traj.leak},
            }
            _write(cfg.out, json.dumps(payload, sort_keys=True, indent=2,
                                       default=_json_default))
        else:
            base, ext = os.path.splitext(cfg.out)
            _write(cfg.out, header + traj.to_csv())
            _write(f"{base}.diagnostics{ext or '.csv'}",
                   header + traj.diagnostics_to_csv())
    else:
        print(f"integrated to t={traj.times[-1]:g}, "
              f"KL to equilibrium {traj.kl_gibbs[-1]:.3e}, "
              f"final window {traj.states[-1].d}")
    return EXIT_OK


def _json_default(obj):
    if isinstance(obj, float) and obj != obj:
        return None
    raise TypeError(str(type(obj)))


def _execute_spectra(cfg: RunConfig) -> int:
    spec = brw.BrwSpec(cfg.n, cfg.bias)
    dec = brw.eigensystem(spec)
    t = cfg.time
    bounds = brw.convergence_bounds(spec, cfg.start, t)
    if cfg.out:
        base, _ = os.path.splitext(cfg.out)
        payload = dec.to_json_dict()
        payload["provenance"] = _provenance(cfg)
        _write(f"{base}.json", json.dumps(payload, sort_keys=True, indent=2))
        rows = [f"# config={json.dumps(cfg.to_json_dict(), sort_keys=True)}",
                "k,pointwise_bound"]
        rows += [f"{k},{float(v)!r}" for k, v in enumerate(bounds.pointwise)]
        rows += [f"# tv_bound={bounds.tv!r}",
                 f"# first_moment_bound={bounds.first_moment!r}",
                 f"# tau1={bounds.tau1!r}"]
        _write(f"{base}.bounds.csv", "\n".join(rows) + "\n")
    else:
        print(f"spectral gap {dec.spectral_gap!r}, tau1(1/4) {bounds.tau1:.4g}")
    return EXIT_OK


def _walk_audit_battery(cfg: RunConfig) -> AuditReport:
    from .audit import check

    rep = AuditReport()
    spec = brw.BrwSpec(cfg.n, cfg.bias)
    dec = brw.eigensystem(spec)
    q = brw.q_matrix(spec)
    residual = float(np.abs(dec.eigenvectors @ q -
                            dec.eigenvalues[:, None] * dec.eigenvectors).max())
    rep.add(check("eigen_residual", residual, "<=", 1e-10))
    if cfg.bias > 0.0:
        rep.add(check("gap_bound", dec.spectral_gap, ">=",
                      cfg.bias ** 2 / 4.0))
        size = 400
        u = cfg.bias * np.power(1.0 - cfg.bias, np.arange(1, size + 1))
        rep.add(check("hardy_constant",
                      abs(brw.hardy_bound_constant(
                          u, u, u_tail=(1.0 - cfg.bias) ** (size + 1))
                          - cfg.bias ** -2), "<=", 1e-8))
        for t in (0.5, 2.0):
            rep.add(brw.dominance_audit(min(3, cfg.n - 1), cfg.bias, t))
        seed = cfg.seeds[0] if cfg.seeds else 0
        violations = brw.coupling_sim(cfg.bias, min(0.9, cfg.bias + 0.2),
                                      Pmf.delta(3), Pmf.delta(3),
                                      horizon=10.0, seed=seed, replicas=500)
        rep.add(check("coupling_violations", float(violations), "<=", 0.0))
    else:
        rep.add(check("gap_bound", dec.spectral_gap, ">=", 4.0 / cfg.n ** 2))
    nu = brw.reflection_law(3, 2.0)
    ev = brw.evolve(Pmf.delta(3), 2.0, brw.BrwSpec(max(len(nu) + 4, 48), 0.0))
    width = max(len(nu), len(ev))
    a_pad = np.zeros(width)
    b_pad = np.zeros(width)
    a_pad[: len(nu)] = nu.weights
    b_pad[: len(ev)] = ev.weights
    rep.add(check("reflection_vs_master", float(np.abs(a_pad - b_pad).max()),
                  "<=", 1e-8))
    return rep


def _execute_audit(cfg: RunConfig) -> int:
    rep = _walk_audit_battery(cfg)
    text_rows = rep.summary_lines()
    if cfg.out:
        base, _ = os.path.splitext(cfg.out)
        if cfg.format == "json":
            payload = json.loads(rep.to_json())
            payload["provenance"] = _provenance(cfg)
            _write(f"{base}.json", json.dumps(payload, sort_keys=True, indent=2))
        else:
            header = f"# config={json.dumps(cfg.to_json_dict(), sort_keys=True)}\n"
            _write(f"{base}.csv", header + rep.to_csv())
    for line in text_rows:
        print(line)
    if not rep.all_passed:
        first = rep.failures()[0]
        print(f"audit failure: {first.name}", file=sys.stderr)
        return EXIT_AUDIT_FAILURE
    return EXIT_OK


def _execute_report(cfg: RunConfig) -> int:
    out_dir = cfg.out or "."
    report, rep = harness.full_report(R=cfg.balls, N_list=cfg.boxes,
                                      T=cfg.time, seeds=cfg.seeds,
                                      out_dir=out_dir, step=cfg.step)
    _write(os.path.join(out_dir, "fig_kl_decay.gp"),
           _gnuplot_script("fig_kl_decay.csv", "KL divergence", True))
    _write(os.path.join(out_dir, "fig_sup_vs_N.gp"),
           _gnuplot_script("fig_sup_vs_N.csv", "sup distance", True))
    print(f"report written to {os.path.join(out_dir, 'report.json')}")
    for line in rep.summary_lines():
        print(line)
    if not rep.all_passed:
        first = rep.failures()[0]
        print(f"audit failure: {first.name}", file=sys.stderr)
        return EXIT_AUDIT_FAILURE
    return EXIT_OK


def execute(cfg: RunConfig) -> int:
    handlers = {
        "simulate": _execute_simulate,
        "fluid": _execute_fluid,
        "spectra": _execute_spectra,
        "audit": _execute_audit,
        "report": _execute_report,
    }
    return handlers[cfg.command](cfg)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return execute(cfg)
    except MemoryError as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
