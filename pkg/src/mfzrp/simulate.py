"""Exact event-driven Monte Carlo of the finite mean-field ball/box process.

N boxes hold N*R balls.  At rate N an ordered (source, sink) pair of boxes
is drawn uniformly from all N^2 pairs; when the source is nonempty and
distinct from the sink one ball moves across.  Equal source and sink is a
no-op that still advances the clock, which is what makes the empirical
jump kernel come out right.

The engine batches random draws and walks them in a tight loop over plain
ints; occupancy lives in a 32-bit array (40 MB at N = 10^7) and the
occupancy histogram in a growable list.  Snapshots record the state
immediately after the last event at or before the snapshot time
(right-continuous paths).
"""

from __future__ import annotations

import io
import json
import os
import struct
from array import array
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import __version__
from .pmf import EnsembleCounts, Pmf

MEMORY_BUDGET_BYTES = 2_000_000_000
_BATCH = 8192
_CHECKPOINT_MAGIC = b"ZRPCKPT1"

MODES = ("exponential", "mean_holding")


@dataclass
class OccupancyState:
    """Full microstate of the process plus its clock and generator.

    ``occupancy[i]`` is the ball count of box i; ``hist[k]`` mirrors the
    number of boxes holding k balls.  One state is owned by one execution
    context; parallelism happens across replicas, never within a state.
    """

    N: int
    R: float
    occupancy: array
    hist: list[int]
    time: float
    events: int
    seed: int
    rng: np.random.Generator

    @property
    def total_balls(self) -> int:
        return round(self.N * self.R)

    @property
    def histogram(self) -> EnsembleCounts:
        return EnsembleCounts(self.N, {k: c for k, c in enumerate(self.hist) if c})

    def rebuild_histogram(self) -> np.ndarray:
        occ = np.frombuffer(self.occupancy, dtype=np.int32)
        return np.bincount(occ)

    def verify(self) -> None:
        """Conservation and histogram consistency, rebuilt from scratch."""
        fresh = self.rebuild_histogram()
        stored = np.array(self.hist[: len(fresh)], dtype=np.int64)
        if len(fresh) < len(self.hist) and any(self.hist[len(fresh):]):
            raise AssertionError("histogram has phantom mass")
        if not np.array_equal(fresh, stored):
            raise AssertionError("histogram out of sync with occupancy")
        k = np.arange(len(fresh))
        if int(k @ fresh) != self.total_balls:
            raise AssertionError("ball conservation violated")


def _make_rng(seed: int) -> np.random.Generator:
    # counter-based generator: cheap independent streams keyed by seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def init_uniform(N: int, R: int, seed: int) -> OccupancyState:
    """All boxes start with exactly R balls."""
    if N < 1 or R < 0:
        raise ValueError("need N >= 1 and R >= 0")
    need = 4 * N
    if need > MEMORY_BUDGET_BYTES:
        raise MemoryError(f"occupancy needs {need} bytes, "
                          f"budget {MEMORY_BUDGET_BYTES}")
    occ = array("i", [R]) * N
    hist = [0] * (R + 1)
    hist[R] = N
    return OccupancyState(N=N, R=float(R), occupancy=occ, hist=hist,
                          time=0.0, events=0, seed=seed, rng=_make_rng(seed))


def init_custom(N: int, ball_counts: Sequence[int], seed: int,
                R: int | None = None) -> OccupancyState:
    """Start from an explicit microconfiguration.

    When R is given the counts must sum to N*R; otherwise the exact mean
    is recorded as the state's R.
    """
    if len(ball_counts) != N:
        raise ValueError("ball_counts must have length N")
    counts = [int(c) for c in ball_counts]
    if any(c < 0 for c in counts):
        raise ValueError("ball counts must be nonnegative")
    total = sum(counts)
    if R is not None and total != N * R:
        raise ValueError(f"counts sum to {total}, expected N*R = {N * R}")
    need = 4 * N
    if need > MEMORY_BUDGET_BYTES:
        raise MemoryError(f"occupancy needs {need} bytes, "
                          f"budget {MEMORY_BUDGET_BYTES}")
    occ = array("i", counts)
    hist = [0] * (max(counts) + 1)
    for c in counts:
        hist[c] += 1
    return OccupancyState(N=N, R=total / N, occupancy=occ, hist=hist,
                          time=0.0, events=0, seed=seed, rng=_make_rng(seed))


def empirical(state: OccupancyState) -> Pmf:
    """Fraction of boxes at each occupancy level, trimmed of trailing zeros."""
    hist = state.hist
    end = len(hist)
    while end > 1 and hist[end - 1] == 0:
        end -= 1
    w = np.array(hist[:end], dtype=float) / state.N
    return Pmf(offset=0, weights=w)


class EventRecord(NamedTuple):
    time: float
    source: int
    sink: int
    moved: bool


def step(state: OccupancyState, mode: str = "exponential") -> EventRecord:
    """Advance exactly one event (possibly a no-op) and return it."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "exponential":
        gap = float(state.rng.exponential(1.0 / state.N))
    else:
        gap = 1.0 / state.N
    s, k = (int(v) for v in state.rng.integers(0, state.N, 2))
    state.time += gap
    state.events += 1
    moved = False
    occ, hist = state.occupancy, state.hist
    if s != k:
        os_ = occ[s]
        if os_ > 0:
            occ[s] = os_ - 1
            ok_ = occ[k]
            occ[k] = ok_ + 1
            hist[os_] -= 1
            hist[os_ - 1] += 1
            hist[ok_] -= 1
            if ok_ + 1 >= len(hist):
                hist.append(0)
            hist[ok_ + 1] += 1
            moved = True
    return EventRecord(state.time, s, k, moved)


@dataclass
class TrajectoryRecord:
    """Empirical snapshots of one run plus the config that produced them."""

    N: int
    R: float
    T: float
    seed: int
    mode: str
    snapshots: list[tuple[float, Pmf]] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# N={self.N}\n# R={self.R!r}\n# seed={self.seed}\n")
        buf.write(f"# mode={self.mode}\n# version={__version__}\n")
        buf.write("t,k,x_k\n")
        for t, p in self.snapshots:
            for k, w in enumerate(p.weights):
                buf.write(f"{t!r},{k},{float(w)!r}\n")
        return buf.getvalue()

    def to_json_dict(self) -> dict:
        return {
            "provenance": {"N": self.N, "R": self.R, "T": self.T,
                           "seed": self.seed, "mode": self.mode,
                           "version": __version__},
            "snapshots": [{"t": t, "pmf": p.to_json_dict()}
                          for t, p in self.snapshots],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


def run_until(state: OccupancyState, T: float,
              snapshot_times: Sequence[float] | None = None,
              mode: str = "exponential") -> TrajectoryRecord:
    """Run the process in place up to time T, emitting empirical snapshots.

    Snapshot times must lie in [state.time, T]; each snapshot captures the
    state after the last event at or before that time.  Histogram and
    conservation invariants are re-verified at every snapshot and at exit.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if T < state.time:
        raise ValueError("T must be >= state.time")
    if snapshot_times is None or len(snapshot_times) == 0:
        snaps = [T]
    else:
        snaps = sorted(float(t) for t in snapshot_times)
    if snaps and (snaps[0] < state.time - 1e-12 or snaps[-1] > T + 1e-12):
        raise ValueError("snapshot times must lie in [state.time, T]")

    record = TrajectoryRecord(N=state.N, R=state.R, T=T, seed=state.seed,
                              mode=mode)
    occ, hist = state.occupancy, state.hist
    n = state.N
    inv_n = 1.0 / n
    rng = state.rng
    t = state.time
    events = state.events
    si = 0
    n_snaps = len(snaps)

    def emit(at: float) -> None:
        state.time = at
        state.events = events
        state.verify()
        record.snapshots.append((at, empirical(state)))

    exponential = mode == "exponential"
    done = False
    while not done:
        if exponential:
            gaps = rng.exponential(inv_n, _BATCH).tolist()
        else:
            gaps = [inv_n] * _BATCH
        srcs = rng.integers(0, n, _BATCH).tolist()
        snks = rng.integers(0, n, _BATCH).tolist()
        for i in range(_BATCH):
            t_next = t + gaps[i]
            while si < n_snaps and snaps[si] < t_next:
                if snaps[si] > T:
                    break
                emit(snaps[si])
                si += 1
            if t_next > T:
                done = True
                break
            t = t_next
            s = srcs[i]
            k = snks[i]
            if s != k:
                os_ = occ[s]
                if os_ > 0:
                    occ[s] = os_ - 1
                    ok_ = occ[k]
                    occ[k] = ok_ + 1
                    hist[os_] -= 1
                    hist[os_ - 1] += 1
                    hist[ok_] -= 1
                    if ok_ + 1 >= len(hist):
                        hist.append(0)
                    hist[ok_ + 1] += 1
            events += 1
    while si < n_snaps and snaps[si] <= T:
        emit(snaps[si])
        si += 1
    state.time = T
    state.events = events
    state.verify()
    return record


def compare_to_fluid(record: TrajectoryRecord, fluid_traj) -> float:
    """Sup-norm gap between empirical snapshots and the fluid limit,
    maximized over snapshot times (fluid states interpolated linearly)."""
    worst = 0.0
    for t, p in record.snapshots:
        fw = fluid_traj.weights_at(t)
        width = max(fw.size, len(p))
        a = np.zeros(width)
        b = np.zeros(width)
        a[: len(p)] = p.weights
        b[: fw.size] = fw
        worst = max(worst, float(np.abs(a - b).max()))
    return worst


@dataclass(frozen=True)
class ReplicaConfig:
    N: int
    R: int
    T: float
    snapshot_times: tuple[float, ...]
    mode: str = "exponential"


class ReplicaReport(NamedTuple):
    records: list[TrajectoryRecord]
    sup_distances: list[float] | None
    mean_sup: float | None
    max_sup: float | None


def _run_replica(config: ReplicaConfig, seed: int) -> TrajectoryRecord:
    state = init_uniform(config.N, config.R, seed)
    return run_until(state, config.T, config.snapshot_times, config.mode)


def replicate(config: ReplicaConfig, seeds: Sequence[int],
              fluid_traj=None) -> ReplicaReport:
    """Independent replicas, one per seed, optionally scored against a
    fluid trajectory.  ``ZRP_THREADS`` caps process-level parallelism;
    the default is serial execution."""
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    workers = int(os.environ.get("ZRP_THREADS", "1"))
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            records = list(pool.map(_run_replica, [config] * len(seeds), seeds))
    else:
        records = [_run_replica(config, s) for s in seeds]
    if fluid_traj is None:
        return ReplicaReport(records, None, None, None)
    dists = [compare_to_fluid(r, fluid_traj) for r in records]
    return ReplicaReport(records, dists, float(np.mean(dists)),
                         float(np.max(dists)))


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(state: OccupancyState, path: str) -> None:
    """Binary dump: magic, header, raw int32 occupancy, generator state."""
    rng_state = state.rng.bit_generator.state
    rng_blob = json.dumps(rng_state, default=_json_np).encode()
    header = struct.pack("<QdddQq", state.N, state.R, state.time,
                         0.0, state.events, state.seed)
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(header)
        occ_bytes = state.occupancy.tobytes()
        fh.write(struct.pack("<Q", len(occ_bytes)))
        fh.write(occ_bytes)
        fh.write(struct.pack("<Q", len(rng_blob)))
        fh.write(rng_blob)


def _json_np(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def load_checkpoint(path: str) -> OccupancyState:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        header = fh.read(struct.calcsize("<QdddQq"))
        n, r, time_, _pad, events, seed = struct.unpack("<QdddQq", header)
        (occ_len,) = struct.unpack("<Q", fh.read(8))
        occ = array("i")
        occ.frombytes(fh.read(occ_len))
        (rng_len,) = struct.unpack("<Q", fh.read(8))
        rng_state = json.loads(fh.read(rng_len).decode())
    hist_arr = np.bincount(np.frombuffer(occ, dtype=np.int32))
    rng = _make_rng(seed)
    # Philox state dict round-trips through JSON as plain lists/ints
    rng_state["state"]["counter"] = np.array(rng_state["state"]["counter"],
                                             dtype=np.uint64)
    rng_state["state"]["key"] = np.array(rng_state["state"]["key"],
                                         dtype=np.uint64)
    rng.bit_generator.state = rng_state
    state = OccupancyState(N=int(n), R=float(r), occupancy=occ,
                           hist=[int(c) for c in hist_arr], time=float(time_),
                           events=int(events), seed=int(seed), rng=rng)
    state.verify()
    return state
