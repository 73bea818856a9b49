import json
import math
import os

import numpy as np
import pytest

from mfzrp import fluid, simulate as sim
from mfzrp.pmf import Pmf, distance, gibbs_geometric


# ---------------------------------------------------------------------------
# initialization


def test_init_uniform_golden():
    st = sim.init_uniform(3, 2, seed=0)
    assert list(st.occupancy) == [2, 2, 2]
    assert st.hist == [0, 0, 3]
    emp = sim.empirical(st)
    assert emp.prob(2) == 1.0
    assert emp.mean() == pytest.approx(2.0)


def test_init_uniform_validation():
    with pytest.raises(ValueError):
        sim.init_uniform(0, 2, 0)
    with pytest.raises(ValueError):
        sim.init_uniform(2, -1, 0)


def test_init_memory_budget(monkeypatch):
    monkeypatch.setattr(sim, "MEMORY_BUDGET_BYTES", 1000)
    with pytest.raises(MemoryError, match="bytes"):
        sim.init_uniform(10_000, 1, 0)


def test_init_uniform_large_n_is_fast():
    # 10^7 boxes: flat 32-bit storage, allocation well under a second
    import time

    t0 = time.time()
    st = sim.init_uniform(10**7, 20, seed=1)
    elapsed = time.time() - t0
    assert st.hist[20] == 10**7
    assert st.occupancy.itemsize == 4
    assert elapsed < 2.0  # generous multiple of the ~40 ms observed


def test_init_custom_all_in_one_box():
    n, r = 50, 2
    counts = [0] * n
    counts[0] = n * r
    st = sim.init_custom(n, counts, seed=1, R=r)
    assert st.hist[0] == n - 1
    assert st.hist[n * r] == 1
    st.verify()


def test_init_custom_permutation_matches_uniform():
    rng = np.random.default_rng(0)
    counts = [3] * 20
    perm = list(rng.permutation(counts))
    a = sim.empirical(sim.init_custom(20, perm, seed=0))
    b = sim.empirical(sim.init_uniform(20, 3, seed=0))
    assert np.array_equal(a.weights, b.weights)


def test_init_custom_validation():
    with pytest.raises(ValueError):
        sim.init_custom(3, [1, 2], seed=0)
    with pytest.raises(ValueError):
        sim.init_custom(2, [1, -1], seed=0)
    with pytest.raises(ValueError):
        sim.init_custom(2, [1, 2], seed=0, R=2)  # sums to 3, not 4


def test_init_custom_conditioned_geometric_sample():
    # rejection sampler: geometric(R) occupancies conditioned on total N*R
    rng = np.random.default_rng(7)
    n, r = 2000, 2
    a = 1.0 / (r + 1.0)
    while True:
        counts = rng.geometric(a, size=n) - 1  # support starts at 0
        if counts.sum() == n * r:
            break
    st = sim.init_custom(n, counts.tolist(), seed=0, R=r)
    emp = sim.empirical(st)
    ref = gibbs_geometric(float(r), support_size=emp.last_point + 1)
    assert distance(emp, ref, "sup") < 0.05


# ---------------------------------------------------------------------------
# single events


def test_single_box_every_event_is_noop():
    st = sim.init_uniform(1, 5, seed=3)
    for _ in range(20):
        ev = sim.step(st)
        assert not ev.moved
    assert list(st.occupancy) == [5]
    assert st.events == 20
    assert st.time > 0.0


def test_empty_source_is_noop():
    st = sim.init_custom(2, [0, 2], seed=5)
    for _ in range(200):
        before = (st.occupancy[0], st.occupancy[1])
        ev = sim.step(st)
        after = (st.occupancy[0], st.occupancy[1])
        if ev.source == ev.sink or before[ev.source] == 0:
            assert not ev.moved and before == after
        else:
            assert ev.moved
        st.verify()


def test_hand_trace_one_one():
    st = sim.init_custom(2, [1, 1], seed=11)
    ev = sim.step(st)
    while not ev.moved:
        ev = sim.step(st)
    assert sorted(st.occupancy) == [0, 2]
    assert st.hist[0] == 1 and st.hist[2] == 1


def test_mean_holding_clock():
    st = sim.init_uniform(100, 1, seed=0)
    sim.run_until(st, 2.0, [2.0], mode="mean_holding")
    # deterministic clock: N*T events up to float accumulation at the edge
    assert abs(st.events - 200) <= 1
    assert st.time == pytest.approx(2.0)


# ---------------------------------------------------------------------------
# runs


def test_run_until_zero_span():
    st = sim.init_uniform(10, 2, seed=0)
    rec = sim.run_until(st, 0.0, [0.0])
    assert st.events == 0
    assert len(rec.snapshots) == 1
    assert rec.snapshots[0][1].prob(2) == 1.0


def test_run_until_validation():
    st = sim.init_uniform(10, 2, seed=0)
    sim.run_until(st, 1.0)
    with pytest.raises(ValueError):
        sim.run_until(st, 0.5)  # T before current time
    with pytest.raises(ValueError):
        sim.run_until(st, 2.0, [0.5])  # snapshot before current time


def test_event_rate():
    n, t_end = 2000, 8.0
    st = sim.init_uniform(n, 2, seed=21)
    sim.run_until(st, t_end)
    expect = n * t_end
    assert abs(st.events - expect) <= 4.0 * math.sqrt(expect)


def test_conservation_and_histogram_along_run():
    st = sim.init_uniform(500, 3, seed=13)
    rec = sim.run_until(st, 4.0, np.linspace(0.5, 4.0, 8))
    st.verify()
    for _t, p in rec.snapshots:
        # empirical mean is exactly R in integer arithmetic
        hist = np.round(np.asarray(p.weights) * st.N).astype(int)
        assert int(np.arange(len(hist)) @ hist) == st.total_balls


def test_determinism():
    a = sim.run_until(sim.init_uniform(300, 2, seed=9), 3.0, [1.0, 3.0])
    b = sim.run_until(sim.init_uniform(300, 2, seed=9), 3.0, [1.0, 3.0])
    for (ta, pa), (tb, pb) in zip(a.snapshots, b.snapshots):
        assert ta == tb
        assert np.array_equal(pa.weights, pb.weights)


def test_small_n_exact_equilibrium():
    # N=2, R=1: three states, equilibrium uniform, E[X_0] = 1/3
    st = sim.init_uniform(2, 1, seed=11)
    rec = sim.run_until(st, 30000.0, np.linspace(10.0, 30000.0, 3000))
    x0s = np.array([p.prob(0) for _, p in rec.snapshots])
    batches = x0s.reshape(50, -1).mean(axis=1)
    sigma = batches.std(ddof=1) / math.sqrt(len(batches))
    assert abs(x0s.mean() - 1.0 / 3.0) <= 3.0 * sigma


# ---------------------------------------------------------------------------
# fluid comparison and replication


def test_compare_to_fluid_identical_is_zero():
    ftraj = fluid.integrate(Pmf.delta(2), 2.0, snapshot_times=[0.0, 1.0, 2.0])
    rec = sim.TrajectoryRecord(N=10, R=2.0, T=2.0, seed=0, mode="exponential")
    for t in (0.0, 1.0, 2.0):
        rec.snapshots.append((t, Pmf(0, ftraj.weights_at(t))))
    assert sim.compare_to_fluid(rec, ftraj) == 0.0


def test_compare_to_fluid_out_of_range():
    ftraj = fluid.integrate(Pmf.delta(2), 1.0, snapshot_times=[0.0, 1.0])
    rec = sim.TrajectoryRecord(N=10, R=2.0, T=2.0, seed=0, mode="exponential")
    rec.snapshots.append((2.0, Pmf.delta(2)))
    with pytest.raises(ValueError):
        sim.compare_to_fluid(rec, ftraj)


def test_replicate_single_seed_matches_run_until():
    cfg = sim.ReplicaConfig(N=200, R=2, T=2.0, snapshot_times=(1.0, 2.0))
    rep = sim.replicate(cfg, [17])
    direct = sim.run_until(sim.init_uniform(200, 2, 17), 2.0, [1.0, 2.0])
    for (ta, pa), (tb, pb) in zip(rep.records[0].snapshots, direct.snapshots):
        assert ta == tb and np.array_equal(pa.weights, pb.weights)


def test_replicate_requires_distinct_seeds():
    cfg = sim.ReplicaConfig(N=10, R=1, T=0.5, snapshot_times=(0.5,))
    with pytest.raises(ValueError):
        sim.replicate(cfg, [1, 1])


def test_replicate_parallel_matches_serial(monkeypatch):
    cfg = sim.ReplicaConfig(N=100, R=2, T=1.0, snapshot_times=(0.5, 1.0))
    serial = sim.replicate(cfg, [1, 2])
    monkeypatch.setenv("ZRP_THREADS", "2")
    parallel = sim.replicate(cfg, [1, 2])
    for ra, rb in zip(serial.records, parallel.records):
        for (ta, pa), (tb, pb) in zip(ra.snapshots, rb.snapshots):
            assert ta == tb and np.array_equal(pa.weights, pb.weights)


def test_replicate_aggregates_against_fluid():
    ftraj = fluid.integrate(Pmf.delta(2), 2.0,
                            snapshot_times=np.linspace(0, 2, 21))
    cfg = sim.ReplicaConfig(N=2000, R=2, T=2.0, snapshot_times=(0.5, 1.0, 2.0))
    rep = sim.replicate(cfg, [1, 2, 3], fluid_traj=ftraj)
    assert len(rep.sup_distances) == 3
    assert rep.max_sup >= rep.mean_sup > 0.0
    assert rep.max_sup == max(rep.sup_distances)


# ---------------------------------------------------------------------------
# serialization


def test_trajectory_csv_and_json():
    st = sim.init_uniform(50, 2, seed=4)
    rec = sim.run_until(st, 1.0, [0.5, 1.0])
    text = rec.to_csv()
    assert text.startswith("# N=50")
    assert "# seed=4" in text and "# mode=exponential" in text
    data = json.loads(rec.to_json())
    assert data["provenance"]["N"] == 50
    assert len(data["snapshots"]) == 2


def test_checkpoint_roundtrip(tmp_path):
    st = sim.init_uniform(120, 3, seed=7)
    sim.run_until(st, 1.0)
    path = os.path.join(tmp_path, "state.ckpt")
    sim.save_checkpoint(st, path)
    st2 = sim.load_checkpoint(path)
    assert st2.N == st.N and st2.R == st.R and st2.time == st.time
    assert list(st2.occupancy) == list(st.occupancy)
    r1 = sim.run_until(st, 2.0, [1.5, 2.0])
    r2 = sim.run_until(st2, 2.0, [1.5, 2.0])
    for (ta, pa), (tb, pb) in zip(r1.snapshots, r2.snapshots):
        assert ta == tb and np.array_equal(pa.weights, pb.weights)


def test_checkpoint_bad_magic(tmp_path):
    path = os.path.join(tmp_path, "junk.ckpt")
    with open(path, "wb") as fh:
        fh.write(b"NOTACKPT" + b"\0" * 64)
    with pytest.raises(ValueError, match="magic"):
        sim.load_checkpoint(path)
