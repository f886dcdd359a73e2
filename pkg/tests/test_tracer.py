import io
import math

import numpy as np
import pytest

from stirsim import tracer
from stirsim.dynamics import EventRecord, ReplicaSpec, simulate
from stirsim.kernels import torus_kernel
from stirsim.lattice import Torus
from stirsim.state import ModelParams

TORUS = Torus(1, 8)
PARAMS = ModelParams(k=2, densities=(0.5,))


def _record(events, horizon):
    times, xs, ms, ys, ns = (np.array(col) for col in zip(*events)) if events else (
        np.array([]), np.array([], int), np.array([], int), np.array([], int), np.array([], int)
    )
    return EventRecord(
        times=times.astype(float), site_a=xs.astype(int), slot_a=ms.astype(int),
        site_b=ys.astype(int), slot_b=ns.astype(int), horizon=horizon,
    )


def test_empty_log_identity():
    log = _record([], 1.0)
    path = tracer.trace_back(log, 1.0, [(3, 1)])[0]
    assert path.final == (3, 1)
    assert path.position(0.5) == (3, 1)


def test_single_event_path():
    # one swap at time s: the backward path jumps at u = t - s
    log = _record([(0.4, 2, 0, 3, 1)], 1.0)
    path = tracer.trace_back(log, 1.0, [(2, 0)])[0]
    assert path.position(0.3) == (2, 0)
    assert path.position(0.7) == (3, 1)
    assert path.final == (3, 1)
    other = tracer.trace_back(log, 1.0, [(3, 1)])[0]
    assert other.final == (2, 0)
    untouched = tracer.trace_back(log, 1.0, [(5, 0)])[0]
    assert untouched.final == (5, 0)


def test_trace_beyond_horizon_rejected():
    log = _record([], 1.0)
    with pytest.raises(ValueError):
        tracer.trace_back(log, 2.0, [(0, 0)])


def test_duality_exact_on_simulated_histories():
    targets = [(s, m) for s in range(TORUS.site_count) for m in range(PARAMS.k)]
    for rep in range(30):
        spec = ReplicaSpec(torus=TORUS, params=PARAMS, horizon=1.5, grid=(1.5,),
                           seed=50, replica=rep)
        res = simulate(spec, record_events=True, keep_final_state=True, snapshot_times=[0.0])
        assert tracer.duality_check(
            res.snapshots[0], res.final_labels, res.events, 1.5, targets
        ) == 0


def test_duality_at_intermediate_times():
    # the label at (x, m) at time t equals the snapshot label at the traced
    # position at any intermediate time
    tau = 0.6
    spec = ReplicaSpec(torus=TORUS, params=PARAMS, horizon=1.0, grid=(1.0,),
                       seed=51, replica=2)
    res = simulate(spec, record_events=True, keep_final_state=True, snapshot_times=[tau])
    snap = res.snapshots[0]
    for target in [(0, 0), (3, 1), (7, 0)]:
        path = tracer.trace_back(res.events, 1.0, [target])[0]
        site, slot = path.position(1.0 - tau)
        assert res.final_labels[target] == snap[site, slot]


def test_collision_avoidance_exact():
    # independently replayed targets never share a position at any replay time
    spec = ReplicaSpec(torus=TORUS, params=PARAMS, horizon=1.0, grid=(1.0,),
                       seed=52, replica=0)
    res = simulate(spec, record_events=True)
    targets = [(s, m) for s in range(TORUS.site_count) for m in range(PARAMS.k)]
    paths = tracer.trace_back(res.events, 1.0, targets)
    us = np.linspace(0.0, 1.0, 37)
    for u in us:
        positions = [p.position(u) for p in paths]
        assert len(set(positions)) == len(targets)


def test_collision_probability_edge_cases():
    # same tracer: probability one; distinct equal-time targets: zero
    spec = ReplicaSpec(torus=TORUS, params=PARAMS, horizon=1.0, grid=(1.0,),
                       seed=53, replica=0)
    res = simulate(spec, record_events=True)
    a = tracer.final_position(res.events, 1.0, 2, 1)
    assert a == tracer.final_position(res.events, 1.0, 2, 1)
    b = tracer.final_position(res.events, 1.0, 2, 0)
    assert a != b


def test_collision_probability_bound():
    est = tracer.collision_probability(
        Torus(1, 16), PARAMS, 0.5, 1.0, (0, 0), (2, 1), n_replicas=4000, seed=54
    )
    assert est.probability <= est.kernel_bound + 3 * est.stderr
    assert est.kernel_bound <= torus_kernel(1, 16, PARAMS.k, 0.5, (0,)) + 1e-15


def test_marginal_spatial_tv():
    # d=1, L=16, k=2, t=1: TV between the empirical traced-site law over 1e5
    # replicas and the exact torus kernel stays below 0.01
    torus = Torus(1, 16)
    chk = tracer.tracer_marginal_check(torus, PARAMS, 1.0, (3, 0), 100_000, seed=60)
    assert chk.tv_spatial < 0.01
    assert chk.site_probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_marginal_t0_point_mass():
    torus = Torus(1, 16)
    chk = tracer.tracer_marginal_check(torus, PARAMS, 1e-9, (3, 0), 200, seed=61)
    assert chk.site_probs[3] == 1.0


def test_marginal_k1_reduces_to_walk_kernel():
    torus = Torus(1, 8)
    params = ModelParams(k=1, densities=(0.5,))
    chk = tracer.tracer_marginal_check(torus, params, 0.8, (2, 0), 50_000, seed=62)
    expected = tracer.kernel_row_from(torus, 1, 0.8, 2)
    assert np.abs(chk.expected_site_probs - expected).max() == 0
    assert chk.tv_spatial < 0.02


def test_slot_marginal_uniform_at_large_t():
    torus = Torus(1, 8)
    n = 20_000
    chk = tracer.tracer_marginal_check(torus, PARAMS, 3.0, (1, 1), n, seed=63)
    sigma = math.sqrt(0.25 / n)
    assert np.abs(chk.slot_probs - 0.5).max() < 4 * sigma


def test_backward_law_symmetry():
    # hitting probabilities between slot pairs are symmetric within 4 sigma
    torus = Torus(1, 8)
    n = 50_000
    s1, m1 = tracer.trace_endpoints_batch(torus, PARAMS, 1.0, (3, 0), n, seed=64)
    s2, m2 = tracer.trace_endpoints_batch(torus, PARAMS, 1.0, (5, 1), n, seed=65)
    p_fwd = np.mean((s1 == 5) & (m1 == 1))
    p_bwd = np.mean((s2 == 3) & (m2 == 0))
    se = math.sqrt(p_fwd * (1 - p_fwd) / n + p_bwd * (1 - p_bwd) / n)
    assert abs(p_fwd - p_bwd) < 4 * se


def test_events_csv_dump():
    log = _record([(0.25, 1, 0, 2, 1)], 1.0)
    buf = io.StringIO()
    tracer.write_events_csv(buf, log)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# schema=v1"
    assert lines[1] == "time,x,m,y,n"
    assert lines[2] == "0.25,1,0,2,1"
