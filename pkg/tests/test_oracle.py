import math

import numpy as np
import pytest

from stirsim import kernels, oracle, theory
from stirsim.dynamics import final_labels_batch
from stirsim.lattice import Torus
from stirsim.state import ModelParams

TORUS3 = Torus(1, 3)


def test_state_space_sizes():
    for k, l, expect in ((1, 1, 8), (2, 1, 27), (1, 2, 27), (2, 2, 216)):
        params = ModelParams(k=k, densities=(0.3, 0.2)[:l] or (0.3,))
        space = oracle.StateSpace.build(TORUS3, params)
        assert space.size == expect
        assert space.n_comp == math.comb(k + l, l)


def test_state_space_roundtrip():
    params = ModelParams(k=2, densities=(0.3, 0.2))
    space = oracle.StateSpace.build(TORUS3, params)
    for idx in (0, 17, 100, 215):
        counts = space.counts(idx)
        assert (counts.sum(axis=1) == 2).all()
        assert space.index_of_counts(counts) == idx


def test_state_guard():
    params = ModelParams(k=3, densities=(0.2, 0.2, 0.2))
    with pytest.raises(ValueError, match="states"):
        oracle.StateSpace.build(Torus(1, 9), params)


def test_generator_hand_enumeration():
    # d=1, L=3, k=1, l=1: the alternating configuration (1, 2, 1) can swap
    # across exactly two of the three edges, so its exit rate is 2
    params = ModelParams(k=1, densities=(0.5,))
    Q, space = oracle.build_generator(TORUS3, params)
    assert space.size == 8
    counts = np.array([[1, 0], [0, 1], [1, 0]])
    idx = space.index_of_counts(counts)
    assert -Q[idx, idx] == pytest.approx(2.0, abs=1e-14)
    # jump targets: exchanging across either active edge
    t1 = space.index_of_counts(np.array([[0, 1], [1, 0], [1, 0]]))
    t2 = space.index_of_counts(np.array([[1, 0], [1, 0], [0, 1]]))
    assert Q[idx, t1] == pytest.approx(1.0)
    assert Q[idx, t2] == pytest.approx(1.0)


def test_single_species_state_absorbing():
    params = ModelParams(k=2, densities=(0.4,))
    Q, space = oracle.build_generator(TORUS3, params)
    counts = np.array([[2, 0], [2, 0], [2, 0]])
    idx = space.index_of_counts(counts)
    assert np.abs(Q[idx]).max() == 0.0


def test_generator_rows_and_detailed_balance():
    for k, p in [(1, (0.4,)), (2, (0.3, 0.2))]:
        params = ModelParams(k=k, densities=p)
        Q, space = oracle.build_generator(TORUS3, params)
        assert np.abs(Q.sum(axis=1)).max() < 1e-12
        off = Q - np.diag(np.diag(Q))
        assert off.min() >= 0.0
        pi = space.stationary()
        flux = pi[:, None] * Q
        assert np.abs(flux - flux.T).max() < 1e-12


def test_expm_action_basics():
    params = ModelParams(k=1, densities=(0.4,))
    Q, space = oracle.build_generator(TORUS3, params)
    pi = space.stationary()
    v = np.arange(space.size, dtype=float)
    assert np.array_equal(oracle.expm_action(Q, 0.0, v), v)
    evolved = oracle.law_at_time(Q, pi, 1.3)
    assert np.abs(evolved - pi).max() < 1e-10
    start = np.zeros(space.size)
    start[3] = 1.0
    law = oracle.law_at_time(Q, start, 0.8)
    assert law.min() > -1e-12
    assert abs(law.sum() - 1.0) < 1e-10


def test_two_time_identity_all_tiny_systems():
    # central theorem-level check: generator-based two-time correlation
    # equals k A(j1,j2) times the exact torus return kernel
    for k, p in [(1, (0.4,)), (2, (0.4,)), (1, (0.3, 0.2)), (2, (0.3, 0.2))]:
        params = ModelParams(k=k, densities=p)
        Q, space = oracle.build_generator(TORUS3, params)
        pi = space.stationary()
        A = theory.species_covariance(p)
        for r in (0.3, 1.0):
            q = kernels.torus_kernel(1, 3, k, r, (0,))
            for j1 in range(1, len(p) + 1):
                for j2 in range(1, len(p) + 1):
                    got = oracle.two_time_correlation(space, Q, pi, j1, j2, r)
                    assert abs(got - k * A[j1 - 1, j2 - 1] * q) < 1e-8


def test_exact_occupation_cov_small():
    params = ModelParams(k=2, densities=(0.3, 0.2))
    Q, space = oracle.build_generator(TORUS3, params)
    pi = space.stationary()
    assert oracle.exact_occupation_cov_small(space, Q, pi, 0.0, 1.0, 1, 1) == 0.0
    got = oracle.exact_occupation_cov_small(space, Q, pi, 0.5, 1.0, 1, 1)
    want = theory.occupation_covariance(1, 2, (0.3, 0.2), 0.5, 1.0, 1, 1, L=3)
    assert abs(got - want) < 1e-6
    cross = oracle.exact_occupation_cov_small(space, Q, pi, 0.5, 1.0, 1, 2)
    assert cross < 0
    want_cross = theory.occupation_covariance(1, 2, (0.3, 0.2), 0.5, 1.0, 1, 2, L=3)
    assert abs(cross - want_cross) < 1e-6


def test_law_comparison_against_simulator():
    # empirical law of the simulator at t=1 from a fixed initial state
    params = ModelParams(k=1, densities=(0.4,))
    Q, space = oracle.build_generator(TORUS3, params)
    init_labels = np.array([[1], [2], [1]], dtype=np.int8)
    start = np.zeros(space.size)
    start[space.indices_from_labels(init_labels.reshape(1, -1))[0]] = 1.0
    exact = oracle.law_at_time(Q, start, 1.0)
    finals = final_labels_batch(TORUS3, params, init_labels, 1.0, 20_000, seed=8)
    cmp = oracle.compare_to_simulation(exact, space.indices_from_labels(finals))
    assert cmp.ok, (cmp.tv, cmp.threshold)
    assert cmp.threshold == pytest.approx(4 * math.sqrt(8 / 20_000))


def test_tiny_torus_guard():
    with pytest.raises(ValueError):
        Torus(1, 2)  # L >= 3 is required before any oracle can be built
