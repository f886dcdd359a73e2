import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stirsim.lattice import Torus
from stirsim.state import (
    ModelParams,
    project,
    read_counts,
    sample_stationary,
    validate_counts,
    validate_labels,
    write_counts,
)


def test_params_validation():
    ModelParams(k=1, densities=(0.5,))
    with pytest.raises(ValueError):
        ModelParams(k=0, densities=(0.5,))
    with pytest.raises(ValueError):
        ModelParams(k=1, densities=(0.0, 0.5))
    with pytest.raises(ValueError):
        ModelParams(k=1, densities=(0.6, 0.4))
    with pytest.raises(ValueError):
        ModelParams(k=1, densities=())


def test_project_examples():
    counts = project(np.array([[1, 1]], dtype=np.int8), n_labels=2)
    assert counts.tolist() == [[2, 0]]
    counts = project(np.array([[1, 2, 2]], dtype=np.int8), n_labels=3)
    assert counts.tolist() == [[1, 2, 0]]
    counts = project(np.array([[2]], dtype=np.int8), n_labels=3)
    assert counts.tolist() == [[0, 1, 0]]


def test_project_slot_permutation_invariant():
    rng = np.random.default_rng(0)
    labels = rng.integers(1, 4, size=(10, 5)).astype(np.int8)
    shuffled = labels.copy()
    for row in shuffled:
        rng.shuffle(row)
    assert np.array_equal(project(labels, 3), project(shuffled, 3))


def test_sampler_binomial_marginals():
    # 1e6 i.i.d. sites: empirical pmf within 4 sigma of the binomial per bin
    params = ModelParams(k=3, densities=(0.3, 0.2))
    torus = Torus(1, 1_000_000)
    rng = np.random.default_rng(42)
    counts = project(sample_stationary(params, torus, rng), params.n_labels)
    n = torus.site_count
    for j, p in enumerate(params.full_densities):
        emp = np.bincount(counts[:, j], minlength=params.k + 1) / n
        for c in range(params.k + 1):
            pmf = math.comb(params.k, c) * p**c * (1 - p) ** (params.k - c)
            bound = 4.0 * math.sqrt(pmf * (1 - pmf) / n)
            assert abs(emp[c] - pmf) < bound, (j, c, emp[c], pmf)


def test_sampler_site_independence():
    params = ModelParams(k=2, densities=(0.4,))
    torus = Torus(1, 1_000_000)
    rng = np.random.default_rng(7)
    counts = project(sample_stationary(params, torus, rng), 2)[:, 0].astype(float)
    a, b = counts[0::2], counts[1::2]
    corr = np.corrcoef(a, b)[0, 1]
    assert abs(corr) < 4.0 / math.sqrt(a.size)


def test_validate_counts():
    params = ModelParams(k=2, densities=(0.4,))
    torus = Torus(1, 5)
    labels = sample_stationary(params, torus, np.random.default_rng(1))
    assert validate_counts(project(labels, 2), params).ok
    assert validate_labels(labels, params).ok

    bad = project(labels, 2).copy()
    bad[3, 0] -= 1
    rep = validate_counts(bad, params)
    assert not rep.ok
    assert rep.site == 3

    rep = validate_counts(np.zeros((0, 2), dtype=np.int64), params)
    assert not rep.ok


def test_counts_serialization_roundtrip():
    params = ModelParams(k=2, densities=(0.3, 0.2))
    torus = Torus(1, 6)
    counts = project(sample_stationary(params, torus, np.random.default_rng(3)), 3)
    buf = io.StringIO()
    write_counts(buf, counts)
    buf.seek(0)
    assert np.array_equal(read_counts(buf), counts)


@given(st.integers(1, 4), st.integers(1, 3))
@settings(max_examples=20, deadline=None)
def test_projection_sums_to_k(k, l):
    densities = tuple(0.5 / l for _ in range(l))
    params = ModelParams(k=k, densities=densities)
    torus = Torus(1, 8)
    labels = sample_stationary(params, torus, np.random.default_rng(11))
    counts = project(labels, params.n_labels)
    assert (counts.sum(axis=1) == k).all()
