import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distnewton.netgraph import (Topology, TopologyError, build_ring, build_symmetric_ring,
                                 complete_average, is_primitive, load_topology, power_estimate_lambda2,
                                 random_symmetric, save_topology, spectral_params)


def circulant_spectrum(I, self_w, off1, off2):
    # Row i has off1 at column i-1 and off2 at column i+2.
    th = 2 * np.pi * np.arange(I) / I
    return self_w + off1 * np.exp(-1j * th) + off2 * np.exp(2j * th)


def test_ring_matches_circulant_formula(ring30):
    eig = np.linalg.eigvals(ring30.weights)
    ref = circulant_spectrum(30, 0.7, 0.15, 0.15)
    # Match each closed-form eigenvalue to its nearest computed one.
    d = np.abs(eig[:, None] - ref[None, :])
    assert d.min(axis=0).max() < 1e-10
    assert d.min(axis=1).max() < 1e-10


def test_ring_structure(ring30):
    W = ring30.weights
    assert W[5, 5] == 0.7 and W[5, 4] == 0.15 and W[5, 7] == 0.15
    assert np.count_nonzero(W) == 90


def test_ring_lambda2_value_and_speed():
    t0 = time.perf_counter()
    p = spectral_params(build_ring(30, 0.7, 0.15, 0.15))
    assert time.perf_counter() - t0 < 1.0
    assert abs(p.lambda2_modulus - 0.9838) < 1e-3
    assert not p.is_real


def test_three_node_ring_merges_neighbours():
    # For I=3 node i-1 and node i+2 coincide, so the off weights add up.
    W = build_ring(3, 1 / 3, 1 / 3, 1 / 3).weights
    assert np.allclose(np.diag(W), 1 / 3)
    assert np.isclose(W[0, 2], 2 / 3) and W[0, 1] == 0
    assert np.isclose(spectral_params(Topology(W)).lambda2_modulus, 1 / np.sqrt(3))


def test_symmetric_ring_lambda2_closed_form():
    p = spectral_params(build_symmetric_ring(30))
    assert abs(p.lambda2 - (0.5 + 0.5 * np.cos(2 * np.pi / 30))) < 1e-10


def test_complete_average_has_zero_lambda2():
    assert spectral_params(complete_average(7)).lambda2 == 0


@pytest.mark.parametrize("W, msg", [
    (np.array([[0.5, 0.6], [0.5, 0.4]]), "row-stochasticity"),
    (np.array([[1.2, -0.2], [-0.2, 1.2]]), "nonnegativity"),
    (np.array([[0.5, 0.5], [0.4, 0.6]]), "column-stochasticity"),
    (np.eye(3), "primitivity"),
    (np.array([[0.0, 1.0], [1.0, 0.0]]), "primitivity"),
    (np.ones((2, 3)) / 3, "square"),
    (np.array([[np.nan, 1.0], [1.0, 0.0]]), "non-finite"),
])
def test_validation_errors(W, msg):
    with pytest.raises(TopologyError, match=msg):
        Topology(W)


def test_column_stochastic_violation():
    W = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.25, 0.25, 0.5]])
    with pytest.raises(TopologyError, match="column-stochasticity"):
        Topology(W)


def test_ring_argument_errors():
    with pytest.raises(TopologyError):
        build_ring(2, 0.5, 0.25, 0.25)
    with pytest.raises(TopologyError):
        build_ring(5, 0.5, 0.3, 0.3)
    with pytest.raises(TopologyError):
        build_ring(5, 1.2, -0.1, -0.1)


def test_periodic_matrix_is_not_primitive():
    C = np.roll(np.eye(4), 1, axis=1)
    assert not is_primitive(C)
    assert is_primitive(0.5 * C + 0.5 * np.eye(4))


def test_topology_roundtrip(tmp_path, ring30):
    path = tmp_path / "w.txt"
    save_topology(ring30, path)
    assert np.array_equal(load_topology(path).weights, ring30.weights)


def test_load_topology_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("3\n0.5 0.5 0\n0.5 0.5 0\n")
    with pytest.raises(TopologyError, match="expected 3 matrix rows"):
        load_topology(bad)
    bad.write_text("")
    with pytest.raises(TopologyError, match="empty"):
        load_topology(bad)


def test_spectral_params_eigen_residuals(ring30):
    p = spectral_params(ring30)
    W = ring30.weights
    assert np.linalg.norm(W @ p.u - p.lambda2 * p.u) < 1e-10
    assert np.linalg.norm(p.v @ W - p.lambda2 * p.v) < 1e-10
    others = np.abs(np.linalg.eigvals(W))
    assert np.sort(others)[-2] == pytest.approx(p.lambda2_modulus, abs=1e-12)


def test_power_estimate_symmetric_ring():
    top = build_symmetric_ring(30)
    lam, u, _ = power_estimate_lambda2(top, 0, 500)
    assert np.abs(lam - spectral_params(top).lambda2).max() < 1e-3
    assert u.shape == (30,)


def test_power_estimate_complete_graph_is_zero():
    lam, _, _ = power_estimate_lambda2(complete_average(30), 0, 50)
    assert np.all(lam == 0)


@pytest.mark.parametrize("seed", range(5))
def test_power_estimate_random_symmetric(seed):
    top = random_symmetric(10, np.random.default_rng(seed))
    lam, _, _ = power_estimate_lambda2(top, seed, 1000)
    ref = spectral_params(top).lambda2_modulus
    assert np.abs(lam - ref).max() / ref < 1e-2


def test_power_estimate_rejects_directed(ring30):
    with pytest.raises(TopologyError, match="symmetric"):
        power_estimate_lambda2(ring30, 0, 10)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 12), st.floats(0.05, 0.9), st.floats(0.05, 0.95), st.integers(0, 2**31 - 1))
def test_ring_doubly_stochastic_and_averages(I, self_w, split, seed):
    off1 = (1 - self_w) * split
    W = build_ring(I, self_w, off1, 1 - self_w - off1).weights
    assert np.allclose(W.sum(axis=0), 1) and np.allclose(W.sum(axis=1), 1)
    v = np.random.default_rng(seed).standard_normal((I, 3))
    assert np.allclose((W @ v).mean(axis=0), v.mean(axis=0), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 12), st.integers(0, 2**31 - 1))
def test_permutation_invariance_of_lambda2(I, seed):
    rng = np.random.default_rng(seed)
    top = random_symmetric(I, rng)
    perm = rng.permutation(I)
    assert spectral_params(top.permuted(perm)).lambda2_modulus == pytest.approx(
        spectral_params(top).lambda2_modulus, abs=1e-12)


def test_static_mixing_decays_at_lambda2(ring30):
    v = np.random.default_rng(1).standard_normal(30)
    v -= v.mean()
    W = ring30.weights
    norms = []
    for _ in range(400):
        v = W @ v
        norms.append(np.linalg.norm(v))
    ratio = (norms[-1] / norms[-101]) ** (1 / 100)
    assert ratio == pytest.approx(spectral_params(ring30).lambda2_modulus, abs=1e-3)
