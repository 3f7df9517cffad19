import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distnewton.consensus import dynamic_step_estimate, dynamic_step_message, static_step
from distnewton.netgraph import build_symmetric_ring, random_symmetric, spectral_params


def test_constant_payload_is_fixed(ring30):
    v = np.tile([1.5, -2.0], (30, 1))
    assert np.allclose(static_step(ring30, v), v, atol=1e-15)


def test_three_nodes_reach_average():
    W = build_symmetric_ring(3, 1 / 3)
    v = np.array([1.0, 2.0, 3.0])
    for _ in range(200):
        v = static_step(W, v)
    assert np.abs(v - 2).max() < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**31 - 1))
def test_static_step_preserves_mean(I, seed):
    rng = np.random.default_rng(seed)
    W = random_symmetric(max(I, 3), rng) if I >= 3 else build_symmetric_ring(3)
    v = rng.standard_normal((W.node_count, 2, 2))
    assert np.allclose(static_step(W, v).mean(axis=0), v.mean(axis=0), atol=1e-12)


def test_shape_mismatch_rejected(ring30):
    with pytest.raises(ValueError, match="blocks"):
        static_step(ring30, np.zeros((29, 2)))
    with pytest.raises(ValueError, match="shape mismatch"):
        dynamic_step_message(ring30, np.zeros((30, 2)), np.zeros((30, 2)), np.zeros((30, 3)))


def test_message_form_reduces_to_static(ring30):
    rng = np.random.default_rng(0)
    s = rng.standard_normal((30, 2))
    v = rng.standard_normal((30, 2))
    assert np.array_equal(dynamic_step_message(ring30, s, v, v), static_step(ring30, s))


def _inputs(rounds, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.standard_normal((30, 2))
    return [base + 0.1 * k * rng.standard_normal((30, 2)) for k in range(rounds)]


def test_message_form_conserves_mean(ring30):
    vs = _inputs(100)
    s = vs[0].copy()
    for k in range(1, 100):
        s = dynamic_step_message(ring30, s, vs[k], vs[k - 1])
        assert np.abs(s.mean(axis=0) - vs[k].mean(axis=0)).max() < 1e-12


def test_estimate_form_is_mixed_message_form(ring30):
    vs = _inputs(60, 1)
    s = vs[0].copy()
    u = static_step(ring30, vs[0])
    for k in range(1, 60):
        s = dynamic_step_message(ring30, s, vs[k], vs[k - 1])
        u = dynamic_step_estimate(ring30, u, vs[k], vs[k - 1])
        assert np.abs(u - static_step(ring30, s)).max() < 1e-12


def test_estimate_form_fixed_point(ring30):
    u = np.tile([0.3, 0.9], (30, 1))
    v = np.random.default_rng(2).standard_normal((30, 2))
    assert np.allclose(dynamic_step_estimate(ring30, u, v, v), u, atol=1e-15)


def test_ramp_tracking_error_is_bounded_and_constant(ring30):
    c = np.random.default_rng(3).standard_normal((30, 1))
    s = 1 * c
    errs = []
    for k in range(2, 1500):
        s = dynamic_step_message(ring30, s, k * c, (k - 1) * c)
        errs.append(np.abs(s - k * c.mean()).max())
    tail = np.array(errs[-200:])
    assert tail.max() < 100 and (tail.max() - tail.min()) / tail.max() < 1e-6


def test_static_inputs_converge_at_lambda2(ring30):
    v = np.random.default_rng(4).standard_normal((30, 1))
    u = v.copy()
    errs = []
    for _ in range(600):
        u = dynamic_step_estimate(ring30, u, v, v)
        errs.append(np.abs(u - v.mean()).max())
    ratio = (errs[-1] / errs[-201]) ** (1 / 200)
    assert ratio == pytest.approx(spectral_params(ring30).lambda2_modulus, abs=2e-3)
