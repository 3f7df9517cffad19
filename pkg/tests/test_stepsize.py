from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distnewton.dnewton import init_states, step_proposed
from distnewton.netgraph import Topology, complete_average, random_symmetric, spectral_params
from distnewton.objectives import centralized_newton, make_localization_instance, random_quadratic_set
from distnewton.spectral import rmatrix
from distnewton.stepsize import (F_map, StepSizeError, adaptive_alpha, certified_pair, compute_constants,
                                 criterion_residual, diagonalize, init_rtracker, node_weights, offline_alpha,
                                 r_step, s_estimate, schedule_alpha, solve_lyapunov)

from conftest import identical_quadratics


def decimal_one_minus_sqrt(x):
    getcontext().prec = 50
    return float(Decimal(1) - Decimal(x).sqrt())


# ------------------------------------------------------------- offline / adaptive


def test_offline_examples():
    assert abs(offline_alpha(0.81) - decimal_one_minus_sqrt(0.81)) <= np.spacing(0.1)
    assert offline_alpha(0.5625) == 0.25
    assert offline_alpha(0.0) == 1.0
    a = offline_alpha(0.9838)
    assert a == pytest.approx(8.13e-3, abs=5e-6)
    assert abs(criterion_residual(a, 0.9838)) <= 1e-12


def test_offline_complex_lambda2(ring30):
    lam = spectral_params(ring30).lambda2
    a = offline_alpha(lam)
    assert 0 < a < 1 and abs(criterion_residual(a, lam)) <= 1e-12


@pytest.mark.parametrize("bad", [1.0, -1.0, 0.8 + 0.7j])
def test_offline_rejects_unit_modulus(bad):
    with pytest.raises(StepSizeError):
        offline_alpha(bad)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 1 - 1e-9))
def test_offline_correctly_rounded(lam):
    assert abs(offline_alpha(lam) - decimal_one_minus_sqrt(lam)) <= 2 * np.spacing(decimal_one_minus_sqrt(lam))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.995), st.floats(-np.pi, np.pi))
def test_adaptive_unit_spread_is_offline(r, phi):
    lam = r * np.exp(1j * phi)
    assert abs(adaptive_alpha(lam, 1.0) - offline_alpha(lam)) <= 1e-10


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 0.99), st.floats(0.1, 20.0))
def test_adaptive_root_and_bracket(lam, s):
    a = adaptive_alpha(lam, s)
    assert 0 < a < 1
    assert abs(criterion_residual(a, lam, s)) <= 1e-12
    # The residual is negative before the root.
    assert criterion_residual(0.5 * a, lam, s) < 0


def test_adaptive_near_upper_spread():
    s = 1 / 0.9 - 1e-3
    a = adaptive_alpha(0.9, s)
    assert 0 < a < 1 and abs(criterion_residual(a, 0.9, s)) <= 1e-12


def test_adaptive_decreases_with_spread(ring30):
    lam = spectral_params(ring30).lambda2
    a = adaptive_alpha(lam, np.linspace(0.2, 3, 30))
    assert np.all(np.diff(a) < 0)


def test_adaptive_rejects_nonpositive_spread():
    with pytest.raises(StepSizeError, match="positive"):
        adaptive_alpha(0.5, [1.0, 0.0])


# ---------------------------------------------------------------------- s


def test_s_estimate_examples():
    assert s_estimate(np.eye(3)) == 1.0
    assert s_estimate(np.diag([2.0, 0.5])) == 1.25


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 5))
def test_s_estimate_matches_eigen_oracle(seed, n):
    A = np.random.default_rng(seed).standard_normal((n, n))
    R = A @ A.T + 0.1 * np.eye(n)
    lam = np.linalg.eigvalsh(R)
    assert s_estimate(R) == pytest.approx(0.5 * (lam[0] + lam[-1]), rel=1e-10)


def test_s_estimate_singular():
    with pytest.raises(StepSizeError, match="singular"):
        s_estimate(np.diag([1.0, 0.0]))


# -------------------------------------------------------------- R tracking


def test_node_weights_average_to_one(ring30):
    w = node_weights(spectral_params(ring30))
    assert np.allclose(w, 1.0)
    top = random_symmetric(12, np.random.default_rng(0))
    w = node_weights(spectral_params(top))
    assert w.mean() == pytest.approx(1.0, abs=1e-12)


def test_tracker_sums_to_identity_for_identical_quadratics():
    top = random_symmetric(10, np.random.default_rng(1))
    Q = np.array([[2.0, 0.3], [0.3, 1.0]])
    objs = identical_quadratics(10, Q, np.zeros(2))
    st0 = init_states(objs, np.tile([1.0, 2.0], (10, 1)))
    tr = init_rtracker(spectral_params(top), st0, 10.0)
    assert np.allclose(tr.R.mean(axis=0), np.eye(2), atol=1e-12)
    assert np.allclose(tr.R / tr.weights[:, None, None], np.eye(2), atol=1e-12)


@pytest.fixture(scope="module")
def random_graph_run():
    I = 20
    top = random_symmetric(I, np.random.default_rng(3), edge_prob=0.4)
    inst = make_localization_instance(I, (0.0, 0.0), 0.01, 3)
    objs = inst.objective_set()
    params = spectral_params(top)
    st = init_states(objs, inst.initial_points(), offline_alpha(params.lambda2))
    tr = init_rtracker(params, st, 0.1)
    means = []
    for _ in range(1500):
        nxt = step_proposed(top, objs, st, 0.1)
        new = r_step(top, tr, nxt, 0.1)
        # Estimate-form consensus keeps the network mean equal to the mean input.
        means.append(np.abs(new.R.mean(axis=0) - new.last_input.mean(axis=0)).max())
        st, tr = nxt, new
    return top, objs, inst, params, tr, np.array(means)


def test_tracker_conserves_mean(random_graph_run):
    *_, means = random_graph_run
    assert means.max() < 1e-10


def test_tracker_converges_to_curvature_ratio(random_graph_run):
    top, objs, inst, params, tr, _ = random_graph_run
    xs = centralized_newton(objs, inst.anchors.mean(axis=0))
    hess = objs.hessians(objs.at_common(xs))
    R = rmatrix(hess, hess.mean(axis=0), params.u, params.v)
    assert np.abs(tr.R - R).max() < 1e-6


def test_tracker_needs_params(loc_instance):
    st = init_states(loc_instance.objective_set(), loc_instance.initial_points())
    with pytest.raises(StepSizeError):
        init_rtracker(None, st, 0.1)


# ------------------------------------------------------ certificate constants


def test_zero_curvature_lyapunov_is_scalar():
    # W = 0.5 I + 0.5 11^T/I has lambda2 = 0.5 and gamma = delta = 0 leaves Phi diagonal.
    W = Topology(0.5 * np.eye(6) + 0.5 * complete_average(6).weights)
    C = compute_constants(W, 1.0, 0.0, 0.0)
    assert np.allclose(C.Phi, 0.5 * np.eye(3))
    assert np.allclose(C.P, 4 / 3 * np.eye(3), atol=1e-14)
    assert C.e == pytest.approx(0.75)
    assert np.allclose(solve_lyapunov(0.5 * np.eye(3)), 4 / 3 * np.eye(3))


def test_degenerate_delta(ring30):
    C = compute_constants(ring30, 0.1, 5.0, 0.0)
    assert C.b == 0
    assert np.array_equal(C.nu, np.array([0.0, 0.0, C.sigma_c * 0.1]))
    assert C.psi[2] == 0 and C.Omega[0, 0] == 0


def test_lyapunov_residual_unit_scale(ring30):
    C = compute_constants(ring30, 0.1, 1.0, 1.0)
    assert C.lyapunov_residual() <= 1e-10


def test_lyapunov_residual_relative_at_large_scale(ring30):
    # gamma in the thousands makes P ~ 1e11; the residual is then bounded relative to P.
    C = compute_constants(ring30, 0.1, 6500.0, 650.0)
    assert C.lyapunov_residual() <= 1e-12 * np.abs(C.P).max()


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 10), st.floats(0, 100), st.floats(0, 100))
def test_constants_basic_properties(beta, gamma, delta):
    W = Topology(0.8 * complete_average(8).weights + 0.2 * np.eye(8))
    C = compute_constants(W, beta, gamma, delta)
    assert 0 < C.e <= 1
    assert np.linalg.eigvalsh(C.P).min() >= 1 - 1e-9
    assert np.linalg.norm(np.linalg.inv(C.P), 2) <= 1 + 1e-12
    assert min(C.a, C.b, C.c, C.d, C.h) >= 0 and C.f(0.3) >= 0 and C.g(0.3) >= 0


def test_unitary_similarity_for_normal_weights(ring30):
    sim = diagonalize(ring30)
    assert sim.unitary
    assert np.allclose(sim.T_inv @ np.diag(sim.eigenvalues) @ sim.T, ring30.weights, atol=1e-12)


def test_nonnormal_similarity():
    n = 6
    S = np.roll(np.eye(n), 1, axis=1)
    P = np.eye(n)[np.random.default_rng(5).permutation(n)]
    W = Topology(0.5 * np.eye(n) + 0.3 * S + 0.2 * P)
    sim = diagonalize(W)
    assert not sim.unitary
    assert np.allclose(sim.T_inv @ np.diag(sim.eigenvalues) @ sim.T, W.weights, atol=1e-10)


def test_defective_and_nonmixing_rejected():
    with pytest.raises(StepSizeError, match="defective"):
        diagonalize(np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(StepSizeError, match="lambda2"):
        compute_constants(np.eye(3), 1.0, 1.0, 1.0)
    with pytest.raises(StepSizeError):
        compute_constants(complete_average(3), -1.0, 1.0, 1.0)


def test_literal_build_differs_by_squares(ring30):
    C = compute_constants(ring30, 0.1, 2.0, 0.5)
    L = compute_constants(ring30, 0.1, 2.0, 0.5, literal=True)
    # Unitary T gives sigma_c = 1, so only the square roots separate a.
    assert C.sigma_c == pytest.approx(1.0)
    assert L.a == pytest.approx(C.a**2, rel=1e-12)
    assert L.f(0.1) > 0 and L.g(0.1) > 0


# ---------------------------------------------------------------- F map


@pytest.fixture(scope="module")
def fast_constants():
    W = Topology(0.9 * complete_average(30).weights + 0.1 * np.eye(30))
    objs = random_quadratic_set(30, 2, 1)
    Q = objs.hessians(np.zeros((30, 2)))
    return compute_constants(W, 1 / np.linalg.eigvalsh(Q).min(), float(np.linalg.norm(Q, ord=2, axis=(1, 2)).max()), 0.0)


def test_F_at_zero_step(fast_constants):
    C = fast_constants
    y = F_map(C, (2.0, 3.0), 0.0)
    assert np.allclose(y, [2.0, np.sqrt(1 - C.e) * 3.0])
    assert y[1] < 3.0


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1))
def test_F_fixed_point_at_zero(alpha):
    W = Topology(0.9 * complete_average(5).weights + 0.1 * np.eye(5))
    C = compute_constants(W, 1.0, 2.0, 0.5)
    assert np.array_equal(F_map(C, (0.0, 0.0), alpha), [0.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 5), st.floats(0, 5), st.floats(0, 1))
def test_F_monotone_in_chi(x1, x2, d1, d2, alpha):
    W = Topology(0.9 * complete_average(5).weights + 0.1 * np.eye(5))
    C = compute_constants(W, 1.0, 2.0, 0.5)
    lo = F_map(C, (x1, x2), alpha)
    hi = F_map(C, (x1 + d1, x2 + d2), alpha)
    assert np.all(hi >= lo * (1 - 1e-12) - 1e-12)


def test_F_rejects_negative(fast_constants):
    with pytest.raises(StepSizeError):
        F_map(fast_constants, (-1.0, 0.0), 0.1)


def test_F_vectorized_over_alpha(fast_constants):
    al = np.array([0.0, 0.1, 0.5])
    Y = F_map(fast_constants, (1.0, 0.5), al)
    for k, a in enumerate(al):
        assert np.allclose(Y[k], F_map(fast_constants, (1.0, 0.5), a))


# ------------------------------------------------------------- scheduler


def test_schedule_single_component_bounds_force_zero(fast_constants):
    # A zero component can only stay zero at alpha = 0 (the other component feeds it).
    for t in (1e-6, 1.0, 10.0):
        assert schedule_alpha(fast_constants, (0.0, t)) == 0.0
        assert schedule_alpha(fast_constants, (t, 0.0)) == 0.0


def test_schedule_large_mismatch_returns_zero(fast_constants):
    assert schedule_alpha(fast_constants, (1.0, 1e6)) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 100), st.floats(1e-6, 1e-1))
def test_schedule_matches_dense_grid(x1, ratio):
    W = Topology(0.9 * complete_average(30).weights + 0.1 * np.eye(30))
    objs = random_quadratic_set(30, 2, 1)
    Q = objs.hessians(np.zeros((30, 2)))
    C = compute_constants(W, 1 / np.linalg.eigvalsh(Q).min(), float(np.linalg.norm(Q, ord=2, axis=(1, 2)).max()), 0.0)
    chi = np.array([x1, ratio * x1])
    a = schedule_alpha(C, chi)
    y = F_map(C, chi, a)
    assert np.all(y <= chi * (1 + 1e-12))
    grid = np.arange(0.0, 1.0 + 5e-6, 1e-5)
    Y = F_map(C, chi, grid)
    feas = np.all(Y <= chi, axis=-1)
    best = np.linalg.norm(Y[feas], axis=-1).min()
    assert np.linalg.norm(y) <= best * (1 + 1e-9)


# ----------------------------------------- one-round bound along trajectories


def _one_round_slack(W, objs, beta, gamma, delta, x0, alphas, rounds=40, seed=0):
    C = compute_constants(W, beta, gamma, delta)
    rng = np.random.default_rng(seed)
    st = init_states(objs, x0)
    worst = -np.inf
    for _ in range(rounds):
        a = float(rng.choice(alphas))
        st = st.with_alpha(a)
        z, _ = certified_pair(C, objs, st)
        nxt = step_proposed(W, objs, st, beta)
        z1, _ = certified_pair(C, objs, nxt)
        bound = F_map(C, z, a)
        # Absolute slack covers rounding once a component has reached zero.
        worst = max(worst, float(np.max(z1 - bound - 1e-12 * (1 + np.abs(bound)))))
        st = nxt
    return worst


def _quad_problem(I, seed, scale=1.0):
    objs = random_quadratic_set(I, 2, seed, scale=scale)
    Q = objs.hessians(np.zeros((I, 2)))
    beta = 1 / np.linalg.eigvalsh(Q).min()
    gamma = float(np.linalg.norm(Q, ord=2, axis=(1, 2)).max())
    xs = centralized_newton(objs, np.zeros(2))
    return objs, beta, gamma, xs


@pytest.mark.parametrize("scale, spread", [(0.03, 0.1), (0.03, 3.0), (1.0, 0.1), (1.0, 3.0)])
def test_bound_holds_on_ring_quadratics(ring30, scale, spread):
    objs, beta, gamma, xs = _quad_problem(30, 1, scale)
    x0 = xs + spread * np.random.default_rng(2).standard_normal((30, 2))
    assert _one_round_slack(ring30, objs, beta, gamma, 0.0, x0, [0, 0.01, 0.1, 0.5, 1.0]) <= 0


@pytest.mark.parametrize("seed", range(3))
def test_bound_holds_on_nonnormal_network(seed):
    n = 6
    S = np.roll(np.eye(n), 1, axis=1)
    P = np.eye(n)[np.random.default_rng(5).permutation(n)]
    W = Topology(0.5 * np.eye(n) + 0.3 * S + 0.2 * P)
    objs, beta, gamma, xs = _quad_problem(n, seed)
    x0 = xs + np.random.default_rng(2).standard_normal((n, 2))
    assert _one_round_slack(W, objs, beta, gamma, 0.0, x0, [0, 0.1, 0.5, 1.0]) <= 0


@pytest.mark.parametrize("fast", [True, False])
def test_bound_holds_on_localization(fast, ring30, loc_instance):
    from distnewton.objectives import propose_assumption_constants
    objs = loc_instance.objective_set()
    prop = propose_assumption_constants(objs, -3, 3, 500, 0)
    W = Topology(0.9 * complete_average(30).weights + 0.1 * np.eye(30)) if fast else ring30
    slack = _one_round_slack(W, objs, 0.1, prop.gamma, prop.delta, loc_instance.initial_points(), [0, 0.01, 0.1, 0.5])
    assert slack <= 0
