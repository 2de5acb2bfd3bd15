import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lqg_deceive.errors import ParameterError
from lqg_deceive.lqg_core import (
    CostParams,
    LinearSystem,
    Policy,
    bar_features,
    check_assumptions,
    dlqg,
    halfvec_to_sym,
    policy_improve,
    policy_iteration,
    policy_value,
    q_matrix,
    riccati_rhs,
    riccati_solve,
    simulate,
    theta_halfvec,
)

from conftest import GAMMA, X0, dims, random_problem, seeds


def scalar_riccati(a, b, dd, e, g):
    # g b^2 P^2 + (e - dd g b^2 - g a^2 e) P - dd e = 0, positive root
    qa = g * b * b
    qb = e - dd * g * b * b - g * a * a * e
    qc = -dd * e
    return (-qb + np.sqrt(qb * qb - 4 * qa * qc)) / (2 * qa)


@given(
    a=st.floats(-1.5, 1.5).filter(lambda v: abs(v) > 1e-3),
    b=st.floats(0.2, 2.0),
    dd=st.floats(0.1, 5.0),
    e=st.floats(0.1, 5.0),
    g=st.floats(0.1, 0.99),
)
@settings(max_examples=60, deadline=None)
def test_scalar_riccati_matches_closed_form(a, b, dd, e, g):
    sys = LinearSystem([[a]], [[b]])
    P = riccati_solve(sys, CostParams([[dd]], [[e]]), g)
    ref = scalar_riccati(a, b, dd, e, g)
    assert abs(P[0, 0] - ref) <= 1e-8 * max(1.0, ref)


def test_vehicle_policy(vehicle, vehicle_cost):
    pol, val = dlqg(vehicle, vehicle_cost, GAMMA)
    assert np.allclose(np.diag(pol.K[:, :3]), -0.5316, atol=1e-3)
    assert np.allclose(np.diag(pol.K[:, 3:]), -0.97, atol=1e-3)
    assert np.linalg.norm(pol.k) == 0.0
    assert np.allclose(val.h, 0.0)
    # noise enters only the constant
    _, quiet = dlqg(vehicle.with_noise(0.0), vehicle_cost, GAMMA)
    assert np.allclose(quiet.P, val.P)
    assert val.l > quiet.l


def test_homogeneous_offset_is_zero(vehicle, vehicle_cost):
    pol, _ = dlqg(vehicle, CostParams(vehicle_cost.D, vehicle_cost.E, np.zeros(6)), GAMMA)
    assert np.all(pol.k == 0)


def test_riccati_rejects_uncontrollable():
    sys = LinearSystem(np.diag([0.5, 0.7]), [[1.0], [0.0]])
    with pytest.raises(ParameterError, match="controllable"):
        riccati_solve(sys, CostParams(np.eye(2), [[1.0]]), 0.9)


def test_riccati_rejects_unobservable():
    sys = LinearSystem(np.diag([1.1, 0.7]), np.eye(2))
    rep = check_assumptions(sys, CostParams(np.diag([0.0, 1.0]), np.eye(2)))
    assert rep.controllable and not rep.observable
    with pytest.raises(ParameterError, match="observable"):
        riccati_solve(sys, CostParams(np.diag([0.0, 1.0]), np.eye(2)), 0.9)


def test_cost_validation():
    with pytest.raises(ParameterError):
        CostParams(np.eye(2), [[0.0]])
    with pytest.raises(ParameterError):
        CostParams([[1.0, 0.0], [0.0, -1.0]], [[1.0]])
    with pytest.raises(ParameterError):
        CostParams([[1.0, 0.5], [0.0, 1.0]], [[1.0]])


@pytest.mark.parametrize("gamma", [0.0, 1.0, -0.1, 1.5])
def test_discount_range(vehicle, vehicle_cost, gamma):
    with pytest.raises(ParameterError):
        dlqg(vehicle, vehicle_cost, gamma)


@given(seed=seeds, nm=dims)
@settings(max_examples=30, deadline=None)
def test_riccati_fixed_point_random(seed, nm):
    sys, cost = random_problem(np.random.default_rng(seed), *nm)
    P = riccati_solve(sys, cost, GAMMA)
    assert np.linalg.norm(riccati_rhs(P, sys, cost, GAMMA) - P) <= 1e-10
    assert np.linalg.eigvalsh(P)[0] >= -1e-10


@given(seed=seeds, nm=dims)
@settings(max_examples=20, deadline=None)
def test_policy_iteration_reaches_dlqg(seed, nm):
    rng = np.random.default_rng(seed)
    sys, cost = random_problem(rng, *nm, rho_lo=0.2, rho_hi=0.9)
    opt, _ = dlqg(sys, cost, GAMMA)
    pi, steps = policy_iteration(sys, cost, GAMMA, Policy(np.zeros((sys.m, sys.n))))
    assert pi.max_abs_diff(opt) < 1e-7
    assert steps < 50


def test_optimal_policy_is_greedy_on_its_own_q(vehicle, vehicle_cost):
    d = np.array([0.3, -0.2, 0.1, 0.0, 0.5, -0.4])
    cost = CostParams(vehicle_cost.D, vehicle_cost.E, d, 0.7)
    opt, val = dlqg(vehicle, cost, GAMMA)
    ev = policy_value(vehicle, cost, GAMMA, opt)
    assert np.allclose(ev.P, val.P, atol=1e-8)
    assert np.allclose(ev.h, val.h, atol=1e-8)
    assert abs(ev.l - val.l) < 1e-6
    again = policy_improve(q_matrix(vehicle, cost, GAMMA, ev))
    assert again.max_abs_diff(opt) < 1e-8


def test_q_matrix_monte_carlo(vehicle):
    """Q(x, u) = c(x, u) + g E V(x') checked by sampling x' (1e5 draws, 3 standard errors)."""
    rng = np.random.default_rng(7)
    cost = CostParams(np.eye(6), 0.5 * np.eye(3), rng.standard_normal(6), 0.4)
    pol = Policy(-0.5 * np.hstack([np.eye(3), np.eye(3)]), [0.1, -0.2, 0.3])
    val = policy_value(vehicle, cost, GAMMA, pol)
    q = q_matrix(vehicle, cost, GAMMA, val)
    x, u = rng.standard_normal(6), rng.standard_normal(3)
    mean = vehicle.A @ x + vehicle.B @ u
    xn = mean + vehicle.noise_std * rng.standard_normal((100_000, 6))
    samples = cost(x, u) + GAMMA * (
        np.einsum("ti,ij,tj->t", xn, val.P, xn) + xn @ val.h + val.l
    )
    se = samples.std(ddof=1) / np.sqrt(samples.size)
    assert abs(samples.mean() - q(x, u)) <= 3 * se


def test_policy_value_unbounded(vehicle, vehicle_cost):
    with pytest.raises(ParameterError, match="unbounded"):
        policy_value(vehicle, vehicle_cost, GAMMA, Policy(np.zeros((3, 6)) + 5.0))


@given(seed=seeds, n=st.integers(1, 8))
@settings(max_examples=100, deadline=None)
def test_theta_bar_identity(seed, n):
    rng = np.random.default_rng(seed)
    M = rng.uniform(-1, 1, (n, n))
    M = M + M.T
    x = rng.uniform(-1, 1, n)
    assert abs(x @ M @ x - bar_features(x) @ theta_halfvec(M)) <= 1e-12
    assert np.array_equal(halfvec_to_sym(theta_halfvec(M)), M)


def test_theta_rejects_asymmetric():
    with pytest.raises(ParameterError):
        theta_halfvec([[1.0, 2.0], [0.0, 1.0]])


def test_simulate_is_seeded(vehicle, vehicle_cost):
    pol, _ = dlqg(vehicle, vehicle_cost, GAMMA)
    a = simulate(vehicle, pol, vehicle_cost, X0, 50, seed=3)
    b = simulate(vehicle, pol, vehicle_cost, X0, 50, seed=3)
    assert np.array_equal(a.states, b.states)
    assert a.states.shape == (51, 6) and a.controls.shape == (50, 3) and a.T == 50
    # the optimal closed loop drives the state toward the origin up to noise
    assert np.linalg.norm(a.states[-1]) < 0.5 * np.linalg.norm(X0)


def test_simulate_flags_divergence():
    sys = LinearSystem([[2.0]], [[1.0]])
    traj = simulate(sys, Policy([[0.0]]), CostParams([[1.0]], [[1.0]]), [1.0], 200, blowup=1e3)
    assert traj.diverged and traj.T < 200
