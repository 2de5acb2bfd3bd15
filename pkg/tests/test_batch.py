import numpy as np
import pytest

from lqg_deceive import batch
from lqg_deceive.attack import EPS_STRICT, AttackTarget, falsified_cost
from lqg_deceive.errors import ParameterError
from lqg_deceive.lqg_core import CostParams, LinearSystem, dlqg

from conftest import GAMMA, X0, vehicle_gain, vehicle_matrices

# a realization whose attack converges quickly; the acceptance run uses the pinned config seed
FAST_SEED = 13


@pytest.fixture(scope="module")
def noisy_data():
    A, B = vehicle_matrices()
    sys = LinearSystem(A, B, noise_std=0.01)
    return batch.generate_dataset(sys, CostParams(np.eye(6), 0.5 * np.eye(3)), 400, seed=FAST_SEED, x0=X0)


@pytest.fixture(scope="module")
def poisoned(noisy_data):
    target = AttackTarget(vehicle_gain(-0.5316, -0.97), [0.5316, 0.0, -0.5316])
    return batch.batch_attack(noisy_data, GAMMA, target)


def test_noise_free_identification_is_exact(vehicle, vehicle_cost):
    ds = batch.generate_dataset(vehicle.with_noise(0.0), vehicle_cost, 60, seed=2, x0=X0)
    A_hat, B_hat, rms = batch.fit_dynamics(ds)
    assert np.allclose(A_hat, vehicle.A, atol=1e-10) and np.allclose(B_hat, vehicle.B, atol=1e-10)
    assert rms < 1e-10


def test_rank_deficient_regressors_rejected(vehicle, vehicle_cost):
    ds = batch.generate_dataset(vehicle.with_noise(0.0), vehicle_cost, 20, seed=0,
                                control_law=lambda x, t, rng: np.zeros(3))
    with pytest.raises(ParameterError, match="rank"):
        batch.fit_dynamics(ds)


def test_cost_fit_recovers_true_parameters(noisy_data):
    D, E, d, r, rms = batch.fit_cost(noisy_data)
    assert np.allclose(D, np.eye(6), atol=1e-8)
    assert np.allclose(E, 0.5 * np.eye(3), atol=1e-8)
    assert np.allclose(d, 0, atol=1e-8) and abs(r) < 1e-8
    assert rms < 1e-9


def test_cost_fit_projects_onto_admissible_set(noisy_data):
    # negative control weight in the data: the fit must still return E >= eps I
    c = np.einsum("ti,ti->t", noisy_data.X, noisy_data.X) - 2.0 * np.einsum("ti,ti->t", noisy_data.U, noisy_data.U)
    D, E, d, r, _ = batch.fit_cost(noisy_data.with_costs(c))
    assert np.linalg.eigvalsh(E)[0] >= EPS_STRICT - 1e-9
    assert np.linalg.eigvalsh(D)[0] >= -1e-9


def test_clean_learner(noisy_data):
    pol, est = batch.learn(noisy_data, GAMMA)
    assert np.linalg.norm(pol.k) <= 1e-4
    opt, _ = dlqg(LinearSystem(*vehicle_matrices()), CostParams(np.eye(6), 0.5 * np.eye(3)), GAMMA)
    assert pol.max_abs_diff(opt) < 0.1
    assert est.dynamics_rms < 0.02


def test_permutation_invariance(noisy_data):
    perm = np.random.default_rng(0).permutation(noisy_data.T)
    a = batch.batch_learn(noisy_data, GAMMA)
    b = batch.batch_learn(noisy_data.permuted(perm), GAMMA)
    assert a.max_abs_diff(b) < 1e-8


def test_poisoned_costs_are_consistent(noisy_data, poisoned):
    recomputed = np.array([falsified_cost(poisoned.cost_dag, x, u) for x, u in zip(noisy_data.X, noisy_data.U)])
    assert np.max(np.abs(recomputed - poisoned.c_dag)) <= 1e-12
    assert poisoned.status == "optimal"


def test_poisoned_learner_hits_target(poisoned):
    pol = batch.batch_learn(poisoned.dataset, GAMMA)
    assert np.allclose(pol.k, [0.5316, 0.0, -0.5316], atol=1e-3)
    assert 0 < poisoned.relative_falsification < 0.05
    assert poisoned.falsification_norm == pytest.approx(
        poisoned.relative_falsification * np.linalg.norm(poisoned.base.C))


def test_attack_rejects_unstable_target(noisy_data):
    with pytest.raises(ParameterError, match="stabilizing"):
        batch.batch_attack(noisy_data, GAMMA, AttackTarget(vehicle_gain(0.5, 0.5), np.zeros(3)))


def test_dataset_roundtrip(tmp_path, noisy_data, poisoned):
    path = tmp_path / "data.csv"
    batch.write_dataset(path, noisy_data, poisoned.c_dag)
    back, c_dag = batch.read_dataset(path)
    assert np.array_equal(back.X, noisy_data.X) and np.array_equal(back.Xn, noisy_data.Xn)
    assert np.array_equal(back.C, noisy_data.C) and np.array_equal(c_dag, poisoned.c_dag)
    assert back.meta["seed"] == FAST_SEED
    header = path.read_text().splitlines()[0].split(",")
    assert header[:2] == ["t", "x_1"] and header[-1] == "c_dagger"


def test_dataset_shape_checks():
    with pytest.raises(ParameterError):
        batch.Dataset(np.zeros((3, 2)), np.zeros((4, 1)), np.zeros(3), np.zeros((3, 2)))


def test_generation_is_seeded(vehicle, vehicle_cost):
    a = batch.generate_dataset(vehicle, vehicle_cost, 30, seed=4)
    b = batch.generate_dataset(vehicle, vehicle_cost, 30, seed=4)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.U, b.U)
    assert np.all(np.abs(a.U) <= 1.0)
