import numpy as np
import pytest
import scipy.linalg
from hypothesis import strategies as st

from lqg_deceive.attack import AttackTarget
from lqg_deceive.lqg_core import CostParams, LinearSystem, numerical_rank, controllability_matrix

GAMMA = 0.9
X0 = np.array([1.0, 1.0, 0.5, -1.0, -0.5, -1.0])


def vehicle_matrices():
    A = np.eye(6)
    A[:3, 3:] = 0.1 * np.eye(3)
    A[3:, 3:] = 0.95 * np.eye(3)
    B = np.zeros((6, 3))
    B[3:] = 0.1 * np.eye(3)
    return A, B


def vehicle_gain(pos, vel):
    K = np.zeros((3, 6))
    K[:, :3] = pos * np.eye(3)
    K[:, 3:] = vel * np.eye(3)
    return K


@pytest.fixture
def vehicle():
    A, B = vehicle_matrices()
    return LinearSystem(A, B, noise_std=0.1)


@pytest.fixture
def vehicle_cost():
    return CostParams(np.eye(6), 0.5 * np.eye(3))


@pytest.fixture
def vehicle_target():
    return AttackTarget(vehicle_gain(-0.5316, -0.97), [0.5316, 0.0, -0.5316])


def random_problem(rng, n, m, rho_lo=0.5, rho_hi=1.2, p_max=1e4):
    """Controllable ``(A, B)`` with spectral radius in ``[rho_lo, rho_hi]`` plus a moderate cost.

    Draws whose Riccati solution exceeds ``p_max`` in norm (nearly uncontrollable
    modes) are redrawn: rounding alone puts the residual near ``eps * ||P||``, so an
    absolute 1e-10 residual is out of reach in double precision. scipy's DARE is
    used only for this screening.
    """
    while True:
        A = rng.standard_normal((n, n))
        A *= rng.uniform(rho_lo, rho_hi) / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-9)
        B = rng.standard_normal((n, m))
        L = rng.standard_normal((n, n))
        D = L @ L.T / n + 0.1 * np.eye(n)
        M = rng.standard_normal((m, m))
        E = M @ M.T / m + 0.5 * np.eye(m)
        if numerical_rank(controllability_matrix(A, B)) < n:
            continue
        g = np.sqrt(GAMMA)
        if np.linalg.norm(scipy.linalg.solve_discrete_are(g * A, g * B, D, E)) <= p_max:
            break
    d = rng.standard_normal(n)
    return LinearSystem(A, B), CostParams(D, E, d, float(rng.uniform(0, 1)))


seeds = st.integers(min_value=0, max_value=2**32 - 1)
dims = st.tuples(st.integers(1, 6), st.integers(1, 3))


# criterion number -> list of (part, passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}
TITLES = {
    1: "DLQG reproduction",
    2: "attack synthesis",
    3: "batch pipeline",
    4: "ADP pipeline",
    5: "perturbation-bound property suite",
    6: "invariant suite",
    7: "feasibility checker",
}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(TITLES):
        parts = ACCEPTANCE.get(n)
        if not parts:
            terminalreporter.write_line(f"[NOT RUN] criterion {n}: {TITLES[n]}")
            continue
        ok = all(p for _, p, _ in parts)
        detail = "; ".join(f"{name}: {d}" for name, _, d in parts)
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {TITLES[n]} ({detail})")
