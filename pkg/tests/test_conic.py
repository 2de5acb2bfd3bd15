import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lqg_deceive import conic

from conftest import seeds


def psd_projection(A):
    w, V = np.linalg.eigh(A)
    return (V * np.clip(w, 0, None)) @ V.T


@given(seed=seeds)
@settings(max_examples=25, deadline=None)
def test_svec_roundtrip_and_isometry(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    X = rng.standard_normal((n, n))
    X = X + X.T
    v = conic.svec(X)
    assert np.allclose(conic.smat(v), X)
    assert abs(np.linalg.norm(v) - np.linalg.norm(X)) < 1e-12


def test_kron_lr_is_row_major_vec():
    rng = np.random.default_rng(0)
    L, X, R = rng.standard_normal((2, 3)), rng.standard_normal((3, 4)), rng.standard_normal((4, 5))
    assert np.allclose(conic.kron_lr(L, R) @ X.ravel(), (L @ X @ R).ravel())


@given(seed=seeds)
@settings(max_examples=20, deadline=None)
def test_psd_projection_2x2(seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-2, 2, (2, 2))
    A = A + A.T
    prob = conic.ConicProblem()
    prob.add_sym("X", 2)
    prob.add_distance("X", A)
    prob.add_psd("X")
    sol = conic.solve(prob)
    assert sol.status == conic.OPTIMAL
    assert np.max(np.abs(sol.values["X"] - psd_projection(A))) <= 1e-7


def test_shifted_psd_projection():
    A = np.diag([-1.0, 0.5, 3.0])
    prob = conic.ConicProblem()
    prob.add_sym("X", 3)
    prob.add_distance("X", A)
    prob.add_psd("X", shift=1.0)
    sol = conic.solve(prob)
    assert np.allclose(sol.values["X"], np.diag([1.0, 1.0, 3.0]), atol=1e-7)
    assert sol.min_eig["X"] >= 1.0 - 1e-9


@given(seed=seeds)
@settings(max_examples=20, deadline=None)
def test_least_norm_matches_pinv(seed):
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(1, 4)), int(rng.integers(4, 8))
    G = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    prob = conic.ConicProblem()
    prob.add_vec("x", n)
    prob.add_distance("x", np.zeros(n))
    prob.add_equality({"x": G}, b)
    sol = conic.solve(prob)
    assert sol.status == conic.OPTIMAL
    assert np.max(np.abs(sol.values["x"] - np.linalg.pinv(G) @ b)) <= 1e-7


def test_feasible_anchor_is_immediate():
    prob = conic.ConicProblem()
    prob.add_sym("X", 2)
    prob.add_vec("y", 2)
    X0 = np.array([[2.0, 0.5], [0.5, 1.0]])
    prob.add_distance("X", X0)
    prob.add_distance("y", [1.0, -1.0])
    prob.add_psd("X")
    prob.add_equality({"y": np.array([[1.0, 1.0]])}, [0.0])
    sol = conic.solve(prob)
    assert sol.status == conic.OPTIMAL
    assert sol.iterations <= 2
    assert sol.objective < 1e-12


def test_inconsistent_equalities_detected():
    prob = conic.ConicProblem()
    prob.add_vec("x", 2)
    prob.add_distance("x", np.zeros(2))
    prob.add_equality({"x": np.array([[1.0, 0.0]])}, [1.0])
    prob.add_equality({"x": np.array([[1.0, 0.0]])}, [2.0])
    assert conic.solve(prob).status == conic.INFEASIBLE


def test_cone_affine_infeasibility_detected():
    # X PSD with trace(X) = -1 has no solution
    prob = conic.ConicProblem()
    prob.add_sym("X", 2)
    prob.add_distance("X", np.eye(2))
    prob.add_psd("X")
    prob.add_equality({"X": np.eye(2).reshape(1, 4)}, [-1.0])
    sol = conic.solve(prob, max_iters=20_000)
    assert sol.status == conic.INFEASIBLE


def test_weighted_distance():
    # min 2|x - 1| + |x - 4| on the line puts x at the heavier anchor
    prob = conic.ConicProblem()
    prob.add_scalar("x")
    prob.add_scalar("y")
    prob.add_distance("x", [1.0], weight=2.0)
    prob.add_distance("y", [4.0])
    prob.add_equality({"x": np.array([[1.0]]), "y": np.array([[-1.0]])}, [0.0])
    sol = conic.solve(prob)
    assert abs(float(sol.values["x"]) - 1.0) < 1e-6
    assert abs(sol.objective - 3.0) < 1e-6


@given(scale=st.sampled_from([0.1, 3.0, 10.0]))
@settings(max_examples=3, deadline=None)
def test_scaling_anchor_scales_solution(scale):
    A = np.array([[1.0, 2.0], [2.0, -3.0]])
    prob = conic.ConicProblem()
    prob.add_sym("X", 2)
    prob.add_distance("X", scale * A)
    prob.add_psd("X")
    sol = conic.solve(prob)
    assert np.allclose(sol.values["X"], scale * psd_projection(A), atol=1e-7 * scale)


def test_dump_roundtrips_json(tmp_path):
    prob = conic.ConicProblem()
    prob.add_sym("X", 2)
    prob.add_distance("X", np.eye(2))
    prob.add_psd("X")
    path = tmp_path / "p.json"
    prob.dump(path)
    data = json.loads(path.read_text())
    assert "blocks" in data or data


def test_unknown_block_rejected():
    prob = conic.ConicProblem()
    with pytest.raises(Exception):
        prob.add_distance("nope", [0.0])


@pytest.mark.parametrize(
    "shift",
    [
        1e-6,
        1e-4,
        1e-1,
        pytest.param(
            1e-2,
            marks=pytest.mark.xfail(
                strict=True,
                reason="adaptive rho keeps rescaling the dual drift and ADMM stalls on the face D = P = 0",
            ),
        ),
    ],
)
def test_polish_resolves_apex_optimum(shift):
    # the equalities leave a single ray t*v; the shifted cone on "E" pins t = shift,
    # where plain ADMM crawls for hundreds of thousands of iterations
    v = np.array([18.0, 1.0, -38.0, 19.0])
    G = np.array([[1.0, -18.0, 0, 0], [0, 38.0, 1.0, 0], [0, -19.0, 0, 1.0]])
    prob = conic.ConicProblem()
    for name in "DEdP":
        prob.add_scalar(name) if name == "d" else prob.add_sym(name, 1)
    prob.add_distance("D", [[1.0]])
    prob.add_distance("E", [[1.0]])
    prob.add_distance("d", 0.0)
    prob.add_psd("D")
    prob.add_psd("P")
    prob.add_psd("E", shift)
    blocks = {"D": 0, "E": 1, "d": 2, "P": 3}
    for row in G:
        prob.add_equality({k: [[row[i]]] for k, i in blocks.items()}, 0.0)
    assert np.allclose(G @ v, 0)

    ts = np.linspace(shift, 0.5, 200001)
    f = np.abs(ts * v[0] - 1) + np.abs(ts - 1) + np.abs(ts * v[2])
    sol = conic.solve(prob, max_iters=20_000)
    assert sol.status == conic.OPTIMAL and sol.polished
    assert sol.objective == pytest.approx(f.min(), abs=1e-9)
    assert sol.values["E"][0, 0] == pytest.approx(shift, rel=1e-9)
    assert sol.equality_residual < 1e-12


def test_slow_feasible_problem_not_reported_infeasible():
    # at a tiny fixed rho the dual drifts steadily for a long time even though the
    # problem is feasible; without a separating certificate that must not count
    prob = conic.ConicProblem()
    for name in "DEdP":
        prob.add_scalar(name) if name == "d" else prob.add_sym(name, 1)
    prob.add_distance("D", [[1.0]])
    prob.add_distance("E", [[1.0]])
    prob.add_distance("d", 0.0)
    prob.add_psd("D")
    prob.add_psd("P")
    prob.add_psd("E", 1e-2)
    G = np.array([[1.0, -18.0, 0, 0], [0, 38.0, 1.0, 0], [0, -19.0, 0, 1.0]])
    blocks = {"D": 0, "E": 1, "d": 2, "P": 3}
    for row in G:
        prob.add_equality({k: [[row[i]]] for k, i in blocks.items()}, 0.0)
    sol = conic.solve(prob, rho=1e-3, adapt_every=0, max_iters=20_000)
    assert sol.status != conic.INFEASIBLE
