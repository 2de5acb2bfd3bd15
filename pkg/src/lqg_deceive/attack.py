"""Cost-parameter falsification: the attacker's convex program, its certificate,
and a frequency-domain pre-check of target achievability."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .errors import AttackInfeasible, ParameterError
from .lqg_core import (
    CostParams,
    LinearSystem,
    Policy,
    check_discount,
    dlqg,
    spectral_radius,
)

log = logging.getLogger(__name__)

EPS_STRICT = 1e-6
ROUND_TRIP_TOL = 1e-4
REFINEMENTS = 2


@dataclass(frozen=True)
class AttackTarget:
    """The policy ``u = K_dag x + k_dag`` the attacker wants the learner to adopt."""

    K_dag: np.ndarray
    k_dag: np.ndarray

    def __post_init__(self) -> None:
        pol = Policy(self.K_dag, self.k_dag)
        object.__setattr__(self, "K_dag", pol.K)
        object.__setattr__(self, "k_dag", pol.k)

    @property
    def policy(self) -> Policy:
        return Policy(self.K_dag, self.k_dag)

    @classmethod
    def from_policy(cls, policy: Policy) -> "AttackTarget":
        return cls(policy.K, policy.k)

    def validate(self, A: np.ndarray, B: np.ndarray) -> None:
        if self.K_dag.shape != (B.shape[1], A.shape[0]):
            raise ParameterError(
                f"target gain has shape {self.K_dag.shape}, expected {(B.shape[1], A.shape[0])}"
            )
        rho = spectral_radius(A + B @ self.K_dag)
        if rho >= 1.0:
            raise ParameterError(f"target policy is not stabilizing: rho(A + B K_dag) = {rho:.4f}")


@dataclass
class AttackSolution:
    cost_dag: CostParams | None
    objective: float
    certified: bool
    P: np.ndarray | None
    h: np.ndarray | None
    status: str
    policy_dag: Policy | None = None
    target: AttackTarget | None = None
    solver: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "status": self.status,
            "objective": self.objective,
            "certified": self.certified,
            "solver": self.solver,
        }
        if self.cost_dag is not None:
            out["D_dag"] = self.cost_dag.D.tolist()
            out["E_dag"] = self.cost_dag.E.tolist()
            out["d_dag"] = self.cost_dag.d.tolist()
            out["r"] = self.cost_dag.r
        if self.P is not None:
            out["P"] = self.P.tolist()
            out["h"] = self.h.tolist()
        if self.policy_dag is not None:
            out["K_roundtrip"] = self.policy_dag.K.tolist()
            out["k_roundtrip"] = self.policy_dag.k.tolist()
        if self.target is not None:
            out["K_target"] = self.target.K_dag.tolist()
            out["k_target"] = self.target.k_dag.tolist()
        return out


def add_optimality_rows(
    prob: conic.ConicProblem,
    A: np.ndarray,
    B: np.ndarray,
    target: AttackTarget,
    gamma: float,
    eps_strict: float = EPS_STRICT,
) -> None:
    """Declare blocks D, E, d, P, h and the constraints making ``target`` optimal.

    With the target fixed the optimality conditions are linear in ``(D, E, d, P, h)``:

        P = D + g A'PA - K'(E + g B'PB)K
        (E + g B'PB) K = -g B'PA
        h = d + g (A + BK)'h
        2 (E + g B'PB) k = -g B'h
    """
    n, m = B.shape
    K, k = target.K_dag, target.k_dag
    In, Im = np.eye(n), np.eye(m)
    kron = conic.kron_lr
    prob.add_sym("D", n)
    prob.add_sym("E", m)
    prob.add_vec("d", n)
    prob.add_sym("P", n)
    prob.add_vec("h", n)
    prob.add_equality(
        {
            "P": np.eye(n * n) - gamma * kron(A.T, A) + gamma * kron(K.T @ B.T, B @ K),
            "D": -np.eye(n * n),
            "E": kron(K.T, K),
        },
        np.zeros(n * n),
        "riccati",
    )
    prob.add_equality(
        {"E": kron(Im, K), "P": gamma * kron(B.T, B @ K + A)},
        np.zeros(m * n),
        "gain",
    )
    Ac = A + B @ K
    prob.add_equality({"h": In - gamma * Ac.T, "d": -In}, np.zeros(n), "linear_term")
    prob.add_equality(
        {"E": 2.0 * kron(Im, k[:, None]), "P": 2.0 * gamma * kron(B.T, (B @ k)[:, None]), "h": gamma * B.T},
        np.zeros(m),
        "offset",
    )
    prob.add_psd("P")
    prob.add_psd("D")
    prob.add_psd("E", shift=eps_strict)


def build_problem(
    sys: LinearSystem, cost: CostParams, gamma: float, target: AttackTarget, eps_strict: float = EPS_STRICT
) -> conic.ConicProblem:
    prob = conic.ConicProblem()
    add_optimality_rows(prob, sys.A, sys.B, target, gamma, eps_strict)
    prob.add_distance("D", cost.D)
    prob.add_distance("d", cost.d)
    prob.add_distance("E", cost.E)
    return prob


def certify(
    sys: LinearSystem, cost_dag: CostParams, gamma: float, target: AttackTarget, tol: float = ROUND_TRIP_TOL
) -> tuple[bool, Policy | None]:
    """Re-solve the control problem under ``cost_dag`` and compare with the target.

    The policy does not change when the whole cost is scaled, so the cost is
    normalized first.  Optima on the ``E >= eps_strict`` floor have entries near
    1e-6, where the absolute Riccati tolerance would otherwise cost several digits.
    """
    scale = max(
        np.linalg.norm(cost_dag.D), np.linalg.norm(cost_dag.E), np.linalg.norm(cost_dag.d), abs(cost_dag.r)
    )
    if scale > 0:
        cost_dag = CostParams(cost_dag.D / scale, cost_dag.E / scale, cost_dag.d / scale, cost_dag.r / scale)
    try:
        pol, _ = dlqg(sys, cost_dag, gamma)
    except Exception as exc:  # noqa: BLE001 - any failure means "not certified"
        log.info("round-trip solve failed: %s", exc)
        return False, None
    ok = (
        np.linalg.norm(pol.K - target.K_dag) <= tol
        and np.linalg.norm(pol.k - target.k_dag) <= tol
    )
    return bool(ok), pol


def synthesize(
    sys: LinearSystem,
    cost: CostParams,
    gamma: float,
    target: AttackTarget,
    eps_strict: float = EPS_STRICT,
    tol: float = 1e-8,
    max_iters: int = 200_000,
    round_trip_tol: float = ROUND_TRIP_TOL,
    dump_problem: str | None = None,
) -> AttackSolution:
    """Smallest falsification ``(D, E, d)`` making ``target`` optimal; ``r`` is left as is.

    If the solver converges but the round trip misses the target, the solve is
    repeated with the tolerance tightened by 100x, at most ``REFINEMENTS`` times.
    Raises :class:`AttackInfeasible` when the solver proves the constraint set empty.
    """
    gamma = check_discount(gamma)
    target.validate(sys.A, sys.B)
    prob = build_problem(sys, cost, gamma, target, eps_strict)
    if dump_problem:
        prob.dump(dump_problem)
    # When the optimum sits near the E >= eps_strict floor the parameters are tiny
    # and a residual of `tol` is a large relative error, so tighten and retry.
    for refinement in range(REFINEMENTS + 1):
        level = tol * 1e-2**refinement
        sol = conic.solve(prob, tol_primal=level, tol_dual=level, max_iters=max_iters)
        if sol.status == conic.INFEASIBLE:
            raise AttackInfeasible("no cost parameters make the target policy optimal")
        v = sol.values
        cost_dag = CostParams(v["D"], v["E"], v["d"], cost.r)
        certified, pol = certify(sys, cost_dag, gamma, target, round_trip_tol)
        if certified or sol.status != conic.OPTIMAL:
            break
        log.info("round trip missed the target at tol=%.0e; refining", level)
    else:
        log.warning("solver reported optimal but the round trip misses the target")
    info = {
        "status": sol.status,
        "iterations": sol.iterations,
        "tolerance": level,
        "primal_residual": sol.primal_residual,
        "dual_residual": sol.dual_residual,
        "equality_residual": sol.equality_residual,
        "min_eig": sol.min_eig,
    }
    return AttackSolution(
        cost_dag=cost_dag,
        objective=sol.objective,
        certified=certified,
        P=v["P"],
        h=v["h"],
        status=sol.status,
        policy_dag=pol,
        target=target,
        solver=info,
    )


def falsified_cost(cost_dag: CostParams, x, u) -> float:
    """``x'D x + d'x + r + u'E u`` under the falsified parameters."""
    return cost_dag(np.asarray(x, dtype=float), np.asarray(u, dtype=float))


def deviation_envelope(cost: CostParams, cost_dag: CostParams) -> tuple[float, float, float]:
    """Coefficients ``(a, b, c)`` with ``|c_dag - c| <= a|x|^2 + b|u|^2 + c|x|``.

    ``a`` and ``b`` are Frobenius norms (the usual reporting convention); the
    spectral norm would give a tighter but equally valid envelope.
    """
    return (
        float(np.linalg.norm(cost_dag.D - cost.D)),
        float(np.linalg.norm(cost_dag.E - cost.E)),
        float(np.linalg.norm(cost_dag.d - cost.d)),
    )


# ---------------------------------------------------------------------------
# Frequency-domain check
# ---------------------------------------------------------------------------


FEASIBLE = "feasible_evidence"
INFEASIBLE = "infeasible_evidence"
INCONCLUSIVE = "inconclusive"


@dataclass
class FeasibilityReport:
    cond1_W0_min_eig: float
    cond2_min_eig_over_grid: float
    grid_size: int
    cond3_status: str
    verdict: str
    skipped_points: int = 0
    W0_asymmetry: float = 0.0
    omega: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    min_eig_series: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def to_dict(self, series: bool = True) -> dict:
        out = {
            "cond1_W0_min_eig": self.cond1_W0_min_eig,
            "cond2_min_eig_over_grid": self.cond2_min_eig_over_grid,
            "grid_size": self.grid_size,
            "cond3_status": self.cond3_status,
            "verdict": self.verdict,
            "skipped_points": self.skipped_points,
            "W0_asymmetry": self.W0_asymmetry,
        }
        if series:
            out["omega"] = self.omega.tolist()
            out["min_eig"] = self.min_eig_series.tolist()
        return out


def return_difference(
    sys: LinearSystem, E_trial: np.ndarray, gamma: float, K: np.ndarray
):
    """Normalized return difference ``W(z) = I - E^1/2 K (zI - sA)^-1 sB E^-1/2`` with ``s = sqrt(g)``.

    Returns a callable of ``z``.  For a gain that is optimal under control weight
    ``E`` this satisfies ``W(z)^H W(0)^-T W(z) >= I`` on the unit circle.
    """
    s = np.sqrt(gamma)
    A, B = s * sys.A, s * sys.B
    w, V = np.linalg.eigh(E_trial)
    Eh = (V * np.sqrt(w)) @ V.T
    Ehi = (V / np.sqrt(w)) @ V.T
    left = Eh @ K
    right = B @ Ehi
    n, m = sys.n, sys.m

    def W(z: complex) -> tuple[np.ndarray, float]:
        R = z * np.eye(n) - A
        cnd = np.linalg.cond(R)
        if not np.isfinite(cnd) or cnd > 1e10:
            return None, cnd
        return np.eye(m) - left @ np.linalg.solve(R, right), cnd

    return W


def feasibility_check(
    sys: LinearSystem,
    E_trial,
    gamma: float,
    target: AttackTarget,
    grid_size: int = 1024,
    tol: float = 1e-7,
) -> FeasibilityReport:
    """Evaluate the two checkable frequency-domain conditions for ``target``.

    Condition 1 is the smallest eigenvalue of the symmetric part of ``W(0)``.
    Condition 2 is the smallest eigenvalue of ``W^H M W - I`` over ``grid_size``
    points of the unit circle, where ``M`` is the symmetrized ``W(0)^-T``.
    The third condition needs polynomial-matrix reduction and is not evaluated;
    the convex program's own status decides those cases.
    """
    gamma = check_discount(gamma)
    E_trial = np.atleast_2d(np.asarray(E_trial, dtype=float))
    if E_trial.shape != (sys.m, sys.m):
        raise ParameterError(f"E_trial has shape {E_trial.shape}, expected {(sys.m, sys.m)}")
    if np.max(np.abs(E_trial - E_trial.T)) > 1e-10 or np.linalg.eigvalsh(E_trial)[0] <= 0:
        raise ParameterError("E_trial must be symmetric positive definite")
    if np.linalg.matrix_rank(sys.A) < sys.n:
        raise ParameterError("A must be invertible for the frequency-domain check")
    target.validate(sys.A, sys.B)

    W = return_difference(sys, E_trial, gamma, target.K_dag)
    W0, _ = W(0.0)
    cond1 = float(np.linalg.eigvalsh(0.5 * (W0 + W0.T))[0])
    if cond1 <= 0:
        M = 0.5 * (W0 + W0.T)
        asym = float(np.linalg.norm(W0 - W0.T))
    else:
        Mi = np.linalg.inv(W0).T
        asym = float(np.linalg.norm(Mi - Mi.T))
        M = 0.5 * (Mi + Mi.T)

    omega = 2.0 * np.pi * np.arange(grid_size) / grid_size
    series = np.full(grid_size, np.nan)
    skipped = 0
    Im = np.eye(sys.m)
    for i, om in enumerate(omega):
        Wz, _ = W(np.exp(1j * om))
        if Wz is None:
            skipped += 1
            continue
        X = Wz.conj().T @ M @ Wz - Im
        series[i] = np.linalg.eigvalsh(0.5 * (X + X.conj().T))[0]
    cond2 = float(np.nanmin(series)) if np.any(np.isfinite(series)) else float("nan")

    if cond1 <= 0 or (np.isfinite(cond2) and cond2 < -10 * tol):
        verdict = INFEASIBLE
    elif np.isfinite(cond2) and cond2 >= -tol:
        verdict = FEASIBLE
    else:
        verdict = INCONCLUSIVE
    return FeasibilityReport(
        cond1_W0_min_eig=cond1,
        cond2_min_eig_over_grid=cond2,
        grid_size=grid_size,
        cond3_status="not_checked_symbolically",
        verdict=verdict,
        skipped_points=skipped,
        W0_asymmetry=asym,
        omega=omega,
        min_eig_series=series,
    )
