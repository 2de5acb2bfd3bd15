"""Batch learner (identification, constrained cost fit, certainty-equivalent
planning) and the dataset-poisoning attacker that rewrites the cost column."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import conic
from .attack import EPS_STRICT, AttackTarget, add_optimality_rows, falsified_cost
from .errors import AttackInfeasible, ParameterError
from .lqg_core import (
    CostParams,
    LinearSystem,
    Policy,
    bar_features,
    check_discount,
    dlqg,
    halfvec_dim,
    halfvec_to_sym,
    numerical_rank,
    rollout,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Transition:
    x: np.ndarray
    u: np.ndarray
    c: float
    x_next: np.ndarray


@dataclass
class Dataset:
    """Ordered transitions stored column-wise: ``X[t], U[t], C[t], Xn[t]``."""

    X: np.ndarray
    U: np.ndarray
    C: np.ndarray
    Xn: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        self.C = np.asarray(self.C, dtype=float).reshape(-1)
        self.Xn = np.atleast_2d(np.asarray(self.Xn, dtype=float))
        T = self.C.size
        if not (self.X.shape[0] == self.U.shape[0] == self.Xn.shape[0] == T):
            raise ParameterError("dataset columns have inconsistent lengths")
        if self.X.shape != self.Xn.shape:
            raise ParameterError("x and x_next have different widths")
        self.meta = dict(self.meta)
        self.meta["T"] = T

    @property
    def T(self) -> int:
        return self.C.size

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.U.shape[1]

    @property
    def transitions(self) -> list[Transition]:
        return [Transition(self.X[t], self.U[t], float(self.C[t]), self.Xn[t]) for t in range(self.T)]

    @classmethod
    def from_transitions(cls, items, meta: dict | None = None) -> "Dataset":
        items = list(items)
        if not items:
            raise ParameterError("empty dataset")
        return cls(
            X=[t.x for t in items],
            U=[t.u for t in items],
            C=[t.c for t in items],
            Xn=[t.x_next for t in items],
            meta=meta or {},
        )

    def with_costs(self, costs) -> "Dataset":
        return replace(self, C=np.asarray(costs, dtype=float).copy(), meta=dict(self.meta))

    def permuted(self, perm) -> "Dataset":
        perm = np.asarray(perm)
        return Dataset(self.X[perm], self.U[perm], self.C[perm], self.Xn[perm], dict(self.meta))


def generate_dataset(
    sys: LinearSystem,
    cost: CostParams,
    T: int,
    seed: int | None = None,
    x0=None,
    control_law: Callable[[np.ndarray, int, np.random.Generator], np.ndarray] | None = None,
    control_box: tuple[float, float] = (-1.0, 1.0),
    gamma: float | None = None,
) -> Dataset:
    """Roll the plant out for ``T`` steps under random excitation and record exact costs.

    The default control law draws i.i.d. uniform controls on ``control_box``.
    Controls and process noise come from one generator seeded with ``seed``.
    """
    if T < 1:
        raise ParameterError("T must be at least 1")
    rng = np.random.default_rng(seed)
    lo, hi = control_box
    if control_law is None:
        law = lambda x, t: rng.uniform(lo, hi, sys.m)  # noqa: E731
        desc = f"uniform[{lo}, {hi}]^{sys.m}"
    else:
        law = lambda x, t: control_law(x, t, rng)  # noqa: E731
        desc = getattr(control_law, "__name__", "custom")
    x0 = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float)
    traj = rollout(sys, law, cost, x0, T, rng)
    meta = {"seed": seed, "control_law": desc, "x0": x0.tolist(), "noise_std": sys.noise_std,
            "diverged": traj.diverged}
    if gamma is not None:
        meta["gamma"] = gamma
    if traj.diverged:
        log.warning("dataset rollout diverged after %d steps", traj.T)
    return Dataset(traj.states[:-1], traj.controls, traj.costs, traj.states[1:], meta)


# ---------------------------------------------------------------------------
# Learner
# ---------------------------------------------------------------------------


@dataclass
class BatchEstimates:
    A_hat: np.ndarray
    B_hat: np.ndarray
    D_hat: np.ndarray
    E_hat: np.ndarray
    d_hat: np.ndarray
    r_hat: float
    dynamics_rms: float
    cost_rms: float

    @property
    def system(self) -> LinearSystem:
        return LinearSystem(self.A_hat, self.B_hat)

    @property
    def cost(self) -> CostParams:
        return CostParams(self.D_hat, self.E_hat, self.d_hat, self.r_hat)


def fit_dynamics(ds: Dataset) -> tuple[np.ndarray, np.ndarray, float]:
    """Least-squares ``[A B]`` from ``x_next ~ A x + B u``; returns ``(A_hat, B_hat, rms)``."""
    Z = np.hstack([ds.X, ds.U])
    rank = numerical_rank(Z)
    if rank < Z.shape[1]:
        raise ParameterError(
            f"Z'Z is singular: regressor [x u] has rank {rank} < {Z.shape[1]}; "
            "the controls do not excite the system"
        )
    theta, *_ = np.linalg.lstsq(Z, ds.Xn, rcond=None)
    n = ds.n
    resid = ds.Xn - Z @ theta
    rms = float(np.sqrt(np.mean(resid**2)))
    return theta[:n].T.copy(), theta[n:].T.copy(), rms


def cost_features(X: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Rows ``[bar(x), x, 1, bar(u)]`` matching ``theta = [Theta(D), d, r, Theta(E)]``."""
    X = np.atleast_2d(X)
    U = np.atleast_2d(U)
    return np.hstack(
        [
            np.array([bar_features(x) for x in X]),
            X,
            np.ones((X.shape[0], 1)),
            np.array([bar_features(u) for u in U]),
        ]
    )


def _split_theta(theta: np.ndarray, n: int, m: int):
    a = halfvec_dim(n)
    D = halfvec_to_sym(theta[:a])
    d = theta[a : a + n]
    r = float(theta[a + n])
    E = halfvec_to_sym(theta[a + n + 1 :])
    assert E.shape == (m, m)
    return D, E, d, r


def _halfvec_selector(n: int) -> np.ndarray:
    """``Theta(M) = T @ vec(M)`` for symmetric ``M``."""
    iu = np.triu_indices(n)
    T = np.zeros((iu[0].size, n * n))
    T[np.arange(iu[0].size), iu[0] * n + iu[1]] = 1.0
    return T


def fit_cost(
    ds: Dataset, eps_strict: float = EPS_STRICT, tol: float = 1e-10, max_iters: int = 200_000
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float, float]:
    """Constrained least-squares cost fit with ``D >= 0`` and ``E >= eps_strict I``.

    Returns ``(D_hat, E_hat, d_hat, r_hat, rms)``.  When the unconstrained fit is
    already feasible it is returned as is; otherwise the squared residual is
    rewritten through a QR factorization ``H = QR`` as the distance
    ``|y - R theta_ls|`` with ``y = R theta`` and handed to the conic solver.
    """
    n, m = ds.n, ds.m
    H = cost_features(ds.X, ds.U)
    rank = numerical_rank(H)
    if rank < H.shape[1]:
        raise ParameterError(f"cost feature matrix H has rank {rank} < {H.shape[1]} (not column independent)")
    theta_ls, *_ = np.linalg.lstsq(H, ds.C, rcond=None)
    D, E, d, r = _split_theta(theta_ls, n, m)
    if np.linalg.eigvalsh(D)[0] >= 0 and np.linalg.eigvalsh(E)[0] >= eps_strict:
        rms = float(np.sqrt(np.mean((H @ theta_ls - ds.C) ** 2)))
        return D, E, d, r, rms

    _, R = np.linalg.qr(H)
    p = R.shape[1]
    a = halfvec_dim(n)
    Rd = R[:, :a] @ _halfvec_selector(n)
    Rv = R[:, a : a + n]
    Rr = R[:, a + n]
    Re = R[:, a + n + 1 :] @ _halfvec_selector(m)
    prob = conic.ConicProblem()
    prob.add_sym("D", n)
    prob.add_vec("d", n)
    prob.add_scalar("r")
    prob.add_sym("E", m)
    prob.add_vec("y", p)
    prob.add_equality(
        {"y": np.eye(p), "D": -Rd, "d": -Rv, "r": -Rr[:, None], "E": -Re}, np.zeros(p), "qr_fit"
    )
    prob.add_distance("y", R @ theta_ls)
    prob.add_psd("D")
    prob.add_psd("E", shift=eps_strict)
    sol = conic.solve(prob, tol_primal=tol, tol_dual=tol, max_iters=max_iters)
    if sol.status != conic.OPTIMAL:
        log.warning("cost fit ended with status %s", sol.status)
    v = sol.values
    D, E, d, r = v["D"], v["E"], v["d"], float(v["r"])
    pred = H[:, :a] @ _halfvec_selector(n) @ D.ravel() + ds.X @ d + r + H[:, a + n + 1 :] @ _halfvec_selector(m) @ E.ravel()
    rms = float(np.sqrt(np.mean((pred - ds.C) ** 2)))
    return D, E, d, r, rms


def estimate(ds: Dataset, eps_strict: float = EPS_STRICT) -> BatchEstimates:
    A_hat, B_hat, dyn_rms = fit_dynamics(ds)
    D, E, d, r, cost_rms = fit_cost(ds, eps_strict)
    return BatchEstimates(A_hat, B_hat, D, E, d, r, dyn_rms, cost_rms)


def batch_learn(ds: Dataset, gamma: float, eps_strict: float = EPS_STRICT) -> Policy:
    """Certainty-equivalent policy from the estimated model and cost."""
    return learn(ds, gamma, eps_strict)[0]


def learn(ds: Dataset, gamma: float, eps_strict: float = EPS_STRICT) -> tuple[Policy, BatchEstimates]:
    gamma = check_discount(gamma)
    est = estimate(ds, eps_strict)
    policy, _ = dlqg(est.system, est.cost, gamma)
    return policy, est


# ---------------------------------------------------------------------------
# Attacker
# ---------------------------------------------------------------------------


@dataclass
class PoisonedDataset:
    base: Dataset
    c_dag: np.ndarray
    cost_dag: CostParams
    relative_falsification: float
    status: str = conic.OPTIMAL
    solver: dict = field(default_factory=dict)
    A_hat: np.ndarray | None = None
    B_hat: np.ndarray | None = None

    @property
    def dataset(self) -> Dataset:
        """The dataset the learner actually sees."""
        ds = self.base.with_costs(self.c_dag)
        ds.meta["poisoned"] = True
        return ds

    @property
    def falsification_norm(self) -> float:
        return float(np.linalg.norm(self.c_dag - self.base.C))


def batch_attack(
    ds: Dataset,
    gamma: float,
    target: AttackTarget,
    eps_strict: float = EPS_STRICT,
    tol: float = 1e-9,
    max_iters: int = 200_000,
    dump_problem: str | None = None,
) -> PoisonedDataset:
    """Rewrite the cost column so the batch learner ends up at ``target``.

    The attacker only sees ``ds``: it identifies ``(A_hat, B_hat)`` itself, then
    minimizes ``|c_dag - c|`` over ``(D, E, d, r)`` subject to ``target`` being
    optimal for the estimated model, with ``c_dag`` tied to the parameters by
    ``c_dag_t = x'Dx + d'x + r + u'Eu``.
    """
    gamma = check_discount(gamma)
    A_hat, B_hat, _ = fit_dynamics(ds)
    target.validate(A_hat, B_hat)
    n, m, T = ds.n, ds.m, ds.T
    prob = conic.ConicProblem()
    add_optimality_rows(prob, A_hat, B_hat, target, gamma, eps_strict)
    prob.add_scalar("r")
    prob.add_vec("y", T)
    XX = np.einsum("ti,tj->tij", ds.X, ds.X).reshape(T, n * n)
    UU = np.einsum("ti,tj->tij", ds.U, ds.U).reshape(T, m * m)
    prob.add_equality(
        {"y": np.eye(T), "D": -XX, "d": -ds.X, "r": -np.ones((T, 1)), "E": -UU},
        np.zeros(T),
        "cost_consistency",
    )
    prob.add_distance("y", ds.C)
    if dump_problem:
        prob.dump(dump_problem)
    sol = conic.solve(prob, tol_primal=tol, tol_dual=tol, max_iters=max_iters)
    info = {
        "status": sol.status,
        "iterations": sol.iterations,
        "primal_residual": sol.primal_residual,
        "dual_residual": sol.dual_residual,
        "objective": sol.objective,
        "min_eig": sol.min_eig,
    }
    if sol.status == conic.INFEASIBLE:
        raise AttackInfeasible("target cannot be made optimal under the estimated dynamics")
    v = sol.values
    cost_dag = CostParams(v["D"], v["E"], v["d"], float(v["r"]))
    # c_dag is recomputed from the parameters so the falsification is exactly consistent
    c_dag = np.array([falsified_cost(cost_dag, x, u) for x, u in zip(ds.X, ds.U)])
    rel = float(np.linalg.norm(c_dag - ds.C) / np.linalg.norm(ds.C))
    return PoisonedDataset(ds, c_dag, cost_dag, rel, sol.status, info, A_hat, B_hat)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def _header(n: int, m: int, poisoned: bool) -> list[str]:
    cols = ["t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{i + 1}" for i in range(m)] + ["c"]
    cols += [f"x_next_{i + 1}" for i in range(n)]
    if poisoned:
        cols.append("c_dagger")
    return cols


def _fmt(v) -> str:
    return repr(float(v))


def write_dataset(path, ds: Dataset, c_dag: np.ndarray | None = None) -> None:
    """CSV with header ``t, x_.., u_.., c, x_next_..[, c_dagger]`` plus a ``.json`` sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_header(ds.n, ds.m, c_dag is not None))
        for t in range(ds.T):
            row = [t, *map(_fmt, ds.X[t]), *map(_fmt, ds.U[t]), repr(float(ds.C[t])), *map(_fmt, ds.Xn[t])]
            if c_dag is not None:
                row.append(repr(float(c_dag[t])))
            w.writerow(row)
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump({**ds.meta, "n": ds.n, "m": ds.m}, fh, indent=1, sort_keys=True)


def read_dataset(path) -> tuple[Dataset, np.ndarray | None]:
    """Inverse of :func:`write_dataset`; returns the dataset and ``c_dagger`` if present."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    n = sum(1 for h in header if h.startswith("x_") and not h.startswith("x_next"))
    m = sum(1 for h in header if h.startswith("u_"))
    X = body[:, 1 : 1 + n]
    U = body[:, 1 + n : 1 + n + m]
    C = body[:, 1 + n + m]
    Xn = body[:, 2 + n + m : 2 + 2 * n + m]
    c_dag = body[:, -1] if header[-1] == "c_dagger" else None
    meta = {}
    side = path.with_suffix(".json")
    if side.exists():
        meta = json.loads(side.read_text())
    return Dataset(X, U, C, Xn, meta), c_dag
