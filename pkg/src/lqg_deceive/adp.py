"""Online Q-function policy iteration with a recursive-least-squares critic,
and the attacker that feeds it falsified costs."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .attack import AttackSolution, AttackTarget, falsified_cost, synthesize
from .errors import LearningAborted, ParameterError
from .lqg_core import (
    CostParams,
    LinearSystem,
    Policy,
    QMatrix,
    bar_features,
    check_discount,
    controllability_matrix,
    halfvec_dim,
    halfvec_to_sym,
    numerical_rank,
    policy_improve,
)

log = logging.getLogger(__name__)


def theta_dim(n: int, m: int) -> int:
    return halfvec_dim(n + m + 1)


@dataclass(frozen=True)
class RlsState:
    theta_hat: np.ndarray
    S: np.ndarray
    update_count: int = 0

    @classmethod
    def initial(cls, dim: int, beta: float, theta0: np.ndarray | None = None) -> "RlsState":
        theta = np.zeros(dim) if theta0 is None else np.array(theta0, dtype=float)
        return cls(theta, beta * np.eye(dim), 0)


def rls_update(state: RlsState, phi: np.ndarray, c: float) -> RlsState:
    """One RLS step with gain ``S phi / (1 + phi'S phi)``."""
    phi = np.asarray(phi, dtype=float)
    Sp = state.S @ phi
    den = 1.0 + phi @ Sp
    theta = state.theta_hat + Sp * ((c - phi @ state.theta_hat) / den)
    S = state.S - np.outer(Sp, Sp) / den
    S = 0.5 * (S + S.T)
    return RlsState(theta, S, state.update_count + 1)


def ridge_solution(Phi: np.ndarray, c: np.ndarray, beta: float, theta0: np.ndarray | None = None) -> np.ndarray:
    """Batch counterpart of RLS: ``argmin |c - Phi theta|^2 + |theta - theta0|^2 / beta``."""
    Phi = np.atleast_2d(Phi)
    dim = Phi.shape[1]
    theta0 = np.zeros(dim) if theta0 is None else np.asarray(theta0, dtype=float)
    lhs = Phi.T @ Phi + np.eye(dim) / beta
    rhs = Phi.T @ c + theta0 / beta
    return np.linalg.solve(lhs, rhs)


def phi_features(x, u, x_next, policy: Policy, gamma: float) -> np.ndarray:
    """``bar([x; u; 1]) - gamma * bar([x'; K x' + k; 1])``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    xn = np.atleast_1d(np.asarray(x_next, dtype=float))
    now = bar_features(np.concatenate([x, u, [1.0]]))
    nxt = bar_features(np.concatenate([xn, policy(xn), [1.0]]))
    return now - gamma * nxt


@dataclass
class AdpConfig:
    beta: float = 10.0
    eps1: float = 1e-5
    eps2: float = 1e-5
    probe_std: float = 5.0
    max_inner: int = 100_000
    max_outer: int = 100
    min_inner: int | None = None  # None means 3 * dim(theta)
    seed: int | None = 0
    blowup: float = 1e6
    check_rls: bool = False

    def __post_init__(self) -> None:
        for name in ("beta", "eps1", "eps2", "probe_std", "max_inner", "max_outer", "blowup"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"AdpConfig.{name} must be positive")


@dataclass
class AdpTrace:
    policy_sequence: list[Policy] = field(default_factory=list)
    inner_counts: list[int] = field(default_factory=list)
    cost_log: list[tuple[float, float]] = field(default_factory=list)
    steps: list[tuple[int, int, int]] = field(default_factory=list)
    resets: list[int] = field(default_factory=list)
    rls_check: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def outer_iterations(self) -> int:
        return len(self.policy_sequence) - 1

    def distances_to(self, policy: Policy) -> np.ndarray:
        return np.array([p.distance(policy) for p in self.policy_sequence])

    def write_csv(self, path) -> None:
        """Per-step log: ``outer_z, inner_i, t, c, c_dagger``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["outer_z", "inner_i", "t", "c", "c_dagger"])
            for (z, i, t), (c, cd) in zip(self.steps, self.cost_log):
                w.writerow([z, i, t, repr(c), repr(cd)])

    def policies_json(self) -> dict:
        return {
            "converged": self.converged,
            "inner_counts": self.inner_counts,
            "resets": self.resets,
            "policies": [
                {"z": z, "K": p.K.tolist(), "k": p.k.tolist()} for z, p in enumerate(self.policy_sequence)
            ],
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.policies_json(), indent=1))


def _improve(theta: np.ndarray, n: int, m: int) -> Policy:
    return policy_improve(QMatrix(halfvec_to_sym(theta), n, m))


def adp_learn(
    sys: LinearSystem,
    cost_channel: Callable[[np.ndarray, np.ndarray], float],
    gamma: float,
    init: Policy,
    cfg: AdpConfig | None = None,
    x0=None,
    true_cost: Callable[[np.ndarray, np.ndarray], float] | None = None,
    q_oracle: Callable[[Policy], QMatrix] | None = None,
) -> tuple[Policy, AdpTrace]:
    """Run the doubly nested ADP loop from ``init``.

    The inner loop feeds RLS until a single update moves ``theta`` by less than
    ``eps1`` (after ``min_inner`` samples); the outer loop takes the greedy
    policy of the estimated Q-matrix and stops once
    ``|K_z - K_{z-1}|_F + |k_z - k_{z-1}| < eps2``.  ``S`` restarts at
    ``beta I`` for every policy while ``theta`` is carried over.

    ``q_oracle`` replaces the RLS critic with an exact Q-matrix (testing aid).
    ``true_cost`` is only logged next to the received cost.
    """
    cfg = cfg or AdpConfig()
    gamma = check_discount(gamma)
    if not init.is_stabilizing(sys):
        raise ParameterError("initial policy is not stabilizing")
    if numerical_rank(controllability_matrix(sys.A, sys.B)) < sys.n:
        raise ParameterError("(A, B) is not controllable")
    n, m = sys.n, sys.m
    dim = theta_dim(n, m)
    min_inner = 3 * dim if cfg.min_inner is None else cfg.min_inner
    rng = np.random.default_rng(cfg.seed)
    x_start = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    x = x_start.copy()
    policy = init
    trace = AdpTrace(policy_sequence=[init])
    theta = np.zeros(dim)
    t = 0
    for z in range(cfg.max_outer):
        if q_oracle is not None:
            new = policy_improve(q_oracle(policy))
            trace.inner_counts.append(0)
        else:
            state = RlsState.initial(dim, cfg.beta, theta)
            rows, targets = [], []
            i = 0
            while True:
                u = policy(x) + cfg.probe_std * rng.standard_normal(m)
                c_rx = cost_channel(x, u)
                c_true = c_rx if true_cost is None else true_cost(x, u)
                x_next = sys.A @ x + sys.B @ u
                if sys.noise_std > 0:
                    x_next = x_next + sys.C @ (sys.noise_std * rng.standard_normal(sys.q))
                phi = phi_features(x, u, x_next, policy, gamma)
                prev = state.theta_hat
                state = rls_update(state, phi, c_rx)
                if cfg.check_rls:
                    rows.append(phi)
                    targets.append(c_rx)
                trace.cost_log.append((float(c_true), float(c_rx)))
                trace.steps.append((z, i, t))
                i += 1
                t += 1
                x = x_next
                if not np.all(np.isfinite(x)) or np.linalg.norm(x) > cfg.blowup:
                    log.info("state blew up at t=%d; resetting to x0", t)
                    trace.resets.append(t)
                    x = x_start.copy()
                if i >= min_inner and np.linalg.norm(state.theta_hat - prev) < cfg.eps1:
                    break
                if i >= cfg.max_inner:
                    log.warning("inner loop hit max_inner=%d at outer step %d", cfg.max_inner, z)
                    break
            trace.inner_counts.append(i)
            if cfg.check_rls:
                ref = ridge_solution(np.array(rows), np.array(targets), cfg.beta, theta)
                trace.rls_check.append(float(np.max(np.abs(ref - state.theta_hat))))
            theta = state.theta_hat
            try:
                new = _improve(theta, n, m)
            except ParameterError as exc:
                raise LearningAborted(
                    f"estimated H_uu is not positive definite at outer step {z}", trace
                ) from exc
        step = float(np.linalg.norm(new.K - policy.K) + np.linalg.norm(new.k - policy.k))
        policy = new
        trace.policy_sequence.append(policy)
        log.debug("outer %d: %d samples, policy step %.3e", z, trace.inner_counts[-1], step)
        if step < cfg.eps2:
            trace.converged = True
            break
    return policy, trace


def adp_attack_run(
    sys: LinearSystem,
    cost: CostParams,
    gamma: float,
    target: AttackTarget,
    init: Policy,
    cfg: AdpConfig | None = None,
    x0=None,
    attack: AttackSolution | None = None,
) -> tuple[Policy, AdpTrace, AttackSolution]:
    """Solve the falsification problem, then run the learner on the falsified cost channel."""
    if attack is None:
        attack = synthesize(sys, cost, gamma, target)
    cost_dag = attack.cost_dag

    def channel(x, u):
        return falsified_cost(cost_dag, x, u)

    policy, trace = adp_learn(sys, channel, gamma, init, cfg, x0=x0, true_cost=cost)
    return policy, trace, attack
