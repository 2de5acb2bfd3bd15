"""Discrete-time LQG machinery with a general quadratic stage cost.

The plant is ``x' = A x + B u + C w`` with ``w ~ N(0, sigma^2 I)`` and the stage
cost is ``c(x, u) = x'Dx + d'x + r + u'Eu``.  Policies are affine,
``u = K x + k``, and value functions are quadratics ``x'Px + h'x + l``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .errors import ConvergenceError, ParameterError

# Singular values below RANK_RTOL * sigma_max count as zero.
RANK_RTOL = 1e-9
# A symmetric matrix is PSD when its smallest eigenvalue is >= -PSD_TOL.
PSD_TOL = 1e-9
SYM_TOL = 1e-8


def _matrix(a, name: str, ndim: int = 2) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim == 0 and ndim == 2:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 0 and ndim == 1:
        arr = arr.reshape(1)
    if arr.ndim != ndim:
        raise ParameterError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite entries")
    return arr


def numerical_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    s = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(M)))))


def spectral_norm(M: np.ndarray) -> float:
    M = np.atleast_2d(M)
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(symmetrize(M))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _check_symmetric(M: np.ndarray, name: str) -> np.ndarray:
    if M.shape[0] != M.shape[1]:
        raise ParameterError(f"{name} must be square, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 1.0)
    if np.max(np.abs(M - M.T), initial=0.0) > SYM_TOL * scale:
        raise ParameterError(f"{name} is not symmetric")
    return symmetrize(M)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearSystem:
    """Plant ``x_{t+1} = A x_t + B u_t + C w_t`` with ``w_t ~ N(0, noise_std^2 I_q)``.

    ``C`` defaults to the identity.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray | None = None
    noise_std: float = 0.0

    def __post_init__(self) -> None:
        A = _matrix(self.A, "A")
        B = _matrix(self.B, "B")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ParameterError(f"A must be square, got shape {A.shape}")
        if B.ndim == 2 and B.shape[0] != n:
            raise ParameterError(f"B has {B.shape[0]} rows, expected {n}")
        C = np.eye(n) if self.C is None else _matrix(self.C, "C")
        if C.shape[0] != n:
            raise ParameterError(f"C has {C.shape[0]} rows, expected {n}")
        if self.noise_std < 0:
            raise ParameterError("noise_std must be non-negative")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "noise_std", float(self.noise_std))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def q(self) -> int:
        return self.C.shape[1]

    def closed_loop(self, K: np.ndarray) -> np.ndarray:
        return self.A + self.B @ K

    def is_stabilizing(self, K: np.ndarray) -> bool:
        return spectral_radius(self.closed_loop(K)) < 1.0

    def with_noise(self, noise_std: float) -> "LinearSystem":
        return LinearSystem(self.A, self.B, self.C, noise_std)


@dataclass(frozen=True)
class CostParams:
    """Stage cost ``c(x, u) = x'Dx + d'x + r + u'Eu``.

    ``D`` must be PSD and ``E`` PD; both are symmetrized on construction.
    """

    D: np.ndarray
    E: np.ndarray
    d: np.ndarray | None = None
    r: float = 0.0

    def __post_init__(self) -> None:
        D = _check_symmetric(_matrix(self.D, "D"), "D")
        E = _check_symmetric(_matrix(self.E, "E"), "E")
        d = np.zeros(D.shape[0]) if self.d is None else _matrix(self.d, "d", ndim=1)
        if d.shape != (D.shape[0],):
            raise ParameterError(f"d has shape {d.shape}, expected ({D.shape[0]},)")
        scale = max(1.0, spectral_norm(D))
        if np.linalg.eigvalsh(D)[0] < -PSD_TOL * scale:
            raise ParameterError("D must be positive semi-definite")
        if np.linalg.eigvalsh(E)[0] <= 0.0:
            raise ParameterError("E must be positive definite")
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "r", float(self.r))

    @property
    def n(self) -> int:
        return self.D.shape[0]

    @property
    def m(self) -> int:
        return self.E.shape[0]

    def __call__(self, x: np.ndarray, u: np.ndarray) -> float:
        return float(x @ self.D @ x + self.d @ x + self.r + u @ self.E @ u)

    def scaled(self, alpha: float) -> "CostParams":
        """Scale ``D``, ``E`` and ``d`` by ``alpha``; ``r`` is left alone."""
        return CostParams(alpha * self.D, alpha * self.E, alpha * self.d, self.r)


@dataclass(frozen=True)
class Policy:
    """Affine state feedback ``u = K x + k``."""

    K: np.ndarray
    k: np.ndarray | None = None

    def __post_init__(self) -> None:
        K = _matrix(self.K, "K")
        k = np.zeros(K.shape[0]) if self.k is None else _matrix(self.k, "k", ndim=1)
        if k.shape != (K.shape[0],):
            raise ParameterError(f"k has shape {k.shape}, expected ({K.shape[0]},)")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "k", k)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.K @ x + self.k

    def is_stabilizing(self, sys: LinearSystem) -> bool:
        return sys.is_stabilizing(self.K)

    def distance(self, other: "Policy") -> float:
        """``||K - K'||_F + ||k - k'||``, the outer stopping metric of the ADP loop."""
        return float(np.linalg.norm(self.K - other.K) + np.linalg.norm(self.k - other.k))

    def max_abs_diff(self, other: "Policy") -> float:
        return float(max(np.max(np.abs(self.K - other.K)), np.max(np.abs(self.k - other.k))))


@dataclass(frozen=True)
class ValueQuad:
    """Quadratic value function ``V(x) = x'Px + h'x + l``."""

    P: np.ndarray
    h: np.ndarray
    l: float

    def __call__(self, x: np.ndarray) -> float:
        return float(x @ self.P @ x + self.h @ x + self.l)


@dataclass(frozen=True)
class QMatrix:
    """Symmetric matrix ``H`` with ``Q(x, u) = [x; u; 1]' H [x; u; 1]``."""

    H: np.ndarray
    n: int
    m: int

    def __post_init__(self) -> None:
        H = np.asarray(self.H, dtype=float)
        N = self.n + self.m + 1
        if H.shape != (N, N):
            raise ParameterError(f"H has shape {H.shape}, expected ({N}, {N})")
        object.__setattr__(self, "H", symmetrize(H))

    @property
    def xx(self) -> np.ndarray:
        return self.H[: self.n, : self.n]

    @property
    def xu(self) -> np.ndarray:
        return self.H[: self.n, self.n : self.n + self.m]

    @property
    def ux(self) -> np.ndarray:
        return self.xu.T

    @property
    def uu(self) -> np.ndarray:
        return self.H[self.n : self.n + self.m, self.n : self.n + self.m]

    @property
    def x1(self) -> np.ndarray:
        return self.H[: self.n, -1]

    @property
    def u1(self) -> np.ndarray:
        return self.H[self.n : self.n + self.m, -1]

    @property
    def c11(self) -> float:
        return float(self.H[-1, -1])

    def __call__(self, x: np.ndarray, u: np.ndarray) -> float:
        z = np.concatenate([x, u, [1.0]])
        return float(z @ self.H @ z)


def check_discount(gamma: float) -> float:
    gamma = float(gamma)
    if not 0.0 < gamma < 1.0:
        raise ParameterError(f"discount must satisfy 0 < gamma < 1, got {gamma}")
    return gamma


def _check_dims(sys: LinearSystem, cost: CostParams) -> None:
    if cost.n != sys.n or cost.m != sys.m:
        raise ParameterError(
            f"cost is for (n, m) = ({cost.n}, {cost.m}) but system has ({sys.n}, {sys.m})"
        )


# ---------------------------------------------------------------------------
# Assumptions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AssumptionReport:
    controllable: bool
    observable: bool
    b_full_rank: bool
    a_invertible: bool

    @property
    def ok(self) -> bool:
        """Everything the Riccati solver needs (invertibility of A is not required)."""
        return self.controllable and self.observable and self.b_full_rank

    def as_dict(self) -> dict:
        return {
            "controllable": self.controllable,
            "observable": self.observable,
            "b_full_rank": self.b_full_rank,
            "a_invertible": self.a_invertible,
        }


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def check_assumptions(sys: LinearSystem, cost: CostParams) -> AssumptionReport:
    """Rank tests for controllability of (A, B), observability of (A, D^{1/2}),
    full column rank of B and invertibility of A."""
    _check_dims(sys, cost)
    n = sys.n
    ctrb = controllability_matrix(sys.A, sys.B)
    # observability of (A, G) is controllability of (A', G')
    obsv = controllability_matrix(sys.A.T, psd_sqrt(cost.D).T)
    return AssumptionReport(
        controllable=numerical_rank(ctrb) == n,
        observable=numerical_rank(obsv) == n,
        b_full_rank=numerical_rank(sys.B) == sys.m,
        a_invertible=numerical_rank(sys.A) == n,
    )


# ---------------------------------------------------------------------------
# Riccati / DLQG
# ---------------------------------------------------------------------------


def riccati_rhs(P: np.ndarray, sys: LinearSystem, cost: CostParams, gamma: float) -> np.ndarray:
    A, B = sys.A, sys.B
    G = cost.E + gamma * B.T @ P @ B
    BPA = B.T @ P @ A
    out = cost.D + gamma * A.T @ P @ A - gamma**2 * BPA.T @ np.linalg.solve(G, BPA)
    return symmetrize(out)


def riccati_solve(
    sys: LinearSystem,
    cost: CostParams,
    gamma: float,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    P0: np.ndarray | None = None,
) -> np.ndarray:
    """Solve the discounted Riccati equation by value iteration ``P <- RHS(P)``.

    Starts from ``P0`` (default ``D``) and stops once ``||P - RHS(P)||_F <= tol``;
    the returned ``P`` is the iterate whose residual passed the test.
    """
    gamma = check_discount(gamma)
    report = check_assumptions(sys, cost)
    if not report.controllable:
        raise ParameterError("(A, B) is not controllable")
    if not report.observable:
        raise ParameterError("(A, D^1/2) is not observable")
    P = cost.D.copy() if P0 is None else symmetrize(np.asarray(P0, dtype=float))
    res = np.inf
    for _ in range(max_iter):
        nxt = riccati_rhs(P, sys, cost, gamma)
        res = float(np.linalg.norm(nxt - P))
        if res <= tol:
            return P
        P = nxt
    raise ConvergenceError(
        f"Riccati iteration did not converge in {max_iter} steps (residual {res:.3e})", res
    )


def dlqg(
    sys: LinearSystem, cost: CostParams, gamma: float, tol: float = 1e-10
) -> tuple[Policy, ValueQuad]:
    """Optimal affine policy and value function for ``(sys, cost, gamma)``.

    ``K = -g (E + g B'PB)^-1 B'PA``, ``h = (I - g A_c')^-1 d``,
    ``k = -(g/2) (E + g B'PB)^-1 B'h`` and
    ``l = [r + g s^2 tr(C'PC) - (g^2/4) h'B (E + g B'PB)^-1 B'h] / (1 - g)``.
    """
    _check_dims(sys, cost)
    gamma = check_discount(gamma)
    P = riccati_solve(sys, cost, gamma, tol=tol)
    A, B, C = sys.A, sys.B, sys.C
    G = cost.E + gamma * B.T @ P @ B
    K = -gamma * np.linalg.solve(G, B.T @ P @ A)
    Ac = A + B @ K
    # Discounted optimality only guarantees rho(sqrt(g) Ac) < 1, which keeps I - g Ac' invertible.
    assert np.sqrt(gamma) * spectral_radius(Ac) < 1.0, "Riccati solution is not discount-stabilizing"
    h = np.linalg.solve(np.eye(sys.n) - gamma * Ac.T, cost.d)
    Bh = B.T @ h
    k = -0.5 * gamma * np.linalg.solve(G, Bh)
    noise = gamma * sys.noise_std**2 * float(np.trace(C.T @ P @ C))
    l = (cost.r + noise - 0.25 * gamma**2 * float(Bh @ np.linalg.solve(G, Bh))) / (1.0 - gamma)
    return Policy(K, k), ValueQuad(P, h, l)


def policy_value(
    sys: LinearSystem, cost: CostParams, gamma: float, policy: Policy
) -> ValueQuad:
    """Exact value ``V_{K,k}`` of a stabilizing affine policy (policy evaluation)."""
    _check_dims(sys, cost)
    gamma = check_discount(gamma)
    K, k = policy.K, policy.k
    Ac = sys.closed_loop(K)
    if spectral_radius(Ac) * np.sqrt(gamma) >= 1.0:
        raise ParameterError("policy value is unbounded: sqrt(gamma) * rho(A + BK) >= 1")
    E, B = cost.E, sys.B
    # P = D + K'EK + g Ac' P Ac
    P = symmetrize(linalg.solve_discrete_lyapunov(np.sqrt(gamma) * Ac.T, cost.D + K.T @ E @ K))
    rhs = cost.d + 2.0 * K.T @ E @ k + 2.0 * gamma * Ac.T @ P @ B @ k
    h = np.linalg.solve(np.eye(sys.n) - gamma * Ac.T, rhs)
    Bk = B @ k
    const = (
        cost.r
        + k @ E @ k
        + gamma * (Bk @ P @ Bk + h @ Bk + sys.noise_std**2 * np.trace(sys.C.T @ P @ sys.C))
    )
    return ValueQuad(P, h, float(const / (1.0 - gamma)))


def q_matrix(sys: LinearSystem, cost: CostParams, gamma: float, value: ValueQuad) -> QMatrix:
    """Q-function matrix of the policy whose value is ``value``."""
    _check_dims(sys, cost)
    A, B, C = sys.A, sys.B, sys.C
    P, h = value.P, value.h
    n, m = sys.n, sys.m
    H = np.zeros((n + m + 1, n + m + 1))
    H[:n, :n] = cost.D + gamma * A.T @ P @ A
    H[:n, n : n + m] = gamma * A.T @ P @ B
    H[n : n + m, :n] = H[:n, n : n + m].T
    H[n : n + m, n : n + m] = cost.E + gamma * B.T @ P @ B
    H[:n, -1] = H[-1, :n] = 0.5 * (cost.d + gamma * A.T @ h)
    H[n : n + m, -1] = H[-1, n : n + m] = 0.5 * gamma * B.T @ h
    H[-1, -1] = (
        cost.r + gamma * sys.noise_std**2 * float(np.trace(C.T @ P @ C)) + gamma * value.l
    )
    return QMatrix(H, n, m)


def policy_improve(q: QMatrix) -> Policy:
    """Greedy policy ``argmin_u Q(x, u)``: ``K = -H_uu^-1 H_ux``, ``k = -H_uu^-1 H_u1``."""
    try:
        chol = linalg.cho_factor(q.uu)
    except linalg.LinAlgError as exc:
        raise ParameterError("H_uu is not positive definite") from exc
    return Policy(-linalg.cho_solve(chol, q.ux), -linalg.cho_solve(chol, q.u1))


def policy_iteration(
    sys: LinearSystem,
    cost: CostParams,
    gamma: float,
    init: Policy,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> tuple[Policy, int]:
    """Exact policy iteration from a stabilizing ``init``; returns the policy and step count."""
    policy = init
    for it in range(1, max_iter + 1):
        nxt = policy_improve(q_matrix(sys, cost, gamma, policy_value(sys, cost, gamma, policy)))
        if nxt.distance(policy) < tol:
            return nxt, it
        policy = nxt
    raise ConvergenceError(f"policy iteration did not converge in {max_iter} steps")


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    """States ``x_0..x_T``, controls ``u_0..u_{T-1}`` and the costs reported for each step."""

    states: np.ndarray
    controls: np.ndarray
    costs: np.ndarray
    diverged: bool = False
    true_costs: np.ndarray | None = field(default=None, repr=False)

    @property
    def T(self) -> int:
        return len(self.costs)

    def transitions(self):
        for t in range(self.T):
            yield self.states[t], self.controls[t], self.costs[t], self.states[t + 1]


def rollout(
    sys: LinearSystem,
    control: Callable[[np.ndarray, int], np.ndarray],
    cost: Callable[[np.ndarray, np.ndarray], float],
    x0: np.ndarray,
    steps: int,
    rng: np.random.Generator,
    blowup: float = 1e8,
    cost_channel: Callable[[np.ndarray, np.ndarray], float] | None = None,
) -> Trajectory:
    """Generic closed-loop rollout; stops early once ``||x|| > blowup``."""
    x = np.array(x0, dtype=float)
    if x.shape != (sys.n,):
        raise ParameterError(f"x0 has shape {x.shape}, expected ({sys.n},)")
    states = [x]
    controls, costs, true_costs = [], [], []
    diverged = False
    for t in range(steps):
        u = np.asarray(control(x, t), dtype=float)
        c = cost(x, u)
        true_costs.append(c)
        costs.append(c if cost_channel is None else cost_channel(x, u))
        w = sys.noise_std * rng.standard_normal(sys.q) if sys.noise_std > 0 else np.zeros(sys.q)
        x = sys.A @ x + sys.B @ u + sys.C @ w
        controls.append(u)
        states.append(x)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > blowup:
            diverged = True
            break
    m = sys.m
    return Trajectory(
        states=np.array(states),
        controls=np.array(controls).reshape(-1, m),
        costs=np.array(costs),
        diverged=diverged,
        true_costs=np.array(true_costs) if cost_channel is not None else None,
    )


def simulate(
    sys: LinearSystem,
    policy: Policy,
    cost: CostParams,
    x0: np.ndarray,
    T: int,
    seed: int | None = None,
    cost_channel: Callable[[np.ndarray, np.ndarray], float] | None = None,
    blowup: float = 1e8,
) -> Trajectory:
    """Roll out ``policy`` for ``T`` steps.

    Costs come from ``cost``; when ``cost_channel`` is given the reported costs
    are replaced by its output and the true ones are kept in ``true_costs``.
    """
    rng = np.random.default_rng(seed)
    return rollout(sys, lambda x, t: policy(x), cost, x0, T, rng, blowup, cost_channel)


# ---------------------------------------------------------------------------
# Half-vectorization
# ---------------------------------------------------------------------------


def halfvec_dim(n: int) -> int:
    return n * (n + 1) // 2


def halfvec_size(length: int) -> int:
    """Matrix order ``n`` with ``n(n+1)/2 == length``."""
    n = int(round((np.sqrt(8 * length + 1) - 1) / 2))
    if halfvec_dim(n) != length:
        raise ParameterError(f"{length} is not a triangular number")
    return n


def theta_halfvec(M: np.ndarray, tol: float = SYM_TOL) -> np.ndarray:
    """Upper triangle of a symmetric matrix, row-major: ``m11..m1n, m22..m2n, ..., mnn``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ParameterError(f"matrix must be square, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > tol * scale:
        raise ParameterError("matrix is not symmetric")
    return M[np.triu_indices(M.shape[0])]


def halfvec_to_sym(theta: np.ndarray) -> np.ndarray:
    """Inverse of :func:`theta_halfvec`."""
    theta = np.asarray(theta, dtype=float)
    n = halfvec_size(theta.size)
    M = np.zeros((n, n))
    iu = np.triu_indices(n)
    M[iu] = theta
    M[(iu[1], iu[0])] = theta
    return M


def bar_features(x: np.ndarray) -> np.ndarray:
    """Quadratic features with ``x' M x == bar_features(x) @ theta_halfvec(M)``.

    Ordering matches :func:`theta_halfvec`; off-diagonal products carry a factor 2.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    outer = 2.0 * np.outer(x, x)
    outer[np.diag_indices(x.size)] *= 0.5
    return outer[np.triu_indices(x.size)]
