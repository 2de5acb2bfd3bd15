"""Perturbation constants for the map from cost parameters to the optimal policy.

All norms are spectral norms.  Given the nominal optimum ``(K*, k*)`` the
constants bound how far the policy can move under a falsification
``(dD, dE, dd)``::

    |dK| <= G3 G1 |dD| + (G3 G2 + G4) |dE|
    |dk| <= (G1 G8 + G1 G3 G6 G9) |dD|
            + (G7 + G2 G8 + (G4 + G2 G3) G6 G9) |dE| + G5 G9 |dd|
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .lqg_core import (
    CostParams,
    LinearSystem,
    check_discount,
    dlqg,
    spectral_norm,
    spectral_radius,
    symmetrize,
)

INAPPLICABLE = "inapplicable"


def tau_info(M: np.ndarray, k_max: int = 1000, settle_window: int = 25) -> tuple[float, bool, int]:
    """``sup_k |M^k| / rho(M)^k`` with its settle flag and the maximizing power."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    rho = spectral_radius(M)
    if rho == 0.0:
        raise ParameterError("tau undefined: spectral radius is zero")
    Mn = M / rho
    power = np.eye(M.shape[0])
    best, arg = 1.0, 0
    prev = 1.0
    run = 0
    for k in range(1, k_max + 1):
        power = power @ Mn
        ratio = spectral_norm(power)
        if ratio > best:
            best, arg = ratio, k
        # non-increasing within rounding counts toward settling
        run = run + 1 if ratio <= prev * (1.0 + 1e-12) else 0
        prev = ratio
        if run >= settle_window:
            return best, True, arg
    return best, False, arg


def tau(M: np.ndarray, k_max: int = 1000, settle_window: int = 25) -> float:
    """Transient-growth constant of ``M``; warns when the ratio never settles."""
    value, settled, _ = tau_info(M, k_max, settle_window)
    if not settled:
        warnings.warn(f"tau did not settle within {k_max} powers", RuntimeWarning, stacklevel=2)
    return value


@dataclass
class PerturbationBounds:
    gamma1: float
    gamma2: float | None
    gamma3: float
    gamma4: float
    gamma5: float
    gamma6: float
    gamma7: float
    gamma8: float
    gamma9: float
    eps_max: float
    rho_Ac: float
    tau_Ac: float
    eps_ceiling: float | None = None
    tau_settled: bool = True
    inapplicable: list[str] = field(default_factory=list)
    # ingredients kept for per-perturbation evaluation
    norm_A: float = 0.0
    norm_B: float = 0.0
    norm_P: float = 0.0
    norm_Einv: float = 0.0

    @property
    def applicable(self) -> bool:
        return not self.inapplicable

    def gamma2_local(self, dE_norm: float) -> float:
        """``G2`` with the resolvent denominator ``1 - |E^-1| |dE|``; needs ``|E^-1||dE| < 1``."""
        den = 1.0 - self.norm_Einv * dE_norm
        if den <= 0:
            return math.inf
        return (
            self.gamma1 * self.norm_A**2 * (self.norm_P + 1.0) ** 2
            * self.norm_Einv**2 * self.norm_B**2 / den
        )

    def coefficients(self, gamma2: float | None = None) -> dict[str, float]:
        """The five composite coefficients, optionally with a substitute ``G2``."""
        g2 = self.gamma2 if gamma2 is None else gamma2
        g1, g3, g4, g5, g6 = self.gamma1, self.gamma3, self.gamma4, self.gamma5, self.gamma6
        g7, g8, g9 = self.gamma7, self.gamma8, self.gamma9
        out = {"K_D": g3 * g1, "k_D": g1 * g8 + g1 * g3 * g6 * g9, "k_d": g5 * g9}
        if g2 is None:
            out["K_E"] = out["k_E"] = None
        else:
            out["K_E"] = g3 * g2 + g4
            out["k_E"] = g7 + g2 * g8 + (g4 + g2 * g3) * g6 * g9
        return out

    def to_dict(self) -> dict:
        def show(v):
            return INAPPLICABLE if v is None else v

        out = {f"gamma{i}": show(getattr(self, f"gamma{i}")) for i in range(1, 10)}
        out.update(
            eps_max=self.eps_max,
            eps_ceiling=show(self.eps_ceiling),
            rho_Ac=self.rho_Ac,
            tau_Ac=self.tau_Ac,
            tau_settled=self.tau_settled,
            inapplicable=list(self.inapplicable),
            coefficients={k: show(v) for k, v in self.coefficients().items()},
        )
        return out


def perturbation_bounds(
    sys: LinearSystem, cost: CostParams, gamma: float, k_max: int = 1000, settle_window: int = 25
) -> PerturbationBounds:
    gamma = check_discount(gamma)
    pol, val = dlqg(sys, cost, gamma)
    A, B = sys.A, sys.B
    K, k, P = pol.K, pol.k, val.P
    Ac = A + B @ K
    rho = spectral_radius(Ac)
    if rho >= 1.0:
        raise ParameterError(f"optimal closed loop is not Schur stable (rho = {rho:.4f})")
    # a monotonically rising ratio never "settles"; the capped sup is kept and flagged
    t, settled = (1.0, True) if rho == 0.0 else tau_info(Ac, k_max, settle_window)[:2]
    nA, nB, nP, nK = spectral_norm(A), spectral_norm(B), spectral_norm(P), spectral_norm(K)
    Einv = np.linalg.inv(cost.E)
    nEi = spectral_norm(Einv)
    lmin = float(np.linalg.eigvalsh(cost.E)[0])
    inv_IAc = spectral_norm(np.linalg.inv(np.eye(sys.n) - gamma * Ac))
    nd, nk = float(np.linalg.norm(cost.d)), float(np.linalg.norm(k))

    g1 = 4.0 * gamma**2 * t**2 / (1.0 - gamma * rho**2)
    inapplicable = []
    if nEi < 1.0:
        g2 = g1 * nA**2 * (nP + 1.0) ** 2 * nEi**2 * nB**2 / (1.0 - nEi)
    else:
        g2 = None
        inapplicable.append("gamma2")
    g3 = 2.0 * gamma / lmin * max(nA, nB) ** 2 * (nK + 1.0)
    g4 = 2.0 * gamma / lmin * nK
    g5 = 2.0 * inv_IAc
    g6 = 2.0 * gamma * inv_IAc * nd * nB
    g7 = 4.0 / lmin * nk
    g8 = 4.0 * gamma / lmin * nk * nB**2
    g9 = 4.0 * gamma / lmin * nB

    if nEi < 1.0:
        S = B @ Einv @ B.T
        denom = gamma**2 * t * spectral_norm(Ac) * spectral_norm(S)
        cap = min((1.0 - gamma * rho**2) / denom, 1.0) if denom > 0 else 1.0
        ceiling = (
            4.0 * gamma**2 * (1.0 - nEi) * t**2 / (1.0 - gamma * rho**2)
            * cap / (nA**2 * (nP + 1.0) ** 2) * nEi**2 * nB**2
        )
        eps_max = min(ceiling, lmin / 2.0)
    else:
        ceiling = None
        inapplicable.append("eps_ceiling")
        eps_max = lmin / 2.0

    return PerturbationBounds(
        gamma1=g1, gamma2=g2, gamma3=g3, gamma4=g4, gamma5=g5, gamma6=g6,
        gamma7=g7, gamma8=g8, gamma9=g9,
        eps_max=eps_max, rho_Ac=rho, tau_Ac=t, eps_ceiling=ceiling, tau_settled=settled,
        inapplicable=inapplicable,
        norm_A=nA, norm_B=nB, norm_P=nP, norm_Einv=nEi,
    )


def _sym_direction(rng: np.random.Generator, n: int) -> np.ndarray:
    X = symmetrize(rng.standard_normal((n, n)))
    return X / spectral_norm(X)


def _sphere(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


@dataclass
class VerifyReport:
    violations: int
    max_ratio: float
    trials: int
    resampled: int
    gamma2_mode: str
    max_ratio_K: float = 0.0
    max_ratio_k: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def verify_bounds(
    sys: LinearSystem,
    cost: CostParams,
    gamma: float,
    n_trials: int = 100,
    eps: float = 1e-3,
    seed: int | None = 0,
    perturb: tuple[bool, bool, bool] = (True, True, True),
    bounds: PerturbationBounds | None = None,
) -> VerifyReport:
    """Empirically check both policy-deviation inequalities at random perturbations.

    ``perturb`` switches the ``(D, E, d)`` perturbations on or off.  Each trial
    draws directions from its own child seed and radii uniform in ``[0, eps]``.
    When the global ``G2`` is inapplicable the per-trial ``G2`` with denominator
    ``1 - |E^-1||dE|`` is used instead.
    """
    gamma = check_discount(gamma)
    pb = perturbation_bounds(sys, cost, gamma) if bounds is None else bounds
    if eps > pb.eps_max:
        raise ParameterError(f"eps={eps} exceeds the admissible radius {pb.eps_max:.3e}")
    base, _ = dlqg(sys, cost, gamma)
    n, m = sys.n, sys.m
    children = np.random.SeedSequence(seed).spawn(n_trials)
    violations, resampled = 0, 0
    max_ratio = max_K = max_k = 0.0
    mode = "global" if pb.gamma2 is not None else "local"
    for child in children:
        rng = np.random.default_rng(child)
        for _attempt in range(100):
            dD = rng.uniform(0, eps) * _sym_direction(rng, n) if perturb[0] else np.zeros((n, n))
            dE = rng.uniform(0, eps) * _sym_direction(rng, m) if perturb[1] else np.zeros((m, m))
            dd = rng.uniform(0, eps) * _sphere(rng, n) if perturb[2] else np.zeros(n)
            E_new = cost.E + dE
            D_new = cost.D + dD
            if np.linalg.eigvalsh(E_new)[0] > 0 and np.linalg.eigvalsh(D_new)[0] >= -1e-12:
                break
            resampled += 1
        else:
            raise ParameterError("could not draw an admissible perturbation")
        pert, _ = dlqg(sys, CostParams(D_new, E_new, cost.d + dd, cost.r), gamma)
        nD, nE, ndd = spectral_norm(dD), spectral_norm(dE), float(np.linalg.norm(dd))
        g2 = pb.gamma2 if pb.gamma2 is not None else pb.gamma2_local(nE)
        c = pb.coefficients(g2)
        bound_K = c["K_D"] * nD + c["K_E"] * nE
        bound_k = c["k_D"] * nD + c["k_E"] * nE + c["k_d"] * ndd
        dK = spectral_norm(pert.K - base.K)
        dk = float(np.linalg.norm(pert.k - base.k))
        # exact zero deviations are allowed against a zero bound
        slack = 1e-12
        if dK > bound_K + slack or dk > bound_k + slack:
            violations += 1
        rK = dK / bound_K if bound_K > 0 else (0.0 if dK <= slack else math.inf)
        rk = dk / bound_k if bound_k > 0 else (0.0 if dk <= slack else math.inf)
        max_K, max_k = max(max_K, rK), max(max_k, rk)
        max_ratio = max(max_ratio, rK, rk)
    return VerifyReport(
        violations=violations,
        max_ratio=max_ratio,
        trials=n_trials,
        resampled=resampled,
        gamma2_mode=mode,
        max_ratio_K=max_K,
        max_ratio_k=max_k,
    )
