"""Small ADMM solver for distance-minimization problems over affine sets and PSD cones.

Problems have the form::

    minimize    sum_j  w_j * || X_{b_j} - anchor_j ||        (Frobenius / Euclidean)
    subject to  linear equalities over all blocks
                X_b  >=  eps_b * I   for designated symmetric blocks

Symmetric blocks are stored as scaled half-vectorizations (off-diagonal entries
times sqrt(2)) so the Euclidean norm of the storage vector is the Frobenius norm
of the matrix.  The splitting keeps ``x`` on the affine set and hands each
objective or cone term its own copy ``z_j = x_{b_j}``::

    x  <- weighted projection of (z - u) onto {Gx = b}
    z  <- prox of each term at (alpha * x + (1 - alpha) * z_old + u)
    u  <- u + alpha * x + (1 - alpha) * z_old - z
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible_detected"
MAX_ITERS = "max_iters"

_KINDS = ("sym", "mat", "vec", "scalar")


def svec_expansion(n: int) -> np.ndarray:
    """Matrix ``S`` with ``vec(X) = S @ svec(X)`` for symmetric ``X`` (row-major vec)."""
    iu = np.triu_indices(n)
    S = np.zeros((n * n, iu[0].size))
    for j, (a, b) in enumerate(zip(*iu)):
        if a == b:
            S[a * n + b, j] = 1.0
        else:
            S[a * n + b, j] = S[b * n + a, j] = 1.0 / np.sqrt(2.0)
    return S


def svec(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    iu = np.triu_indices(n)
    scale = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    return 0.5 * (X + X.T)[iu] * scale


def smat(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    iu = np.triu_indices(n)
    scale = np.where(iu[0] == iu[1], 1.0, 1.0 / np.sqrt(2.0))
    X = np.zeros((n, n))
    X[iu] = v * scale
    X[(iu[1], iu[0])] = v * scale
    return X


def kron_lr(Lm: np.ndarray, Rm: np.ndarray) -> np.ndarray:
    """Coefficients of ``vec(Lm @ X @ Rm)`` in ``vec(X)`` under row-major vec."""
    return np.kron(np.atleast_2d(Lm), np.atleast_2d(Rm).T)


@dataclass
class Block:
    name: str
    kind: str
    shape: tuple[int, ...]
    offset: int = 0

    @property
    def size(self) -> int:
        """Length of the internal storage vector."""
        if self.kind == "sym":
            n = self.shape[0]
            return n * (n + 1) // 2
        return int(np.prod(self.shape)) if self.shape else 1

    @property
    def full_size(self) -> int:
        """Length of the row-major vec of the full value (what equality rows act on)."""
        return int(np.prod(self.shape)) if self.shape else 1

    def to_storage(self, value) -> np.ndarray:
        value = np.asarray(value, dtype=float)
        if self.kind == "sym":
            return svec(value.reshape(self.shape))
        return value.reshape(-1)

    def from_storage(self, v: np.ndarray):
        if self.kind == "sym":
            return smat(v)
        if self.kind == "scalar":
            return float(v[0])
        return v.reshape(self.shape).copy()

    def full_to_storage_map(self) -> np.ndarray:
        if self.kind == "sym":
            return svec_expansion(self.shape[0])
        return np.eye(self.size)


@dataclass
class DistanceTerm:
    block: str
    anchor: np.ndarray
    weight: float = 1.0


@dataclass
class ConeTerm:
    block: str
    shift: float = 0.0


@dataclass
class ConicProblem:
    """Builder for the problem family described in the module docstring."""

    blocks: dict[str, Block] = field(default_factory=dict)
    distances: list[DistanceTerm] = field(default_factory=list)
    cones: list[ConeTerm] = field(default_factory=list)
    eq_rows: list[dict[str, np.ndarray]] = field(default_factory=list)
    eq_rhs: list[np.ndarray] = field(default_factory=list)
    eq_labels: list[str] = field(default_factory=list)

    # -- variables ---------------------------------------------------------
    def _add(self, name: str, kind: str, shape: tuple[int, ...]) -> Block:
        if name in self.blocks:
            raise ParameterError(f"duplicate block {name!r}")
        if kind not in _KINDS:
            raise ParameterError(f"unknown block kind {kind!r}")
        offset = sum(b.size for b in self.blocks.values())
        blk = Block(name, kind, shape, offset)
        self.blocks[name] = blk
        return blk

    def add_sym(self, name: str, n: int) -> Block:
        return self._add(name, "sym", (n, n))

    def add_mat(self, name: str, rows: int, cols: int) -> Block:
        return self._add(name, "mat", (rows, cols))

    def add_vec(self, name: str, n: int) -> Block:
        return self._add(name, "vec", (n,))

    def add_scalar(self, name: str) -> Block:
        return self._add(name, "scalar", ())

    @property
    def size(self) -> int:
        return sum(b.size for b in self.blocks.values())

    def _block(self, name: str) -> Block:
        try:
            return self.blocks[name]
        except KeyError:
            raise ParameterError(f"unknown block {name!r}") from None

    # -- terms -------------------------------------------------------------
    def add_distance(self, name: str, anchor, weight: float = 1.0) -> None:
        blk = self._block(name)
        anchor = np.asarray(anchor, dtype=float)
        if anchor.size != blk.full_size:
            raise ParameterError(f"anchor for {name!r} has {anchor.size} entries, expected {blk.full_size}")
        if weight < 0:
            raise ParameterError("distance weights must be non-negative")
        self.distances.append(DistanceTerm(name, anchor.reshape(blk.shape), float(weight)))

    def add_psd(self, name: str, shift: float = 0.0) -> None:
        """Constrain symmetric block ``name`` to ``X >= shift * I``."""
        blk = self._block(name)
        if blk.kind != "sym":
            raise ParameterError(f"PSD constraint needs a symmetric block, {name!r} is {blk.kind}")
        self.cones.append(ConeTerm(name, float(shift)))

    def add_equality(self, terms: dict[str, np.ndarray], rhs, label: str = "") -> None:
        """Add rows ``sum_b terms[b] @ vec(X_b) = rhs``.

        Each coefficient matrix acts on the row-major vec of the *full* block
        value (``n*n`` entries for a symmetric ``n x n`` block).
        """
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float)).reshape(-1)
        rows = {}
        for name, coef in terms.items():
            blk = self._block(name)
            coef = np.atleast_2d(np.asarray(coef, dtype=float))
            if coef.shape != (rhs.size, blk.full_size):
                raise ParameterError(
                    f"equality {label!r}: coefficient of {name!r} has shape {coef.shape}, "
                    f"expected {(rhs.size, blk.full_size)}"
                )
            rows[name] = coef
        self.eq_rows.append(rows)
        self.eq_rhs.append(rhs)
        self.eq_labels.append(label)

    # -- assembly ----------------------------------------------------------
    def equality_system(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked ``(G, b)`` over the internal storage vector."""
        N = self.size
        Gs, bs = [], []
        for rows, rhs in zip(self.eq_rows, self.eq_rhs):
            G = np.zeros((rhs.size, N))
            for name, coef in rows.items():
                blk = self.blocks[name]
                G[:, blk.offset : blk.offset + blk.size] += coef @ blk.full_to_storage_map()
            Gs.append(G)
            bs.append(rhs)
        if not Gs:
            return np.zeros((0, N)), np.zeros(0)
        return np.vstack(Gs), np.concatenate(bs)

    def pack(self, values: dict[str, np.ndarray]) -> np.ndarray:
        x = np.zeros(self.size)
        for name, val in values.items():
            blk = self._block(name)
            x[blk.offset : blk.offset + blk.size] = blk.to_storage(val)
        return x

    def unpack(self, x: np.ndarray) -> dict:
        return {
            name: blk.from_storage(x[blk.offset : blk.offset + blk.size])
            for name, blk in self.blocks.items()
        }

    def objective(self, values: dict) -> float:
        total = 0.0
        for t in self.distances:
            total += t.weight * float(np.linalg.norm(np.asarray(values[t.block]) - t.anchor))
        return total

    def to_dict(self) -> dict:
        G, b = self.equality_system()
        return {
            "blocks": [
                {"name": b_.name, "kind": b_.kind, "shape": list(b_.shape), "offset": b_.offset}
                for b_ in self.blocks.values()
            ],
            "distances": [
                {"block": t.block, "anchor": np.asarray(t.anchor).tolist(), "weight": t.weight}
                for t in self.distances
            ],
            "cones": [{"block": c.block, "shift": c.shift} for c in self.cones],
            "equality_labels": self.eq_labels,
            "G": G.tolist(),
            "b": b.tolist(),
        }

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


@dataclass
class ConicSolution:
    values: dict
    objective: float
    primal_residual: float
    dual_residual: float
    status: str
    iterations: int
    min_eig: dict = field(default_factory=dict)
    equality_residual: float = 0.0
    polished: bool = False

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def to_dict(self) -> dict:
        def conv(v):
            return v.tolist() if isinstance(v, np.ndarray) else v

        return {
            "status": self.status,
            "objective": self.objective,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "equality_residual": self.equality_residual,
            "iterations": self.iterations,
            "polished": self.polished,
            "min_eig": self.min_eig,
            "values": {k: conv(v) for k, v in self.values.items()},
        }


class _AffineProjector:
    """Weighted projection onto ``{x : Gx = b}`` with diagonal weight ``W``."""

    def __init__(self, G: np.ndarray, b: np.ndarray, w: np.ndarray, rtol: float = 1e-11):
        N = G.shape[1]
        self.consistent = True
        self.inconsistency = 0.0
        if G.shape[0] == 0:
            self.M = np.eye(N)
            self.q = np.zeros(N)
            return
        wis = 1.0 / np.sqrt(w)
        U, s, Vt = np.linalg.svd(G * wis, full_matrices=False)
        r = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
        U, s, Vt = U[:, :r], s[:r], Vt[:r]
        resid = b - U @ (U.T @ b)
        self.inconsistency = float(np.linalg.norm(resid)) / max(1.0, float(np.linalg.norm(b)))
        self.consistent = self.inconsistency <= 1e-9
        A1 = wis[:, None] * Vt.T
        A2 = (U / s).T
        self.M = np.eye(N) - A1 @ (A2 @ G)
        self.q = A1 @ (A2 @ b)
        self.rank = r

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return self.M @ v + self.q


def _initial_point(prob: ConicProblem, G: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Feasible point closest to the anchors on anchored coordinates only."""
    N = prob.size
    target = np.zeros(N)
    anchored = np.zeros(N, dtype=bool)
    for t in prob.distances:
        blk = prob.blocks[t.block]
        sl = slice(blk.offset, blk.offset + blk.size)
        target[sl] = blk.to_storage(t.anchor)
        anchored[sl] = True
    if G.shape[0] == 0:
        return target
    x_p = np.linalg.lstsq(G, b, rcond=None)[0]
    # null-space basis of G
    _, s, Vt = np.linalg.svd(G, full_matrices=True)
    r = int(np.sum(s > 1e-11 * s[0])) if s.size and s[0] > 0 else 0
    Nb = Vt[r:].T
    if Nb.shape[1] == 0 or not anchored.any():
        return x_p
    y = np.linalg.lstsq(Nb[anchored], target[anchored] - x_p[anchored], rcond=None)[0]
    return x_p + Nb @ y


RHO_MIN, RHO_MAX = 1e-6, 1e6


def _proj_psd(v: np.ndarray, shift: float) -> np.ndarray:
    X = smat(v)
    w, V = np.linalg.eigh(X)
    w = np.maximum(w, shift)
    return svec((V * w) @ V.T)


def _separates(G, b, terms, starts, dy, scatter, x, rtol=1e-6) -> bool:
    """Whether the dual drift ``dy`` is a Farkas certificate of an empty feasible set.

    A valid ``mu = dy`` vanishes on objective and free copies, is NSD on each cone
    copy, scatters into ``range(G')`` and gives ``lam'b - sum_c shift_c tr(mu_c) > 0``,
    which no point of the affine set can reconcile with the cones.  A drift that
    merely reflects slow progress fails one of these checks.
    """
    nd = float(np.linalg.norm(dy))
    mu = np.zeros_like(dy)
    support = 0.0
    for j, (sl, kind, payload) in enumerate(terms):
        seg = dy[starts[j] : starts[j + 1]]
        if kind != "psd":
            if np.linalg.norm(seg) > rtol * nd:
                return False
            continue
        w, V = np.linalg.eigh(smat(seg))
        if w[-1] > rtol * nd:
            return False
        w = np.minimum(w, 0.0)
        mu[starts[j] : starts[j + 1]] = svec((V * w) @ V.T)
        support += payload * float(np.sum(w))
    g = scatter(mu)
    if G.shape[0]:
        lam = np.linalg.lstsq(G.T, g, rcond=None)[0]
        resid = float(np.linalg.norm(G.T @ lam - g))
        gap = float(lam @ b) - support
    else:
        resid = float(np.linalg.norm(g))
        gap = -support
    # mu is exact on the cones and copies, so the range residual is the only slack
    return resid <= rtol * nd and gap > 10.0 * resid * max(1.0, float(np.linalg.norm(x))) + 1e-12 * nd


def _null_basis(C: np.ndarray) -> np.ndarray:
    _, s, Vt = np.linalg.svd(C, full_matrices=True)
    r = int(np.sum(s > 1e-11 * s[0])) if s.size and s[0] > 0 else 0
    return Vt[r:].T


def _polish(G, b, terms, starts, z, x, tol, max_irls=100):
    """Exact solve on the face picked out by the ADMM iterate, with a KKT certificate.

    Cone eigenvalues clipped to the shift become equalities ``V'XV = shift I``,
    distance terms sitting on their anchor become ``x = anchor``, and the
    remaining norms are minimized by iteratively reweighted least squares.
    Returns the polished point, or ``None`` when the guessed face does not
    certify (wrong active set, or a multiplier with the wrong sign).
    """
    N = x.size
    C_rows, C_rhs = [G], [b]
    cones, kinks, smooth = [], [], []
    for j, (sl, kind, payload) in enumerate(terms):
        seg = z[starts[j] : starts[j + 1]]
        if kind == "psd":
            w, V = np.linalg.eigh(smat(seg))
            active = w - payload <= 1e-9 * max(1.0, float(np.max(np.abs(w))))
            if not active.any():
                continue
            Va = V[:, active]
            q = Va.shape[1] * (Va.shape[1] + 1) // 2
            Phi = np.column_stack([svec(Va @ smat(e) @ Va.T) for e in np.eye(q)])
            row = np.zeros((q, N))
            row[:, sl] = Phi.T
            C_rows.append(row)
            C_rhs.append(svec(payload * np.eye(Va.shape[1])))
            cones.append((sl, Phi))
        elif kind == "dist":
            anchor, weight = payload
            if weight == 0.0:
                continue
            if np.linalg.norm(seg - anchor) <= 1e-12 * max(1.0, float(np.linalg.norm(anchor))):
                row = np.zeros((anchor.size, N))
                row[:, sl] = np.eye(anchor.size)
                C_rows.append(row)
                C_rhs.append(anchor)
                kinks.append((sl, weight))
            else:
                smooth.append((sl, anchor, weight))
    C, c = np.vstack(C_rows), np.concatenate(C_rhs)
    xc = x - np.linalg.lstsq(C, C @ x - c, rcond=None)[0]
    scale = max(1.0, float(np.linalg.norm(c)), float(np.linalg.norm(xc)))
    if np.linalg.norm(C @ xc - c) > 1e-10 * scale:
        log.debug("polish rejected: face equalities inconsistent")
        return None
    Nb = _null_basis(C)
    if Nb.shape[1] and smooth:
        for _ in range(max_irls):
            A_rows, rhs = [], []
            for sl, anchor, weight in smooth:
                r = xc[sl] - anchor
                wt = np.sqrt(weight / max(float(np.linalg.norm(r)), 1e-14))
                A_rows.append(wt * Nb[sl])
                rhs.append(-wt * r)
            step = Nb @ np.linalg.lstsq(np.vstack(A_rows), np.concatenate(rhs), rcond=None)[0]
            xc = xc + step
            if np.linalg.norm(step) <= 1e-15 * scale:
                break

    # primal: equalities and the cones left out of the face
    if np.linalg.norm(G @ xc - b) > 1e-10 * scale:
        log.debug("polish rejected: equality residual after IRLS")
        return None
    for sl, kind, payload in terms:
        if kind == "psd" and np.linalg.eigvalsh(smat(xc[sl]))[0] < payload - 1e-10 * scale:
            log.debug("polish rejected: cone left out of the face violated")
            return None

    # dual: grad + G'lam - sum Z_c + sum nu_k = 0 with Z_c = Va M Va', M >= 0, |nu_k| <= weight
    g = np.zeros(N)
    for sl, anchor, weight in smooth:
        r = xc[sl] - anchor
        nr = float(np.linalg.norm(r))
        if nr <= 1e-12 * scale:
            log.debug("polish rejected: smooth term collapsed onto its anchor")
            return None
        g[sl] += weight * r / nr
    cols = [G.T]
    for sl, Phi in cones:
        blk = np.zeros((N, Phi.shape[1]))
        blk[sl] = -Phi
        cols.append(blk)
    for sl, _ in kinks:
        blk = np.zeros((N, sl.stop - sl.start))
        blk[sl] = np.eye(sl.stop - sl.start)
        cols.append(blk)
    A = np.hstack(cols)
    mult = np.linalg.lstsq(A, -g, rcond=None)[0]
    if np.linalg.norm(A @ mult + g) > tol * max(1.0, float(np.linalg.norm(g))):
        log.debug("polish rejected: stationarity residual")
        return None
    pos = G.shape[0]
    for _, Phi in cones:
        m = mult[pos : pos + Phi.shape[1]]
        pos += Phi.shape[1]
        if np.linalg.eigvalsh(smat(m))[0] < -tol * max(1.0, float(np.linalg.norm(m))):
            log.debug("polish rejected: cone multiplier not PSD")
            return None
    for sl, weight in kinks:
        n = sl.stop - sl.start
        if np.linalg.norm(mult[pos : pos + n]) > weight * (1.0 + 1e-9) + tol:
            log.debug("polish rejected: kink multiplier exceeds weight")
            return None
        pos += n
    for sl, kind, payload in terms:
        if kind == "psd":
            xc[sl] = _proj_psd(xc[sl], payload)
    return xc


def solve(
    prob: ConicProblem,
    tol_primal: float = 1e-8,
    tol_dual: float = 1e-8,
    max_iters: int = 200_000,
    rho: float = 1.0,
    alpha: float = 1.7,
    adapt_every: int = 50,
    infeas_window: int = 500,
    infeas_rtol: float = 1e-8,
    polish_every: int = 1000,
) -> ConicSolution:
    """Solve ``prob`` by ADMM.

    Residuals are relative: the primal one is ``||x_copies - z||`` over
    ``max(1, ||x_copies||, ||z||)`` and the dual one is ``rho ||L'(z - z_old)||``
    over ``max(1, ||L'y||)``.

    ADMM crawls when the optimum sits on a thin face, e.g. at the apex of a
    shifted cone.  Every ``polish_every`` iterations, and once more before
    giving up, the face suggested by the current iterate is solved exactly and
    accepted if its KKT certificate holds at ``tol_dual``.
    """
    if prob.size == 0:
        raise ParameterError("problem has no variables")
    N = prob.size
    G, b = prob.equality_system()

    # copies: (block slice, kind, payload)
    terms = []
    covered = np.zeros(N)
    for t in prob.distances:
        blk = prob.blocks[t.block]
        terms.append((slice(blk.offset, blk.offset + blk.size), "dist", (blk.to_storage(t.anchor), t.weight)))
        covered[blk.offset : blk.offset + blk.size] += 1
    for c in prob.cones:
        blk = prob.blocks[c.block]
        terms.append((slice(blk.offset, blk.offset + blk.size), "psd", c.shift))
        covered[blk.offset : blk.offset + blk.size] += 1
    for blk in prob.blocks.values():
        sl = slice(blk.offset, blk.offset + blk.size)
        if np.any(covered[sl] == 0):
            terms.append((sl, "free", None))
            covered[sl] += 1
    idx = np.concatenate([np.arange(N)[sl] for sl, _, _ in terms])
    starts = np.cumsum([0] + [sl.stop - sl.start for sl, _, _ in terms])
    w = covered

    proj = _AffineProjector(G, b, w)
    if not proj.consistent:
        log.info("equality system inconsistent (relative residual %.2e)", proj.inconsistency)
        return ConicSolution(
            values={}, objective=float("nan"), primal_residual=proj.inconsistency,
            dual_residual=float("nan"), status=INFEASIBLE, iterations=0,
            equality_residual=proj.inconsistency,
        )

    x = _initial_point(prob, G, b)
    z = x[idx].copy()
    u = np.zeros_like(z)

    def prox(v: np.ndarray, rho_: float) -> np.ndarray:
        out = np.empty_like(v)
        for j, (sl, kind, payload) in enumerate(terms):
            a, e = starts[j], starts[j + 1]
            seg = v[a:e]
            if kind == "dist":
                anchor, weight = payload
                diff = seg - anchor
                nrm = np.linalg.norm(diff)
                thr = weight / rho_
                out[a:e] = anchor if nrm <= thr else anchor + (1.0 - thr / nrm) * diff
            elif kind == "psd":
                out[a:e] = _proj_psd(seg, payload)
            else:
                out[a:e] = seg
        return out

    def scatter(v: np.ndarray) -> np.ndarray:
        return np.bincount(idx, weights=v, minlength=N)

    status = MAX_ITERS
    polished = None
    r_rel = s_rel = float("inf")
    du_hist: list[np.ndarray] = []
    prev_y = np.zeros_like(z)
    it = 0
    for it in range(1, max_iters + 1):
        x = proj(scatter(z - u) / w)
        Lx = x[idx]
        Lx_hat = alpha * Lx + (1.0 - alpha) * z
        z_old = z
        z = prox(Lx_hat + u, rho)
        u = u + Lx_hat - z

        r_norm = np.linalg.norm(Lx - z)
        s_norm = rho * np.linalg.norm(scatter(z - z_old))
        r_rel = r_norm / max(1.0, np.linalg.norm(Lx), np.linalg.norm(z))
        s_rel = s_norm / max(1.0, rho * np.linalg.norm(scatter(u)))
        if r_rel <= tol_primal and s_rel <= tol_dual:
            status = OPTIMAL
            break
        if polish_every and (it % polish_every == 0 or it == max_iters):
            polished = _polish(G, b, terms, starts, z, x, tol_dual)
            if polished is not None:
                log.debug("polished onto the active face at iteration %d", it)
                status = OPTIMAL
                break

        # infeasibility: the unscaled dual y = rho*u drifts by a fixed nonzero vector
        y = rho * u
        dy = y - prev_y
        prev_y = y
        if it % 10 == 0:
            du_hist.append(dy)
            if len(du_hist) > infeas_window // 10:
                old = du_hist.pop(0)
                nd = np.linalg.norm(dy)
                if nd > 1e3 * max(tol_primal, 1e-12) and np.linalg.norm(dy - old) <= infeas_rtol * nd:
                    if _separates(G, b, terms, starts, dy, scatter, x):
                        status = INFEASIBLE
                        break
                    log.debug("steady dual drift at iteration %d is not a certificate", it)
                    du_hist.clear()

        if adapt_every and it % adapt_every == 0:
            # rho is clamped so an infeasible problem eventually runs at fixed rho,
            # which is what lets the dual drift settle into a constant step
            factor = 1.0
            if r_rel > 10.0 * s_rel and rho < RHO_MAX:
                factor = 2.0
            elif s_rel > 10.0 * r_rel and rho > RHO_MIN:
                factor = 0.5
            if factor != 1.0:
                rho *= factor
                u /= factor
                prev_y = rho * u
                du_hist.clear()

    if polished is not None:
        x = polished
    else:
        # PSD blocks are reported from their cone copies so they are exactly in the cone;
        # the equality residual below is measured at the reported point.
        out = x.copy()
        for j, (sl, kind, payload) in enumerate(terms):
            if kind == "psd":
                out[sl] = z[starts[j] : starts[j + 1]]
        x = out
    values = prob.unpack(x)
    min_eig = {}
    for c in prob.cones:
        min_eig[c.block] = float(np.linalg.eigvalsh(values[c.block])[0])
    eq_res = float(np.linalg.norm(G @ x - b)) if G.shape[0] else 0.0
    log.debug("conic solve: %s after %d iterations (r=%.2e, s=%.2e)", status, it, r_rel, s_rel)
    return ConicSolution(
        values=values,
        objective=prob.objective(values),
        primal_residual=float(r_rel),
        dual_residual=float(s_rel),
        status=status,
        iterations=it,
        min_eig=min_eig,
        equality_residual=eq_res,
        polished=polished is not None,
    )
