"""Explicit sparse QP construction of the tracking MPC problem, and solvers
from other algorithm families used as correctness oracles.

Variables follow the interleaved ordering ``[y_1, u_0, du_0, y_2, u_1, du_1, ...]``.
The QP is::

    minimise   1/2 z'Hz + h'z + const
    subject to E z = b,  lo <= z <= hi

with the ARX rows stacked first (T * n_y of them) and the increment rows
after (T * n_u).
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import MaxIterationsExceeded, RankDeficient, TooLarge
from .problem import MpcProblem, PrimalPoint

log = logging.getLogger(__name__)

BRUTE_FORCE_MAX_VARS = 12


@dataclass
class SparseQp:
    H: sp.csc_matrix
    h: np.ndarray
    E: sp.csc_matrix
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    const: float = 0.0

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[0]

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ (self.H @ z) + self.h @ z + self.const)

    def to_json(self) -> str:
        """Sparse-triplet dump for external inspection."""
        H, E = self.H.tocoo(), self.E.tocoo()
        return json.dumps({
            "n": self.n,
            "m": self.m,
            "H": {"row": H.row.tolist(), "col": H.col.tolist(), "val": H.data.tolist()},
            "h": self.h.tolist(),
            "E": {"row": E.row.tolist(), "col": E.col.tolist(), "val": E.data.tolist()},
            "b": self.b.tolist(),
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "const": self.const,
        })


def build_sparse_qp(p: MpcProblem) -> SparseQp:
    m = p.model
    n_y, n_u, T = p.n_y, p.n_u, p.T
    bs = n_y + 2 * n_u
    n = T * bs

    def iy(t):  # column of y_t, t = 1..T
        return (t - 1) * bs

    def iu(k):  # column of u_k, k = 0..T-1
        return k * bs + n_y

    def idu(k):
        return k * bs + n_y + n_u

    hdiag = np.tile(np.concatenate([p.Wy, np.zeros(n_u), p.Wdu]), T)
    H = sp.diags(hdiag, format="csc")
    h = np.zeros(n)
    for t in range(1, T + 1):
        h[iy(t) : iy(t) + n_y] = -p.Wy * p.refs[t - 1]
    const = 0.5 * float(np.sum(p.Wy * p.refs * p.refs))

    rows, cols, vals = [], [], []

    def put(r0, c0, mat):
        rr, cc = np.nonzero(np.ones_like(mat, dtype=bool))
        rows.append(rr + r0)
        cols.append(cc + c0)
        vals.append(mat[rr, cc])

    m_rows = T * (n_y + n_u)
    b = np.zeros(m_rows)
    past_y, past_u = p.history.past_y, p.history.past_u
    eye_y, eye_u = np.eye(n_y), np.eye(n_u)
    for t in range(1, T + 1):
        r0 = (t - 1) * n_y
        put(r0, iy(t), -eye_y)
        for i in range(1, m.n_a + 1):
            if t - i >= 1:
                put(r0, iy(t - i), m.A[i - 1])
            else:
                # y_{t-i} with t - i <= 0 is past_y[i - t]
                b[r0 : r0 + n_y] -= m.A[i - 1] @ past_y[i - t]
        for i in range(1, m.n_b + 1):
            if t - i >= 0:
                put(r0, iu(t - i), m.B[i - 1])
            else:
                # u_{t-i} with t - i <= -1 is past_u[i - t - 1]
                b[r0 : r0 + n_y] -= m.B[i - 1] @ past_u[i - t - 1]
    base = T * n_y
    for t in range(1, T + 1):
        r0 = base + (t - 1) * n_u
        if t >= 2:
            put(r0, iu(t - 2), eye_u)
        else:
            b[r0 : r0 + n_u] -= past_u[0]
        put(r0, idu(t - 1), eye_u)
        put(r0, iu(t - 1), -eye_u)
    E = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m_rows, n),
    )
    lo = np.tile(np.concatenate([p.y_min, p.u_min, p.du_min]), T)
    hi = np.tile(np.concatenate([p.y_max, p.u_max, p.du_max]), T)
    return SparseQp(H, h, E, b, lo, hi, const)


def _kkt_matrix(Hd: np.ndarray, Ed: np.ndarray) -> np.ndarray:
    n, m = Hd.shape[0], Ed.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = Hd
    K[:n, n:] = Ed.T
    K[n:, :n] = Ed
    return K


def kkt_equality_solve(qp: SparseQp) -> np.ndarray:
    """Minimiser of the QP with the bounds dropped.

    Raises :class:`RankDeficient` if the equality rows are linearly
    dependent or the Hessian is singular on their null space.
    """
    Ed = qp.E.toarray()
    Hd = qp.H.toarray()
    rank = np.linalg.matrix_rank(Ed)
    if rank < Ed.shape[0]:
        raise RankDeficient(f"equality matrix has rank {rank} < {Ed.shape[0]} rows")
    K = _kkt_matrix(Hd, Ed)
    if np.linalg.matrix_rank(K) < K.shape[0]:
        raise RankDeficient("KKT matrix is singular (Hessian singular on the constraint null space)")
    sol = np.linalg.solve(K, np.concatenate([-qp.h, qp.b]))
    return sol[: qp.n]


def _polish(qp: SparseQp, z: np.ndarray, tol: float):
    """Re-solve with the bound pattern of ``z`` fixed; ``None`` if the
    resulting point fails the optimality checks."""
    at_lo = z <= qp.lo + tol
    at_hi = (z >= qp.hi - tol) & ~at_lo
    free = ~(at_lo | at_hi)
    x = np.where(at_lo, qp.lo, np.where(at_hi, qp.hi, z))
    Ed = qp.E.toarray()
    Hd = qp.H.toarray()
    EF = Ed[:, free]
    HF = Hd[np.ix_(free, free)]
    fixed = ~free
    rhs_top = -(qp.h[free] + Hd[np.ix_(free, fixed)] @ x[fixed])
    rhs_bot = qp.b - Ed[:, fixed] @ x[fixed]
    K = _kkt_matrix(HF, EF)
    sol, *_ = np.linalg.lstsq(K, np.concatenate([rhs_top, rhs_bot]), rcond=None)
    if np.linalg.norm(K @ sol - np.concatenate([rhs_top, rhs_bot]), np.inf) > 1e-9:
        return None
    x[free] = sol[: free.sum()]
    nu = sol[free.sum() :]
    if np.any(x < qp.lo - 1e-12) or np.any(x > qp.hi + 1e-12):
        return None
    grad = Hd @ x + qp.h + Ed.T @ nu
    scale = 1.0 + np.abs(grad).max()
    if np.any(grad[at_lo] < -1e-9 * scale) or np.any(grad[at_hi] > 1e-9 * scale):
        return None
    return np.clip(x, qp.lo, qp.hi)


def reference_solve(qp: SparseQp, tol: float = 1e-9, rho: float = 1.0,
                    max_iter: int = 200_000, polish: bool = True) -> np.ndarray:
    """Box-constrained QP by ADMM with the equality constraints kept in the
    x-update, followed by an active-set polishing step.

    x-update: ``min 1/2 x'Hx + h'x + rho/2 ||x - z + w||^2  s.t. Ex = b``
    (one sparse LU of the KKT matrix per call), z-update: projection onto
    the box, w: scaled dual of ``x = z``. Stops when both the primal
    residual ``||x - z||_inf`` and the dual residual ``rho ||z - z_prev||_inf``
    are ``<= tol``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    n, m = qp.n, qp.m
    K = sp.bmat([[qp.H + rho * sp.eye(n), qp.E.T], [qp.E, None]], format="csc")
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise RankDeficient(f"KKT factorisation failed: {exc}") from None
    z = np.clip(np.zeros(n), qp.lo, qp.hi)
    w = np.zeros(n)
    rhs = np.empty(n + m)
    rhs[n:] = qp.b
    for it in range(1, max_iter + 1):
        rhs[:n] = rho * (z - w) - qp.h
        x = lu.solve(rhs)[:n]
        z_prev = z
        z = np.clip(x + w, qp.lo, qp.hi)
        w += x - z
        if it % 10 == 0 or it == 1:
            r_prim = np.abs(x - z).max()
            r_dual = rho * np.abs(z - z_prev).max()
            if r_prim <= tol and r_dual <= tol:
                break
    else:
        raise MaxIterationsExceeded(f"ADMM did not reach tol={tol} in {max_iter} iterations")
    log.debug("ADMM converged in %d iterations", it)
    if polish:
        zp = _polish(qp, z, max(tol, 1e-10) * 10)
        if zp is not None:
            return zp
    return z


def _pattern_kkt(Hd, Ed, h, x, free, rhs_bot):
    fixed = ~free
    nf = int(free.sum())
    K = _kkt_matrix(Hd[np.ix_(free, free)], Ed[:, free])
    rhs = np.concatenate([-(h[free] + Hd[np.ix_(free, fixed)] @ x[fixed]), rhs_bot])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:  # singular KKT: may still be consistent
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    if not np.all(np.isfinite(sol)) or np.abs(K @ sol - rhs).max() > 1e-9:
        return None
    return sol[:nf]


def brute_force_active_set(qp: SparseQp) -> np.ndarray:
    """Exhaustive search over every lower/upper/free pattern.

    Each pattern fixes some variables at their bounds and solves the
    equality-constrained QP in the rest; patterns whose solution leaves the
    box or whose KKT system is inconsistent are discarded. The candidate
    with the lowest objective wins. Every candidate is feasible and the
    optimum's own pattern is among them, so the minimum is the optimum.
    """
    n = qp.n
    if n > BRUTE_FORCE_MAX_VARS:
        raise TooLarge(f"{n} variables; brute force is limited to {BRUTE_FORCE_MAX_VARS}")
    Hd, Ed = qp.H.toarray(), qp.E.toarray()
    m = Ed.shape[0]
    best, best_val = None, np.inf
    for pattern in itertools.product((0, 1, 2), repeat=n):
        pat = np.array(pattern)
        free = pat == 2
        x = np.where(pat == 0, qp.lo, qp.hi).astype(float)
        fixed = ~free
        nf = int(free.sum())
        rhs_bot = qp.b - Ed[:, fixed] @ x[fixed]
        if nf == 0:
            if np.abs(rhs_bot).max(initial=0.0) > 1e-9:
                continue
        else:
            xf = None
            if nf < m:
                # fewer free variables than equalities: usually pinned by E alone
                EF = Ed[:, free]
                xf, *_ = np.linalg.lstsq(EF, rhs_bot, rcond=None)
                if np.abs(EF @ xf - rhs_bot).max() > 1e-9:
                    continue
                if np.linalg.matrix_rank(EF) < nf:
                    xf = None  # a direction is left free inside the pattern
            if xf is None:
                xf = _pattern_kkt(Hd, Ed, qp.h, x, free, rhs_bot)
                if xf is None:
                    continue
            x[free] = xf
            if np.any(x < qp.lo - 1e-12) or np.any(x > qp.hi + 1e-12):
                continue
        val = qp.objective(x)
        if val < best_val - 1e-13:
            best, best_val = np.clip(x, qp.lo, qp.hi), val
    if best is None:
        raise RankDeficient("no feasible pattern found; the QP is infeasible")
    return best


def solution_to_primal(p: MpcProblem, z) -> PrimalPoint:
    return PrimalPoint.from_vector(z, p.T, p.n_y, p.n_u)


def equality_rank(qp: SparseQp) -> int:
    """Rank of the stacked equality matrix (debug aid for the full-rank assumption)."""
    return int(np.linalg.matrix_rank(qp.E.toarray()))

