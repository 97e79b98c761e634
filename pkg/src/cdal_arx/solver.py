"""Accelerated cyclic coordinate-descent augmented-Lagrangian solver (CDAL-ARX).

The solver works directly on the ARX coefficients; no QP matrices are ever
formed. One outer iteration is

1. re-synchronise the working duals: ``lam = lam_acc + res_arx(z)`` and
   ``gam = gam_acc + res_du(z)``;
2. run cyclic coordinate passes over ``y_t, u_{t-1}, du_{t-1}`` for
   ``t = 1..T``. Each coordinate update moves the working duals by the
   change in the residuals it touches, so they stay equal to the
   accelerated duals plus the current residuals;
3. the working duals now hold the new multipliers ``Lambda^k``; stop when
   ``||Lambda^k - lam_acc||^2 <= eps_out``;
4. Nesterov extrapolation of the multipliers.

:func:`cd_pass_naive` recomputes every block offset from scratch and is
kept as the reference for the incremental pass.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Any, Mapping

import numpy as np

from . import _backend
from .errors import (
    ConfigError,
    IndexOutOfRange,
    InfeasibleWarmStart,
    NonPositiveRho,
    ZeroDiagonal,
)
from .problem import DualPoint, MpcProblem, PrimalPoint, forward_simulate, residuals

WARM_START_TOL = 1e-9


@dataclass
class SolverConfig:
    rho: float = 1.0
    N_out: int = 5000
    N_in: int = 200
    eps_out: float = 1e-6
    eps_in: float = 1e-6
    use_coupled: bool = True
    use_acceleration: bool = True
    accelerate_gamma: bool = True
    stop_on_gamma: bool = False
    restart: bool = False

    def __post_init__(self):
        if not (isinstance(self.rho, (int, float)) and self.rho > 0 and math.isfinite(self.rho)):
            raise NonPositiveRho(f"rho must be a positive finite number, got {self.rho!r}")
        for name in ("N_out", "N_in"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
        if self.N_in < 1:
            raise ConfigError("N_in must be at least 1")
        for name in ("eps_out", "eps_in"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or v < 0 or math.isnan(v):
                raise ConfigError(f"{name} must be a non-negative number, got {v!r}")

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "SolverConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown solver option(s): {', '.join(sorted(unknown))}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


class Status(str, Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"


@dataclass
class DiagCache:
    """Diagonals of the block Hessians and their reciprocals.

    ``dy[t-1]`` belongs to block ``y_t``, ``du[t-1]`` to ``u_{t-1}`` and
    ``ddu`` to every increment block.
    """

    dy: np.ndarray
    du: np.ndarray
    ddu: np.ndarray
    inv_dy: np.ndarray = field(init=False)
    inv_du: np.ndarray = field(init=False)
    inv_ddu: np.ndarray = field(init=False)

    def __post_init__(self):
        self.inv_dy = 1.0 / self.dy
        self.inv_du = 1.0 / self.du
        self.inv_ddu = 1.0 / self.ddu


def _check_rho(rho):
    if not rho > 0:
        raise NonPositiveRho(f"rho must be positive, got {rho}")


def precompute_diagonals(p: MpcProblem, rho: float) -> DiagCache:
    _check_rho(rho)
    A, B, T = p.model.A, p.model.B, p.T
    colA = np.sum(A * A, axis=1)  # colA[k-1, i] = ||A(k)[:, i]||^2
    colB = np.sum(B * B, axis=1)
    cumA = np.vstack([np.zeros(p.n_y), np.cumsum(colA, axis=0)])
    cumB = np.vstack([np.zeros(p.n_u), np.cumsum(colB, axis=0)])
    dy = np.empty((T, p.n_y))
    du = np.empty((T, p.n_u))
    for t in range(1, T + 1):
        dy[t - 1] = p.Wy / rho + 1.0 + cumA[min(p.model.n_a, T - t)]
        du[t - 1] = (2.0 if t < T else 1.0) + cumB[min(p.model.n_b, T - t + 1)]
    ddu = p.Wdu / rho + 1.0
    return DiagCache(dy, du, ddu)


def block_hessians(p: MpcProblem, t: int, rho: float):
    """Full Hessians of ``al_objective / rho`` for blocks ``y_t``, ``u_{t-1}``, ``du_{t-1}``."""
    _check_range(p, t)
    A, B, T = p.model.A, p.model.B, p.T
    My = np.diag(p.Wy / rho + 1.0)
    for n in range(1, min(p.model.n_a, T - t) + 1):
        My += A[n - 1].T @ A[n - 1]
    Mu = (2.0 if t < T else 1.0) * np.eye(p.n_u)
    for n in range(1, min(p.model.n_b, T - t + 1) + 1):
        Mu += B[n - 1].T @ B[n - 1]
    Mdu = np.diag(p.Wdu / rho + 1.0)
    return My, Mu, Mdu


def ccd_block(M, d, s, lo, hi, sigma: float = 0.0):
    """One cyclic pass of projected coordinate minimisation of
    ``1/2 s'Ms + d's`` over the box ``[lo, hi]``.

    Later coordinates see earlier updates. Returns the new block and the
    accumulator increased by the squared coordinate moves.
    """
    M = np.asarray(M, dtype=float)
    d = np.asarray(d, dtype=float)
    s = np.array(s, dtype=float)
    diag = np.diag(M)
    if np.any(diag <= 0):
        raise ZeroDiagonal(f"block Hessian diagonal must be positive, got {diag}")
    for i in range(s.shape[0]):
        new = s[i] - (M[i] @ s + d[i]) / diag[i]
        new = min(max(new, lo[i]), hi[i])
        sigma += (new - s[i]) ** 2
        s[i] = new
    return s, sigma


def _check_range(p: MpcProblem, t: int):
    if not 1 <= t <= p.T:
        raise IndexOutOfRange(f"block index t={t} outside 1..{p.T}")


def compute_offsets(p: MpcProblem, z: PrimalPoint, duals: DualPoint, t: int, rho: float = 1.0):
    """Linear terms ``(e_t, f_t, g_t)`` of the three block subproblems at ``z``.

    With ``(My, Mu, Mdu) = block_hessians(p, t, rho)``, the gradient of
    ``al_objective / rho`` with respect to block ``y_t`` is ``My y_t + e_t``
    and likewise for ``u_{t-1}`` (``f_t``) and ``du_{t-1}`` (``g_t``). The
    duals are the (accelerated) multipliers the subproblem is built on.

    Each offset sums ``coef' (dual_s + res_s - coef x)`` over the residuals
    ``s`` containing the block, where ``coef`` is its coefficient there:

    * ``y_t``: ``-I`` in ``res_arx_t`` and ``A(n)`` in ``res_arx_{t+n}``;
    * ``u_{t-1}``: ``-I`` in ``res_du_t``, ``+I`` in ``res_du_{t+1}`` and
      ``B(n)`` in ``res_arx_{t-1+n}``;
    * ``du_{t-1}``: ``+I`` in ``res_du_t``.
    """
    _check_range(p, t)
    _check_rho(rho)
    A, B, T = p.model.A, p.model.B, p.T
    ra, rd = residuals(p, z)
    lam, gam = duals.Lambda, duals.Gamma
    k = t - 1
    y, u, du = z.Y[k], z.U[k], z.dU[k]

    e = -(p.Wy / rho) * p.refs[k] - (lam[k] + ra[k] + y)
    for n in range(1, min(p.model.n_a, T - t) + 1):
        e += A[n - 1].T @ (lam[k + n] + ra[k + n] - A[n - 1] @ y)

    f = -(gam[k] + rd[k] + u)
    if t < T:
        f += gam[k + 1] + rd[k + 1] - u
    for n in range(1, min(p.model.n_b, T - t + 1) + 1):
        f += B[n - 1].T @ (lam[k + n - 1] + ra[k + n - 1] - B[n - 1] @ u)

    g = gam[k] + rd[k] - du
    return e, f, g


@dataclass
class SolverState:
    """Mutable iterate of one solve.

    ``ext_y``/``ext_u`` carry the history in front of the decision
    trajectories (layout of ``problem.extended_trajectories``); ``Y`` and
    ``U`` are views into them.
    """

    ext_y: np.ndarray
    ext_u: np.ndarray
    dU: np.ndarray
    lam_tilde: np.ndarray
    gam_tilde: np.ndarray
    Lambda_prev: np.ndarray
    Lambda_acc: np.ndarray
    Gamma_prev: np.ndarray
    Gamma_acc: np.ndarray
    n_a: int
    n_b: int
    alpha: float = 1.0
    sigma: float = 0.0
    k_out: int = 0
    k_in: int = 0

    @property
    def Y(self) -> np.ndarray:
        return self.ext_y[self.n_a :]

    @property
    def U(self) -> np.ndarray:
        return self.ext_u[self.n_b :]

    @property
    def z(self) -> PrimalPoint:
        return PrimalPoint(self.Y, self.U, self.dU)

    def primal(self) -> PrimalPoint:
        return PrimalPoint(self.Y.copy(), self.U.copy(), self.dU.copy())

    def duals(self) -> DualPoint:
        return DualPoint(self.lam_tilde.copy(), self.gam_tilde.copy())


def default_warm_start(p: MpcProblem) -> PrimalPoint:
    """Inputs held at ``u_{-1}``, outputs simulated forward, all clamped into the boxes."""
    u_hold = np.clip(p.history.past_u[0], p.u_min, p.u_max)
    z = forward_simulate(p, np.tile(u_hold, (p.T, 1)))
    z.dU[:] = 0.0
    return _clamp_primal(p, z)


def _clamp_primal(p: MpcProblem, z: PrimalPoint) -> PrimalPoint:
    return PrimalPoint(
        np.clip(z.Y, p.y_min, p.y_max),
        np.clip(z.U, p.u_min, p.u_max),
        np.clip(z.dU, p.du_min, p.du_max),
    )


def _check_warm(p: MpcProblem, z: PrimalPoint) -> PrimalPoint:
    z.check(p)
    for name, lo, hi in (("Y", p.y_min, p.y_max), ("U", p.u_min, p.u_max),
                         ("dU", p.du_min, p.du_max)):
        a = getattr(z, name)
        excess = max(float(np.max(lo - a)), float(np.max(a - hi)))
        if excess > WARM_START_TOL:
            raise InfeasibleWarmStart(f"warm start {name} violates its box by {excess:.3g}")
    return _clamp_primal(p, z)


def init_state(p: MpcProblem, warm: tuple[PrimalPoint, DualPoint] | None = None) -> SolverState:
    if warm is None:
        z = default_warm_start(p)
        d = DualPoint.zeros(p)
    else:
        z, d = warm
        z = _check_warm(p, z)
        d = d.copy().check(p) if d is not None else DualPoint.zeros(p)
    ext_y = np.ascontiguousarray(np.vstack([p.history.past_y[::-1], z.Y]))
    ext_u = np.ascontiguousarray(np.vstack([p.history.past_u[::-1], z.U]))
    state = SolverState(
        ext_y=ext_y,
        ext_u=ext_u,
        dU=np.ascontiguousarray(z.dU, dtype=float).copy(),
        lam_tilde=np.zeros((p.T, p.n_y)),
        gam_tilde=np.zeros((p.T, p.n_u)),
        Lambda_prev=np.ascontiguousarray(d.Lambda, dtype=float).copy(),
        Lambda_acc=np.ascontiguousarray(d.Lambda, dtype=float).copy(),
        Gamma_prev=np.ascontiguousarray(d.Gamma, dtype=float).copy(),
        Gamma_acc=np.ascontiguousarray(d.Gamma, dtype=float).copy(),
        n_a=p.model.n_a,
        n_b=p.model.n_b,
    )
    dual_update(p, state)
    return state


def dual_update(p: MpcProblem, state: SolverState, kernels=None) -> SolverState:
    """``Lambda^k = Lambda_acc + res_arx(z)``, ``Gamma^k = Gamma_acc + res_du(z)``.

    Written into the working duals, which the coupled pass then keeps in sync.
    """
    kern = kernels or _backend.kernels
    kern.residuals_into(p.model.A, p.model.B, state.ext_y, state.ext_u, state.dU,
                        state.lam_tilde, state.gam_tilde)
    state.lam_tilde += state.Lambda_acc
    state.gam_tilde += state.Gamma_acc
    return state


def next_alpha(alpha: float) -> float:
    return (1.0 + math.sqrt(1.0 + 4.0 * alpha * alpha)) / 2.0


def accelerate(state: SolverState, momentum: bool = True, gamma: bool = True) -> SolverState:
    """Nesterov step on the multipliers held in the working duals.

    ``Lambda_acc = Lambda^k + (alpha_k - 1) / alpha_{k+1} * (Lambda^k - Lambda^{k-1})``.
    With ``gamma=False`` the increment multipliers get no momentum; with
    ``momentum=False`` this reduces to the plain multiplier update.
    """
    lam_k, gam_k = state.lam_tilde, state.gam_tilde
    alpha_next = next_alpha(state.alpha)
    beta = (state.alpha - 1.0) / alpha_next if momentum else 0.0
    state.Lambda_acc = lam_k + beta * (lam_k - state.Lambda_prev)
    state.Gamma_acc = gam_k + (beta if gamma else 0.0) * (gam_k - state.Gamma_prev)
    state.Lambda_prev = lam_k.copy()
    state.Gamma_prev = gam_k.copy()
    state.alpha = alpha_next
    return state


def cd_pass_naive(p: MpcProblem, state: SolverState, cache: DiagCache, rho: float = 1.0) -> SolverState:
    """One full pass recomputing every block offset from the residuals.

    Blocks are visited as ``y_t, u_{t-1}, du_{t-1}`` for ``t = 1..T``. The
    working duals are re-synchronised afterwards so the state invariant
    still holds.
    """
    duals = DualPoint(state.Lambda_acc, state.Gamma_acc)
    z = state.z
    sigma = 0.0
    for t in range(1, p.T + 1):
        k = t - 1
        My, Mu, Mdu = block_hessians(p, t, rho)
        e, _, _ = compute_offsets(p, z, duals, t, rho)
        z.Y[k], sigma = ccd_block(My, e, z.Y[k], p.y_min, p.y_max, sigma)
        _, f, _ = compute_offsets(p, z, duals, t, rho)
        z.U[k], sigma = ccd_block(Mu, f, z.U[k], p.u_min, p.u_max, sigma)
        _, _, g = compute_offsets(p, z, duals, t, rho)
        z.dU[k], sigma = ccd_block(Mdu, g, z.dU[k], p.du_min, p.du_max, sigma)
    state.sigma = sigma
    state.k_in += 1
    dual_update(p, state)
    return state


def _sweeps(p: MpcProblem, state: SolverState, cache: DiagCache, rho: float,
            max_passes: int, eps: float, kernels=None):
    kern = kernels or _backend.kernels
    return kern.coupled_sweeps(
        p.model.A, p.model.B, p.Wy / rho, p.Wdu / rho, p.refs,
        p.y_min, p.y_max, p.u_min, p.u_max, p.du_min, p.du_max,
        cache.inv_dy, cache.inv_du, cache.inv_ddu,
        state.Y, state.U, state.dU, state.lam_tilde, state.gam_tilde,
        max_passes, eps,
    )


def cd_pass_coupled(p: MpcProblem, state: SolverState, cache: DiagCache, rho: float = 1.0,
                    kernels=None) -> SolverState:
    """One full pass that updates the working duals incrementally."""
    _, sigma = _sweeps(p, state, cache, rho, 1, math.inf, kernels)
    state.sigma = sigma
    state.k_in += 1
    return state


@dataclass
class SolveReport:
    solution: PrimalPoint
    duals: DualPoint
    outer_iters: int
    total_inner_passes: int
    outer_residual: float
    status: Status
    alpha: float = 1.0

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "outer_iters": self.outer_iters,
            "total_inner_passes": self.total_inner_passes,
            "outer_residual": self.outer_residual,
            "solution": self.solution.to_dict(),
            "duals": self.duals.to_dict(),
        }


def solve(p: MpcProblem, warm: tuple[PrimalPoint, DualPoint] | None = None,
          cfg: SolverConfig | Mapping | None = None, kernels=None) -> SolveReport:
    """Solve the tracking MPC problem with accelerated CDAL.

    ``warm`` is an optional primal/dual pair; primal points up to 1e-9
    outside the boxes are clamped, larger violations raise
    :class:`InfeasibleWarmStart`.
    """
    if cfg is None:
        cfg = SolverConfig()
    elif not isinstance(cfg, SolverConfig):
        cfg = SolverConfig.from_dict(cfg)
    rho = float(cfg.rho)
    state = init_state(p, warm)
    if cfg.N_out == 0:
        return SolveReport(state.primal(), warm[1].copy() if warm and warm[1] is not None
                           else DualPoint.zeros(p), 0, 0, math.inf, Status.MAX_ITERATIONS)
    cache = precompute_diagonals(p, rho)
    status = Status.MAX_ITERATIONS
    outer_res = math.inf
    prev_res = math.inf
    for k in range(1, cfg.N_out + 1):
        state.k_out = k
        if k > 1:
            dual_update(p, state, kernels)
        if cfg.use_coupled:
            passes, sigma = _sweeps(p, state, cache, rho, cfg.N_in, cfg.eps_in, kernels)
            state.k_in += passes
            state.sigma = sigma
        else:
            for _ in range(cfg.N_in):
                cd_pass_naive(p, state, cache, rho)
                if state.sigma <= cfg.eps_in:
                    break
        dl = state.lam_tilde - state.Lambda_acc
        outer_res = float(np.sum(dl * dl))
        if cfg.stop_on_gamma:
            dg = state.gam_tilde - state.Gamma_acc
            outer_res += float(np.sum(dg * dg))
        if outer_res <= cfg.eps_out:
            status = Status.CONVERGED
            break
        if cfg.restart and outer_res > prev_res:
            # momentum restart: drop the extrapolation when the residual grows
            state.alpha = 1.0
            state.Lambda_prev = state.lam_tilde.copy()
            state.Gamma_prev = state.gam_tilde.copy()
        prev_res = outer_res
        accelerate(state, momentum=cfg.use_acceleration, gamma=cfg.accelerate_gamma)
    return SolveReport(state.primal(), state.duals(), state.k_out, state.k_in,
                       outer_res, status, state.alpha)
