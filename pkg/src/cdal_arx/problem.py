"""The ARX tracking MPC problem, its equality residuals and the AL objective.

Decision variables are ``Y = (y_1..y_T)``, ``U = (u_0..u_{T-1})`` and
``dU = (du_0..du_{T-1})``, each stored as a (T, n) array. Row ``k`` of
``U`` and ``dU`` holds ``u_k`` and ``du_k``; row ``k`` of ``Y`` holds
``y_{k+1}``.

Duals are kept in scaled form throughout: the dual ascent adds raw
residuals and the penalty parameter multiplies the dual inner products in
:func:`al_objective`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Mapping

import numpy as np

from .arx import ArxHistory, ArxModel, arx_validate
from .errors import (
    BoundOrderViolation,
    DimensionMismatch,
    LengthMismatch,
    NegativeWeight,
    NonFiniteEntry,
    NonPositiveRho,
)


def _vec(x, n: int, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = np.full(n, float(v))
    v = v.reshape(-1)
    if v.shape[0] != n:
        raise DimensionMismatch(f"{name}: expected length {n}, got {v.shape[0]}")
    return v


@dataclass(frozen=True, eq=False)
class MpcProblem:
    """Horizon, diagonal weights, boxes, references, model and history."""

    T: int
    Wy: np.ndarray
    Wdu: np.ndarray
    y_min: np.ndarray
    y_max: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    du_min: np.ndarray
    du_max: np.ndarray
    refs: np.ndarray
    model: ArxModel
    history: ArxHistory

    def __post_init__(self):
        m = self.model
        T = int(self.T)
        if T < 1:
            raise LengthMismatch(f"horizon T must be >= 1, got {T}")
        object.__setattr__(self, "T", T)
        self.history.check(m)
        for name, n in (
            ("Wy", m.n_y), ("Wdu", m.n_u),
            ("y_min", m.n_y), ("y_max", m.n_y),
            ("u_min", m.n_u), ("u_max", m.n_u),
            ("du_min", m.n_u), ("du_max", m.n_u),
        ):
            v = _vec(getattr(self, name), n, name)
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        refs = np.asarray(self.refs, dtype=float)
        if refs.ndim == 1 and m.n_y == 1:
            refs = refs[:, None]
        if refs.ndim != 2 or refs.shape[1] != m.n_y:
            raise DimensionMismatch(f"refs: expected shape (T, {m.n_y}), got {refs.shape}")
        if refs.shape[0] != T:
            raise LengthMismatch(f"refs: expected {T} reference vectors, got {refs.shape[0]}")
        refs.setflags(write=False)
        object.__setattr__(self, "refs", refs)

        for name in ("Wy", "Wdu"):
            if np.any(getattr(self, name) < 0):
                raise NegativeWeight(f"{name} has a negative entry")
        for lo, hi in (("y_min", "y_max"), ("u_min", "u_max"), ("du_min", "du_max")):
            a, b = getattr(self, lo), getattr(self, hi)
            if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
                raise NonFiniteEntry(f"{lo}/{hi} must be finite")
            bad = np.flatnonzero(a > b)
            if bad.size:
                i = bad[0]
                raise BoundOrderViolation(f"{lo}[{i}]={a[i]} > {hi}[{i}]={b[i]}")
        for name in ("Wy", "Wdu"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NonFiniteEntry(f"{name} must be finite")
        if not np.all(np.isfinite(refs)):
            raise NonFiniteEntry("refs must be finite")

    @property
    def n_y(self) -> int:
        return self.model.n_y

    @property
    def n_u(self) -> int:
        return self.model.n_u

    @property
    def n_z(self) -> int:
        return self.T * (self.n_y + 2 * self.n_u)

    def with_(self, **changes) -> "MpcProblem":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = {"T": self.T}
        for name in ("Wy", "Wdu", "y_min", "y_max", "u_min", "u_max", "du_min", "du_max"):
            out[name] = getattr(self, name).tolist()
        out["refs"] = self.refs.tolist()
        out["model"] = self.model.to_dict()
        out["history"] = self.history.to_dict()
        return out


def problem_validate(raw: Mapping[str, Any] | MpcProblem) -> MpcProblem:
    """Build an :class:`MpcProblem` from its JSON mapping.

    Scalars are accepted for weights and bounds and broadcast to vectors.
    A missing history defaults to zeros.
    """
    if isinstance(raw, MpcProblem):
        return raw
    try:
        model = arx_validate(raw["model"])
        hist_raw = raw.get("history")
        fields = {k: raw[k] for k in ("Wy", "Wdu", "y_min", "y_max", "u_min", "u_max",
                                      "du_min", "du_max", "refs")}
        T = raw["T"]
    except KeyError as exc:
        raise LengthMismatch(f"problem is missing field {exc}") from None
    if hist_raw is None:
        history = ArxHistory.zeros(model)
    else:
        history = history_from_lists(model, hist_raw["past_y"], hist_raw["past_u"])
    return MpcProblem(T=T, model=model, history=history, **fields)


def history_from_lists(model: ArxModel, past_y, past_u) -> ArxHistory:
    py = np.asarray(past_y, dtype=float)
    pu = np.asarray(past_u, dtype=float)
    try:
        py = py.reshape(model.n_a, model.n_y)
        pu = pu.reshape(model.n_b, model.n_u)
    except ValueError:
        raise DimensionMismatch(
            f"history: expected past_y {(model.n_a, model.n_y)} and past_u "
            f"{(model.n_b, model.n_u)}, got {py.shape} and {pu.shape}"
        ) from None
    return ArxHistory(py, pu)


@dataclass
class PrimalPoint:
    Y: np.ndarray
    U: np.ndarray
    dU: np.ndarray

    def copy(self) -> "PrimalPoint":
        return PrimalPoint(self.Y.copy(), self.U.copy(), self.dU.copy())

    def to_vector(self) -> np.ndarray:
        """Interleave as ``[y_1, u_0, du_0, y_2, u_1, du_1, ...]``."""
        return np.hstack([self.Y, self.U, self.dU]).reshape(-1)

    @classmethod
    def from_vector(cls, z, T: int, n_y: int, n_u: int) -> "PrimalPoint":
        blocks = np.asarray(z, dtype=float).reshape(T, n_y + 2 * n_u)
        return cls(
            blocks[:, :n_y].copy(),
            blocks[:, n_y : n_y + n_u].copy(),
            blocks[:, n_y + n_u :].copy(),
        )

    @classmethod
    def zeros(cls, p: MpcProblem) -> "PrimalPoint":
        return cls(np.zeros((p.T, p.n_y)), np.zeros((p.T, p.n_u)), np.zeros((p.T, p.n_u)))

    def check(self, p: MpcProblem) -> "PrimalPoint":
        for name, n in (("Y", p.n_y), ("U", p.n_u), ("dU", p.n_u)):
            a = getattr(self, name)
            if a.shape != (p.T, n):
                raise DimensionMismatch(f"{name}: expected {(p.T, n)}, got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise NonFiniteEntry(f"{name} contains non-finite values")
        return self

    def to_dict(self) -> dict:
        return {"Y": self.Y.tolist(), "U": self.U.tolist(), "dU": self.dU.tolist()}


@dataclass
class DualPoint:
    Lambda: np.ndarray
    Gamma: np.ndarray

    def copy(self) -> "DualPoint":
        return DualPoint(self.Lambda.copy(), self.Gamma.copy())

    @classmethod
    def zeros(cls, p: MpcProblem) -> "DualPoint":
        return cls(np.zeros((p.T, p.n_y)), np.zeros((p.T, p.n_u)))

    def check(self, p: MpcProblem) -> "DualPoint":
        for name, n in (("Lambda", p.n_y), ("Gamma", p.n_u)):
            a = getattr(self, name)
            if a.shape != (p.T, n):
                raise DimensionMismatch(f"{name}: expected {(p.T, n)}, got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise NonFiniteEntry(f"{name} contains non-finite values")
        return self

    def to_dict(self) -> dict:
        return {"Lambda": self.Lambda.tolist(), "Gamma": self.Gamma.tolist()}


def extended_trajectories(p: MpcProblem, z: PrimalPoint):
    """Outputs and inputs with history prepended, oldest first.

    ``ext_y[n_a - 1 + t] = y_t`` for ``t = 1 - n_a .. T`` and
    ``ext_u[n_b + k] = u_k`` for ``k = -n_b .. T - 1``.
    """
    ext_y = np.vstack([p.history.past_y[::-1], z.Y])
    ext_u = np.vstack([p.history.past_u[::-1], z.U])
    return ext_y, ext_u


def residuals(p: MpcProblem, z: PrimalPoint):
    """Equality residuals of the ARX and increment constraints.

    ``res_arx[t-1] = sum_i A(i) y_{t-i} + sum_i B(i) u_{t-i} - y_t`` and
    ``res_du[t-1] = u_{t-2} + du_{t-1} - u_{t-1}`` for ``t = 1..T``.
    """
    z.check(p)
    m = p.model
    n_a, n_b, T = m.n_a, m.n_b, p.T
    ext_y, ext_u = extended_trajectories(p, z)
    res_arx = -z.Y.copy()
    for i in range(1, n_a + 1):
        # y_{t-i} for t = 1..T sits at ext_y[n_a - 1 + t - i]
        res_arx += ext_y[n_a - i : n_a - i + T] @ m.A[i - 1].T
    for i in range(1, n_b + 1):
        res_arx += ext_u[n_b - i + 1 : n_b - i + 1 + T] @ m.B[i - 1].T
    res_du = ext_u[n_b - 1 : n_b - 1 + T] + z.dU - z.U
    return res_arx, res_du


def tracking_cost(p: MpcProblem, z: PrimalPoint) -> float:
    e = z.Y - p.refs
    return 0.5 * float(np.sum(p.Wy * e * e) + np.sum(p.Wdu * z.dU * z.dU))


def al_objective(p: MpcProblem, z: PrimalPoint, d: DualPoint, rho: float) -> float:
    """Augmented Lagrangian with scaled duals.

    ``cost + rho * <dual, res> + rho / 2 * ||res||^2`` summed over both
    constraint families, so that ``al_objective / rho`` is the function the
    coordinate sweeps minimise.
    """
    if not rho > 0:
        raise NonPositiveRho(f"rho must be positive, got {rho}")
    d.check(p)
    ra, rd = residuals(p, z)
    return (
        tracking_cost(p, z)
        + rho * float(np.sum(d.Lambda * ra) + np.sum(d.Gamma * rd))
        + 0.5 * rho * float(np.sum(ra * ra) + np.sum(rd * rd))
    )


def forward_simulate(p: MpcProblem, U) -> PrimalPoint:
    """Point satisfying both equality families for a given input sequence."""
    m = p.model
    U = np.asarray(U, dtype=float).reshape(p.T, p.n_u)
    past_y = p.history.past_y.copy()
    past_u = p.history.past_u.copy()
    Y = np.empty((p.T, p.n_y))
    prev_u = past_u[0]
    for k in range(p.T):
        window_u = np.vstack([U[k][None, :], past_u[:-1]])
        y = np.einsum("kij,kj->i", m.A, past_y) + np.einsum("kij,kj->i", m.B, window_u)
        Y[k] = y
        past_y = np.vstack([y[None, :], past_y[:-1]])
        past_u = window_u
    dU = U - np.vstack([prev_u[None, :], U[:-1]])
    return PrimalPoint(Y, U.copy(), dU)
