"""Closed-loop receding-horizon simulation against time-varying and LPV plants.

At every step the controller reads the plant's current ARX model, solves
the MPC problem over the horizon with that model frozen, applies the first
input and advances the plant with the same model, so the one-step
prediction is exact. Plants are noise free.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from .arx import (
    ArxHistory,
    ArxModel,
    LpvArxSpec,
    TimeVaryingArxSpec,
    arx_step,
    arx_validate,
    lpv_arx_at,
    nominal_model,
    random_lpv_spec,
    tv_arx_at,
)
from .errors import ConfigError, EmptyLog, EmptyRange
from .problem import DualPoint, MpcProblem, PrimalPoint
from .qp_reference import build_sparse_qp, reference_solve, solution_to_primal
from .solver import SolverConfig, solve

BOUND_TOL = 1e-9


def _pair(x, n, name):
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        return np.full(n, float(v))
    if v.shape != (n,):
        raise ConfigError(f"{name}: expected a scalar or a length-{n} vector")
    return v


@dataclass
class Scenario:
    """Everything needed to reproduce one closed-loop run.

    ``plant`` is ``"timevarying"``, ``"lpv"`` or ``"fixed"`` (the latter
    reads ``model``). ``controller`` selects the CDAL solver or the QP
    oracle. With ``project_input`` the applied input is clipped so that
    its realised increment also respects the increment box; the solver's
    own ``du_0`` only matches ``u_0 - u_{-1}`` up to the solver tolerance.
    """

    plant: str = "timevarying"
    T: int = 10
    steps: int = 200
    ref_hold: int = 20
    seed: int = 0
    ref_range: tuple = (-0.8, 0.8)
    ref_levels: list | None = None
    Wy: Any = 1.0
    Wdu: Any = 0.1
    y_bounds: tuple = (-1.0, 1.0)
    u_bounds: tuple = (-1.0, 1.0)
    du_bounds: tuple = (-1.0, 1.0)
    perturbation_gain: float = 0.1
    period_divisor: float = 10.0
    lpv_seed: int = 0
    lpv_scale: float = 0.1
    lpv_order: int = 6
    model: dict | None = None
    solver: dict = field(default_factory=dict)
    controller: str = "cdal"
    oracle_tol: float = 1e-9
    project_input: bool = True

    def __post_init__(self):
        if self.plant not in ("timevarying", "lpv", "fixed"):
            raise ConfigError(f"unknown plant {self.plant!r}")
        if self.controller not in ("cdal", "oracle"):
            raise ConfigError(f"unknown controller {self.controller!r}")
        if self.steps < 1 or self.ref_hold < 1 or self.T < 1:
            raise ConfigError("steps, ref_hold and T must all be >= 1")
        if self.plant == "fixed" and self.model is None:
            raise ConfigError("fixed plant needs a 'model'")
        for name in ("ref_range", "y_bounds", "u_bounds", "du_bounds"):
            setattr(self, name, tuple(getattr(self, name)))
        self.solver_cfg  # validates the solver block early

    @property
    def solver_cfg(self) -> SolverConfig:
        return SolverConfig.from_dict(self.solver)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "Scenario":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown scenario field(s): {', '.join(sorted(unknown))}")
        return cls(**raw)

    @classmethod
    def from_json(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            out[name] = list(v) if isinstance(v, tuple) else v
        return out


# The LPV plants are far less damped than the time-varying one; with a
# loose inner tolerance the accelerated multiplier sequence can stall on
# them, so their scenarios tighten the inner solve and restart momentum.
LPV_SOLVER = {"eps_in": 1e-9, "N_in": 2000, "restart": True}


def standard_scenario(plant: str = "timevarying", T: int = 10, **overrides) -> Scenario:
    """Benchmark scenario: 200 steps, references redrawn every 20 steps,
    unit output weight, 0.1 increment weight, all boxes [-1, 1]."""
    solver = dict(LPV_SOLVER) if plant == "lpv" else {}
    solver.update(overrides.pop("solver", {}))
    return Scenario(plant=plant, T=T, solver=solver, **overrides)


class Plant:
    """Model generator plus the realised input/output history."""

    def __init__(self, model_at: Callable[[int, ArxHistory], ArxModel], history: ArxHistory):
        self.model_at = model_at
        self.history = history


def make_plant(s: Scenario) -> Plant:
    if s.plant == "timevarying":
        spec = TimeVaryingArxSpec(nominal_model(), s.perturbation_gain, s.period_divisor)
        model_at = lambda t, hist: tv_arx_at(spec, t)  # noqa: E731
        n_a, n_b = spec.base.n_a, spec.base.n_b
        n_y, n_u = spec.base.n_y, spec.base.n_u
    elif s.plant == "lpv":
        spec = random_lpv_spec(seed=s.lpv_seed, n_a=s.lpv_order, n_b=s.lpv_order, scale=s.lpv_scale)
        model_at = lambda t, hist: lpv_arx_at(spec, schedule_from_history(hist))  # noqa: E731
        n_a, n_b, n_y, n_u = spec.n_a, spec.n_b, spec.n_y, spec.n_u
    else:
        fixed = arx_validate(s.model)
        model_at = lambda t, hist: fixed  # noqa: E731
        n_a, n_b, n_y, n_u = fixed.n_a, fixed.n_b, fixed.n_y, fixed.n_u
    history = ArxHistory(np.zeros((n_a, n_y)), np.zeros((n_b, n_u)))
    return Plant(model_at, history)


def schedule_from_history(hist: ArxHistory) -> np.ndarray:
    """Scheduling vector for the next output: every stored output and all
    inputs except the one about to be decided."""
    return np.concatenate([hist.past_y.reshape(-1), hist.past_u[:-1].reshape(-1)])


def generate_references(n_y: int, steps: int, ref_hold: int, seed: int,
                        range_: tuple = (-0.8, 0.8)) -> np.ndarray:
    """Piecewise-constant references, a fresh uniform draw every ``ref_hold`` steps."""
    lo, hi = float(range_[0]), float(range_[1])
    if not lo < hi:
        raise EmptyRange(f"reference range [{lo}, {hi}] is empty")
    if ref_hold < 1:
        raise ConfigError("ref_hold must be >= 1")
    rng = np.random.default_rng(seed)
    n_seg = math.ceil(steps / ref_hold)
    levels = rng.uniform(lo, hi, size=(n_seg, n_y))
    return np.repeat(levels, ref_hold, axis=0)[:steps]


def scenario_references(s: Scenario, n_y: int) -> np.ndarray:
    """Random references, or the explicit ``ref_levels`` (one row per hold
    segment, the last one repeated) when the scenario gives them."""
    if s.ref_levels is None:
        return generate_references(n_y, s.steps, s.ref_hold, s.seed, s.ref_range)
    levels = np.atleast_2d(np.asarray(s.ref_levels, dtype=float))
    if levels.shape[1] != n_y:
        raise ConfigError(f"ref_levels: expected {n_y} values per segment, got {levels.shape[1]}")
    n_seg = math.ceil(s.steps / s.ref_hold)
    idx = np.minimum(np.arange(n_seg), levels.shape[0] - 1)
    return np.repeat(levels[idx], s.ref_hold, axis=0)[: s.steps]


def warm_start_shift(prev: PrimalPoint, duals: DualPoint):
    """Drop the first block of every trajectory and repeat the last one."""

    def shift(a):
        return np.vstack([a[1:], a[-1:]])

    return (
        PrimalPoint(shift(prev.Y), shift(prev.U), shift(prev.dU)),
        DualPoint(shift(duals.Lambda), shift(duals.Gamma)),
    )


def project_applied_input(u, u_prev, p: MpcProblem) -> np.ndarray:
    """Clip ``u`` into the input box intersected with ``u_prev + [du_min, du_max]``."""
    lo = np.maximum(p.u_min, u_prev + p.du_min)
    hi = np.minimum(p.u_max, u_prev + p.du_max)
    return np.clip(u, lo, np.maximum(lo, hi))


def build_problem(s: Scenario, model: ArxModel, history: ArxHistory, ref) -> MpcProblem:
    n_y, n_u = model.n_y, model.n_u
    return MpcProblem(
        T=s.T,
        Wy=_pair(s.Wy, n_y, "Wy"),
        Wdu=_pair(s.Wdu, n_u, "Wdu"),
        y_min=_pair(s.y_bounds[0], n_y, "y_min"),
        y_max=_pair(s.y_bounds[1], n_y, "y_max"),
        u_min=_pair(s.u_bounds[0], n_u, "u_min"),
        u_max=_pair(s.u_bounds[1], n_u, "u_max"),
        du_min=_pair(s.du_bounds[0], n_u, "du_min"),
        du_max=_pair(s.du_bounds[1], n_u, "du_max"),
        refs=np.tile(np.asarray(ref, dtype=float), (s.T, 1)),
        model=model,
        history=history,
    )


@dataclass
class ClosedLoopLog:
    """Per-step arrays; row ``t`` holds the output measured at ``t``, the
    input applied at ``t`` and its realised increment, and the reference
    tracked at ``t``."""

    t: np.ndarray
    y: np.ndarray
    u: np.ndarray
    du: np.ndarray
    r: np.ndarray
    outer_iters: np.ndarray
    inner_passes: np.ndarray
    solve_ms: np.ndarray
    converged: np.ndarray
    y_pred: np.ndarray
    y_next: np.ndarray
    construct_ms: np.ndarray | None = None
    models: list | None = None
    problems: list | None = None

    def __len__(self) -> int:
        return len(self.t)

    @property
    def n_failed(self) -> int:
        return int(np.sum(~self.converged))

    def constraint_violations(self, s: Scenario, tol: float = BOUND_TOL) -> int:
        """Count of logged entries (outputs incl. the final one, inputs,
        increments) outside their boxes by more than ``tol``."""
        ys = np.vstack([self.y, self.y_next[-1:]])
        count = 0
        for arr, (lo, hi) in ((ys, s.y_bounds), (self.u, s.u_bounds), (self.du, s.du_bounds)):
            count += int(np.sum(arr < lo - tol) + np.sum(arr > hi + tol))
        return count

    def summary(self, s: Scenario | None = None) -> dict:
        out = {"steps": len(self), "failed_steps": self.n_failed, **timing_stats(self)}
        out["mean_outer_iters"] = float(np.mean(self.outer_iters))
        out["mean_inner_passes"] = float(np.mean(self.inner_passes))
        if s is not None:
            out["constraint_violations"] = self.constraint_violations(s)
        return out

    def write_csv(self, path) -> None:
        n_y, n_u = self.y.shape[1], self.u.shape[1]
        header = (["t"] + [f"y_{i + 1}" for i in range(n_y)] + [f"u_{i + 1}" for i in range(n_u)]
                  + [f"du_{i + 1}" for i in range(n_u)] + [f"r_{i + 1}" for i in range(n_y)]
                  + ["iters", "time_ms"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(len(self)):
                row = [int(self.t[k])]
                for arr in (self.y, self.u, self.du, self.r):
                    row += [f"{v:.17g}" for v in arr[k]]
                row += [int(self.outer_iters[k]), f"{self.solve_ms[k]:.17g}"]
                w.writerow(row)


def run_closed_loop(s: Scenario, keep_problems: bool = False, solve_fn=None) -> ClosedLoopLog:
    """Simulate ``s.steps`` closed-loop steps.

    A step whose solve does not converge is logged as failed and the last
    iterate is applied anyway. ``solve_fn(problem, warm)`` may replace the
    controller; it must return ``(PrimalPoint, DualPoint | None, outer,
    inner, converged)``.
    """
    plant = make_plant(s)
    refs = scenario_references(s, plant.history.past_y.shape[1])
    cfg = s.solver_cfg
    n_y = plant.history.past_y.shape[1]
    n_u = plant.history.past_u.shape[1]
    N = s.steps
    rec = {k: np.zeros((N, n_y)) for k in ("y", "r", "y_pred", "y_next")}
    rec.update({k: np.zeros((N, n_u)) for k in ("u", "du")})
    outer = np.zeros(N, dtype=int)
    inner = np.zeros(N, dtype=int)
    times = np.zeros(N)
    construct = np.zeros(N)
    conv = np.zeros(N, dtype=bool)
    problems = [] if keep_problems else None
    models = [] if keep_problems else None
    warm = None
    hist = plant.history
    for t in range(N):
        model = plant.model_at(t, hist)
        p = build_problem(s, model, hist, refs[t])
        if keep_problems:
            problems.append(p)
            models.append(model)
        if solve_fn is not None:
            t0 = time.perf_counter()
            z, duals, n_out, n_in, ok = solve_fn(p, warm)
            times[t] = (time.perf_counter() - t0) * 1e3
        elif s.controller == "cdal":
            t0 = time.perf_counter()
            rep = solve(p, warm, cfg)
            times[t] = (time.perf_counter() - t0) * 1e3
            z, duals = rep.solution, rep.duals
            n_out, n_in, ok = rep.outer_iters, rep.total_inner_passes, rep.converged
        else:
            t0 = time.perf_counter()
            qp = build_sparse_qp(p)
            t1 = time.perf_counter()
            z = solution_to_primal(p, reference_solve(qp, s.oracle_tol))
            t2 = time.perf_counter()
            construct[t] = (t1 - t0) * 1e3
            times[t] = (t2 - t1) * 1e3
            duals, n_out, n_in, ok = None, 0, 0, True
        u = z.U[0].copy()
        if s.project_input:
            u = project_applied_input(u, hist.past_u[0], p)
        window_u = np.vstack([u[None, :], hist.past_u[:-1]])
        y_next = arx_step(model, hist.past_y, window_u)
        rec["y"][t] = hist.past_y[0]
        rec["u"][t] = u
        rec["du"][t] = u - hist.past_u[0]
        rec["r"][t] = refs[t]
        rec["y_pred"][t] = z.Y[0]
        rec["y_next"][t] = y_next
        outer[t], inner[t], conv[t] = n_out, n_in, ok
        hist = hist.push(y_next, u)
        if duals is not None:
            warm = warm_start_shift(z, duals)
        else:
            warm = (warm_start_shift(z, DualPoint.zeros(p))[0], None)
    return ClosedLoopLog(
        t=np.arange(N), outer_iters=outer, inner_passes=inner, solve_ms=times, converged=conv,
        construct_ms=construct if s.controller == "oracle" and solve_fn is None else None,
        models=models, problems=problems, **rec,
    )


def timing_stats(log: ClosedLoopLog) -> dict:
    if len(log) == 0:
        raise EmptyLog("timing statistics need at least one step")
    out = {"avg_ms": float(np.mean(log.solve_ms)), "max_ms": float(np.max(log.solve_ms))}
    if log.construct_ms is not None:
        out["construction_avg_ms"] = float(np.mean(log.construct_ms))
        out["construction_max_ms"] = float(np.max(log.construct_ms))
        total = log.construct_ms + log.solve_ms
        out["total_avg_ms"] = float(np.mean(total))
        out["total_max_ms"] = float(np.max(total))
    return out


def steady_state_input(model: ArxModel, r) -> np.ndarray | None:
    """Constant input holding the output at ``r`` for ``model``; ``None``
    if the DC gain is singular."""
    lhs = model.B.sum(axis=0)
    rhs = (np.eye(model.n_y) - model.A.sum(axis=0)) @ np.asarray(r, dtype=float)
    try:
        if lhs.shape[0] == lhs.shape[1]:
            return np.linalg.solve(lhs, rhs)
        sol, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
        return sol if np.allclose(lhs @ sol, rhs) else None
    except np.linalg.LinAlgError:
        return None


def segment_end_errors(log: ClosedLoopLog, s: Scenario, model_at_end=None):
    """Tracking error at the last step of every hold segment.

    Returns a list of ``(segment, end_step, error_inf, reachable)``. A
    setpoint counts as reachable when the steady-state input of the plant
    model at the segment end lies inside the input box (with 5 % margin).
    """
    out = []
    n_seg = math.ceil(len(log) / s.ref_hold)
    u_lo, u_hi = s.u_bounds
    margin = 0.05 * (u_hi - u_lo) / 2
    for k in range(n_seg):
        end = min((k + 1) * s.ref_hold, len(log)) - 1
        err = float(np.max(np.abs(log.y_next[end] - log.r[end])))
        reachable = True
        if model_at_end is not None:
            u_ss = steady_state_input(model_at_end(end), log.r[end])
            reachable = u_ss is not None and bool(
                np.all(u_ss >= u_lo + margin) and np.all(u_ss <= u_hi - margin)
            )
        out.append((k, end, err, reachable))
    return out
