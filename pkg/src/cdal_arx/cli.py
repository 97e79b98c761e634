"""Command-line front end.

Subcommands::

    cdal-arx solve PROBLEM.json [--solver SOLVER.json]
    cdal-arx simulate SCENARIO.json
    cdal-arx compare SCENARIO.json [--self]
    cdal-arx bench SCENARIO.json [--repeats N] [--horizons 10 20 30] [--with-oracle]

A scenario or problem argument that is not an existing file is looked up
among the bundled examples (``timevarying_T10``, ``lpv_T10``,
``problem_T10``, ``solver_default``).

Exit codes: 0 success (solve: Converged), 2 solve stopped at MaxIterations,
1 input error (unreadable file, malformed JSON, invalid field).
Set ``CDAL_LOG`` (DEBUG, INFO, ...) for log output on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import statistics
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import _backend
from .errors import CdalError
from .problem import problem_validate
from .qp_reference import build_sparse_qp, reference_solve
from .sim import Scenario, run_closed_loop, timing_stats
from .solver import SolverConfig, solve

log = logging.getLogger("cdal_arx")

EXIT_OK, EXIT_INPUT, EXIT_MAXITER = 0, 1, 2


class InputError(Exception):
    """Bad user input; the message already names the file and field."""


def _resolve(path_or_name: str) -> Path:
    p = Path(path_or_name)
    if p.exists():
        return p
    name = p.name if p.suffix == ".json" else p.name + ".json"
    bundled = resources.files("cdal_arx") / "data" / name
    if bundled.is_file():
        return Path(str(bundled))
    raise InputError(f"{path_or_name}: no such file or bundled example")


def _load_json(path_or_name: str):
    path = _resolve(path_or_name)
    try:
        return path, json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: "
                         f"{exc.msg}") from None
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None


def _validated(path, build, raw):
    try:
        return build(raw)
    except (CdalError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _apply_flags(solver: dict, args) -> dict:
    solver = dict(solver)
    if getattr(args, "no_accel", False):
        solver["use_acceleration"] = False
    if getattr(args, "naive_pass", False):
        solver["use_coupled"] = False
    return solver


def _load_scenario(args) -> Scenario:
    path, raw = _load_json(args.scenario)
    if not isinstance(raw, dict):
        raise InputError(f"{path}: top level must be an object")
    raw = dict(raw)
    if args.seed is not None:
        raw["seed"] = args.seed
    raw["solver"] = _apply_flags(raw.get("solver") or {}, args)
    return _validated(path, Scenario.from_dict, raw)


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"{out}: cannot create output directory ({exc.strerror})") from None
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def cmd_solve(args) -> int:
    ppath, raw = _load_json(args.problem)
    p = _validated(ppath, problem_validate, raw)
    cfg_raw = {}
    if args.solver:
        spath, cfg_raw = _load_json(args.solver)
        if not isinstance(cfg_raw, dict):
            raise InputError(f"{spath}: top level must be an object")
    else:
        spath = "solver options"
    cfg = _validated(spath, SolverConfig.from_dict, _apply_flags(cfg_raw, args))
    rep = solve(p, cfg=cfg)
    out = _out_dir(args)
    _write_json(out / "solution.json", rep.to_dict())
    summary = {k: v for k, v in rep.to_dict().items() if k not in ("solution", "duals")}
    print(json.dumps(summary))
    return EXIT_OK if rep.converged else EXIT_MAXITER


def cmd_simulate(args) -> int:
    s = _load_scenario(args)
    cl = run_closed_loop(s)
    out = _out_dir(args)
    cl.write_csv(out / "trajectories.csv")
    summary = cl.summary(s)
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary))
    return EXIT_OK


def compare_scenario(s: Scenario, self_compare: bool = False) -> dict:
    """Closed loop with CDAL, then the oracle (or CDAL again) on every step's problem."""
    cl = run_closed_loop(s, keep_problems=True)
    dev = np.zeros(len(cl))
    construct = np.zeros(len(cl))
    oracle = np.zeros(len(cl))
    if self_compare:
        again = run_closed_loop(s)
        dev = np.max(np.abs(again.u - cl.u), axis=1)
    else:
        for t, p in enumerate(cl.problems):
            t0 = time.perf_counter()
            qp = build_sparse_qp(p)
            t1 = time.perf_counter()
            z = reference_solve(qp, s.oracle_tol)
            t2 = time.perf_counter()
            construct[t] = (t1 - t0) * 1e3
            oracle[t] = (t2 - t1) * 1e3
            u0 = z[p.n_y : p.n_y + p.n_u]
            dev[t] = np.max(np.abs(cl.u[t] - u0))
    return {
        "steps": len(cl),
        "mode": "self" if self_compare else "oracle",
        "max_input_deviation": float(dev.max()),
        "failed_steps": cl.n_failed,
        "timing_ms": {
            "cdal_solve": {"avg": float(cl.solve_ms.mean()), "max": float(cl.solve_ms.max())},
            "oracle_construct": {"avg": float(construct.mean()), "max": float(construct.max())},
            "oracle_solve": {"avg": float(oracle.mean()), "max": float(oracle.max())},
            "oracle_total": {"avg": float((construct + oracle).mean()),
                             "max": float((construct + oracle).max())},
        },
    }


def cmd_compare(args) -> int:
    s = _load_scenario(args)
    if s.T > 30:
        raise InputError(f"{args.scenario}: T={s.T} is too large for the oracle (T <= 30)")
    res = compare_scenario(s, self_compare=args.self_compare)
    _write_json(_out_dir(args) / "comparison.json", res)
    print(json.dumps(res))
    return EXIT_OK


def machine_info() -> dict:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "backend": _backend.BACKEND,
    }


def bench_scenario(s: Scenario, repeats: int, with_oracle: bool = False) -> dict:
    avgs, maxs, oracle_tot = [], [], []
    for _ in range(repeats):
        st = timing_stats(run_closed_loop(s))
        avgs.append(st["avg_ms"])
        maxs.append(st["max_ms"])
        if with_oracle:
            oracle_tot.append(compare_scenario(s)["timing_ms"]["oracle_total"]["avg"])
    row = {
        "T": s.T,
        "repeats": repeats,
        "avg_ms": statistics.median(avgs),
        "max_ms": statistics.median(maxs),
        "avg_ms_variance": statistics.variance(avgs) if repeats > 1 else 0.0,
    }
    if with_oracle:
        row["oracle_total_avg_ms"] = statistics.median(oracle_tot)
    return row


def cmd_bench(args) -> int:
    if args.repeats < 1:
        raise InputError("--repeats must be at least 1")
    s = _load_scenario(args)
    horizons = args.horizons or [s.T]
    rows = []
    for T in horizons:
        st = _validated(args.scenario, Scenario.from_dict, {**s.to_dict(), "T": T})
        rows.append(bench_scenario(st, args.repeats, args.with_oracle))
    res = {"plant": s.plant, "machine": machine_info(), "rows": rows}
    _write_json(_out_dir(args) / "bench.json", res)
    print(json.dumps(res))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cdal-arx",
        description="Coordinate-descent augmented-Lagrangian MPC for ARX models.",
        epilog="Exit codes: 0 success/Converged, 2 MaxIterations, 1 input error. "
               "CDAL_LOG sets the log level.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        sp.add_argument("--out", default=".", help="output directory (default: .)")
        sp.add_argument("--no-accel", action="store_true", help="disable multiplier acceleration")
        sp.add_argument("--naive-pass", action="store_true",
                        help="use the from-scratch coordinate pass instead of the coupled one")
        if scenario:
            sp.add_argument("scenario", help="scenario JSON file or bundled example name")
            sp.add_argument("--seed", type=int, default=None, help="override the reference seed")

    sp = sub.add_parser("solve", help="solve one MPC problem")
    sp.add_argument("problem", help="problem JSON file or bundled example name")
    sp.add_argument("--solver", default=None, help="solver options JSON")
    common(sp, scenario=False)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("simulate", help="run a closed-loop scenario")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("compare", help="closed loop against the QP oracle")
    common(sp)
    sp.add_argument("--self", dest="self_compare", action="store_true",
                    help="compare the solver with itself (sanity check)")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("bench", help="time closed-loop runs")
    common(sp)
    sp.add_argument("--repeats", type=int, default=1)
    sp.add_argument("--horizons", type=int, nargs="+", default=None,
                    help="sweep these horizons instead of the scenario's T")
    sp.add_argument("--with-oracle", action="store_true",
                    help="also time oracle construction and solution")
    sp.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CDAL_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
