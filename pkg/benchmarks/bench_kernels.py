"""Compiled versus pure-Python kernels.

Times the coupled coordinate sweeps in isolation and a full closed-loop
run with each backend, and checks that both produce the same iterates.

    python benchmarks/bench_kernels.py [--repeats 5] [--horizons 10 20 30] [--steps 40]
                                       [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import statistics
import time

import numpy as np

from cdal_arx import _backend
from cdal_arx.sim import build_problem, make_plant, run_closed_loop, standard_scenario
from cdal_arx.solver import init_state, precompute_diagonals, _sweeps


def sweep_time(p, kernels, passes: int, repeats: int):
    cache = precompute_diagonals(p, 1.0)
    times, last = [], None
    for _ in range(repeats):
        st = init_state(p)
        t0 = time.perf_counter()
        _sweeps(p, st, cache, 1.0, passes, 0.0, kernels)
        times.append((time.perf_counter() - t0) * 1e3 / passes)
        last = st
    return statistics.median(times), last


def closed_loop_time(plant: str, T: int, steps: int, kernels, repeats: int) -> float:
    saved = _backend.kernels
    _backend.kernels = kernels
    try:
        s = standard_scenario(plant, T, steps=steps)
        return statistics.median(
            float(np.mean(run_closed_loop(s).solve_ms)) for _ in range(repeats)
        )
    finally:
        _backend.kernels = saved


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--horizons", type=int, nargs="+", default=[10, 20, 30])
    ap.add_argument("--passes", type=int, default=50)
    ap.add_argument("--steps", type=int, default=40, help="closed-loop steps per run")
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)

    py = _backend.get_kernels("python")
    try:
        cy = _backend.get_kernels("cython")
    except ImportError:
        raise SystemExit("compiled extension not built; run `pip install -e .` first")

    rows = []
    for plant in ("timevarying", "lpv"):
        s = standard_scenario(plant, 10)
        plant_obj = make_plant(s)
        model = plant_obj.model_at(0, plant_obj.history)
        for T in args.horizons:
            p = build_problem(standard_scenario(plant, T), model, plant_obj.history, [0.5, -0.3])
            t_py, st_py = sweep_time(p, py, args.passes, args.repeats)
            t_cy, st_cy = sweep_time(p, cy, args.passes, args.repeats)
            diff = max(np.abs(st_py.Y - st_cy.Y).max(), np.abs(st_py.U - st_cy.U).max(),
                       np.abs(st_py.dU - st_cy.dU).max())
            cl_py = closed_loop_time(plant, T, args.steps, py, 1)
            cl_cy = closed_loop_time(plant, T, args.steps, cy, args.repeats)
            rows.append({
                "plant": plant, "T": T,
                "sweep_ms_python": t_py, "sweep_ms_cython": t_cy,
                "sweep_speedup": t_py / t_cy,
                "closed_loop_avg_ms_python": cl_py, "closed_loop_avg_ms_cython": cl_cy,
                "closed_loop_speedup": cl_py / cl_cy,
                "max_iterate_diff": float(diff),
            })
            r = rows[-1]
            print(f"{plant:12s} T={T:3d}  sweep {t_py:9.3f} / {t_cy:7.4f} ms "
                  f"(x{r['sweep_speedup']:.0f})  closed loop {cl_py:9.2f} / {cl_cy:7.3f} ms "
                  f"(x{r['closed_loop_speedup']:.0f})  diff {diff:.1e}", flush=True)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
