import os
import subprocess
import sys

import numpy as np
import pytest

from cdal_arx import _backend
from cdal_arx.problem import DualPoint
from cdal_arx.solver import default_warm_start, init_state, precompute_diagonals, solve

from conftest import random_problem

try:
    CY = _backend.get_kernels("cython")
except ImportError:  # pragma: no cover - extension not built
    CY = None
PY = _backend.get_kernels("python")

needs_ext = pytest.mark.skipif(CY is None, reason="compiled extension not built")


@needs_ext
def test_compiled_is_default():
    assert _backend.BACKEND == "cython"


def test_env_forces_fallback():
    code = "from cdal_arx import _backend; print(_backend.BACKEND)"
    env = {**os.environ, "CDAL_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True).stdout.strip()
    assert out == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        _backend.get_kernels("fortran")


@needs_ext
def test_sweeps_agree(rng):
    for _ in range(20):
        p = random_problem(rng, n_y=3, n_u=2, n_a=4, n_b=3, T=8)
        d = DualPoint(rng.normal(size=(8, 3)), rng.normal(size=(8, 2)))
        c = precompute_diagonals(p, 1.7)
        outs = []
        for kern in (PY, CY):
            st = init_state(p, (default_warm_start(p), d))
            passes, sigma = kern.coupled_sweeps(
                p.model.A, p.model.B, p.Wy / 1.7, p.Wdu / 1.7, p.refs,
                p.y_min, p.y_max, p.u_min, p.u_max, p.du_min, p.du_max,
                c.inv_dy, c.inv_du, c.inv_ddu, st.Y, st.U, st.dU, st.lam_tilde, st.gam_tilde,
                5, 0.0)
            outs.append((passes, sigma, st.Y.copy(), st.U.copy(), st.lam_tilde.copy()))
        (p0, s0, *a0), (p1, s1, *a1) = outs
        assert p0 == p1
        assert s0 == pytest.approx(s1, rel=1e-12, abs=1e-300)
        for x, y in zip(a0, a1):
            np.testing.assert_allclose(x, y, atol=1e-13)


@needs_ext
def test_full_solve_agrees(rng):
    p = random_problem(rng, T=10, tight=0.8)
    a = solve(p, kernels=PY)
    b = solve(p, kernels=CY)
    assert a.outer_iters == b.outer_iters
    np.testing.assert_allclose(a.solution.to_vector(), b.solution.to_vector(), atol=1e-12)


@needs_ext
def test_residual_kernel_agrees(rng):
    p = random_problem(rng, n_a=3, n_b=4, T=6)
    st = init_state(p)
    out = []
    for kern in (PY, CY):
        ra, rd = np.empty((p.T, p.n_y)), np.empty((p.T, p.n_u))
        kern.residuals_into(p.model.A, p.model.B, st.ext_y, st.ext_u, st.dU, ra, rd)
        out.append((ra, rd))
    np.testing.assert_allclose(out[0][0], out[1][0], atol=1e-14)
    np.testing.assert_allclose(out[0][1], out[1][1], atol=1e-14)
