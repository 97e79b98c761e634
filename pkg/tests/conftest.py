import sys

import numpy as np
import pytest

from cdal_arx.arx import ArxHistory, ArxModel
from cdal_arx.problem import MpcProblem, forward_simulate


def random_model(rng, n_y, n_u, n_a, n_b, gain=0.9):
    """Random ARX model whose A-stack has total norm below ``gain``."""
    A = rng.normal(size=(n_a, n_y, n_y))
    A *= gain / max(np.sum([np.linalg.norm(a, 2) for a in A]), 1e-12) * rng.uniform(0.3, 1.0)
    B = rng.normal(size=(n_b, n_y, n_u))
    return ArxModel(A, B)


def random_problem(rng, n_y=2, n_u=2, n_a=2, n_b=2, T=5, tight=0.5):
    """Random instance that is feasible by construction.

    A random input sequence is simulated forward; each box is then grown
    around that trajectory by a random margin, so the simulated point is
    feasible and a fraction of the bounds can still be active at the
    optimum (small margins when ``tight`` is large).
    """
    model = random_model(rng, n_y, n_u, n_a, n_b)
    hist = ArxHistory(rng.uniform(-0.5, 0.5, (n_a, n_y)), rng.uniform(-0.5, 0.5, (n_b, n_u)))
    proto = MpcProblem(
        T=T, Wy=1.0, Wdu=1.0, y_min=-1e9, y_max=1e9, u_min=-1e9, u_max=1e9,
        du_min=-1e9, du_max=1e9, refs=np.zeros((T, n_y)), model=model, history=hist,
    )
    U = rng.uniform(-0.5, 0.5, (T, n_u))
    z = forward_simulate(proto, U)

    def box(a, n):
        lo, hi = a.min(axis=0), a.max(axis=0)
        grow = rng.exponential(1.0 - tight + 1e-3, (2, n))
        return lo - grow[0], hi + grow[1]

    y_lo, y_hi = box(z.Y, n_y)
    u_lo, u_hi = box(np.vstack([z.U, hist.past_u[:1]]), n_u)
    du_lo, du_hi = box(z.dU, n_u)
    refs = rng.uniform(-2, 2, (T, n_y))
    return MpcProblem(
        T=T, Wy=rng.uniform(0.1, 2.0, n_y), Wdu=rng.uniform(0.01, 1.0, n_u),
        y_min=y_lo, y_max=y_hi, u_min=u_lo, u_max=u_hi, du_min=du_lo, du_max=du_hi,
        refs=refs, model=model, history=hist,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
