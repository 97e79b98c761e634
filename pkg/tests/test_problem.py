import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdal_arx.arx import ArxHistory, ArxModel, nominal_model
from cdal_arx.errors import (
    BoundOrderViolation,
    DimensionMismatch,
    LengthMismatch,
    NegativeWeight,
    NonFiniteEntry,
    NonPositiveRho,
)
from cdal_arx.problem import (
    DualPoint,
    MpcProblem,
    PrimalPoint,
    al_objective,
    forward_simulate,
    problem_validate,
    residuals,
    tracking_cost,
)
from cdal_arx.qp_reference import build_sparse_qp

from conftest import random_problem


def bench_problem(T=10, **kw):
    m = nominal_model()
    args = dict(T=T, Wy=1.0, Wdu=0.1, y_min=-1, y_max=1, u_min=-1, u_max=1, du_min=-1, du_max=1,
                refs=np.full((T, 2), 0.5), model=m, history=ArxHistory.zeros(m))
    args.update(kw)
    return MpcProblem(**args)


def random_point(rng, p):
    return PrimalPoint(rng.normal(size=(p.T, p.n_y)), rng.normal(size=(p.T, p.n_u)),
                       rng.normal(size=(p.T, p.n_u)))


class TestValidation:
    def test_bench_settings_valid(self):
        p = bench_problem()
        assert p.n_z == 10 * 6
        np.testing.assert_array_equal(p.Wdu, [0.1, 0.1])

    def test_negative_weight(self):
        with pytest.raises(NegativeWeight):
            bench_problem(Wy=[1.0, -0.1])

    def test_bound_order(self):
        with pytest.raises(BoundOrderViolation, match=r"u_min\[1\]"):
            bench_problem(u_min=[-1, 2])

    def test_refs_length(self):
        with pytest.raises(LengthMismatch):
            bench_problem(refs=np.zeros((9, 2)))

    def test_refs_width(self):
        with pytest.raises(DimensionMismatch):
            bench_problem(refs=np.zeros((10, 3)))

    def test_bad_horizon(self):
        with pytest.raises(LengthMismatch):
            bench_problem(T=0, refs=np.zeros((0, 2)))

    def test_infinite_bound(self):
        with pytest.raises(NonFiniteEntry):
            bench_problem(y_max=np.inf)

    def test_history_shape(self):
        with pytest.raises(DimensionMismatch):
            bench_problem(history=ArxHistory(np.zeros((3, 2)), np.zeros((4, 2))))

    def test_equal_bounds_allowed(self):
        p = bench_problem(du_min=0.0, du_max=0.0)
        assert np.all(p.du_min == p.du_max)

    def test_json_roundtrip(self):
        p = bench_problem()
        q = problem_validate(p.to_dict())
        assert q.model == p.model
        np.testing.assert_array_equal(q.refs, p.refs)

    def test_missing_field(self):
        raw = bench_problem().to_dict()
        del raw["Wy"]
        with pytest.raises(LengthMismatch, match="Wy"):
            problem_validate(raw)


class TestPrimalPoint:
    def test_vector_order(self):
        z = PrimalPoint(np.array([[1.0, 2.0]]), np.array([[3.0]]), np.array([[4.0]]))
        np.testing.assert_array_equal(z.to_vector(), [1, 2, 3, 4])

    def test_roundtrip(self, rng):
        p = bench_problem(T=3)
        z = random_point(rng, p)
        back = PrimalPoint.from_vector(z.to_vector(), p.T, p.n_y, p.n_u)
        np.testing.assert_array_equal(back.U, z.U)


class TestResiduals:
    def test_forward_simulation_is_feasible(self, rng):
        for _ in range(10):
            p = random_problem(rng, n_y=2, n_u=1, n_a=3, n_b=2, T=6)
            z = forward_simulate(p, rng.normal(size=(p.T, p.n_u)))
            ra, rd = residuals(p, z)
            assert np.abs(ra).max() < 1e-12
            assert np.abs(rd).max() < 1e-12

    def test_scalar_hand_case(self):
        m = ArxModel([[[0.5]]], [[[2.0]]])
        p = MpcProblem(T=2, Wy=1, Wdu=1, y_min=-9, y_max=9, u_min=-9, u_max=9, du_min=-9,
                       du_max=9, refs=[[0.0], [0.0]], model=m, history=ArxHistory([[1.0]], [[3.0]]))
        z = PrimalPoint(np.array([[1.0], [2.0]]), np.array([[1.0], [0.0]]), np.array([[0.5], [0.0]]))
        ra, rd = residuals(p, z)
        # res_arx_1 = 0.5*y_0 + 2*u_0 - y_1, res_arx_2 = 0.5*y_1 + 2*u_1 - y_2
        np.testing.assert_allclose(ra[:, 0], [1.5, -1.5])
        # res_du_1 = u_{-1} + du_0 - u_0, res_du_2 = u_0 + du_1 - u_1
        np.testing.assert_allclose(rd[:, 0], [2.5, 1.0])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 3), st.integers(1, 3),
           st.integers(1, 4), st.integers(1, 4), st.integers(1, 8))
    def test_matches_sparse_equalities(self, seed, n_y, n_u, n_a, n_b, T):
        rng = np.random.default_rng(seed)
        p = random_problem(rng, n_y, n_u, n_a, n_b, T)
        z = random_point(rng, p)
        qp = build_sparse_qp(p)
        ra, rd = residuals(p, z)
        np.testing.assert_allclose(qp.E @ z.to_vector() - qp.b,
                                   np.concatenate([ra.ravel(), rd.ravel()]), atol=1e-10)


class TestObjective:
    def test_zero_duals_feasible_point_is_cost(self, rng):
        p = random_problem(rng)
        z = forward_simulate(p, np.zeros((p.T, p.n_u)))
        d = DualPoint(rng.normal(size=(p.T, p.n_y)), rng.normal(size=(p.T, p.n_u)))
        assert al_objective(p, z, d, 3.0) == pytest.approx(tracking_cost(p, z), abs=1e-10)

    def test_cost_is_qp_objective(self, rng):
        p = random_problem(rng, T=4)
        z = random_point(rng, p)
        assert tracking_cost(p, z) == pytest.approx(build_sparse_qp(p).objective(z.to_vector()))

    def test_explicit_formula(self, rng):
        p = random_problem(rng, n_y=1, n_u=1, n_a=1, n_b=1, T=3)
        z = random_point(rng, p)
        d = DualPoint(rng.normal(size=(3, 1)), rng.normal(size=(3, 1)))
        ra, rd = residuals(p, z)
        rho = 2.5
        expect = (0.5 * np.sum(p.Wy * (z.Y - p.refs) ** 2) + 0.5 * np.sum(p.Wdu * z.dU ** 2)
                  + rho * (np.sum(d.Lambda * ra) + np.sum(d.Gamma * rd))
                  + rho / 2 * (np.sum(ra ** 2) + np.sum(rd ** 2)))
        assert al_objective(p, z, d, rho) == pytest.approx(expect, rel=1e-13)

    def test_rho_checked(self, rng):
        p = random_problem(rng)
        with pytest.raises(NonPositiveRho):
            al_objective(p, PrimalPoint.zeros(p), DualPoint.zeros(p), 0.0)

    def test_dual_shape_checked(self, rng):
        p = random_problem(rng)
        with pytest.raises(DimensionMismatch, match="Lambda"):
            al_objective(p, PrimalPoint.zeros(p), DualPoint(np.zeros((1, 1)), np.zeros((p.T, 2))), 1.0)
