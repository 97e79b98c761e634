import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdal_arx.arx import (
    ArxHistory,
    ArxModel,
    LpvArxSpec,
    ReluNetwork,
    TimeVaryingArxSpec,
    activation_pattern,
    arx_step,
    arx_validate,
    lpv_arx_at,
    nominal_model,
    pack_coefficients,
    padded_nominal_model,
    random_lpv_spec,
    relu_net_eval,
    scheduling_vector,
    tv_arx_at,
)
from cdal_arx.errors import DimensionMismatch, NonFiniteEntry, UnsupportedShape


def raw_model(n_y=2, n_u=1, n_a=2, n_b=1):
    return {
        "n_y": n_y, "n_u": n_u, "n_a": n_a, "n_b": n_b,
        "A": [np.eye(n_y).tolist()] * n_a,
        "B": [np.ones((n_y, n_u)).tolist()] * n_b,
    }


class TestValidate:
    def test_roundtrip(self):
        m = arx_validate(raw_model())
        assert (m.n_y, m.n_u, m.n_a, m.n_b) == (2, 1, 2, 1)
        assert arx_validate(m.to_dict()) == m

    def test_wrong_lag_shape_names_matrix(self):
        raw = raw_model()
        raw["A"][1] = [[1.0, 0.0]]
        with pytest.raises(DimensionMismatch, match=r"A\(2\)"):
            arx_validate(raw)

    def test_wrong_b_columns(self):
        raw = raw_model(n_u=2)
        raw["B"][0] = [[1.0], [1.0]]
        with pytest.raises(DimensionMismatch, match=r"B\(1\)"):
            arx_validate(raw)

    def test_count_mismatch(self):
        raw = raw_model()
        raw["n_a"] = 3
        with pytest.raises(DimensionMismatch, match="3 matrices"):
            arx_validate(raw)

    def test_nan_entry(self):
        raw = raw_model()
        raw["B"][0] = [[np.nan], [1.0]]
        with pytest.raises(NonFiniteEntry, match=r"B\(1\)"):
            arx_validate(raw)

    def test_missing_field(self):
        raw = raw_model()
        del raw["B"]
        with pytest.raises(DimensionMismatch, match="B"):
            arx_validate(raw)

    def test_immutable(self):
        m = nominal_model()
        with pytest.raises(ValueError):
            m.A[0, 0, 0] = 5.0


class TestStep:
    def test_nominal_frozen(self):
        # y_{-1} = e1, y_{-2} = e2, u_{-1} = [1, 1]:
        # A(1) e1 + A(2) e2 + B(1) [1, 1] = [0.9,0.1] + [0.1,0.7] + [1.5,1.5]
        y = arx_step(nominal_model(), [[1, 0], [0, 1], [0, 0], [0, 0]],
                     [[1, 1], [0, 0], [0, 0], [0, 0]])
        np.testing.assert_allclose(y, [2.5, 2.3], atol=1e-15)

    def test_scalar_first_order(self):
        m = ArxModel([[[0.5]]], [[[2.0]]])
        assert arx_step(m, [[1.0]], [[3.0]])[0] == pytest.approx(6.5)

    def test_zero_history_zero_output(self):
        m = nominal_model()
        np.testing.assert_array_equal(arx_step(m, np.zeros((4, 2)), np.zeros((4, 2))), 0.0)

    def test_window_shape_checked(self):
        with pytest.raises(DimensionMismatch):
            arx_step(nominal_model(), np.zeros((3, 2)), np.zeros((4, 2)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_linear_in_window(self, seed):
        rng = np.random.default_rng(seed)
        m = ArxModel(rng.normal(size=(3, 2, 2)), rng.normal(size=(2, 2, 1)))
        a, b = rng.normal(size=2)
        y1, u1 = rng.normal(size=(3, 2)), rng.normal(size=(2, 1))
        y2, u2 = rng.normal(size=(3, 2)), rng.normal(size=(2, 1))
        lhs = arx_step(m, a * y1 + b * y2, a * u1 + b * u2)
        rhs = a * arx_step(m, y1, u1) + b * arx_step(m, y2, u2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestHistory:
    def test_push_drops_oldest(self):
        h = ArxHistory([[1.0], [2.0]], [[3.0]])
        h2 = h.push([0.0], [9.0])
        np.testing.assert_array_equal(h2.past_y, [[0.0], [1.0]])
        np.testing.assert_array_equal(h2.past_u, [[9.0]])

    def test_check_shapes(self):
        with pytest.raises(DimensionMismatch, match="past_u"):
            ArxHistory(np.zeros((4, 2)), np.zeros((3, 2))).check(nominal_model())


class TestTimeVarying:
    def test_t0_values(self):
        m = tv_arx_at(TimeVaryingArxSpec(), 0.0)
        np.testing.assert_allclose(m.A[0], [[0.9, 0.2], [0.2, 0.9]], atol=1e-15)
        np.testing.assert_allclose(m.B[3], [[0.4, 0.3], [0.3, 0.4]], atol=1e-15)

    def test_quarter_period(self):
        t = 10 * np.pi / 2
        m = tv_arx_at(TimeVaryingArxSpec(), t)
        np.testing.assert_allclose(m.A[0], [[1.0, 0.1], [0.1, 1.0]], atol=1e-12)

    def test_zero_gain_is_nominal(self):
        m = tv_arx_at(TimeVaryingArxSpec(perturbation_gain=0.0), 7.3)
        assert m == nominal_model()

    def test_same_perturbation_on_b(self):
        spec = TimeVaryingArxSpec()
        m = tv_arx_at(spec, 3.0)
        base = spec.base
        np.testing.assert_allclose(m.A - base.A, m.B - base.B, atol=1e-15)

    def test_non_2x2_rejected(self):
        spec = TimeVaryingArxSpec(base=ArxModel([[[0.5]]], [[[1.0]]]))
        with pytest.raises(UnsupportedShape):
            tv_arx_at(spec, 0.0)

    def test_negative_time(self):
        with pytest.raises(ValueError):
            tv_arx_at(TimeVaryingArxSpec(), -1.0)


class TestRelu:
    def test_zero_weights_give_bias(self):
        net = ReluNetwork(((np.zeros((3, 2)), np.zeros(3)), (np.zeros((2, 3)), [0.7, -0.2])))
        np.testing.assert_array_equal(relu_net_eval(net, [5.0, -3.0]), [0.7, -0.2])

    def test_single_hidden_layer(self):
        net = ReluNetwork(((np.eye(2), np.zeros(2)),))
        np.testing.assert_array_equal(relu_net_eval(net, [-1.0, 2.0], final_affine=False), [0, 2])
        np.testing.assert_array_equal(relu_net_eval(net, [-1.0, 2.0]), [-1, 2])

    def test_layer_chain_checked(self):
        with pytest.raises(DimensionMismatch, match="layer 1"):
            ReluNetwork(((np.eye(2), np.zeros(2)), (np.eye(3), np.zeros(3))))

    def test_input_dim_checked(self):
        net = ReluNetwork(((np.eye(2), np.zeros(2)),))
        with pytest.raises(DimensionMismatch):
            relu_net_eval(net, [1.0, 2.0, 3.0])

    def test_json_roundtrip(self):
        spec = random_lpv_spec(seed=3, n_a=2, n_b=2)
        again = LpvArxSpec.from_dict(spec.to_dict())
        w = np.linspace(-1, 1, spec.schedule_dim)
        assert lpv_arx_at(again, w) == lpv_arx_at(spec, w)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_piecewise_affine(self, seed):
        rng = np.random.default_rng(seed)
        net = ReluNetwork((
            (rng.normal(size=(6, 3)), rng.normal(size=6)),
            (rng.normal(size=(5, 6)), rng.normal(size=5)),
            (rng.normal(size=(2, 5)), rng.normal(size=2)),
        ))
        w, d = rng.normal(size=3), rng.normal(size=3)
        h = 1e-6
        pts = [w + k * h * d for k in range(3)]
        if len({activation_pattern(net, p) for p in pts}) != 1:
            return  # straddles a kink
        v = [relu_net_eval(net, p) for p in pts]
        np.testing.assert_allclose(v[2] - v[1], v[1] - v[0], atol=1e-8)


class TestLpv:
    def test_constant_nets_reproduce_padded_nominal(self):
        spec = random_lpv_spec(seed=0, scale=0.0)
        w = np.random.default_rng(1).normal(size=spec.schedule_dim)
        assert lpv_arx_at(spec, w) == padded_nominal_model()

    def test_dimensions(self):
        spec = random_lpv_spec(seed=0)
        assert spec.schedule_dim == 22
        assert spec.row_dim == 24
        W1, _ = spec.nets[0].layers[0]
        W2, _ = spec.nets[0].layers[1]
        W3, b3 = spec.nets[0].layers[2]
        assert W1.shape == (66, 22) and W2.shape == (66, 66) and W3.shape == (24, 66)
        np.testing.assert_array_equal(b3, pack_coefficients(padded_nominal_model())[0])

    def test_weights_in_range_and_seeded(self):
        a, b = random_lpv_spec(seed=5), random_lpv_spec(seed=5)
        for (Wa, ba), (Wb, bb) in zip(a.nets[1].layers[:2], b.nets[1].layers[:2]):
            np.testing.assert_array_equal(Wa, Wb)
            assert Wa.min() >= 0 and Wa.max() <= 0.1 and ba.min() >= 0 and ba.max() <= 0.1

    def test_padded_nominal_repeats_lag4(self):
        m = padded_nominal_model()
        np.testing.assert_array_equal(m.A[5], nominal_model().A[3])
        np.testing.assert_array_equal(m.B[4], nominal_model().B[3])

    def test_scheduling_vector_skips_latest_input(self):
        py = np.arange(12.0).reshape(6, 2)
        pu = 100 + np.arange(12.0).reshape(6, 2)
        w = scheduling_vector(py, pu)
        assert w.shape == (22,)
        np.testing.assert_array_equal(w[12:], pu[1:].reshape(-1))

    def test_step_matches_stacked_rows(self, rng):
        spec = random_lpv_spec(seed=2)
        for _ in range(5):
            py, pu = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
            w = scheduling_vector(py, pu)
            x = np.concatenate([py.reshape(-1), pu.reshape(-1)])
            rows = np.vstack([relu_net_eval(net, w) for net in spec.nets])
            np.testing.assert_allclose(arx_step(lpv_arx_at(spec, w), py, pu), rows @ x,
                                       rtol=1e-12, atol=1e-12)

    def test_wrong_schedule_length(self):
        with pytest.raises(DimensionMismatch):
            lpv_arx_at(random_lpv_spec(seed=0), np.zeros(24))
