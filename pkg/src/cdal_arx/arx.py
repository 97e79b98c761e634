"""MIMO ARX models: validation, one-step simulation and model generators.

Coefficient stacks are stored as 3-D arrays: ``A[i - 1]`` is the n_y x n_y
matrix multiplying ``y_{t-i}`` and ``B[i - 1]`` the n_y x n_u matrix
multiplying ``u_{t-i}``. Histories are newest first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteEntry, UnsupportedShape

__all__ = [
    "ArxModel",
    "ArxHistory",
    "TimeVaryingArxSpec",
    "ReluNetwork",
    "LpvArxSpec",
    "arx_validate",
    "arx_step",
    "tv_arx_at",
    "relu_net_eval",
    "activation_pattern",
    "lpv_arx_at",
    "scheduling_vector",
    "nominal_model",
    "pack_coefficients",
    "random_lpv_spec",
    "padded_nominal_model",
    "perturbation_matrix",
]


def _as_matrix_stack(raw, name: str) -> np.ndarray:
    try:
        mats = [np.asarray(m, dtype=float) for m in raw]
    except (TypeError, ValueError) as exc:
        raise DimensionMismatch(f"{name}: not a list of numeric matrices ({exc})") from None
    for i, m in enumerate(mats, start=1):
        if m.ndim != 2:
            raise DimensionMismatch(f"{name}({i}): expected a 2-D matrix, got ndim={m.ndim}")
    return mats


@dataclass(frozen=True, eq=False)
class ArxModel:
    """ARX coefficients ``y_t = sum_i A(i) y_{t-i} + sum_i B(i) u_{t-i}``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float, order="C")
        B = np.array(self.B, dtype=float, order="C")
        if A.ndim != 3 or A.shape[0] < 1 or A.shape[1] != A.shape[2]:
            raise DimensionMismatch(f"A: expected shape (n_a>=1, n_y, n_y), got {A.shape}")
        if B.ndim != 3 or B.shape[0] < 1 or B.shape[1] != A.shape[1]:
            raise DimensionMismatch(
                f"B: expected shape (n_b>=1, {A.shape[1]}, n_u), got {B.shape}"
            )
        for name, stack in (("A", A), ("B", B)):
            bad = np.argwhere(~np.isfinite(stack))
            if bad.size:
                lag, r, c = bad[0]
                raise NonFiniteEntry(f"{name}({lag + 1}) has non-finite entry at ({r}, {c})")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n_y(self) -> int:
        return self.A.shape[1]

    @property
    def n_u(self) -> int:
        return self.B.shape[2]

    @property
    def n_a(self) -> int:
        return self.A.shape[0]

    @property
    def n_b(self) -> int:
        return self.B.shape[0]

    def to_dict(self) -> dict:
        return {
            "n_y": self.n_y,
            "n_u": self.n_u,
            "n_a": self.n_a,
            "n_b": self.n_b,
            "A": self.A.tolist(),
            "B": self.B.tolist(),
        }

    def __eq__(self, other):
        if not isinstance(other, ArxModel):
            return NotImplemented
        return (
            self.A.shape == other.A.shape
            and self.B.shape == other.B.shape
            and np.array_equal(self.A, other.A)
            and np.array_equal(self.B, other.B)
        )

    __hash__ = None


def arx_validate(raw: Mapping[str, Any] | ArxModel) -> ArxModel:
    """Build an :class:`ArxModel` from a JSON-like mapping, checking every shape.

    The mapping carries ``n_y, n_u, n_a, n_b`` and the lists ``A``, ``B`` of
    row-major matrices, lag 1 first. Declared sizes are checked against the
    matrices one by one so the error names the offending coefficient.
    """
    if isinstance(raw, ArxModel):
        return raw
    try:
        n_y, n_u, n_a, n_b = (int(raw[k]) for k in ("n_y", "n_u", "n_a", "n_b"))
        A_raw, B_raw = raw["A"], raw["B"]
    except KeyError as exc:
        raise DimensionMismatch(f"model is missing field {exc}") from None
    A = _as_matrix_stack(A_raw, "A")
    B = _as_matrix_stack(B_raw, "B")
    if len(A) != n_a or n_a < 1:
        raise DimensionMismatch(f"A: expected {n_a} matrices (n_a >= 1), got {len(A)}")
    if len(B) != n_b or n_b < 1:
        raise DimensionMismatch(f"B: expected {n_b} matrices (n_b >= 1), got {len(B)}")
    for i, m in enumerate(A, start=1):
        if m.shape != (n_y, n_y):
            raise DimensionMismatch(f"A({i}): expected {(n_y, n_y)}, got {m.shape}")
    for i, m in enumerate(B, start=1):
        if m.shape != (n_y, n_u):
            raise DimensionMismatch(f"B({i}): expected {(n_y, n_u)}, got {m.shape}")
    return ArxModel(np.stack(A), np.stack(B))


@dataclass(frozen=True, eq=False)
class ArxHistory:
    """Past data, newest first.

    ``past_y = [y_0, y_{-1}, ..., y_{1-n_a}]`` and
    ``past_u = [u_{-1}, u_{-2}, ..., u_{-n_b}]``. The input window has n_b
    entries: the ARX recursion needs the first n_b - 1 of them and the
    increment constraint needs ``u_{-1}`` even when n_b = 1.
    """

    past_y: np.ndarray
    past_u: np.ndarray

    def __post_init__(self):
        py = np.atleast_2d(np.asarray(self.past_y, dtype=float))
        pu = np.atleast_2d(np.asarray(self.past_u, dtype=float))
        if not (np.all(np.isfinite(py)) and np.all(np.isfinite(pu))):
            raise NonFiniteEntry("history contains non-finite values")
        py.setflags(write=False)
        pu.setflags(write=False)
        object.__setattr__(self, "past_y", py)
        object.__setattr__(self, "past_u", pu)

    def check(self, model: ArxModel) -> "ArxHistory":
        if self.past_y.shape != (model.n_a, model.n_y):
            raise DimensionMismatch(
                f"past_y: expected {(model.n_a, model.n_y)}, got {self.past_y.shape}"
            )
        if self.past_u.shape != (model.n_b, model.n_u):
            raise DimensionMismatch(
                f"past_u: expected {(model.n_b, model.n_u)}, got {self.past_u.shape}"
            )
        return self

    @classmethod
    def zeros(cls, model: ArxModel) -> "ArxHistory":
        return cls(np.zeros((model.n_a, model.n_y)), np.zeros((model.n_b, model.n_u)))

    def push(self, y_new, u_new) -> "ArxHistory":
        """History one step later, after applying ``u_new`` and measuring ``y_new``."""
        py = np.vstack([np.asarray(y_new, dtype=float)[None, :], self.past_y[:-1]])
        pu = np.vstack([np.asarray(u_new, dtype=float)[None, :], self.past_u[:-1]])
        return ArxHistory(py, pu)

    def to_dict(self) -> dict:
        return {"past_y": self.past_y.tolist(), "past_u": self.past_u.tolist()}


def arx_step(model: ArxModel, past_y, past_u) -> np.ndarray:
    """Next output from the n_a most recent outputs and n_b most recent inputs.

    ``past_y[0]`` is ``y_{t-1}`` and ``past_u[0]`` is ``u_{t-1}``.
    """
    py = np.asarray(past_y, dtype=float)
    pu = np.asarray(past_u, dtype=float)
    if py.shape != (model.n_a, model.n_y):
        raise DimensionMismatch(f"output window: expected {(model.n_a, model.n_y)}, got {py.shape}")
    if pu.shape != (model.n_b, model.n_u):
        raise DimensionMismatch(f"input window: expected {(model.n_b, model.n_u)}, got {pu.shape}")
    return np.einsum("kij,kj->i", model.A, py) + np.einsum("kij,kj->i", model.B, pu)


# -- time-varying generator ------------------------------------------------

_NOMINAL_A = (
    [[0.9, 0.1], [0.1, 0.9]],
    [[0.7, 0.1], [0.1, 0.7]],
    [[0.5, 0.1], [0.1, 0.5]],
    [[0.3, 0.1], [0.1, 0.3]],
)
_NOMINAL_B = (
    [[1.0, 0.5], [0.5, 1.0]],
    [[0.8, 0.4], [0.4, 0.8]],
    [[0.6, 0.3], [0.3, 0.6]],
    [[0.4, 0.2], [0.2, 0.4]],
)


def nominal_model() -> ArxModel:
    """The 2x2, fourth-order benchmark model used by the bundled scenarios."""
    return ArxModel(np.array(_NOMINAL_A), np.array(_NOMINAL_B))


@dataclass(frozen=True)
class TimeVaryingArxSpec:
    base: ArxModel = field(default_factory=nominal_model)
    perturbation_gain: float = 0.1
    period_divisor: float = 10.0


def perturbation_matrix(t: float, period_divisor: float) -> np.ndarray:
    s, c = np.sin(t / period_divisor), np.cos(t / period_divisor)
    return np.array([[s, c], [c, s]])


def tv_arx_at(spec: TimeVaryingArxSpec, t: float) -> ArxModel:
    """Every A(i) and B(i) shifted by ``gain * [[sin, cos], [cos, sin]](t / d)``."""
    base = spec.base
    if base.n_y != 2 or base.n_u != 2:
        raise UnsupportedShape(
            f"time-varying perturbation is 2x2; model has n_y={base.n_y}, n_u={base.n_u}"
        )
    if t < 0:
        raise ValueError("t must be non-negative")
    M = spec.perturbation_gain * perturbation_matrix(t, spec.period_divisor)
    return ArxModel(base.A + M, base.B + M)


# -- ReLU networks and LPV-ARX ---------------------------------------------


@dataclass(frozen=True, eq=False)
class ReluNetwork:
    """Feed-forward net; every layer but the last is followed by a ReLU."""

    layers: tuple

    def __post_init__(self):
        layers = []
        prev_out = None
        for l, (W, b) in enumerate(self.layers):
            W = np.atleast_2d(np.asarray(W, dtype=float))
            b = np.asarray(b, dtype=float).reshape(-1)
            if W.shape[0] != b.shape[0]:
                raise DimensionMismatch(f"layer {l}: W has {W.shape[0]} rows, b has {b.shape[0]}")
            if prev_out is not None and W.shape[1] != prev_out:
                raise DimensionMismatch(
                    f"layer {l}: expects {W.shape[1]} inputs, previous layer gives {prev_out}"
                )
            prev_out = W.shape[0]
            W.setflags(write=False)
            b.setflags(write=False)
            layers.append((W, b))
        if not layers:
            raise DimensionMismatch("network needs at least one layer")
        object.__setattr__(self, "layers", tuple(layers))

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def to_dict(self) -> dict:
        return {"layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.layers]}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ReluNetwork":
        return cls(tuple((layer["W"], layer["b"]) for layer in raw["layers"]))


def relu_net_eval(net: ReluNetwork, w, final_affine: bool = True) -> np.ndarray:
    """Evaluate the network at ``w``.

    With ``final_affine=False`` the ReLU is applied after the last layer too,
    which lets a single layer be used as a plain hidden layer.
    """
    v = np.asarray(w, dtype=float).reshape(-1)
    if v.shape[0] != net.input_dim:
        raise DimensionMismatch(f"network input: expected {net.input_dim}, got {v.shape[0]}")
    last = len(net.layers) - 1
    for l, (W, b) in enumerate(net.layers):
        v = W @ v + b
        if l < last or not final_affine:
            v = np.maximum(v, 0.0)
    return v


def activation_pattern(net: ReluNetwork, w) -> tuple:
    """Boolean masks of active hidden units; constant on each affine region."""
    v = np.asarray(w, dtype=float).reshape(-1)
    masks = []
    for W, b in net.layers[:-1]:
        pre = W @ v + b
        masks.append(tuple(pre > 0))
        v = np.maximum(pre, 0.0)
    return tuple(masks)


@dataclass(frozen=True, eq=False)
class LpvArxSpec:
    """One network per output row mapping the scheduling vector to that row
    of the stacked coefficient matrix ``[A(1) .. A(n_a) B(1) .. B(n_b)]``."""

    nets: tuple
    n_y: int
    n_u: int
    n_a: int
    n_b: int

    def __post_init__(self):
        nets = tuple(self.nets)
        if len(nets) != self.n_y:
            raise DimensionMismatch(f"expected {self.n_y} networks, got {len(nets)}")
        for r, net in enumerate(nets):
            if net.input_dim != self.schedule_dim:
                raise DimensionMismatch(
                    f"net {r}: input_dim {net.input_dim} != scheduling dim {self.schedule_dim}"
                )
            if net.output_dim != self.row_dim:
                raise DimensionMismatch(
                    f"net {r}: output_dim {net.output_dim} != coefficient row dim {self.row_dim}"
                )
        object.__setattr__(self, "nets", nets)

    @property
    def schedule_dim(self) -> int:
        return self.n_y * self.n_a + self.n_u * (self.n_b - 1)

    @property
    def row_dim(self) -> int:
        return self.n_y * self.n_a + self.n_u * self.n_b

    def to_dict(self) -> dict:
        return {
            "n_y": self.n_y,
            "n_u": self.n_u,
            "n_a": self.n_a,
            "n_b": self.n_b,
            "nets": [net.to_dict() for net in self.nets],
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "LpvArxSpec":
        return cls(
            tuple(ReluNetwork.from_dict(n) for n in raw["nets"]),
            int(raw["n_y"]),
            int(raw["n_u"]),
            int(raw["n_a"]),
            int(raw["n_b"]),
        )


def scheduling_vector(past_y, past_u) -> np.ndarray:
    """``[y_{t-1}; ..; y_{t-n_a}; u_{t-2}; ..; u_{t-n_b}]``.

    ``u_{t-1}`` is left out so the one-step map stays affine in the input
    being decided.
    """
    py = np.asarray(past_y, dtype=float)
    pu = np.asarray(past_u, dtype=float)
    return np.concatenate([py.reshape(-1), pu[1:].reshape(-1)])


def pack_coefficients(model: ArxModel) -> np.ndarray:
    """Stacked ``[A(1) .. A(n_a) B(1) .. B(n_b)]`` as an n_y x row_dim array."""
    return np.hstack(list(model.A) + list(model.B))


def _unpack_coefficients(rows: np.ndarray, n_y, n_u, n_a, n_b) -> ArxModel:
    A = rows[:, : n_y * n_a].reshape(n_y, n_a, n_y).transpose(1, 0, 2)
    B = rows[:, n_y * n_a :].reshape(n_y, n_b, n_u).transpose(1, 0, 2)
    return ArxModel(A, B)


def lpv_arx_at(spec: LpvArxSpec, w) -> ArxModel:
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape[0] != spec.schedule_dim:
        raise DimensionMismatch(f"scheduling vector: expected {spec.schedule_dim}, got {w.shape[0]}")
    rows = np.vstack([relu_net_eval(net, w) for net in spec.nets])
    return _unpack_coefficients(rows, spec.n_y, spec.n_u, spec.n_a, spec.n_b)


def padded_nominal_model(n_a: int = 6, n_b: int = 6) -> ArxModel:
    """Nominal model with the highest lag repeated up to the requested order."""
    base = nominal_model()
    A = [base.A[min(i, base.n_a - 1)] for i in range(n_a)]
    B = [base.B[min(i, base.n_b - 1)] for i in range(n_b)]
    return ArxModel(np.stack(A), np.stack(B))


def random_lpv_spec(
    seed: int = 0,
    n_a: int = 6,
    n_b: int = 6,
    hidden_factor: int = 3,
    scale: float = 0.1,
    output_bias: ArxModel | None = None,
) -> LpvArxSpec:
    """Two-hidden-layer ReLU LPV-ARX generator.

    Output biases hold the coefficients of ``output_bias`` (by default the
    nominal model padded to the requested order); all other weights and
    biases are drawn uniformly from ``[0, scale]``.
    """
    if output_bias is None:
        output_bias = padded_nominal_model(n_a, n_b)
    n_y, n_u = output_bias.n_y, output_bias.n_u
    if (output_bias.n_a, output_bias.n_b) != (n_a, n_b):
        raise DimensionMismatch("output_bias model order does not match n_a, n_b")
    rng = np.random.default_rng(seed)
    d_in = n_y * n_a + n_u * (n_b - 1)
    d_out = n_y * n_a + n_u * n_b
    hidden = hidden_factor * d_in
    rows = pack_coefficients(output_bias)
    nets = []
    for r in range(n_y):
        layers = (
            (rng.uniform(0.0, scale, (hidden, d_in)), rng.uniform(0.0, scale, hidden)),
            (rng.uniform(0.0, scale, (hidden, hidden)), rng.uniform(0.0, scale, hidden)),
            (rng.uniform(0.0, scale, (d_out, hidden)), rows[r].copy()),
        )
        nets.append(ReluNetwork(layers))
    return LpvArxSpec(tuple(nets), n_y, n_u, n_a, n_b)


