"""Small differentiable kernel: dense layers, an LSTM cell, RMSProp and a
finite-difference gradient checker.

Every forward function accepts a single vector of shape ``(d,)`` or a batch of
row vectors of shape ``(B, d)``. Parameter gradients are summed over the batch.
A parameter set is a plain ordered ``dict`` mapping names to float64 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Sequence, Tuple

import numpy as np
from scipy.special import expit

ParameterSet = Dict[str, np.ndarray]

ACTIVATIONS = ("relu", "softmax", "linear", "tanh", "sigmoid")
LSTM_GATES = ("i", "f", "g", "o")


class ShapeError(ValueError):
    """Raised on inconsistent dimensions; ``layer`` names the offending layer."""

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str, index: tuple):
        super().__init__(f"non-finite gradient in {name!r} at index {index}")
        self.name = name
        self.index = index


class GradCheckError(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# elementwise helpers


def sigmoid(z: np.ndarray) -> np.ndarray:
    return expit(np.asarray(z, dtype=np.float64))


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "softmax":
        return softmax(z)
    if kind == "linear":
        return z
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return sigmoid(z)
    raise ValueError(f"unknown activation {kind!r}")


def _activate_backward(kind: str, z: np.ndarray, y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return dy * (z > 0)
    if kind == "softmax":
        return y * (dy - np.sum(dy * y, axis=-1, keepdims=True))
    if kind == "linear":
        return dy
    if kind == "tanh":
        return dy * (1.0 - y * y)
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# parameter construction


def mlp_shapes(sizes: Sequence[int]) -> Dict[str, tuple]:
    """Shape spec for a chain of dense layers ``sizes[0] -> ... -> sizes[-1]``."""
    shapes: Dict[str, tuple] = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        shapes[f"W{i}"] = (fan_out, fan_in)
        shapes[f"b{i}"] = (fan_out,)
    return shapes


def lstm_shapes(input_dim: int, hidden_dim: int) -> Dict[str, tuple]:
    shapes: Dict[str, tuple] = {}
    for g in LSTM_GATES:
        shapes[f"W_{g}"] = (hidden_dim, input_dim + hidden_dim)
    for g in LSTM_GATES:
        shapes[f"b_{g}"] = (hidden_dim,)
    return shapes


def init_params(shapes: Mapping[str, tuple], rng: np.random.Generator) -> ParameterSet:
    """Uniform fan-based (Glorot) weights and zero biases.

    Matrices ``(out, in)`` are drawn from ``U(-r, r)`` with
    ``r = sqrt(6 / (in + out))``; 1-d arrays are zero.
    """
    params: ParameterSet = {}
    for name, shape in shapes.items():
        shape = tuple(int(s) for s in shape)
        if not shape or any(s <= 0 for s in shape):
            raise ShapeError(f"parameter {name!r} has a zero-sized dimension: {shape}")
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        elif len(shape) == 2:
            fan_out, fan_in = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            raise ShapeError(f"parameter {name!r} must be 1-d or 2-d, got {shape}")
    return params


def zeros_like(params: Mapping[str, np.ndarray]) -> ParameterSet:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: Mapping[str, np.ndarray]) -> ParameterSet:
    return {k: v.copy() for k, v in params.items()}


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


@dataclass
class GradStore:
    """Accumulates gradients for one parameter set across several samples."""

    grads: ParameterSet
    count: int = 0

    @classmethod
    def like(cls, params: Mapping[str, np.ndarray]) -> "GradStore":
        return cls(zeros_like(params))

    def add(self, grads: Mapping[str, np.ndarray], weight: float = 1.0) -> None:
        if grads.keys() != self.grads.keys():
            raise ShapeError("gradient keys do not match the store")
        for k, g in grads.items():
            if g.shape != self.grads[k].shape:
                raise ShapeError(f"gradient {k!r} has shape {g.shape}, expected {self.grads[k].shape}")
            self.grads[k] += weight * g
        self.count += 1

    def mean(self) -> ParameterSet:
        n = max(self.count, 1)
        return {k: g / n for k, g in self.grads.items()}

    def zero(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)
        self.count = 0


# ---------------------------------------------------------------------------
# multilayer perceptron


def n_layers(params: Mapping[str, np.ndarray]) -> int:
    n = 0
    while f"W{n}" in params:
        n += 1
    return n


@dataclass
class MlpTape:
    activations: Tuple[str, ...]
    inputs: List[np.ndarray]
    pre: List[np.ndarray]
    outputs: List[np.ndarray]


def mlp_forward(params: Mapping[str, np.ndarray], activations: Sequence[str], x: np.ndarray):
    """Evaluate a dense network. Returns ``(y, tape)``."""
    depth = n_layers(params)
    if depth != len(activations):
        raise ShapeError(f"{depth} layers but {len(activations)} activations")
    a = np.asarray(x, dtype=np.float64)
    tape = MlpTape(tuple(activations), [], [], [])
    for i, kind in enumerate(activations):
        W, b = params[f"W{i}"], params[f"b{i}"]
        if a.shape[-1] != W.shape[1]:
            raise ShapeError(
                f"layer {i}: input has {a.shape[-1]} features, weights expect {W.shape[1]}", layer=i
            )
        if b.shape != (W.shape[0],):
            raise ShapeError(f"layer {i}: bias shape {b.shape} does not match {W.shape}", layer=i)
        z = a @ W.T + b
        y = _activate(kind, z)
        tape.inputs.append(a)
        tape.pre.append(z)
        tape.outputs.append(y)
        a = y
    return a, tape


def mlp_backward(params: Mapping[str, np.ndarray], tape: MlpTape, dL_dy: np.ndarray):
    """Reverse pass for :func:`mlp_forward`. Returns ``(grads, dL_dx)``."""
    if n_layers(params) != len(tape.activations):
        raise ShapeError("tape does not match parameter set")
    grads: ParameterSet = {}
    d = np.asarray(dL_dy, dtype=np.float64)
    if d.shape != tape.outputs[-1].shape:
        raise ShapeError(f"cotangent shape {d.shape} does not match output {tape.outputs[-1].shape}")
    for i in reversed(range(len(tape.activations))):
        W = params[f"W{i}"]
        if tape.inputs[i].shape[-1] != W.shape[1]:
            raise ShapeError(f"layer {i}: tape does not match weights", layer=i)
        dz = _activate_backward(tape.activations[i], tape.pre[i], tape.outputs[i], d)
        a = tape.inputs[i]
        if dz.ndim == 1:
            grads[f"W{i}"] = np.outer(dz, a)
            grads[f"b{i}"] = dz.copy()
        else:
            grads[f"W{i}"] = dz.T @ a
            grads[f"b{i}"] = dz.sum(axis=0)
        d = dz @ W
    ordered = {k: grads[k] for k in params}
    return ordered, d


# ---------------------------------------------------------------------------
# LSTM cell


@dataclass
class LstmTape:
    z: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    tanh_c: np.ndarray


def lstm_cell_forward(params: Mapping[str, np.ndarray], h_prev: np.ndarray, c_prev: np.ndarray, x: np.ndarray):
    """One LSTM step. Returns ``(h, c, tape)``.

    Gates read the concatenation ``[x; h_prev]``:
    ``c = f * c_prev + i * g`` and ``h = o * tanh(c)``.
    """
    W_i = params["W_i"]
    hidden = W_i.shape[0]
    input_dim = W_i.shape[1] - hidden
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    if x.shape[-1] != input_dim:
        raise ShapeError(f"lstm input has {x.shape[-1]} features, cell expects {input_dim}")
    if h_prev.shape[-1] != hidden or c_prev.shape[-1] != hidden:
        raise ShapeError(f"lstm state must have {hidden} features")
    if h_prev.shape != c_prev.shape or h_prev.shape[:-1] != x.shape[:-1]:
        raise ShapeError("lstm state and input batch shapes disagree")
    z = np.concatenate([x, h_prev], axis=-1)
    i = sigmoid(z @ W_i.T + params["b_i"])
    f = sigmoid(z @ params["W_f"].T + params["b_f"])
    g = np.tanh(z @ params["W_g"].T + params["b_g"])
    o = sigmoid(z @ params["W_o"].T + params["b_o"])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, LstmTape(z, c_prev, i, f, g, o, tanh_c)


def lstm_gate_cotangents(tape: LstmTape, dL_dh: np.ndarray, dL_dc: np.ndarray):
    """Cotangents of the four gate pre-activations, plus ``dL/dc_prev``."""
    dh = np.asarray(dL_dh, dtype=np.float64)
    dc_in = np.asarray(dL_dc, dtype=np.float64)
    if dh.shape != tape.o.shape or dc_in.shape != tape.o.shape:
        raise ShapeError(f"cotangent shapes {dh.shape}/{dc_in.shape} do not match state {tape.o.shape}")
    do = dh * tape.tanh_c
    dc = dc_in + dh * tape.o * (1.0 - tape.tanh_c ** 2)
    pre = {
        "i": dc * tape.g * tape.i * (1.0 - tape.i),
        "f": dc * tape.c_prev * tape.f * (1.0 - tape.f),
        "g": dc * tape.i * (1.0 - tape.g ** 2),
        "o": do * tape.o * (1.0 - tape.o),
    }
    return pre, dc * tape.f


def lstm_cell_backward(params: Mapping[str, np.ndarray], tape: LstmTape, dL_dh: np.ndarray,
                       dL_dc: np.ndarray, per_sample: bool = False):
    """Reverse pass for one cell step.

    Returns ``(grads, dL_dh_prev, dL_dc_prev, dL_dx)``. With ``per_sample`` and
    batched input, each gradient carries a leading batch axis instead of being
    summed.
    """
    hidden = params["W_i"].shape[0]
    pre, dc_prev = lstm_gate_cotangents(tape, dL_dh, dL_dc)
    grads: ParameterSet = {}
    dz = np.zeros_like(tape.z)
    for gname in LSTM_GATES:
        dpre = pre[gname]
        if dpre.ndim == 1:
            grads[f"W_{gname}"] = np.outer(dpre, tape.z)
            grads[f"b_{gname}"] = dpre.copy()
        elif per_sample:
            grads[f"W_{gname}"] = dpre[:, :, None] * tape.z[:, None, :]
            grads[f"b_{gname}"] = dpre.copy()
        else:
            grads[f"W_{gname}"] = dpre.T @ tape.z
            grads[f"b_{gname}"] = dpre.sum(axis=0)
        dz += dpre @ params[f"W_{gname}"]
    input_dim = tape.z.shape[-1] - hidden
    dx = dz[..., :input_dim]
    dh_prev = dz[..., input_dim:]
    ordered = {k: grads[k] for k in params}
    return ordered, dh_prev, dc_prev, dx


# ---------------------------------------------------------------------------
# RMSProp


@dataclass
class RmsPropState:
    learning_rate: float
    decay: float = 0.9
    epsilon: float = 1e-8
    accumulators: ParameterSet = field(default_factory=dict)
    steps: int = 0

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        if self.epsilon <= 0.0 or self.learning_rate < 0.0:
            raise ValueError("epsilon must be positive and learning_rate nonnegative")


def rmsprop_step(params: ParameterSet, grads: Mapping[str, np.ndarray], state: RmsPropState):
    """Descent step in place: ``acc <- d*acc + (1-d)*g**2``, ``p <- p - lr*g/sqrt(acc+eps)``.

    The whole step is rejected if any gradient entry is non-finite.
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient {name!r} has shape {g.shape}, parameter has {p.shape}")
        bad = ~np.isfinite(g)
        if bad.any():
            raise NonFiniteGradient(name, tuple(int(i) for i in np.argwhere(bad)[0]))
    for name, p in params.items():
        g = grads[name]
        acc = state.accumulators.get(name)
        if acc is None:
            acc = state.accumulators[name] = np.zeros_like(p)
        acc *= state.decay
        acc += (1.0 - state.decay) * g * g
        p -= state.learning_rate * g / np.sqrt(acc + state.epsilon)
    state.steps += 1
    return params, state


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    errors: Dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def relative_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def numeric_grad(loss: Callable[[], float], array: np.ndarray, step: float = 1e-5, name: str = "") -> np.ndarray:
    """Central differences of ``loss()`` with respect to ``array`` (perturbed in place)."""
    out = np.zeros_like(array)
    flat = array.reshape(-1)
    grad_flat = out.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        up = loss()
        flat[j] = orig - step
        down = loss()
        flat[j] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise GradCheckError(f"non-finite loss while perturbing {name!r}[{j}]")
        grad_flat[j] = (up - down) / (2.0 * step)
    return out


def grad_check(closure: Callable[[], Tuple[float, Mapping[str, np.ndarray]]],
               params: Mapping[str, np.ndarray], tolerance: float = 1e-4,
               step: float = 1e-5, loss: Callable[[], float] | None = None) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``closure()`` must return ``(loss, grads)`` for the current contents of
    ``params``; grads may cover any subset of ``params``' keys. An optional
    forward-only ``loss()`` computing the same value is used for the perturbed
    evaluations. The report holds the max relative error per parameter block.
    """
    loss0, analytic = closure()
    if not np.isfinite(loss0):
        raise GradCheckError("non-finite loss at the unperturbed point")
    analytic = {k: np.array(v, dtype=np.float64, copy=True) for k, v in analytic.items()}

    def loss_only() -> float:
        return float(loss()) if loss is not None else float(closure()[0])

    errors: Dict[str, float] = {}
    for name, a in analytic.items():
        n = numeric_grad(loss_only, params[name], step, name)
        errors[name] = float(relative_error(a, n).max()) if a.size else 0.0
    return GradCheckReport(errors, tolerance)
