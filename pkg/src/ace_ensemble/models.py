"""ReLU multilayer perceptrons with hand-written forward/backward passes.

Weights are stored ``(out, in)`` so a layer computes ``x @ W.T + b`` on a
batch ``x`` of shape ``(n, in)``.  Hidden layers use ReLU (subgradient 0 at
0); the last layer is linear unless ``relu_output`` is set, which is what a
shared SMOC trunk uses.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import ConfigError, DimensionError, InvalidInputError, InvalidStateError
from .numerics import SeededRng


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple
    relu_output: bool = False

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ConfigError(f"invalid layer sizes {self.layer_sizes!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(s[i] * s[i + 1] + s[i + 1] for i in range(len(s) - 1))


@dataclass
class MlpParams:
    spec: MlpSpec
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    # bumped by every optimizer step; caches remember the version they saw
    version: int = 0

    def __post_init__(self):
        s = self.spec.layer_sizes
        if len(self.weights) != self.spec.n_layers or len(self.biases) != self.spec.n_layers:
            raise DimensionError("layer count does not match spec")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (s[i + 1], s[i]) or b.shape != (s[i + 1],):
                raise DimensionError(f"layer {i}: W{W.shape}, b{b.shape} vs spec {s}")

    @property
    def n_params(self) -> int:
        return self.spec.n_params

    def arrays(self) -> List[np.ndarray]:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, [W.copy() for W in self.weights],
                         [b.copy() for b in self.biases], self.version)

    def equals(self, other: "MlpParams") -> bool:
        """Bitwise equality of all parameter arrays."""
        return self.spec == other.spec and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


@dataclass
class ForwardCache:
    params_id: int
    version: int
    inputs: List[np.ndarray]      # input to each layer
    pre: List[np.ndarray]         # pre-activations of each layer


def init_mlp(spec: MlpSpec, rng: SeededRng) -> MlpParams:
    """Uniform weights in +-sqrt(6 / fan_in), zero biases."""
    weights, biases = [], []
    s = spec.layer_sizes
    for i in range(spec.n_layers):
        bound = np.sqrt(6.0 / s[i])
        weights.append(rng.uniform(-bound, bound, size=(s[i + 1], s[i])))
        biases.append(np.zeros(s[i + 1]))
    return MlpParams(spec, weights, biases)


def zero_mlp(spec: MlpSpec) -> MlpParams:
    s = spec.layer_sizes
    return MlpParams(spec, [np.zeros((s[i + 1], s[i])) for i in range(spec.n_layers)],
                     [np.zeros(s[i + 1]) for i in range(spec.n_layers)])


def _relu_layer(params: MlpParams, i: int) -> bool:
    return i < params.spec.n_layers - 1 or params.spec.relu_output


def mlp_forward(params: MlpParams, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.layer_sizes[0]:
        raise DimensionError(
            f"input of shape {x.shape} does not match width {params.spec.layer_sizes[0]}")
    inputs, pre = [], []
    a = x
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ W.T + b
        pre.append(z)
        a = np.maximum(z, 0.0) if _relu_layer(params, i) else z
    return a, ForwardCache(id(params), params.version, inputs, pre)


def mlp_backward(params: MlpParams, cache: ForwardCache, grad_out, need_input_grad: bool = True):
    """Backpropagate per-sample output gradients.

    ``grad_out[i]`` is d loss_i / d output_i.  Returned parameter gradients
    are those of the batch-mean loss (1/n) sum_i loss_i.  The returned input
    gradient is per-sample (row i is d loss_i / d x_i, not divided by n), so
    it can be fed directly as ``grad_out`` of an upstream network.  It is
    ``None`` when ``need_input_grad`` is false.
    """
    if cache.params_id != id(params) or cache.version != params.version:
        raise InvalidStateError("forward cache is stale or belongs to other parameters")
    g = np.asarray(grad_out, dtype=np.float64)
    n = cache.inputs[0].shape[0]
    if g.shape != cache.pre[-1].shape:
        raise DimensionError(f"output gradient {g.shape} vs outputs {cache.pre[-1].shape}")
    grad_W: List[Optional[np.ndarray]] = [None] * params.spec.n_layers
    grad_b: List[Optional[np.ndarray]] = [None] * params.spec.n_layers
    for i in reversed(range(params.spec.n_layers)):
        if _relu_layer(params, i):
            g = g * (cache.pre[i] > 0)
        grad_W[i] = g.T @ cache.inputs[i] / n
        grad_b[i] = g.sum(axis=0) / n
        g = g @ params.weights[i] if (i > 0 or need_input_grad) else None
    grads = MlpParams(params.spec, grad_W, grad_b)
    return grads, g


class Optimizer:
    """First-order optimizer with per-parameter state.

    ``mode`` is ``"sgd"`` (plain), ``"momentum"`` (heavy ball,
    v <- m v + g; theta <- theta - lr v) or ``"adam"`` (bias-corrected).
    Updates are applied in place and bump ``params.version``.
    """

    MODES = ("sgd", "momentum", "adam")

    def __init__(self, mode="sgd", lr=0.1, momentum=0.9, beta1=0.9, beta2=0.999, eps=1e-8):
        if mode not in self.MODES:
            raise ConfigError(f"unknown optimizer {mode!r}; expected one of {self.MODES}")
        if lr < 0 or not 0 <= momentum < 1 or not 0 <= beta1 < 1 or not 0 <= beta2 < 1 or eps <= 0:
            raise ConfigError("optimizer hyperparameters out of range")
        self.mode = mode
        self.lr = lr
        self.momentum = momentum
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Optional[List[np.ndarray]] = None
        self.v: Optional[List[np.ndarray]] = None

    def step(self, params: MlpParams, grads: MlpParams):
        ps, gs = params.arrays(), grads.arrays()
        if len(ps) != len(gs) or any(p.shape != g.shape for p, g in zip(ps, gs)):
            raise DimensionError("gradient shapes do not match parameters")
        self.t += 1
        if self.mode == "sgd":
            for p, g in zip(ps, gs):
                p -= self.lr * g
        elif self.mode == "momentum":
            if self.m is None:
                self.m = [np.zeros_like(p) for p in ps]
            for p, g, m in zip(ps, gs, self.m):
                m *= self.momentum
                m += g
                p -= self.lr * m
        else:
            if self.m is None:
                self.m = [np.zeros_like(p) for p in ps]
                self.v = [np.zeros_like(p) for p in ps]
            c1 = 1.0 - self.beta1 ** self.t
            c2 = 1.0 - self.beta2 ** self.t
            for p, g, m, v in zip(ps, gs, self.m, self.v):
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        params.version += 1


# Checkpoint layout (all integers uint32, all floats float64, little-endian):
#   magic  b"ACEMLP01"
#   n_sizes, sizes[n_sizes], relu_output
#   for each layer: W row-major (out*in), then b (out)
MLP_MAGIC = b"ACEMLP01"


def write_mlp(f, params: MlpParams):
    sizes = params.spec.layer_sizes
    f.write(MLP_MAGIC)
    f.write(struct.pack(f"<{len(sizes) + 2}I", len(sizes), *sizes, int(params.spec.relu_output)))
    for arr in params.arrays():
        f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(f, n):
    data = f.read(n)
    if len(data) != n:
        raise InvalidInputError("checkpoint truncated")
    return data


def read_mlp(f) -> MlpParams:
    if _read_exact(f, 8) != MLP_MAGIC:
        raise InvalidInputError("not an MLP checkpoint (bad magic)")
    (count,) = struct.unpack("<I", _read_exact(f, 4))
    *sizes, relu_out = struct.unpack(f"<{count + 1}I", _read_exact(f, 4 * (count + 1)))
    spec = MlpSpec(tuple(sizes), bool(relu_out))
    weights, biases = [], []
    for i in range(spec.n_layers):
        o, k = sizes[i + 1], sizes[i]
        weights.append(np.frombuffer(_read_exact(f, 8 * o * k), dtype="<f8").reshape(o, k).astype(np.float64))
        biases.append(np.frombuffer(_read_exact(f, 8 * o), dtype="<f8").astype(np.float64))
    return MlpParams(spec, weights, biases)


def save_mlp(path, params: MlpParams):
    with open(path, "wb") as f:
        write_mlp(f, params)


def load_mlp(path) -> MlpParams:
    with open(Path(path), "rb") as f:
        return read_mlp(f)


def optimizer_step(params: MlpParams, grads: MlpParams, state: Optimizer) -> MlpParams:
    state.step(params, grads)
    return params
