"""Stacked Mixture Of Classifiers: one shared trunk, K affine+softmax heads.

Each head k is trained with its own ACE loss.  The trunk needs the mean of
the K per-head losses' gradients; since every head reaches the trunk through
the same output Z, the mean of the K head gradients w.r.t. Z is pushed back
through the trunk once instead of running K full backward passes.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, InvalidInputError, InvalidStateError
from .data import BatchPlan, Dataset, batch_iter
from .losses import AceCoefficients, ace_member_grads, ace_member_losses
from .models import (ForwardCache, MlpParams, MlpSpec, Optimizer, init_mlp,
                     mlp_backward, mlp_forward, read_mlp, write_mlp)
from .numerics import SeededRng, softmax


@dataclass
class SmocState:
    trunk: MlpParams
    heads: List[MlpParams]
    coeff: AceCoefficients
    trunk_optimizer: Optimizer
    head_optimizers: List[Optimizer]
    step: int = 0
    # instrumentation: the trunk is run once forward and once backward per step
    trunk_forward_calls: int = 0
    trunk_backward_calls: int = 0
    last_losses: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        K = len(self.heads)
        if K < 1 or len(self.head_optimizers) != K or self.coeff.K != K:
            raise ConfigError("need K >= 1 heads, one optimizer each, matching coeff.K")
        if not self.trunk.spec.relu_output:
            raise ConfigError("trunk spec must apply ReLU to its output")
        width = self.trunk.spec.layer_sizes[-1]
        labels = {h.spec.layer_sizes[-1] for h in self.heads}
        if any(h.spec.n_layers != 1 or h.spec.layer_sizes[0] != width for h in self.heads):
            raise ConfigError(f"every head must be a single affine layer from width {width}")
        if len(labels) != 1:
            raise ConfigError("heads disagree on the label count")

    @property
    def K(self) -> int:
        return len(self.heads)

    @property
    def n_labels(self) -> int:
        return self.heads[0].spec.layer_sizes[-1]


def make_smoc(trunk_sizes: Sequence[int], n_labels: int, coeff: AceCoefficients,
              rng: SeededRng, optimizer: Callable[[], Optimizer] = Optimizer) -> SmocState:
    """Trunk from ``rng.child("trunk")``, head k from ``rng.child("head", k)``."""
    trunk = init_mlp(MlpSpec(tuple(trunk_sizes), relu_output=True), rng.child("trunk"))
    head_spec = MlpSpec((trunk_sizes[-1], n_labels))
    heads = [init_mlp(head_spec, rng.child("head", k)) for k in range(coeff.K)]
    return SmocState(trunk, heads, coeff, optimizer(), [optimizer() for _ in heads])


def head_param_count(state: SmocState) -> int:
    return state.heads[0].n_params


def added_param_count(state: SmocState) -> int:
    """Parameters beyond a single-head network: |head| * (K - 1)."""
    return head_param_count(state) * (state.K - 1)


class TrunkGradAccumulator:
    """Running sum of per-head gradients w.r.t. the trunk output."""

    def __init__(self, K: int):
        if K < 1:
            raise ConfigError("K must be >= 1")
        self.K = K
        self.count = 0
        self.total: Optional[np.ndarray] = None

    def add(self, grad):
        grad = np.asarray(grad, dtype=np.float64)
        if self.count >= self.K:
            raise InvalidStateError(f"more than K={self.K} head contributions")
        if self.total is None:
            self.total = grad.copy()
        elif grad.shape != self.total.shape:
            raise DimensionError(f"contribution {grad.shape} vs {self.total.shape}")
        else:
            self.total += grad
        self.count += 1

    def finalize(self) -> np.ndarray:
        if self.count != self.K:
            raise InvalidStateError(f"{self.count} contributions, expected {self.K}")
        return self.total / self.K


def aggregate_trunk_grad(per_head_z_grads, acc: Optional[TrunkGradAccumulator] = None) -> np.ndarray:
    """Mean over heads, summed in head order then divided by K."""
    per_head_z_grads = list(per_head_z_grads)
    if acc is None:
        acc = TrunkGradAccumulator(len(per_head_z_grads))
    for g in per_head_z_grads:
        acc.add(g)
    return acc.finalize()


@dataclass
class SmocCache:
    trunk: ForwardCache
    features: np.ndarray
    heads: List[ForwardCache]


def smoc_forward(state: SmocState, x):
    """Returns (q_all of shape (K, n, L), SmocCache)."""
    Z, trunk_cache = mlp_forward(state.trunk, x)
    state.trunk_forward_calls += 1
    logits, head_caches = [], []
    for head in state.heads:
        z, c = mlp_forward(head, Z)
        logits.append(z)
        head_caches.append(c)
    q_all = np.stack([softmax(z) for z in logits])
    return q_all, SmocCache(trunk_cache, Z, head_caches)


def smoc_train_step(state: SmocState, x, p) -> np.ndarray:
    """One SMOC step on a batch; returns the K batch-mean head losses."""
    p = np.asarray(p, dtype=np.float64)
    q_all, cache = smoc_forward(state, x)
    if q_all.shape[1:] != p.shape:
        raise DimensionError(f"labels {p.shape} vs predictions {q_all.shape[1:]}")
    grads = ace_member_grads(p, q_all, state.coeff)
    losses = ace_member_losses(p, q_all, state.coeff).mean(axis=1)

    acc = TrunkGradAccumulator(state.K)
    head_grads = []
    for k, head in enumerate(state.heads):
        hg, zg = mlp_backward(head, cache.heads[k], grads[k])
        head_grads.append(hg)
        acc.add(zg)
    trunk_grads, _ = mlp_backward(state.trunk, cache.trunk, acc.finalize(), need_input_grad=False)
    state.trunk_backward_calls += 1

    state.trunk_optimizer.step(state.trunk, trunk_grads)
    for k, head in enumerate(state.heads):
        state.head_optimizers[k].step(head, head_grads[k])
    state.step += 1
    state.last_losses = losses
    return losses


def train_smoc(state: SmocState, data: Dataset, epochs: int, batch_size: int, seed: int):
    plan = BatchPlan(batch_size, SeededRng(seed).child("shuffle"), drop_last=False)
    for epoch in range(epochs):
        for x, p in batch_iter(data, plan, epoch):
            smoc_train_step(state, x, p)
    return state


def smoc_predict(state: SmocState, x) -> np.ndarray:
    q_all, _ = smoc_forward(state, x)
    return np.tensordot(state.coeff.weights(), q_all, axes=1)


def smoc_member_probs(state: SmocState, x) -> np.ndarray:
    return smoc_forward(state, x)[0]


# Checkpoint: magic b"ACESMOC1", uint32 K (little-endian), the trunk in the
# MLP checkpoint format, then K heads in the same format.
SMOC_MAGIC = b"ACESMOC1"


def save_smoc(path, state: SmocState):
    with open(path, "wb") as f:
        f.write(SMOC_MAGIC)
        f.write(struct.pack("<I", state.K))
        write_mlp(f, state.trunk)
        for head in state.heads:
            write_mlp(f, head)


def load_smoc(path, coeff: AceCoefficients, optimizer: Callable[[], Optimizer] = Optimizer) -> SmocState:
    with open(Path(path), "rb") as f:
        if f.read(8) != SMOC_MAGIC:
            raise InvalidInputError("not a SMOC checkpoint (bad magic)")
        raw = f.read(4)
        if len(raw) != 4:
            raise InvalidInputError("checkpoint truncated")
        (K,) = struct.unpack("<I", raw)
        trunk = read_mlp(f)
        heads = [read_mlp(f) for _ in range(K)]
    return SmocState(trunk, heads, coeff, optimizer(), [optimizer() for _ in heads])
