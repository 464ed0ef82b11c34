"""Simultaneous training of K separate networks under ACE, and its NCL twin.

One training step has two phases.  First every member predicts on the same
batch; those predictions are frozen.  Then each member's loss and logit
gradient are formed from the frozen predictions, backpropagated through that
member alone and applied by that member's optimizer.  Because phase 2 only
reads frozen values, the order of member updates does not matter.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .data import BatchPlan, Dataset, batch_iter
from .errors import ConfigError, DimensionError, InvalidInputError
from .losses import (AceCoefficients, NclCoefficients, ace_member_grads,
                     ace_member_losses, cross_entropy, ncl_grad, ncl_loss,
                     softmax_ce_grad)
from .models import (MlpParams, MlpSpec, Optimizer, init_mlp, mlp_backward,
                     mlp_forward, read_mlp, write_mlp)
from .numerics import SeededRng, softmax


@dataclass
class EnsembleState:
    models: List[MlpParams]
    optimizers: List[Optimizer]
    coeff: AceCoefficients
    step: int = 0
    last_losses: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        K = len(self.models)
        if K < 1 or len(self.optimizers) != K:
            raise ConfigError("need one optimizer per model and at least one model")
        if self.coeff.K != K:
            raise ConfigError(f"coeff.K={self.coeff.K} but {K} models given")
        widths = {m.spec.layer_sizes[-1] for m in self.models}
        if len(widths) != 1:
            raise ConfigError(f"members disagree on the label count: {sorted(widths)}")

    @property
    def K(self) -> int:
        return len(self.models)


def make_ensemble(specs, coeff: AceCoefficients, rng: SeededRng,
                  optimizer: Callable[[], Optimizer] = Optimizer) -> EnsembleState:
    """Build K members; ``specs`` is one MlpSpec or a list of K.

    Member k is initialised from ``rng.child("init", k)``.
    """
    if isinstance(specs, MlpSpec):
        specs = [specs] * coeff.K
    if len(specs) != coeff.K:
        raise ConfigError(f"expected {coeff.K} specs, got {len(specs)}")
    models = [init_mlp(s, rng.child("init", k)) for k, s in enumerate(specs)]
    return EnsembleState(models, [optimizer() for _ in models], coeff)


def member_probs(models: Sequence[MlpParams], x) -> np.ndarray:
    return np.stack([softmax(mlp_forward(m, x)[0]) for m in models])


def ace_train_step(state: EnsembleState, x, p, order: Optional[Sequence[int]] = None) -> np.ndarray:
    """One ACE step on a shared batch; returns the K batch-mean losses e^k."""
    p = np.asarray(p, dtype=np.float64)
    outs = [mlp_forward(m, x) for m in state.models]
    q_all = np.stack([softmax(z) for z, _ in outs])
    if q_all.shape[1:] != p.shape:
        raise DimensionError(f"labels {p.shape} vs predictions {q_all.shape[1:]}")
    grads = ace_member_grads(p, q_all, state.coeff)
    losses = ace_member_losses(p, q_all, state.coeff).mean(axis=1)

    for k in (range(state.K) if order is None else order):
        g, _ = mlp_backward(state.models[k], outs[k][1], grads[k], need_input_grad=False)
        state.optimizers[k].step(state.models[k], g)
    state.step += 1
    state.last_losses = losses
    return losses


def independent_train_step(state: EnsembleState, batches) -> np.ndarray:
    """Vanilla CE step with a separate batch per member (lambda must be 0)."""
    if state.coeff.lam != 0:
        raise ConfigError("independent batches are only valid for lambda = 0")
    if len(batches) != state.K:
        raise ConfigError(f"need {state.K} batches, got {len(batches)}")
    losses = np.empty(state.K)
    for k, (x, p) in enumerate(batches):
        m = state.models[k]
        z, cache = mlp_forward(m, x)
        losses[k] = cross_entropy(p, softmax(z)).mean()
        g, _ = mlp_backward(m, cache, softmax_ce_grad(p, z), need_input_grad=False)
        state.optimizers[k].step(m, g)
    state.step += 1
    state.last_losses = losses
    return losses


def ensemble_predict(state: EnsembleState, x) -> np.ndarray:
    """Average of member softmax outputs (alpha-weighted when alpha is set)."""
    return np.tensordot(state.coeff.weights(), member_probs(state.models, x), axes=1)


def train_ensemble(state: EnsembleState, data: Dataset, epochs: int, batch_size: int,
                   seed: int, independent_batches: bool = False, callback=None):
    """Run ``epochs`` passes.  With ``independent_batches`` (lambda = 0 only)
    member k draws its own shuffle from ``SeededRng(seed).child("shuffle", k)``;
    otherwise all members share ``child("shuffle")``.
    """
    base = SeededRng(seed)
    for epoch in range(epochs):
        if independent_batches:
            plans = [BatchPlan(batch_size, base.child("shuffle", k), drop_last=False)
                     for k in range(state.K)]
            for batches in zip(*(batch_iter(data, plan, epoch) for plan in plans)):
                independent_train_step(state, batches)
        else:
            plan = BatchPlan(batch_size, base.child("shuffle"), drop_last=False)
            for x, p in batch_iter(data, plan, epoch):
                ace_train_step(state, x, p)
        if callback is not None:
            callback(epoch, state)
    return state


@dataclass
class RegressorEnsembleState:
    models: List[MlpParams]
    optimizers: List[Optimizer]
    coeff: NclCoefficients
    step: int = 0
    last_losses: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        K = len(self.models)
        if K < 2 or len(self.optimizers) != K or self.coeff.K != K:
            raise ConfigError("NCL needs K >= 2 models, one optimizer each, matching coeff.K")
        if any(m.spec.layer_sizes[-1] != 1 for m in self.models):
            raise ConfigError("NCL members must have a scalar output")

    @property
    def K(self) -> int:
        return len(self.models)


def make_regressor_ensemble(specs, coeff: NclCoefficients, rng: SeededRng,
                            optimizer: Callable[[], Optimizer] = Optimizer) -> RegressorEnsembleState:
    if isinstance(specs, MlpSpec):
        specs = [specs] * coeff.K
    models = [init_mlp(s, rng.child("init", k)) for k, s in enumerate(specs)]
    return RegressorEnsembleState(models, [optimizer() for _ in models], coeff)


def ncl_train_step(state: RegressorEnsembleState, x, y, order: Optional[Sequence[int]] = None) -> np.ndarray:
    """One NCL step on a shared batch; returns the K batch-mean losses."""
    y = np.asarray(y, dtype=np.float64)
    outs = [mlp_forward(m, x) for m in state.models]
    F = np.stack([z[:, 0] for z, _ in outs])
    F_bar = F.mean(axis=0)
    grads = ncl_grad(F, y, F_bar, state.coeff)
    losses = ncl_loss(F, y, F_bar, state.coeff).mean(axis=1)
    for k in (range(state.K) if order is None else order):
        g, _ = mlp_backward(state.models[k], outs[k][1], grads[k][:, None], need_input_grad=False)
        state.optimizers[k].step(state.models[k], g)
    state.step += 1
    state.last_losses = losses
    return losses


def member_outputs(models: Sequence[MlpParams], x) -> np.ndarray:
    return np.stack([mlp_forward(m, x)[0][:, 0] for m in models])


def regressor_predict(state: RegressorEnsembleState, x) -> np.ndarray:
    return member_outputs(state.models, x).mean(axis=0)


def train_regressors(state: RegressorEnsembleState, data: Dataset, epochs: int,
                     batch_size: int, seed: int):
    plan = BatchPlan(batch_size, SeededRng(seed).child("shuffle"), drop_last=False)
    for epoch in range(epochs):
        for x, y in batch_iter(data, plan, epoch):
            ncl_train_step(state, x, y)
    return state


# Checkpoint: magic b"ACEENS01", uint32 K (little-endian), then K members in
# the MLP checkpoint format.
ENSEMBLE_MAGIC = b"ACEENS01"


def save_ensemble(path, models: Sequence[MlpParams]):
    with open(path, "wb") as f:
        f.write(ENSEMBLE_MAGIC)
        f.write(struct.pack("<I", len(models)))
        for m in models:
            write_mlp(f, m)


def load_ensemble_models(path) -> List[MlpParams]:
    with open(path, "rb") as f:
        if f.read(8) != ENSEMBLE_MAGIC:
            raise InvalidInputError("not an ensemble checkpoint (bad magic)")
        raw = f.read(4)
        if len(raw) != 4:
            raise InvalidInputError("checkpoint truncated")
        (K,) = struct.unpack("<I", raw)
        return [read_mlp(f) for _ in range(K)]
