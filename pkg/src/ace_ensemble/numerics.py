"""Dense primitives: stable softmax family, affine maps and seeded randomness.

All arrays are float64.  Softmax-type functions operate along the last axis,
so a single logit vector ``(L,)``, a batch ``(n, L)`` and a stack of model
outputs ``(K, n, L)`` are all accepted.
"""
from __future__ import annotations

import zlib

import numpy as np

from .errors import DimensionError, InvalidInputError

PROB_ATOL = 1e-12


def _as_logits(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0 or z.shape[-1] < 1:
        raise InvalidInputError("logits must have a non-empty last axis")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits contain NaN or Inf")
    return z


def softmax(z) -> np.ndarray:
    z = _as_logits(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp(z) -> np.ndarray:
    z = _as_logits(z)
    m = z.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))[..., 0]


def log_softmax(z) -> np.ndarray:
    z = _as_logits(z)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def affine(x, W, b) -> np.ndarray:
    """``W @ x + b`` with rows of ``W`` mapping to outputs.

    ``x`` may be a single vector ``(d,)`` or a batch ``(n, d)``; a batch is
    mapped row by row.
    """
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise DimensionError(
            f"affine shape mismatch: x{x.shape}, W{W.shape}, b{b.shape}")
    return x @ W.T + b


def is_prob_vector(q, atol: float = PROB_ATOL) -> bool:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim == 0 or q.shape[-1] < 2 or not np.all(np.isfinite(q)):
        return False
    return bool(np.all(q >= 0) and np.all(np.abs(q.sum(axis=-1) - 1.0) <= atol))


def check_prob_vector(q, name: str = "q", atol: float = 1e-9) -> np.ndarray:
    """Validate and return ``q`` as float64; rows along the last axis must lie on the simplex."""
    q = np.asarray(q, dtype=np.float64)
    if not is_prob_vector(q, atol):
        raise InvalidInputError(f"{name} is not a probability vector")
    return q


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InvalidInputError("label out of range")
    out = np.zeros(labels.shape + (n_classes,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


class SeededRng:
    """Deterministic random stream with named sub-streams.

    The generator is numpy's PCG64 (a 128-bit permuted congruential
    generator with a fixed, platform-independent output sequence).  Child
    streams are derived through ``numpy.random.SeedSequence`` with a spawn
    key built from the purpose string (CRC-32) and integer indices, so
    ``SeededRng(7).child("init", 3)`` is the same stream on every machine
    and is independent of the order in which children are requested.
    """

    def __init__(self, seed: int, _key: tuple = ()):
        if seed < 0 or seed >= 2**64:
            raise InvalidInputError("seed must fit in 64 unsigned bits")
        self.seed = int(seed)
        self.key = tuple(_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, purpose: str, *index: int) -> "SeededRng":
        tag = zlib.crc32(purpose.encode("utf-8"))
        return SeededRng(self.seed, self.key + (tag,) + tuple(int(i) for i in index))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, key={self.key})"
