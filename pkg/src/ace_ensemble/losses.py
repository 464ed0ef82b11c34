"""Cross entropy, Amended Cross Entropy (ACE) and Negative Correlation Learning.

Conventions
-----------
* Probability vectors live on the last axis.  Every loss accepts a single
  vector or any leading batch shape and returns one value per leading index.
* ``q_all`` stacks the K member distributions on axis 0, shape ``(K, ..., L)``.
* Model indices ``k`` are 0-based.
* Loss values clamp q at ``EPS`` inside logs.  Gradients are closed form in
  logit space and never clamp.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DimensionError, InvalidInputError
from .numerics import softmax

EPS = 1e-12
SIMPLEX_ATOL = 1e-12


def lambda_to_gamma(lam: float, K: int) -> float:
    return lam * (K - 1) / K


def gamma_to_lambda(gamma: float, K: int) -> float:
    if K == 1:
        if gamma != 0:
            raise ConfigError("gamma must be 0 when K == 1")
        return 0.0
    return gamma * K / (K - 1)


@dataclass(frozen=True)
class AceCoefficients:
    """Diversity settings of a K-member ACE ensemble.

    ``lam`` is the stored value; ``gamma = lam * (K - 1) / K`` is a view.
    ``alpha`` (optional) are fixed aggregation weights on the K-simplex.
    """

    K: int
    lam: float = 0.0
    alpha: Optional[tuple] = None

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ConfigError(f"K must be an integer >= 1, got {self.K!r}")
        if not np.isfinite(self.lam) or not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam!r}")
        if self.K == 1 and self.lam > 0:
            raise ConfigError("lambda > 0 requires K >= 2 (the diversity term is empty)")
        if self.alpha is not None:
            a = np.asarray(self.alpha, dtype=np.float64)
            if a.shape != (self.K,):
                raise ConfigError(f"alpha must have K={self.K} entries, got {a.shape}")
            if np.any(a < 0) or not np.all(np.isfinite(a)) or abs(a.sum() - 1.0) > SIMPLEX_ATOL:
                raise ConfigError("alpha must lie on the K-simplex")
            object.__setattr__(self, "alpha", tuple(float(v) for v in a))

    @classmethod
    def from_gamma(cls, K: int, gamma: float, alpha=None) -> "AceCoefficients":
        return cls(K, gamma_to_lambda(gamma, K), alpha)

    @property
    def gamma(self) -> float:
        return lambda_to_gamma(self.lam, self.K)

    def weights(self) -> np.ndarray:
        """Aggregation weights, uniform when ``alpha`` is unset."""
        if self.alpha is None:
            return np.full(self.K, 1.0 / self.K)
        return np.asarray(self.alpha)


@dataclass(frozen=True)
class NclCoefficients:
    """NCL penalty strength. ``lam_ncl = 2 * gamma_ncl * (1 - 1/K)``."""

    K: int
    gamma_ncl: float = 0.0

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 2:
            raise ConfigError(f"NCL needs K >= 2, got {self.K!r}")
        if not np.isfinite(self.gamma_ncl) or self.gamma_ncl < 0:
            raise ConfigError(f"gamma_ncl must be >= 0, got {self.gamma_ncl!r}")
        if self.lam_ncl > 1.0 + 1e-15:
            raise ConfigError(
                f"gamma_ncl={self.gamma_ncl} gives lambda_ncl={self.lam_ncl} > 1")

    @classmethod
    def from_lambda(cls, K: int, lam_ncl: float) -> "NclCoefficients":
        return cls(K, lam_ncl / (2.0 * (1.0 - 1.0 / K)))

    @property
    def lam_ncl(self) -> float:
        return 2.0 * self.gamma_ncl * (1.0 - 1.0 / self.K)


def _pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape[-1:] != q.shape[-1:]:
        raise DimensionError(f"length mismatch: {p.shape} vs {q.shape}")
    return p, q


def cross_entropy(p, q) -> np.ndarray:
    """H(p, q) = -sum_i p_i log q_i.  Entries with p_i = 0 contribute 0."""
    p, q = _pair(p, q)
    return -(p * np.log(np.maximum(q, EPS))).sum(axis=-1)


def entropy(q) -> np.ndarray:
    return cross_entropy(q, q)


def softmax_ce_grad(p, z) -> np.ndarray:
    """Gradient of H(p, softmax(z)) with respect to z."""
    p, z = _pair(p, z)
    return softmax(z) - p


def _check_members(p, q_all, k, coeff):
    p = np.asarray(p, dtype=np.float64)
    q_all = np.asarray(q_all, dtype=np.float64)
    if q_all.shape[0] != coeff.K:
        raise DimensionError(f"q_all holds {q_all.shape[0]} members, coeff.K={coeff.K}")
    if q_all.shape[-1] != p.shape[-1]:
        raise DimensionError(f"label width mismatch: {p.shape} vs {q_all.shape}")
    if not 0 <= k < coeff.K:
        raise IndexError(f"model index {k} out of range for K={coeff.K}")
    return p, q_all


def ace_loss(p, q_all, k: int, coeff: AceCoefficients) -> np.ndarray:
    """e^k = H(p, q^k) - (lam/K) * sum_{j != k} H(q^j, q^k)."""
    p, q_all = _check_members(p, q_all, k, coeff)
    qk = q_all[k]
    diversity = sum(cross_entropy(q_all[j], qk) for j in range(coeff.K) if j != k)
    return cross_entropy(p, qk) - coeff.lam / coeff.K * diversity


def ace_loss_ensemble_form(p, q_all, k: int, coeff: AceCoefficients) -> np.ndarray:
    """e^k = H(p, q^k) - lam * H(q_bar, q^k) + (lam/K) * H(q^k); q_bar uniform."""
    p, q_all = _check_members(p, q_all, k, coeff)
    qk = q_all[k]
    q_bar = q_all.mean(axis=0)
    lam = coeff.lam
    return cross_entropy(p, qk) - lam * cross_entropy(q_bar, qk) + lam / coeff.K * entropy(qk)


def ace_grad_logits(p, q_all, k: int, coeff: AceCoefficients) -> np.ndarray:
    """(1 - lam)(q^k - p) + lam (q_bar - p), with q_bar the uniform average."""
    p, q_all = _check_members(p, q_all, k, coeff)
    lam = coeff.lam
    return (1.0 - lam) * (q_all[k] - p) + lam * (q_all.mean(axis=0) - p)


def ace_grad_logits_pairwise(p, q_all, k: int, coeff: AceCoefficients) -> np.ndarray:
    """(q^k - p) - (lam/K) * sum_{j != k} (q^k - q^j)."""
    p, q_all = _check_members(p, q_all, k, coeff)
    qk = q_all[k]
    pull = sum(qk - q_all[j] for j in range(coeff.K) if j != k)
    return (qk - p) - coeff.lam / coeff.K * pull


def _alpha(coeff):
    if coeff.alpha is None:
        raise ConfigError("weighted ACE needs alpha on the K-simplex")
    return np.asarray(coeff.alpha)


def ace_weighted_loss(p, q_all, k: int, coeff: AceCoefficients) -> np.ndarray:
    """H(p, q^k) - lam * sum_{j != k} alpha^j H(q^j, q^k)."""
    alpha = _alpha(coeff)
    p, q_all = _check_members(p, q_all, k, coeff)
    qk = q_all[k]
    diversity = sum(alpha[j] * cross_entropy(q_all[j], qk)
                    for j in range(coeff.K) if j != k)
    return cross_entropy(p, qk) - coeff.lam * diversity


def ace_weighted_grad_logits(p, q_all, k: int, coeff: AceCoefficients) -> np.ndarray:
    """(q^k - p) - lam * sum_{j != k} alpha^j (q^k - q^j)."""
    alpha = _alpha(coeff)
    p, q_all = _check_members(p, q_all, k, coeff)
    qk = q_all[k]
    pull = sum(alpha[j] * (qk - q_all[j]) for j in range(coeff.K) if j != k)
    return (qk - p) - coeff.lam * pull


def ace_member_grads(p, q_all, coeff: AceCoefficients) -> np.ndarray:
    """Logit gradients of every member at once, shape ``(K, ..., L)``.

    Uses ``(1 - lam)(q^k - p) + lam (q_bar - p)`` where q_bar is weighted by
    ``coeff.weights()``; this equals the uniform or the alpha-weighted
    pairwise form because the weights sum to one.
    """
    p = np.asarray(p, dtype=np.float64)
    q_all = np.asarray(q_all, dtype=np.float64)
    if q_all.shape[0] != coeff.K or q_all.shape[1:] != p.shape:
        raise DimensionError(f"expected q_all of shape (K,)+{p.shape}, got {q_all.shape}")
    lam = coeff.lam
    q_bar = np.tensordot(coeff.weights(), q_all, axes=1)
    return (1.0 - lam) * (q_all - p) + lam * (q_bar - p)


def ace_member_losses(p, q_all, coeff: AceCoefficients) -> np.ndarray:
    """e^k for every member, shape ``(K, ...)``.

    Uniform weights use the ensemble form; alpha weights use the weighted
    pairwise form.
    """
    fn = ace_loss_ensemble_form if coeff.alpha is None else ace_weighted_loss
    return np.stack([fn(p, q_all, k, coeff) for k in range(coeff.K)])


def ncl_loss(Fk, Y, F_bar, coeff: NclCoefficients):
    """1/2 (F^k - Y)^2 - gamma (F^k - F_bar)^2."""
    Fk, Y, F_bar = (np.asarray(v, dtype=np.float64) for v in (Fk, Y, F_bar))
    return 0.5 * (Fk - Y) ** 2 - coeff.gamma_ncl * (Fk - F_bar) ** 2


def ncl_grad(Fk, Y, F_bar, coeff: NclCoefficients):
    """(1 - lam)(F^k - Y) + lam (F_bar - Y).

    This is the exact derivative of :func:`ncl_loss` when F_bar is the
    ensemble mean and so moves with F^k (weight 1/K); it is not the
    derivative with F_bar held fixed.
    """
    Fk, Y, F_bar = (np.asarray(v, dtype=np.float64) for v in (Fk, Y, F_bar))
    lam = coeff.lam_ncl
    return (1.0 - lam) * (Fk - Y) + lam * (F_bar - Y)


def ncl_grad_deviation_form(Fk, Y, F_bar, coeff: NclCoefficients):
    """(F^k - Y) - lam (F^k - F_bar)."""
    Fk, Y, F_bar = (np.asarray(v, dtype=np.float64) for v in (Fk, Y, F_bar))
    return (Fk - Y) - coeff.lam_ncl * (Fk - F_bar)


def finite_diff_grad(loss_fn: Callable[[np.ndarray], float], z0, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a vector."""
    if h <= 0:
        raise InvalidInputError("step h must be positive")
    z0 = np.asarray(z0, dtype=np.float64)
    grad = np.empty_like(z0)
    flat = grad.reshape(-1)
    for i in range(z0.size):
        e = np.zeros(z0.size)
        e[i] = h
        e = e.reshape(z0.shape)
        flat[i] = (float(loss_fn(z0 + e)) - float(loss_fn(z0 - e))) / (2.0 * h)
    return grad
