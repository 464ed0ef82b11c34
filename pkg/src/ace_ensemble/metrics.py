"""Classification scores and the ensemble bias-variance-covariance split."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import ConfigError, DimensionError
from .losses import cross_entropy


def _pair(pred, labels):
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if pred.shape != labels.shape:
        raise DimensionError(f"predictions {pred.shape} vs labels {labels.shape}")
    if pred.ndim != 2 or pred.shape[0] == 0:
        raise ConfigError("need a non-empty (n, L) batch")
    return pred, labels


def accuracy(pred, labels) -> float:
    """Fraction of rows whose argmax agrees; ties go to the lowest index."""
    pred, labels = _pair(pred, labels)
    return float(np.mean(pred.argmax(axis=1) == labels.argmax(axis=1)))


def mean_cross_entropy(pred, labels) -> float:
    pred, labels = _pair(pred, labels)
    return float(cross_entropy(labels, pred).mean())


@dataclass
class EvalReport:
    ensemble_accuracy: float
    ensemble_ce: float
    member_accuracy: List[float]
    member_ce: List[float]

    @property
    def single_accuracy(self) -> float:
        return float(np.mean(self.member_accuracy))

    @property
    def single_ce(self) -> float:
        return float(np.mean(self.member_ce))


def evaluate_members(q_all, labels, weights: Optional[np.ndarray] = None) -> EvalReport:
    """Score K member outputs ``q_all`` (K, n, L) and their average."""
    q_all = np.asarray(q_all, dtype=np.float64)
    K = q_all.shape[0]
    w = np.full(K, 1.0 / K) if weights is None else np.asarray(weights)
    q_bar = np.tensordot(w, q_all, axes=1)
    return EvalReport(
        accuracy(q_bar, labels), mean_cross_entropy(q_bar, labels),
        [accuracy(q, labels) for q in q_all], [mean_cross_entropy(q, labels) for q in q_all])


def mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"{pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


@dataclass
class BvcReport:
    bias2: float
    variance: float
    covariance: float
    ensemble_mse: float

    @property
    def total(self) -> float:
        return self.bias2 + self.variance + self.covariance


def bias_var_cov(preds, targets) -> BvcReport:
    """Split the ensemble squared error over repeated trainings.

    ``preds`` has shape (R, K, n): R independent trainings of a K-member
    ensemble, evaluated on the same n inputs.  Expectations are empirical
    means over the R trainings (1/R normalisation), then averaged over the
    n inputs:

      bias2      = (mean_k E[F^k] - Y)^2
      variance   = 1/K^2 sum_k E[(F^k - E F^k)^2]
      covariance = 1/K^2 sum_k sum_{j != k} E[(F^k - E F^k)(F^j - E F^j)]

    and bias2 + variance + covariance equals E[(F_bar - Y)^2] exactly in
    exact arithmetic.
    """
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.ndim != 3 or targets.shape != preds.shape[2:]:
        raise DimensionError(f"preds must be (R, K, n) with targets (n,), got {preds.shape}, {targets.shape}")
    R, K, _ = preds.shape
    if R < 2:
        raise ConfigError("need at least 2 repeated trainings")
    mean_k = preds.mean(axis=0)                       # (K, n)
    dev = preds - mean_k                              # (R, K, n)
    cov = np.einsum("rkn,rjn->kjn", dev, dev) / R     # (K, K, n)
    diag = np.trace(cov, axis1=0, axis2=1)            # (n,)
    bias2 = (mean_k.mean(axis=0) - targets) ** 2
    variance = diag / K**2
    covariance = (cov.sum(axis=(0, 1)) - diag) / K**2
    ens = ((preds.mean(axis=1) - targets) ** 2).mean(axis=0)
    return BvcReport(float(bias2.mean()), float(variance.mean()),
                     float(covariance.mean()), float(ens.mean()))
