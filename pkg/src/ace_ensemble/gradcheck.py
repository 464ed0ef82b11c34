"""Random-instance comparison of closed-form gradients against central differences."""
from __future__ import annotations

import numpy as np

from .losses import (AceCoefficients, NclCoefficients, ace_grad_logits, ace_loss,
                     ace_loss_ensemble_form, ace_weighted_grad_logits, ace_weighted_loss,
                     cross_entropy, finite_diff_grad, ncl_grad, ncl_loss, softmax_ce_grad)
from .numerics import SeededRng, softmax

RTOL = 1e-6
ATOL = 1e-8
LAMBDAS = (0.0, 0.25, 0.5, 1.0)


def excess(analytic, numeric, rtol=RTOL, atol=ATOL) -> float:
    """max |a - n| / (atol + rtol |n|); the check passes when this is <= 1."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    return float(np.max(np.abs(analytic - numeric) / (atol + rtol * np.abs(numeric))))


def random_instance(rng: SeededRng, K=None, L=None):
    """Random one-hot or soft label p and K logit vectors of width L."""
    K = int(rng.integers(2, 6)) if K is None else K
    L = int(rng.integers(2, 9)) if L is None else L
    z_all = rng.normal(0.0, 2.0, size=(K, L))
    if rng.uniform() < 0.5:
        p = np.zeros(L)
        p[int(rng.integers(0, L))] = 1.0
    else:
        p = softmax(rng.normal(size=L))
    return p, z_all


def _member_loss(loss_fn, p, z_all, k, coeff):
    def f(zk):
        z = z_all.copy()
        z[k] = zk
        return loss_fn(p, softmax(z), k, coeff)
    return f


def run_suite(n_instances: int = 100, seed: int = 0, h: float = 1e-5) -> dict:
    """Worst-case statistics over ``n_instances`` random instances.

    Keys ending in ``_excess`` pass when <= 1 (see :func:`excess`); the
    ``form_gap`` entries are absolute differences.
    """
    rng = SeededRng(seed).child("gradcheck")
    out = {"ace_excess": 0.0, "weighted_excess": 0.0, "softmax_ce_excess": 0.0,
           "ncl_excess": 0.0, "ace_form_gap": 0.0, "ncl_form_gap": 0.0,
           "grad_sum_max": 0.0, "instances": n_instances}
    for i in range(n_instances):
        p, z_all = random_instance(rng)
        K, L = z_all.shape
        q_all = softmax(z_all)
        lam = LAMBDAS[i % len(LAMBDAS)]
        coeff = AceCoefficients(K, lam)
        alpha = rng.generator.dirichlet(np.ones(K))
        alpha /= alpha.sum()
        wcoeff = AceCoefficients(K, lam, tuple(alpha))
        for k in range(K):
            g = ace_grad_logits(p, q_all, k, coeff)
            fd = finite_diff_grad(_member_loss(ace_loss, p, z_all, k, coeff), z_all[k], h)
            out["ace_excess"] = max(out["ace_excess"], excess(g, fd))
            out["grad_sum_max"] = max(out["grad_sum_max"], abs(float(g.sum())))
            gap = abs(float(ace_loss(p, q_all, k, coeff) - ace_loss_ensemble_form(p, q_all, k, coeff)))
            out["ace_form_gap"] = max(out["ace_form_gap"], gap)

            gw = ace_weighted_grad_logits(p, q_all, k, wcoeff)
            fdw = finite_diff_grad(_member_loss(ace_weighted_loss, p, z_all, k, wcoeff), z_all[k], h)
            out["weighted_excess"] = max(out["weighted_excess"], excess(gw, fdw))

        gce = softmax_ce_grad(p, z_all[0])
        fdce = finite_diff_grad(lambda z: cross_entropy(p, softmax(z)), z_all[0], h)
        out["softmax_ce_excess"] = max(out["softmax_ce_excess"], excess(gce, fdce))
        out["grad_sum_max"] = max(out["grad_sum_max"], abs(float(gce.sum())))

        F = rng.normal(size=K)
        Y = float(rng.normal())
        ncoeff = NclCoefficients(K, float(rng.uniform(0.0, 0.5)) * K / (K - 1))

        def ncl_of_member(fk, k=0):
            G = F.copy()
            G[k] = fk[0]
            return ncl_loss(G[k], Y, G.mean(), ncoeff)

        fd_ncl = finite_diff_grad(ncl_of_member, F[:1], h)
        g_ncl = ncl_grad(F[0], Y, F.mean(), ncoeff)
        out["ncl_excess"] = max(out["ncl_excess"], excess(g_ncl, fd_ncl[0]))
        lam_n = ncoeff.lam_ncl
        gap = abs(float(g_ncl - ((F[0] - Y) - lam_n * (F[0] - F.mean()))))
        out["ncl_form_gap"] = max(out["ncl_form_gap"], gap)
    return out


def passed(stats: dict, form_tol: float = 1e-12) -> bool:
    return (all(stats[k] <= 1.0 for k in stats if k.endswith("_excess"))
            and stats["ace_form_gap"] <= form_tol and stats["ncl_form_gap"] <= form_tol
            and stats["grad_sum_max"] <= form_tol)
