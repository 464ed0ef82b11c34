import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ace_ensemble.errors import ConfigError, DimensionError
from ace_ensemble.losses import (
    AceCoefficients, NclCoefficients, ace_grad_logits, ace_grad_logits_pairwise, ace_loss,
    ace_loss_ensemble_form, ace_member_grads, ace_member_losses, ace_weighted_grad_logits,
    ace_weighted_loss, cross_entropy, entropy, finite_diff_grad, gamma_to_lambda,
    lambda_to_gamma, ncl_grad, ncl_grad_deviation_form, ncl_loss, softmax_ce_grad)
from ace_ensemble.numerics import softmax

LN2 = math.log(2)


def close_to_fd(analytic, numeric, rtol=1e-6, atol=1e-8):
    return np.all(np.abs(analytic - numeric) <= atol + rtol * np.abs(numeric))


@st.composite
def ensembles(draw, max_K=6, max_L=8):
    """(p, z_all, k, lam) with K in [2, max_K] members over L labels."""
    K = draw(st.integers(2, max_K))
    L = draw(st.integers(2, max_L))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    z_all = rng.normal(0, 3, size=(K, L))
    if draw(st.booleans()):
        p = np.zeros(L)
        p[draw(st.integers(0, L - 1))] = 1.0
    else:
        p = softmax(rng.normal(size=L))
    k = draw(st.integers(0, K - 1))
    lam = draw(st.sampled_from([0.0, 0.25, 0.5, 1.0]) | st.floats(0.0, 1.0))
    return p, z_all, k, lam


def member_fn(loss, p, z_all, k, coeff):
    def f(zk):
        z = z_all.copy()
        z[k] = zk
        return loss(p, softmax(z), k, coeff)
    return f


class TestCoefficients:
    def test_gamma_view(self):
        c = AceCoefficients(5, 0.5)
        assert c.gamma == pytest.approx(0.4)
        assert AceCoefficients.from_gamma(5, 0.4).lam == pytest.approx(0.5)

    @given(st.integers(2, 50), st.floats(0, 1))
    def test_round_trip(self, K, lam):
        g = lambda_to_gamma(lam, K)
        assert abs(lambda_to_gamma(gamma_to_lambda(g, K), K) - g) <= 1e-15

    @pytest.mark.parametrize("lam", [-0.1, 1.5, float("nan")])
    def test_lambda_out_of_range(self, lam):
        with pytest.raises(ConfigError):
            AceCoefficients(3, lam)

    def test_single_model_needs_zero_lambda(self):
        AceCoefficients(1, 0.0)
        with pytest.raises(ConfigError):
            AceCoefficients(1, 0.1)

    @pytest.mark.parametrize("alpha", [(0.5, 0.6), (1.2, -0.2), (0.5, 0.5, 0.0)])
    def test_alpha_off_simplex(self, alpha):
        with pytest.raises(ConfigError):
            AceCoefficients(2, 0.5, alpha)

    def test_ncl_lambda(self):
        c = NclCoefficients(4, 0.2)
        assert c.lam_ncl == pytest.approx(2 * 0.2 * 0.75)
        assert NclCoefficients.from_lambda(4, 0.3).lam_ncl == pytest.approx(0.3)
        with pytest.raises(ConfigError):
            NclCoefficients(1, 0.0)
        with pytest.raises(ConfigError):
            NclCoefficients(2, 2.0)     # lam_ncl = 2 > 1


class TestCrossEntropy:
    def test_one_hot(self):
        assert cross_entropy([1, 0], [0.5, 0.5]) == pytest.approx(LN2, abs=1e-15)

    def test_self_is_entropy(self):
        assert cross_entropy([0.5, 0.5], [0.5, 0.5]) == pytest.approx(LN2, abs=1e-15)

    def test_hand_value(self):
        # -(0.5 ln 0.25 + 0.5 ln 0.75)
        assert cross_entropy([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.836988, abs=1e-6)

    def test_zero_label_terms_vanish(self):
        assert cross_entropy([1.0, 0.0], [1.0, 0.0]) == 0.0

    def test_clamped_at_eps(self):
        assert cross_entropy([0.0, 1.0], [1.0, 0.0]) == pytest.approx(-math.log(1e-12))

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            cross_entropy([1, 0], [0.2, 0.3, 0.5])

    def test_entropy_values(self):
        assert entropy([0.5, 0.5]) == pytest.approx(LN2, abs=1e-15)
        assert entropy([1.0, 0.0]) == 0.0
        assert entropy([0.8, 0.2]) == pytest.approx(0.500402, abs=1e-6)

    @given(ensembles())
    def test_gibbs(self, inst):
        p, z_all, _, _ = inst
        q = softmax(z_all[0])
        assert cross_entropy(p, q) >= entropy(p) - 1e-12

    def test_gibbs_equality(self):
        p = softmax(np.array([0.3, -1.0, 2.0]))
        assert cross_entropy(p, p) == entropy(p)


class TestSoftmaxCeGrad:
    def test_zero_at_target(self):
        z = np.array([0.1, -0.4, 2.0])
        np.testing.assert_allclose(softmax_ce_grad(softmax(z), z), 0.0, atol=1e-16)

    def test_symmetric(self):
        np.testing.assert_allclose(softmax_ce_grad([1.0, 0.0], [0.0, 0.0]), [-0.5, 0.5])

    @given(ensembles())
    def test_sums_to_zero_and_matches_fd(self, inst):
        p, z_all, _, _ = inst
        g = softmax_ce_grad(p, z_all[0])
        assert abs(g.sum()) <= 1e-12
        fd = finite_diff_grad(lambda z: cross_entropy(p, softmax(z)), z_all[0])
        assert close_to_fd(g, fd)


class TestAceLoss:
    q = np.array([[0.8, 0.2], [0.6, 0.4]])
    p = np.array([1.0, 0.0])

    def test_hand_instance(self):
        c = AceCoefficients(2, 1.0)
        # H(p, q1) = -ln 0.8 ; H(q2, q1) = -(0.6 ln 0.8 + 0.4 ln 0.2)
        expected = -math.log(0.8) - 0.5 * -(0.6 * math.log(0.8) + 0.4 * math.log(0.2))
        assert expected == pytest.approx(-0.165687, abs=1e-6)
        assert ace_loss(self.p, self.q, 0, c) == pytest.approx(expected, abs=1e-15)
        assert ace_loss_ensemble_form(self.p, self.q, 0, c) == pytest.approx(expected, abs=1e-15)

    def test_zero_lambda_is_ce(self):
        c = AceCoefficients(2, 0.0)
        for fn in (ace_loss, ace_loss_ensemble_form):
            assert fn(self.p, self.q, 1, c) == cross_entropy(self.p, self.q[1])

    def test_identical_members(self):
        K, lam = 4, 0.6
        qk = np.array([0.1, 0.3, 0.6])
        q_all = np.tile(qk, (K, 1))
        p = np.array([0.0, 0.0, 1.0])
        expected = cross_entropy(p, qk) - lam * (K - 1) / K * entropy(qk)
        assert ace_loss(p, q_all, 2, AceCoefficients(K, lam)) == pytest.approx(expected, abs=1e-14)

    def test_single_member(self):
        q_all = np.array([[0.3, 0.7]])
        c = AceCoefficients(1, 0.0)
        assert ace_loss_ensemble_form([0, 1], q_all, 0, c) == cross_entropy([0, 1], q_all[0])

    def test_index_and_shape_errors(self):
        c = AceCoefficients(2, 0.5)
        with pytest.raises(IndexError):
            ace_loss(self.p, self.q, 2, c)
        with pytest.raises(DimensionError):
            ace_loss([1, 0, 0], self.q, 0, c)
        with pytest.raises(DimensionError):
            ace_loss(self.p, self.q, 0, AceCoefficients(3, 0.5))

    @given(ensembles())
    def test_forms_agree(self, inst):
        p, z_all, k, lam = inst
        q_all = softmax(z_all)
        c = AceCoefficients(len(z_all), lam)
        assert abs(ace_loss(p, q_all, k, c) - ace_loss_ensemble_form(p, q_all, k, c)) <= 1e-12

    def test_batched_matches_per_sample(self):
        rng = np.random.default_rng(1)
        q_all = softmax(rng.normal(size=(3, 5, 4)))
        p = softmax(rng.normal(size=(5, 4)))
        c = AceCoefficients(3, 0.7)
        batch = ace_loss(p, q_all, 1, c)
        for i in range(5):
            assert batch[i] == pytest.approx(ace_loss(p[i], q_all[:, i], 1, c), abs=1e-15)


class TestAceGrad:
    def test_lambda_one_uses_ensemble(self):
        # K=2 members averaging to (0.7, 0.3)
        q_all = np.array([[0.9, 0.1], [0.5, 0.5]])
        g = ace_grad_logits([1.0, 0.0], q_all, 0, AceCoefficients(2, 1.0))
        np.testing.assert_allclose(g, [-0.3, 0.3], atol=1e-15)

    def test_lambda_zero_is_vanilla(self):
        z_all = np.array([[0.2, -1.0, 0.5], [1.0, 0.0, -2.0]])
        p = np.array([0.0, 1.0, 0.0])
        g = ace_grad_logits(p, softmax(z_all), 1, AceCoefficients(2, 0.0))
        np.testing.assert_array_equal(g, softmax_ce_grad(p, z_all[1]))

    @settings(max_examples=200)
    @given(ensembles())
    def test_matches_finite_differences(self, inst):
        p, z_all, k, lam = inst
        c = AceCoefficients(len(z_all), lam)
        g = ace_grad_logits(p, softmax(z_all), k, c)
        fd = finite_diff_grad(member_fn(ace_loss, p, z_all, k, c), z_all[k])
        assert close_to_fd(g, fd)

    @given(ensembles())
    def test_two_forms_and_zero_sum(self, inst):
        p, z_all, k, lam = inst
        q_all = softmax(z_all)
        c = AceCoefficients(len(z_all), lam)
        g = ace_grad_logits(p, q_all, k, c)
        np.testing.assert_allclose(g, ace_grad_logits_pairwise(p, q_all, k, c), rtol=0, atol=1e-12)
        assert abs(g.sum()) <= 1e-12

    def test_member_batch_helpers(self):
        rng = np.random.default_rng(2)
        q_all = softmax(rng.normal(size=(4, 6, 3)))
        p = softmax(rng.normal(size=(6, 3)))
        c = AceCoefficients(4, 0.35)
        G = ace_member_grads(p, q_all, c)
        E = ace_member_losses(p, q_all, c)
        for k in range(4):
            np.testing.assert_allclose(G[k], ace_grad_logits(p, q_all, k, c), atol=1e-15)
            np.testing.assert_allclose(E[k], ace_loss(p, q_all, k, c), atol=1e-12)


class TestWeightedAce:
    def test_uniform_alpha_recovers_uniform(self):
        rng = np.random.default_rng(3)
        q_all = softmax(rng.normal(size=(3, 4)))
        p = np.array([0, 0, 1.0, 0])
        c = AceCoefficients(3, 0.8)
        cw = AceCoefficients(3, 0.8, (1 / 3, 1 / 3, 1 / 3))
        for k in range(3):
            assert ace_weighted_loss(p, q_all, k, cw) == pytest.approx(ace_loss(p, q_all, k, c), abs=1e-12)
            np.testing.assert_allclose(ace_weighted_grad_logits(p, q_all, k, cw),
                                       ace_grad_logits(p, q_all, k, c), atol=1e-12)

    def test_self_weight_is_vanilla(self):
        rng = np.random.default_rng(4)
        z_all = rng.normal(size=(3, 5))
        q_all = softmax(z_all)
        p = softmax(rng.normal(size=5))
        cw = AceCoefficients(3, 0.9, (0.0, 1.0, 0.0))
        assert ace_weighted_loss(p, q_all, 1, cw) == pytest.approx(cross_entropy(p, q_all[1]), abs=1e-15)
        np.testing.assert_allclose(ace_weighted_grad_logits(p, q_all, 1, cw),
                                   softmax_ce_grad(p, z_all[1]), atol=1e-15)

    def test_requires_alpha(self):
        with pytest.raises(ConfigError):
            ace_weighted_loss([1, 0], np.array([[0.5, 0.5], [0.2, 0.8]]), 0, AceCoefficients(2, 0.5))

    @given(ensembles(), st.integers(0, 2**32 - 1))
    def test_matches_finite_differences(self, inst, seed):
        p, z_all, k, lam = inst
        alpha = np.random.default_rng(seed).dirichlet(np.ones(len(z_all)))
        alpha /= alpha.sum()
        c = AceCoefficients(len(z_all), lam, tuple(alpha))
        g = ace_weighted_grad_logits(p, softmax(z_all), k, c)
        fd = finite_diff_grad(member_fn(ace_weighted_loss, p, z_all, k, c), z_all[k])
        assert close_to_fd(g, fd)
        np.testing.assert_allclose(ace_member_grads(p, softmax(z_all), c)[k], g, atol=1e-12)


class TestNcl:
    def test_plain_half_mse(self):
        assert ncl_loss(3.0, 1.0, 0.0, NclCoefficients(2, 0.0)) == 2.0
        assert ncl_loss(3.0, 1.0, 3.0, NclCoefficients(2, 0.4)) == 2.0

    def test_hand_value(self):
        assert ncl_loss(2.0, 1.0, 1.5, NclCoefficients(2, 0.4)) == pytest.approx(0.4, abs=1e-15)

    def test_limits_of_gradient(self):
        assert ncl_grad(2.0, 1.0, 1.5, NclCoefficients(3, 0.0)) == 1.0
        one = NclCoefficients.from_lambda(3, 1.0)
        assert ncl_grad(2.0, 1.0, 1.5, one) == pytest.approx(0.5, abs=1e-15)

    @given(st.integers(2, 8), st.floats(0, 1), st.integers(0, 2**32 - 1))
    def test_forms_agree(self, K, lam, seed):
        rng = np.random.default_rng(seed)
        F, Y = rng.normal(size=K), rng.normal()
        c = NclCoefficients.from_lambda(K, lam)
        a = ncl_grad(F[0], Y, F.mean(), c)
        b = ncl_grad_deviation_form(F[0], Y, F.mean(), c)
        assert abs(a - b) <= 1e-12

    @given(st.integers(2, 8), st.floats(0, 1), st.integers(0, 2**32 - 1))
    def test_gradient_treats_mean_as_moving(self, K, lam, seed):
        rng = np.random.default_rng(seed)
        F, Y = rng.normal(size=K), rng.normal()
        c = NclCoefficients.from_lambda(K, lam)

        def moving(fk):
            G = F.copy()
            G[0] = fk[0]
            return ncl_loss(G[0], Y, G.mean(), c)

        fd = finite_diff_grad(moving, F[:1])[0]
        assert close_to_fd(ncl_grad(F[0], Y, F.mean(), c), fd)

    def test_frozen_mean_convention_differs(self):
        F, Y = np.array([2.0, 0.0, -1.0]), 0.5
        c = NclCoefficients(3, 0.3)
        fd = finite_diff_grad(lambda fk: ncl_loss(fk[0], Y, F.mean(), c), F[:1])[0]
        expected_frozen = (F[0] - Y) - 2 * c.gamma_ncl * (F[0] - F.mean())
        assert fd == pytest.approx(expected_frozen, abs=1e-9)
        assert abs(fd - ncl_grad(F[0], Y, F.mean(), c)) > 1e-3


class TestFiniteDiff:
    def test_quadratic(self):
        np.testing.assert_allclose(finite_diff_grad(lambda z: np.sum(z**2), [1.0, 2.0]),
                                   [2.0, 4.0], atol=1e-8)

    def test_constant(self):
        np.testing.assert_allclose(finite_diff_grad(lambda z: 3.0, np.ones(4)), 0.0, atol=1e-9)

    def test_bad_step(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda z: 0.0, [1.0], h=0.0)
