import numpy as np
import pytest
import scipy.stats

from sevgp import kernels
from sevgp import objectives as O
from sevgp.gaussian import GaussianDist
from sevgp.model import gpx_prior_cov
from sevgp.gaussian import gp_log_evidence

from helpers import f_oracle, gram, kl_oracle, random_model


def _data_term(y, mean, var, s2, scale=1.0):
    return scale * (scipy.stats.norm(mean, np.sqrt(s2)).logpdf(y).sum() - var.sum() / (2 * s2))


def _coef_kl(model):
    total = 0.0
    for i, b in enumerate(model.blocks):
        K = gram(model.prior_kernel(i), b.Z) + model.jitter * np.eye(b.M)
        total += kl_oracle(b.a, b.L @ b.L.T, np.zeros(b.M), K)
    return total


def test_elbo_41_matches_oracle():
    rng = np.random.default_rng(0)
    model, X, y = random_model(rng, N=9)
    mean, cov, _ = f_oracle(model, X)
    want = _data_term(y, mean, np.diag(cov), model.sigma2) - _coef_kl(model)
    assert float(O.elbo_41(model, X, y)) == pytest.approx(want, abs=1e-7)
    # a batch of 3 from N=9 scales the data term by 3
    want_b = _data_term(y[:3], mean[:3], np.diag(cov)[:3], model.sigma2, 3.0) - _coef_kl(model)
    assert float(O.elbo_41(model, X[:3], y[:3], n_total=9)) == pytest.approx(want_b, abs=1e-7)


def test_coefficient_kl_zero_at_prior():
    from sevgp.model import init_model

    X = np.random.default_rng(1).uniform(-2, 2, (10, 2))
    model = init_model(X, "41", kernels.const_se(), 3)
    assert float(O.coefficient_kl(model)) == pytest.approx(0.0, abs=1e-9)


def _process_oracle(model, X_D):
    mean, cov, cond = f_oracle(model, X_D)
    C = gram(model.full_prior_kernel, X_D) + model.full_prior_jitter * np.eye(len(X_D))
    kl = kl_oracle(mean, cov + model.jitter * np.eye(len(X_D)), np.zeros(len(X_D)), C)
    return mean, cov, cond, C, kl


def test_felbo_42_matches_oracle():
    rng = np.random.default_rng(2)
    model, X, y = random_model(rng, N=6, variant="42")
    aug = O.sample_augmentation([(-2, 2), (-2, 2)], 4, 0)
    X_D = np.vstack([X, aug])
    mean, cov, _, _, kl = _process_oracle(model, X_D)
    data = _data_term(y, mean[:6], np.diag(cov)[:6], model.sigma2)
    assert float(O.felbo_42(model, X, y, aug)) == pytest.approx(data - kl / 6, abs=1e-6)
    assert float(O.felbo_42(model, X, y, aug, lam=1.0)) == pytest.approx(data - kl, abs=1e-6)
    meas = O.MeasurementSet.from_batch(X, aug)
    assert float(O.felbo_42(model, X, y, meas)) == float(O.felbo_42(model, X, y, aug))


def test_felbo_43_matches_oracle():
    rng = np.random.default_rng(3)
    model, X, y = random_model(rng, N=6, variant="43")
    aug = O.sample_augmentation([(-2, 2), (-2, 2)], 3, 1)
    X_D = np.vstack([X, aug])
    mean, cov, cond, C, kl = _process_oracle(model, X_D)
    data = _data_term(y, mean[:6], np.diag(cov)[:6], model.sigma2)
    trace = np.trace(np.linalg.solve(C, cond))
    want = data - (kl + 0.5 * trace) / 6 - _coef_kl(model)
    assert float(O.felbo_43(model, X, y, aug)) == pytest.approx(want, abs=1e-6)
    n = len(X_D)
    logdet = np.linalg.slogdet(cov + model.jitter * np.eye(n))[1] - np.linalg.slogdet(cond + model.jitter * np.eye(n))[1]
    want_ld = data - (kl + 0.5 * logdet) / 6 - _coef_kl(model)
    assert float(O.felbo_43(model, X, y, aug, correction="logdet")) == pytest.approx(want_ld, abs=1e-5)
    with pytest.raises(ValueError):
        O.felbo_43(model, X, y, aug, correction="other")


def test_objective_dispatch_and_variant_checks():
    rng = np.random.default_rng(4)
    m41, X, y = random_model(rng)
    assert float(O.objective(m41, X, y)) == float(O.elbo_41(m41, X, y))
    with pytest.raises(ValueError):
        O.felbo_42(m41, X, y)
    m42 = m41.replace(variant="42", full_prior_kernel=kernels.SqExp())
    with pytest.raises(ValueError):
        O.elbo_41(m42, X, y)
    assert float(O.objective(m42, X, y)) == float(O.felbo_42(m42, X, y))


def test_functional_kl_is_kl():
    rng = np.random.default_rng(5)
    q = GaussianDist(rng.normal(size=3), np.diag([1.0, 2.0, 0.5]))
    p = GaussianDist(np.zeros(3), np.eye(3))
    assert O.functional_kl(q, p) == pytest.approx(kl_oracle(q.mean, q.cov, p.mean, p.cov))


def test_sample_augmentation():
    b = [(-1.0, 2.0), (0.0, 0.5)]
    A = O.sample_augmentation(b, 500, 3)
    assert A.shape == (500, 2)
    assert np.all(A[:, 0] >= -1) and np.all(A[:, 0] < 2) and np.all(A[:, 1] < 0.5)
    np.testing.assert_array_equal(A, O.sample_augmentation(b, 500, 3))
    assert O.sample_augmentation(b, 0, 3).shape == (0, 2)
    with pytest.raises(ValueError):
        O.sample_augmentation([(1.0, 1.0)], 3, 0)
    with pytest.raises(ValueError):
        O.sample_augmentation(b, -1, 0)


def test_elbo_below_evidence_random_draws():
    rng = np.random.default_rng(6)
    for _ in range(50):
        model, X, y = random_model(rng, N=8, K=2, M=3)
        ev = gp_log_evidence(gpx_prior_cov(model, X), y, model.sigma2)
        assert float(O.elbo_41(model, X, y)) <= ev + 1e-9


def _mc_expected_kl(model, X_D, draws, rng):
    """E_u KL(q(f^D | u) || p(f^D)) by sampling u from q(u)."""
    from sevgp.model import conditional_f_given_inducing

    C = gram(model.full_prior_kernel, X_D) + model.full_prior_jitter * np.eye(len(X_D))
    vals = []
    for _ in range(draws):
        u = [b.a + b.L @ rng.standard_normal(b.M) for b in model.blocks]
        d = conditional_f_given_inducing(model, X_D, u)
        vals.append(kl_oracle(d.mean, d.cov + model.jitter * np.eye(len(X_D)), np.zeros(len(X_D)), C))
    vals = np.array(vals)
    return vals.mean(), vals.std() / np.sqrt(draws)


def test_expected_conditional_kl_closed_form_monte_carlo():
    rng = np.random.default_rng(7)
    model, X, _ = random_model(rng, N=4, K=2, M=4, variant="43")
    X_D = np.vstack([X, rng.uniform(-2, 2, (4, 2))])
    mc, se = _mc_expected_kl(model, X_D, 1000, rng)
    assert O.expected_conditional_kl(model, X_D) == pytest.approx(mc, abs=4 * se)
