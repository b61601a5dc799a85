import math

import numpy as np
import pytest
from scipy import stats

from calibra import autodiff as ad
from calibra.models import MlpSpec, init_params, predict_probs
from calibra.variational import (GaussianPrior, VariationalPosterior, ensemble_predict, kl_terms,
                                 kl_to_prior, sample_theta, stream)

from oracles import central_diff, rel_err


def test_collapsed_posterior_samples_mean():
    rng = np.random.default_rng(0)
    mu = rng.normal(size=50)
    post = VariationalPosterior(mu, np.full(50, -20.0))
    theta, eps = sample_theta(post, rng)
    assert np.max(np.abs(eps)) <= 6
    assert np.max(np.abs(theta - mu)) < 1e-8


def test_zero_noise_is_mean():
    mu = np.array([0.3, -1.0])
    post = VariationalPosterior(mu, np.array([0.5, 2.0]))
    theta = post.mu + np.exp(post.rho) * np.zeros(2)
    assert np.array_equal(theta, mu)


def test_sample_mean_concentrates():
    mu = np.array([0.5, -2.0, 3.0])
    rho = np.array([0.0, -1.0, 0.5])
    post = VariationalPosterior(mu, rho)
    rng = np.random.default_rng(1)
    draws = np.stack([sample_theta(post, rng)[0] for _ in range(100_000)])
    assert np.all(np.abs(draws.mean(axis=0) - mu) < 4 * np.exp(rho) / math.sqrt(1e5))


def test_posterior_shape_validation():
    with pytest.raises(ValueError):
        VariationalPosterior(np.zeros(3), np.zeros(2))


def test_kl_at_prior_is_zero():
    prior = GaussianPrior(0.3, 0.05)
    post = VariationalPosterior(np.full(10, 0.3), np.full(10, math.log(0.05)))
    assert abs(kl_to_prior(post, prior)) < 1e-12


def test_kl_unit_shift():
    assert kl_to_prior(VariationalPosterior([1.0], [0.0]), GaussianPrior(0.0, 1.0)) == pytest.approx(0.5)


def test_kl_rejects_bad_prior():
    with pytest.raises(ValueError):
        GaussianPrior(0.0, 0.0)


def _mc_kl(mu, rho, prior, n, rng):
    sd = np.exp(rho)
    theta = mu + sd * rng.standard_normal((n, mu.size))
    log_q = stats.norm.logpdf(theta, mu, sd).sum(axis=1)
    log_p = stats.norm.logpdf(theta, prior.mean, prior.std).sum(axis=1)
    d = log_q - log_p
    return d.mean(), d.std(ddof=1) / math.sqrt(n)


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(2)
    for _ in range(5):
        prior = GaussianPrior(rng.normal() * 0.1, rng.uniform(0.05, 1.0))
        mu = rng.normal(size=4) * 0.3
        rho = np.log(rng.uniform(0.02, 1.0, size=4))
        est, se = _mc_kl(mu, rho, prior, 100_000, rng)
        assert abs(kl_to_prior(VariationalPosterior(mu, rho), prior) - est) < 3 * se


def test_kl_nonnegative_near_prior():
    prior = GaussianPrior(0.0, 0.5)
    rng = np.random.default_rng(3)
    for scale in (1e-1, 1e-3, 1e-6):
        mu = rng.normal(size=20) * scale
        rho = math.log(0.5) + rng.normal(size=20) * scale
        assert kl_to_prior(VariationalPosterior(mu, rho), prior) > 0


def test_kl_gradient():
    rng = np.random.default_rng(4)
    prior = GaussianPrior(0.1, 0.3)
    for _ in range(20):
        mu, rho = rng.normal(size=6), rng.normal(size=6) * 0.5
        g = ad.Graph()
        m, r = g.param(mu), g.param(rho)
        grads = ad.backward(kl_terms(m, r, prior))
        assert rel_err(grads[m], central_diff(lambda v: kl_terms(v, rho, prior).item(), mu)) < 1e-4
        assert rel_err(grads[r], central_diff(lambda v: kl_terms(mu, v, prior).item(), rho)) < 1e-4


SPEC = MlpSpec(2, (4,), 3)


def test_ensemble_collapsed_equals_mean_prediction():
    mu = init_params(SPEC, 0).values
    post = VariationalPosterior(mu, np.full_like(mu, -20.0))
    x = np.random.default_rng(5).normal(size=(10, 2))
    p = ensemble_predict(post, SPEC, x, 8, seed=3)
    assert np.max(np.abs(p - predict_probs(SPEC, mu, x).value)) < 1e-6


def test_ensemble_single_sample_is_one_forward_pass():
    from calibra.variational import STREAM_EVAL
    mu = init_params(SPEC, 1).values
    post = VariationalPosterior(mu, np.full_like(mu, -1.0))
    x = np.random.default_rng(6).normal(size=(5, 2))
    theta, _ = sample_theta(post, stream(11, STREAM_EVAL, 0))
    assert np.array_equal(ensemble_predict(post, SPEC, x, 1, seed=11), predict_probs(SPEC, theta, x).value)


def test_ensemble_rejects_zero_samples():
    mu = init_params(SPEC, 1).values
    with pytest.raises(ValueError):
        ensemble_predict(VariationalPosterior(mu, mu * 0), SPEC, np.zeros((1, 2)), 0, 0)


def test_ensemble_concentration():
    spec = MlpSpec(2, (3,), 2)
    mu = init_params(spec, 2).values
    post = VariationalPosterior(mu, np.full_like(mu, math.log(0.5)))
    x = np.random.default_rng(7).normal(size=(4, 2))
    a = ensemble_predict(post, spec, x, 10_000, seed=1)
    b = ensemble_predict(post, spec, x, 10_000, seed=2)
    assert np.max(np.abs(a - b)) < 0.01


@pytest.mark.parametrize("r", [1, 2, 7])
def test_ensemble_rows_are_distributions(r):
    mu = init_params(SPEC, 3).values
    post = VariationalPosterior(mu, np.zeros_like(mu))
    p = ensemble_predict(post, SPEC, np.random.default_rng(8).normal(size=(20, 2)) * 3, r, seed=0)
    assert np.all(p >= 0) and np.allclose(p.sum(axis=1), 1, atol=1e-9)


def test_streams_independent_of_sample_count():
    a = stream(5, 0, 3, 1).standard_normal(4)
    b = stream(5, 0, 3, 1).standard_normal(4)
    c = stream(5, 0, 3, 2).standard_normal(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
