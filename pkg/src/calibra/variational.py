"""Mean-field Gaussian posterior over network weights.

q(theta | mu, rho) = N(mu, diag(exp(2 rho))), sampled by reparametrization
theta = mu + exp(rho) * eps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .models import MlpSpec, ParamVector, init_params, predict_probs_array

# stream tags keep training noise, evaluation noise and shuffling independent
STREAM_TRAIN = 0
STREAM_EVAL = 1
STREAM_SHUFFLE = 2


def stream(seed: int, tag: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(tag), *(int(k) for k in keys)])


@dataclass
class GaussianPrior:
    mean: float = 0.0
    std: float = 0.05

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError(f"prior std must be positive, got {self.std}")


@dataclass
class VariationalPosterior:
    mu: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if self.mu.shape != self.rho.shape or self.mu.ndim != 1:
            raise ValueError(f"mu {self.mu.shape} and rho {self.rho.shape} must be equal-length vectors")

    @property
    def size(self) -> int:
        return self.mu.shape[0]

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.rho)

    def copy(self) -> "VariationalPosterior":
        return VariationalPosterior(self.mu.copy(), self.rho.copy())

    @classmethod
    def initial(cls, spec: MlpSpec, seed: int, init_std: float = 0.01) -> "VariationalPosterior":
        mu = init_params(spec, seed).values
        return cls(mu, np.full_like(mu, np.log(init_std)))


def sample_theta(post: VariationalPosterior, rng: np.random.Generator):
    """Draw (theta, eps) with theta = mu + exp(rho) * eps."""
    eps = rng.standard_normal(post.size)
    return post.mu + np.exp(post.rho) * eps, eps


def reparametrize(mu, rho, eps) -> ad.Tensor:
    """Differentiable theta(mu, rho) for a frozen noise vector."""
    return ad.add(mu, ad.mul(ad.exp(rho), eps))


def kl_terms(mu, rho, prior: GaussianPrior) -> ad.Tensor:
    """Closed-form KL(q || prior) for diagonal Gaussians, in-graph."""
    if not prior.std > 0:
        raise ValueError(f"prior std must be positive, got {prior.std}")
    var_p = prior.std ** 2
    quad = (ad.exp(2.0 * ad.as_tensor(rho)) + (ad.as_tensor(mu) - prior.mean) ** 2) / (2.0 * var_p)
    return ad.sum(quad - rho + (np.log(prior.std) - 0.5))


def kl_to_prior(post: VariationalPosterior, prior: GaussianPrior) -> float:
    return kl_terms(post.mu, post.rho, prior).item()


def ensemble_predict(post: VariationalPosterior, spec: MlpSpec, x, n_samples: int,
                     seed: int) -> np.ndarray:
    """Average of predict_probs over ``n_samples`` posterior draws."""
    if n_samples < 1:
        raise ValueError(f"ensemble size must be >= 1, got {n_samples}")
    total = None
    work = {}
    for r in range(n_samples):
        theta, _ = sample_theta(post, stream(seed, STREAM_EVAL, r))
        p = predict_probs_array(spec, theta, x, work)
        if total is None:
            total = p
        else:
            total += p
    return total / n_samples


def as_param_vector(theta: np.ndarray, spec: MlpSpec) -> ParamVector:
    return ParamVector(np.asarray(theta, dtype=np.float64), spec.layout())
