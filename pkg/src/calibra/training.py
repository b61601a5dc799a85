"""Training objectives, the reparametrized gradient estimator and the training loop.

Four objectives share one loop:

* ``fnn``     cross-entropy
* ``ca-fnn``  cross-entropy + lambda * AECE
* ``bnn``     E_q[cross-entropy] + beta * KL(q || prior)
* ``ca-bnn``  E_q[cross-entropy + lambda * AECE] + beta * KL(q || prior)

Per step the gradient is taken of the mini-batch form: summed cross-entropy over
the batch, AECE on the batch, and the KL weighted by beta * |batch| / n.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import math
import time
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from . import autodiff as ad
from .calibration import KernelSpec, TemperatureSpec, aece_from_probs, evaluate_probs
from .data import Dataset, batches
from .models import MlpSpec, ParamVector, cross_entropy, init_params, logits, predict_probs_array
from .optim import make_optimizer
from .variational import (STREAM_SHUFFLE, STREAM_TRAIN, GaussianPrior, VariationalPosterior,
                          ensemble_predict, kl_terms, reparametrize, stream)

OBJECTIVES = ("fnn", "ca-fnn", "bnn", "ca-bnn")
LOG_COLUMNS = ("epoch", "train_loss", "test_acc", "test_ece", "kl", "aece", "seconds")


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainConfig:
    objective: str = "ca-bnn"
    lam: float = 10.0
    beta: float = 0.1
    n_samples: int = 1
    lr: float = 0.002
    optimizer: str = "rmsprop"
    rmsprop_alpha: float = 0.99
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    kernel_bandwidth: float = 0.4
    tau_r: float = 1e-3
    tau_c: float = 1e-2
    aece_mode: str = "fully-differentiable"
    n_bins: int = 15
    r_eval: int = 32
    prior_mean: float = 0.0
    prior_std: float = 0.05
    init_std: float = 0.01
    log_wall_clock: bool = False

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.lam < 0 or self.beta < 0:
            raise ValueError("lambda and beta must be non-negative")
        if self.n_samples < 1 or self.r_eval < 1:
            raise ValueError("sample counts must be >= 1")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 0 or self.n_bins < 1:
            raise ValueError("batch_size, n_bins must be >= 1 and epochs >= 0")
        if self.aece_mode not in ("original", "fully-differentiable"):
            raise ValueError(f"unknown aece mode {self.aece_mode!r}")
        # validates positivity
        self.kernel, self.temps, self.prior

    @property
    def bayesian(self) -> bool:
        return self.objective in ("bnn", "ca-bnn")

    @property
    def calibration_weight(self) -> float:
        """lambda as applied: the plain objectives carry no calibration term."""
        return self.lam if self.objective in ("ca-fnn", "ca-bnn") else 0.0

    @property
    def kernel(self) -> KernelSpec:
        return KernelSpec(self.kernel_bandwidth)

    @property
    def temps(self) -> TemperatureSpec:
        return TemperatureSpec(self.tau_r, self.tau_c)

    @property
    def prior(self) -> GaussianPrior:
        return GaussianPrior(self.prior_mean, self.prior_std)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def make_optimizer(self):
        return make_optimizer(self.optimizer, self.lr, rmsprop_alpha=self.rmsprop_alpha,
                              adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2, eps=self.eps)


class EpochRecord(NamedTuple):
    epoch: int
    train_loss: float
    test_acc: float
    test_ece: float
    kl: Optional[float]
    aece: Optional[float]
    seconds: Optional[float]


@dataclass
class TrainLog:
    records: List[EpochRecord] = field(default_factory=list)
    optimizer: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        def fmt(v):
            if v is None:
                return "NA"
            return repr(float(v)) if isinstance(v, float) else str(v)

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for rec in self.records:
            w.writerow([fmt(v) for v in rec])
        return buf.getvalue()


# -- objectives -------------------------------------------------------------

def frequentist_objective(spec: MlpSpec, theta, x, y, cfg: TrainConfig):
    """Returns (objective, cross-entropy, aece-or-None) tensors for one batch."""
    lam = cfg.calibration_weight
    if lam == 0.0:
        ce = cross_entropy(spec, theta, x, y)
        return ce, ce, None
    z = logits(spec, theta, x)
    ce = -ad.sum(ad.take_rows(ad.log_softmax(z), y))
    reg = aece_from_probs(ad.softmax(z), y, cfg.kernel, cfg.temps, cfg.aece_mode)
    return ce + lam * reg, ce, reg


class StepGradient(NamedTuple):
    grad_mu: np.ndarray
    grad_rho: np.ndarray
    ce: float
    aece: Optional[float]
    kl: float


def ca_bnn_step_gradient(post: VariationalPosterior, spec: MlpSpec, x, y, n_total: int,
                         cfg: TrainConfig, step: int, eps: Optional[np.ndarray] = None) -> StepGradient:
    """Reparametrized stochastic gradient of the calibration-aware free energy.

    Sample r draws its noise from the (seed, step, r) stream unless ``eps``
    (shape R x N) freezes it.  Per-sample gradients are reduced in index order.
    """
    n_samples = cfg.n_samples if eps is None else len(eps)
    grad_mu = np.zeros(post.size)
    grad_rho = np.zeros(post.size)
    ce_total = 0.0
    reg_total = 0.0
    has_reg = False
    # adding weight * KL to every sample's graph averages back to weight * grad KL
    kl_weight = cfg.beta * len(y) / n_total
    kl_value = None
    for r in range(n_samples):
        e = stream(cfg.seed, STREAM_TRAIN, step, r).standard_normal(post.size) if eps is None else eps[r]
        g = ad.Graph()
        mu = g.param(post.mu)
        rho = g.param(post.rho)
        theta = reparametrize(mu, rho, e)
        obj, ce, reg = frequentist_objective(spec, theta, x, y, cfg)
        if kl_weight > 0:
            kl = kl_terms(mu, rho, cfg.prior)
            kl_value = kl.item()
            obj = obj + kl_weight * kl
        grads = ad.backward(obj)
        grad_mu += grads[mu]
        grad_rho += grads[rho]
        ce_total += ce.item()
        if reg is not None:
            has_reg = True
            reg_total += reg.item()
    grad_mu /= n_samples
    grad_rho /= n_samples
    if kl_value is None:
        kl_value = kl_terms(post.mu, post.rho, cfg.prior).item()
    return StepGradient(grad_mu, grad_rho, ce_total / n_samples,
                        reg_total / n_samples if has_reg else None, kl_value)


def frequentist_step_gradient(theta: np.ndarray, spec: MlpSpec, x, y, cfg: TrainConfig):
    g = ad.Graph()
    th = g.param(theta)
    obj, ce, reg = frequentist_objective(spec, th, x, y, cfg)
    return ad.backward(obj)[th], ce.item(), None if reg is None else reg.item()


# -- loop -------------------------------------------------------------------

def predict(state, spec: MlpSpec, x, cfg: TrainConfig) -> np.ndarray:
    if isinstance(state, VariationalPosterior):
        return ensemble_predict(state, spec, x, cfg.r_eval, cfg.seed)
    return predict_probs_array(spec, state, x)


def initial_state(spec: MlpSpec, cfg: TrainConfig):
    if cfg.bayesian:
        return VariationalPosterior.initial(spec, cfg.seed, cfg.init_std)
    return init_params(spec, cfg.seed)


def train(spec: MlpSpec, train_ds: Dataset, test_ds: Dataset, cfg: TrainConfig, state=None,
          callback=None):
    """Run ``cfg.epochs`` epochs; returns (final state, TrainLog).

    ``callback(epoch, step, state)`` is invoked after every parameter update.
    """
    if train_ds.dim != spec.input_dim or train_ds.class_count != spec.class_count:
        raise ValueError("dataset shape does not match the model spec")
    state = initial_state(spec, cfg) if state is None else state
    bayes = isinstance(state, VariationalPosterior)
    if bayes:
        flat = np.concatenate([state.mu, state.rho])
    else:
        flat = state.values.copy()
    n_params = spec.param_count
    opt = cfg.make_optimizer()
    log = TrainLog(optimizer={"name": opt.name, **opt.hyperparameters()})
    n = len(train_ds)
    step = 0
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        loss_sum, reg_sum, n_steps, reg_steps = 0.0, 0.0, 0, 0
        kl_value = None
        for idx in batches(n, cfg.batch_size, stream(cfg.seed, STREAM_SHUFFLE, epoch)):
            x, y = train_ds.inputs[idx], train_ds.labels[idx]
            if bayes:
                post = VariationalPosterior(flat[:n_params], flat[n_params:])
                sg = ca_bnn_step_gradient(post, spec, x, y, n, cfg, step)
                grad = np.concatenate([sg.grad_mu, sg.grad_rho])
                ce_value, reg_value, kl_value = sg.ce, sg.aece, sg.kl
            else:
                grad, ce_value, reg_value = frequentist_step_gradient(flat, spec, x, y, cfg)
            objective = ce_value + (0.0 if reg_value is None else cfg.calibration_weight * reg_value)
            if not (math.isfinite(objective) and np.all(np.isfinite(grad))):
                raise TrainingAborted(f"non-finite objective or gradient at epoch {epoch}, step {step}")
            flat = opt.step(flat, grad)
            loss_sum += ce_value * n / len(idx)
            if reg_value is not None:
                reg_sum += reg_value
                reg_steps += 1
            n_steps += 1
            step += 1
            if callback is not None:
                callback(epoch, step, _unflatten(flat, spec, bayes))
        state = _unflatten(flat, spec, bayes)
        probs = predict(state, spec, test_ds.inputs, cfg)
        acc, report = evaluate_probs(probs, test_ds.labels, cfg.n_bins)
        if bayes:
            kl_value = kl_terms(state.mu, state.rho, cfg.prior).item()
        log.records.append(EpochRecord(
            epoch + 1,
            loss_sum / n_steps,
            acc,
            report.ece,
            kl_value if bayes else None,
            reg_sum / reg_steps if reg_steps else None,
            time.perf_counter() - started if cfg.log_wall_clock else None,
        ))
    return state, log


def _unflatten(flat: np.ndarray, spec: MlpSpec, bayes: bool):
    n_params = spec.param_count
    if bayes:
        return VariationalPosterior(flat[:n_params].copy(), flat[n_params:].copy())
    return ParamVector(flat.copy(), spec.layout())
