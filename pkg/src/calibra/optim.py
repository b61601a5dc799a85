"""First-order optimizers over a flat parameter vector."""
from __future__ import annotations

import numpy as np


class Optimizer:
    name = "base"

    def __init__(self, lr: float):
        if not lr > 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=np.float64)
        grads = np.asarray(grads, dtype=np.float64)
        if params.shape != grads.shape:
            raise ValueError(f"params {params.shape} and grads {grads.shape} differ in shape")
        self.t += 1
        return self._update(params, grads)

    def _update(self, params, grads):
        raise NotImplementedError

    def hyperparameters(self) -> dict:
        return {"lr": self.lr}


class SGD(Optimizer):
    name = "sgd"

    def _update(self, params, grads):
        return params - self.lr * grads


class RMSprop(Optimizer):
    """v <- a v + (1 - a) g^2;  p <- p - lr g / (sqrt(v) + eps)."""

    name = "rmsprop"

    def __init__(self, lr: float, alpha: float = 0.99, eps: float = 1e-8):
        super().__init__(lr)
        self.alpha, self.eps = alpha, eps
        self.v = None

    def _update(self, params, grads):
        if self.v is None:
            self.v = np.zeros_like(params)
        self.v = self.alpha * self.v + (1.0 - self.alpha) * grads * grads
        return params - self.lr * grads / (np.sqrt(self.v) + self.eps)

    def hyperparameters(self):
        return {"lr": self.lr, "alpha": self.alpha, "eps": self.eps}


class Adam(Optimizer):
    name = "adam"

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = None
        self.v = None

    def _update(self, params, grads):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        b1, b2 = self.beta1, self.beta2
        self.m = b1 * self.m + (1.0 - b1) * grads
        self.v = b2 * self.v + (1.0 - b2) * grads * grads
        m_hat = self.m / (1.0 - b1 ** self.t)
        v_hat = self.v / (1.0 - b2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def hyperparameters(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def make_optimizer(name: str, lr: float, **kw) -> Optimizer:
    if name == "sgd":
        return SGD(lr)
    if name == "rmsprop":
        return RMSprop(lr, alpha=kw.get("rmsprop_alpha", 0.99), eps=kw.get("eps", 1e-8))
    if name == "adam":
        return Adam(lr, beta1=kw.get("adam_beta1", 0.9), beta2=kw.get("adam_beta2", 0.999),
                    eps=kw.get("eps", 1e-8))
    raise ValueError(f"unknown optimizer {name!r}")
