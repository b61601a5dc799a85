"""Softmax multilayer perceptrons over a flat parameter vector."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: Tuple[int, ...]
    class_count: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.class_count < 2:
            raise ValueError(f"class_count must be >= 2, got {self.class_count}")
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ValueError("all layer dimensions must be positive")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def dims(self) -> List[int]:
        return [self.input_dim, *self.hidden_dims, self.class_count]

    def layout(self) -> List[Tuple[str, int, Tuple[int, ...]]]:
        """(name, offset, shape) for every weight and bias block, in storage order."""
        out = []
        offset = 0
        dims = self.dims
        for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            out.append((f"layer{k}.weight", offset, (fan_in, fan_out)))
            offset += fan_in * fan_out
            out.append((f"layer{k}.bias", offset, (fan_out,)))
            offset += fan_out
        return out

    @property
    def param_count(self) -> int:
        name, offset, shape = self.layout()[-1]
        return offset + int(np.prod(shape))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "class_count": self.class_count,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(int(d["input_dim"]), tuple(d["hidden_dims"]), int(d["class_count"]),
                   d.get("activation", "relu"))


@dataclass
class ParamVector:
    values: np.ndarray
    layout: list = field(default_factory=list)

    def block(self, name: str) -> np.ndarray:
        for n, offset, shape in self.layout:
            if n == name:
                return self.values[offset:offset + int(np.prod(shape))].reshape(shape)
        raise KeyError(name)


def init_params(spec: MlpSpec, seed: int) -> ParamVector:
    """Gaussian weights with std 1/sqrt(fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    values = np.zeros(spec.param_count)
    for name, offset, shape in spec.layout():
        if name.endswith(".weight"):
            size = shape[0] * shape[1]
            values[offset:offset + size] = rng.standard_normal(size) / np.sqrt(shape[0])
    return ParamVector(values, spec.layout())


def _as_theta(theta):
    if isinstance(theta, ParamVector):
        return ad.Tensor(theta.values)
    return ad.as_tensor(theta)


def logits(spec: MlpSpec, theta, x) -> ad.Tensor:
    theta = _as_theta(theta)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"input has shape {x.shape}, expected (n, {spec.input_dim})")
    if theta.shape != (spec.param_count,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({spec.param_count},)")
    act = ad.relu if spec.activation == "relu" else ad.tanh
    layout = spec.layout()
    h = ad.Tensor(x)
    n_layers = len(layout) // 2
    for k in range(n_layers):
        _, w_off, w_shape = layout[2 * k]
        _, b_off, b_shape = layout[2 * k + 1]
        w = ad.reshape(theta[w_off:w_off + w_shape[0] * w_shape[1]], w_shape)
        b = theta[b_off:b_off + b_shape[0]]
        h = h @ w + b
        if k < n_layers - 1:
            h = act(h)
    return h


def predict_probs_array(spec: MlpSpec, theta: np.ndarray, x, work: dict = None) -> np.ndarray:
    """Inference-only forward pass: same arithmetic as predict_probs, no tape.

    ``work`` (a dict, initially empty) keeps the per-layer buffers between
    calls with the same batch size; ensemble evaluation reuses it across
    samples, which avoids re-faulting large arrays every draw.  The returned
    array is fresh either way.
    """
    theta = np.asarray(theta.values if isinstance(theta, ParamVector) else theta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"input has shape {x.shape}, expected (n, {spec.input_dim})")
    if theta.shape != (spec.param_count,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({spec.param_count},)")
    work = {} if work is None else work
    layout = spec.layout()
    n_layers = len(layout) // 2
    h = x
    for k in range(n_layers):
        _, w_off, w_shape = layout[2 * k]
        _, b_off, b_shape = layout[2 * k + 1]
        last = k == n_layers - 1
        buf = work.get(k)
        if last or buf is None or buf.shape != (x.shape[0], w_shape[1]):
            buf = np.empty((x.shape[0], w_shape[1]))
            if not last:
                work[k] = buf
        np.matmul(h, theta[w_off:w_off + w_shape[0] * w_shape[1]].reshape(w_shape), out=buf)
        buf += theta[b_off:b_off + b_shape[0]]
        if not last:
            if spec.activation == "relu":
                np.maximum(buf, 0.0, out=buf)
            else:
                np.tanh(buf, out=buf)
        h = buf
    h -= h.max(axis=-1, keepdims=True)
    np.exp(h, out=h)
    h /= h.sum(axis=-1, keepdims=True)
    return h


def predict_probs(spec: MlpSpec, theta, x) -> ad.Tensor:
    return ad.softmax(logits(spec, theta, x))


def log_probs(spec: MlpSpec, theta, x) -> ad.Tensor:
    return ad.log_softmax(logits(spec, theta, x))


def cross_entropy(spec: MlpSpec, theta, x, y) -> ad.Tensor:
    """-sum_i log p(y_i | x_i, theta) over the batch."""
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("cross_entropy: empty batch")
    return -ad.sum(ad.take_rows(log_probs(spec, theta, x), y))
