"""Calibration measurement and the trainable WMMCE regularizer."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from . import _kernels
from . import autodiff as ad
from .models import MlpSpec, predict_probs

MODES = ("original", "fully-differentiable")


@dataclass(frozen=True)
class KernelSpec:
    bandwidth: float = 0.4

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"kernel bandwidth must be positive, got {self.bandwidth}")


@dataclass(frozen=True)
class TemperatureSpec:
    tau_r: float = 1e-3
    tau_c: float = 1e-2

    def __post_init__(self):
        if not (self.tau_r > 0 and self.tau_c > 0):
            raise ValueError(f"temperatures must be positive, got {self.tau_r}, {self.tau_c}")


@dataclass(frozen=True)
class PredictionRecord:
    probs: np.ndarray
    decision: int
    confidence: float
    correctness: int
    label: int


@dataclass
class CalibrationReport:
    n_bins: int
    counts: np.ndarray
    accuracy: np.ndarray
    confidence: np.ndarray
    ece: float

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict:
        def nan_to_none(a):
            return [None if math.isnan(v) else float(v) for v in a]

        return {
            "n_bins": self.n_bins,
            "n": self.n,
            "ece": self.ece,
            "counts": [int(c) for c in self.counts],
            "accuracy": nan_to_none(self.accuracy),
            "confidence": nan_to_none(self.confidence),
        }


# -- hard scores and ECE ----------------------------------------------------

def hard_scores(probs, labels):
    """(decision, confidence, correctness) arrays; argmax ties go to the lowest index."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    k = probs.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    decision = np.argmax(probs, axis=1)
    confidence = probs[np.arange(probs.shape[0]), decision]
    correct = (decision == labels).astype(np.float64)
    return decision, confidence, correct


def score_predictions(probs, labels) -> List[PredictionRecord]:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    decision, confidence, correct = hard_scores(probs, labels)
    return [PredictionRecord(probs[i], int(decision[i]), float(confidence[i]),
                             int(correct[i]), int(labels[i]))
            for i in range(probs.shape[0])]


def ece_from_scores(confidence, correct, n_bins: int = 15) -> CalibrationReport:
    confidence = np.asarray(confidence, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    if n_bins < 1:
        raise ValueError(f"bin count must be >= 1, got {n_bins}")
    n = confidence.shape[0]
    if n == 0:
        raise ValueError("compute_ece: no predictions")
    counts, sum_conf, sum_correct = _kernels.bin_stats(confidence, correct, n_bins)
    acc = np.full(n_bins, np.nan)
    conf = np.full(n_bins, np.nan)
    ece = 0.0
    for m in range(n_bins):
        if counts[m] == 0:
            continue
        acc[m] = sum_correct[m] / counts[m]
        conf[m] = sum_conf[m] / counts[m]
        ece += counts[m] / n * abs(acc[m] - conf[m])
    return CalibrationReport(n_bins, np.asarray(counts, dtype=np.int64), acc, conf, float(ece))


def compute_ece(records: Sequence[PredictionRecord], n_bins: int = 15) -> CalibrationReport:
    if len(records) == 0:
        raise ValueError("compute_ece: empty record list")
    return ece_from_scores([r.confidence for r in records],
                           [r.correctness for r in records], n_bins)


def evaluate_probs(probs, labels, n_bins: int = 15):
    """(accuracy, CalibrationReport) for a probability matrix."""
    _, confidence, correct = hard_scores(probs, labels)
    return float(correct.mean()), ece_from_scores(confidence, correct, n_bins)


# -- reliability diagram ----------------------------------------------------

RELIABILITY_COLUMNS = ("bin_index", "left_edge", "right_edge", "count", "accuracy", "confidence")


def reliability_diagram(report: CalibrationReport) -> List[tuple]:
    rows = []
    m_total = report.n_bins
    for m in range(m_total):
        count = int(report.counts[m])
        acc = None if count == 0 else float(report.accuracy[m])
        conf = None if count == 0 else float(report.confidence[m])
        rows.append((m + 1, m / m_total, (m + 1) / m_total, count, acc, conf))
    return rows


def format_reliability(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RELIABILITY_COLUMNS)
    for idx, left, right, count, acc, conf in rows:
        w.writerow([idx, repr(left), repr(right), count,
                    "NA" if acc is None else repr(acc),
                    "NA" if conf is None else repr(conf)])
    return buf.getvalue()


def parse_reliability(text: str) -> List[tuple]:
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != RELIABILITY_COLUMNS:
        raise ValueError(f"unexpected reliability header {header}")
    rows = []
    for rec in reader:
        idx, left, right, count, acc, conf = rec
        rows.append((int(idx), float(left), float(right), int(count),
                     None if acc == "NA" else float(acc),
                     None if conf == "NA" else float(conf)))
    return rows


def ece_from_table(rows) -> float:
    n = sum(r[3] for r in rows)
    ece = 0.0
    for _, _, _, count, acc, conf in rows:
        if count:
            ece += count / n * abs(acc - conf)
    return ece


# -- kernel and WMMCE -------------------------------------------------------

def laplacian_kernel(a: float, b: float, kernel: KernelSpec = KernelSpec()) -> float:
    return math.exp(-abs(a - b) / kernel.bandwidth)


def _safe_divide(num, denom_value: float, denom):
    # zero denominators only occur when every numerator term is zero as well
    if denom_value == 0.0:
        return ad.Tensor(np.zeros(ad.as_tensor(num).shape))
    return num / denom


def wmmce(confidence, correctness, kernel: KernelSpec = KernelSpec()) -> ad.Tensor:
    """Weighted MMCE over confidence and (possibly soft) correctness scores.

    Pairs are weighted by c_i c_j, (1-c_i)(1-c_j) and c_i (1-c_j), which for
    0/1 scores reproduces the three index-restricted sums exactly.  The three
    sums collapse into one quadratic form w^T K w with
    w_i = (1-c_i) r_i / (n - n_c) - c_i (1-r_i) / n_c.
    """
    r = ad.as_tensor(confidence)
    c = ad.as_tensor(correctness)
    if r.value.ndim != 1 or r.shape != c.shape:
        raise ValueError(f"wmmce: shapes {r.shape} and {c.shape} must be equal 1-D")
    n = r.shape[0]
    if n == 0:
        raise ValueError("wmmce: empty input")
    n_c = ad.sum(c)
    n_w = n - n_c
    a = _safe_divide((1.0 - c) * r, float(n_w.value), n_w)
    b = _safe_divide(c * (1.0 - r), float(n_c.value), n_c)
    s = ad.laplacian_quadform(r, a - b, kernel.bandwidth)
    # the sqrt op evaluates its derivative at s + 1e-12, so s = 0 stays finite
    return ad.sqrt(ad.clip_min(s, 0.0))


def wmmce_value(confidence, correctness, kernel: KernelSpec = KernelSpec()) -> float:
    return wmmce(np.asarray(confidence, float), np.asarray(correctness, float), kernel).item()


# -- differentiable scores --------------------------------------------------

def smoothed_confidence(probs, tau_r: float) -> ad.Tensor:
    """sum_y p_y softmax(p / tau_r)_y, row-wise."""
    p = ad.as_tensor(probs)
    return ad.sum(p * ad.softmax(p * (1.0 / tau_r)), axis=-1)


def soft_rank(probs, labels, tau_c: float) -> ad.Tensor:
    """1 + sum_{y' != y} sigmoid(-(p_y - p_y') / tau_c) at y = label."""
    p = ad.as_tensor(probs)
    if p.value.ndim == 1:
        return soft_rank(ad.reshape(p, (1, -1)), np.atleast_1d(labels), tau_c)[0]
    labels = np.asarray(labels, dtype=np.intp)
    n, k = p.shape
    p_true = ad.reshape(ad.take_rows(p, labels), (n, 1))
    gap = p_true - p
    others = np.ones((n, k))
    others[np.arange(n), labels] = 0.0
    return 1.0 + ad.sum(ad.sigmoid(gap * (-1.0 / tau_c)) * others, axis=-1)


def smoothed_correctness(probs, labels, tau_c: float) -> ad.Tensor:
    """min(ReLU(2 - soft_rank), 1)."""
    return ad.clip_max(ad.relu(2.0 - soft_rank(probs, labels, tau_c)), 1.0)


def aece_from_probs(probs: ad.Tensor, labels, kernel: KernelSpec, temps: TemperatureSpec,
                    mode: str = "fully-differentiable") -> ad.Tensor:
    probs = ad.as_tensor(probs)
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape[0] < 2:
        raise ValueError("aece needs a batch of at least 2 examples")
    if mode == "fully-differentiable":
        r = smoothed_confidence(probs, temps.tau_r)
        c = smoothed_correctness(probs, labels, temps.tau_c)
    elif mode == "original":
        decision, _, correct = hard_scores(probs.value, labels)
        r = ad.take_rows(probs, decision)
        c = correct
    else:
        raise ValueError(f"unknown aece mode {mode!r}; expected one of {MODES}")
    return wmmce(r, c, kernel)


def aece(spec: MlpSpec, theta, x, y, kernel: KernelSpec = KernelSpec(),
         temps: TemperatureSpec = TemperatureSpec(), mode: str = "fully-differentiable") -> ad.Tensor:
    return aece_from_probs(predict_probs(spec, theta, x), y, kernel, temps, mode)
