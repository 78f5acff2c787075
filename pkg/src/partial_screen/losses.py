"""Training objectives for the teacher and both students.

Probabilities enter every log through a clamp to ``[EPS, 1 - EPS]``.
Masked normalizations use the mask total over the whole batch; an empty
mask yields a constant zero with no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .labeling import PartialLabels, PseudoLabels, known_indicator, validate_labels
from .tensor import Tensor

EPS = 1e-7


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.6
    lambda2: float = 0.05
    lambda3: float = 1.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise LossError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class KernelConfig:
    bandwidth: float | str = "median"
    floor: float = 1e-3

    def resolve(self, a: np.ndarray, b: np.ndarray) -> float:
        if self.bandwidth == "median":
            return median_bandwidth(a, b, self.floor)
        h = float(self.bandwidth)
        if not h > 0:
            raise LossError(f"kernel bandwidth must be positive, got {h}")
        return h


def median_bandwidth(a: np.ndarray, b: np.ndarray, floor: float = 1e-3) -> float:
    """Median pairwise distance over the pooled feature vectors of ``a`` and ``b``."""
    dim = a.shape[-1]
    pooled = np.concatenate([a.reshape(-1, dim), b.reshape(-1, dim)])
    sq = np.sum(pooled * pooled, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * pooled @ pooled.T, 0.0)
    upper = d2[np.triu_indices(len(pooled), k=1)]
    if upper.size == 0:
        return floor
    return max(float(np.median(np.sqrt(upper))), floor)


def _labels_array(labels) -> np.ndarray:
    if isinstance(labels, PartialLabels):
        return labels.y
    if isinstance(labels, PseudoLabels):
        return labels.y_psd
    return validate_labels(labels)


def _zero() -> Tensor:
    return Tensor(0.0)


def partial_bce(probs, labels) -> Tensor:
    """Masked binary cross-entropy; entries labelled -1 are ignored.

    Pass ground-truth labels for the known-class loss and pseudo labels for
    the unknown-class loss.
    """
    probs = T.as_tensor(probs)
    y = _labels_array(labels)
    if y.shape != probs.shape:
        raise LossError(f"labels {y.shape} do not match probabilities {probs.shape}")
    mask = known_indicator(y)
    count = mask.sum()
    if count == 0:
        return _zero()
    target = np.where(mask > 0, y, 0).astype(np.float64)
    p = T.clip(probs, EPS, 1.0 - EPS)
    ll = T.log(p) * Tensor(target * mask) + T.log(1.0 - p) * Tensor((1.0 - target) * mask)
    return T.tsum(ll) * (-1.0 / count)


def s2_classification_loss(probs, labels, pseudo, weights: LossWeights = LossWeights()) -> Tensor:
    return partial_bce(probs, labels) + partial_bce(probs, pseudo) * weights.lambda1


def mmd_loss(f_teacher, f_student, kernel: KernelConfig = KernelConfig()) -> Tensor:
    """Gaussian-kernel MMD between matched disease features, averaged over [B, T].

    The teacher side is treated as a constant.
    """
    target = np.asarray(getattr(f_teacher, "data", f_teacher), dtype=np.float64)
    f_student = T.as_tensor(f_student)
    if target.shape != f_student.shape:
        raise LossError(f"feature shapes differ: {target.shape} vs {f_student.shape}")
    h = kernel.resolve(target, f_student.data)
    diff = f_student - Tensor(target)
    d2 = T.tsum(diff * diff, axis=-1)
    k = T.exp(d2 * (-1.0 / (2.0 * h * h)))
    return T.mean(1.0 - k) * 2.0


def kl_known(y_teacher, y_student, delta) -> Tensor:
    """One-term KL ``teacher * log(teacher / student)`` on known tasks."""
    teacher = np.clip(np.asarray(getattr(y_teacher, "data", y_teacher), dtype=np.float64), EPS, 1 - EPS)
    delta = np.asarray(delta, dtype=np.float64)
    count = delta.sum()
    if count == 0:
        return _zero()
    student = T.clip(T.as_tensor(y_student), EPS, 1.0 - EPS)
    terms = (Tensor(np.log(teacher)) - T.log(student)) * Tensor(teacher * delta)
    return T.tsum(terms) * (1.0 / count)


def adversarial_loss(labels, y_student) -> Tensor:
    """Negative one-term KL ``y * log(y / student)`` on known tasks.

    With ``0 log 0 = 0`` only known positives contribute, giving
    ``(1/|known|) * sum log(student)`` over them; the value is <= 0.
    """
    y = _labels_array(labels)
    delta = known_indicator(y)
    count = delta.sum()
    if count == 0:
        return _zero()
    positives = ((y == 1) & (delta > 0)).astype(np.float64)
    if positives.sum() == 0:
        return _zero()
    student = T.clip(T.as_tensor(y_student), EPS, 1.0 - EPS)
    return T.tsum(T.log(student) * Tensor(positives)) * (1.0 / count)


def s2_total_loss(s2_classification, mmd, kl, weights: LossWeights = LossWeights()) -> Tensor:
    return T.as_tensor(s2_classification) + T.as_tensor(mmd) * weights.lambda2 + T.as_tensor(kl) * weights.lambda3


def total_loss(teacher_ce, s1_pseudo_ce, s2_total) -> Tensor:
    return T.as_tensor(teacher_ce) + T.as_tensor(s1_pseudo_ce) + T.as_tensor(s2_total)
