"""Partial labels and confidence-thresholded pseudo labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNKNOWN = -1


class LabelError(ValueError):
    pass


def validate_labels(y) -> np.ndarray:
    y = np.asarray(y)
    bad = ~np.isin(y, (1, 0, -1))
    if bad.any():
        raise LabelError(f"labels must be in {{1, 0, -1}}; found {np.unique(y[bad]).tolist()}")
    return y.astype(np.int64)


def known_indicator(y) -> np.ndarray:
    """1.0 where a label (0 or 1) is present, 0.0 where it is -1."""
    return (validate_labels(y) != UNKNOWN).astype(np.float64)


@dataclass
class PartialLabels:
    y: np.ndarray

    def __post_init__(self):
        self.y = validate_labels(self.y)

    @property
    def delta(self) -> np.ndarray:
        return known_indicator(self.y)


@dataclass
class PseudoLabels:
    y_psd: np.ndarray

    def __post_init__(self):
        self.y_psd = validate_labels(self.y_psd)

    @property
    def zeta(self) -> np.ndarray:
        return known_indicator(self.y_psd)


def generate_pseudo_labels(y_hat, delta, tau: float = 0.95) -> PseudoLabels:
    """Threshold teacher probabilities on unknown tasks.

    ``y_hat`` is treated as data: pass detached probabilities (a numpy
    array or a tensor, whose values are read without tracking).
    """
    if not (0.5 < tau < 1.0):
        raise LabelError(f"tau must lie in (0.5, 1); got {tau}")
    probs = np.asarray(getattr(y_hat, "data", y_hat), dtype=np.float64)
    delta = np.asarray(delta)
    if probs.shape != delta.shape:
        raise LabelError(f"probabilities {probs.shape} and indicator {delta.shape} differ")
    if np.any((probs < 0) | (probs > 1)) or not np.all(np.isfinite(probs)):
        raise LabelError("probabilities must lie in [0, 1]")
    unknown = delta == 0
    out = np.full(probs.shape, UNKNOWN, dtype=np.int64)
    out[unknown & (probs > tau)] = 1
    out[unknown & (probs < 1.0 - tau)] = 0
    return PseudoLabels(out)
