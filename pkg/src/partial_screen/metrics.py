"""Screening metrics: macro F-score, quadratic weighted kappa, and their means."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

THRESHOLD = 0.5


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_binary(cls, preds, labels) -> ConfusionCounts:
        p = np.asarray(preds).astype(bool)
        y = np.asarray(labels).astype(bool)
        return cls(
            tp=int(np.sum(p & y)),
            fp=int(np.sum(p & ~y)),
            tn=int(np.sum(~p & ~y)),
            fn=int(np.sum(~p & y)),
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def macro_f(preds, labels, positive_only: bool = False) -> float:
    """Mean of the positive- and negative-class F1 (undefined F1 counts as 0)."""
    c = ConfusionCounts.from_binary(preds, labels)
    f_pos = _f1(c.tp, c.fp, c.fn)
    if positive_only:
        return f_pos
    f_neg = _f1(c.tn, c.fn, c.fp)
    return (f_pos + f_neg) / 2


def confusion_matrix(preds, labels, num_levels: int) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError("preds and labels must have the same shape")
    for arr in (preds, labels):
        if arr.size and (arr.min() < 0 or arr.max() >= num_levels):
            raise ValueError(f"values must lie in [0, {num_levels})")
    counts = np.zeros((num_levels, num_levels), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return counts


def qwk(preds, labels, num_levels: int = 2) -> float:
    """Quadratic weighted kappa; 0 when the expected disagreement is 0."""
    observed = confusion_matrix(preds, labels, num_levels).astype(np.float64)
    n = observed.sum()
    if n == 0:
        return 0.0
    idx = np.arange(num_levels)
    weights = (idx[:, None] - idx[None, :]) ** 2 / max(num_levels - 1, 1) ** 2
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / n
    denom = float(np.sum(weights * expected))
    if denom == 0:
        return 0.0
    return 1.0 - float(np.sum(weights * observed)) / denom


def aggregate(scores: Mapping[tuple[str, str], float] | Iterable[tuple[str, str, float]]) -> float:
    """Average per task across datasets first, then across tasks.

    ``scores`` maps ``(dataset, task)`` to a score, or is an iterable of
    ``(dataset, task, score)`` triples.
    """
    items = scores.items() if isinstance(scores, Mapping) else (((d, t), s) for d, t, s in scores)
    by_task: dict[str, list[float]] = defaultdict(list)
    for (_, task), value in items:
        by_task[task].append(float(value))
    if not by_task:
        raise ValueError("aggregate needs at least one score")
    return float(np.mean([np.mean(v) for v in by_task.values()]))


def evaluate_dataset(probs: np.ndarray, labels: np.ndarray, threshold: float = THRESHOLD) -> dict:
    """Per-task F and QWK for one dataset; tasks with label -1 are skipped per sample."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.shape != labels.shape:
        raise ValueError(f"predictions {probs.shape} do not match labels {labels.shape}")
    preds = (probs >= threshold).astype(np.int64)
    out = {}
    for t in range(labels.shape[1]):
        known = labels[:, t] >= 0
        if not known.any():
            continue
        out[str(t)] = {
            "F": macro_f(preds[known, t], labels[known, t]),
            "QWK": qwk(preds[known, t], labels[known, t], 2),
        }
    return out


def build_report(per_dataset: Mapping[str, dict]) -> dict:
    """Report with per-dataset per-task scores plus mF/mQWK (scores in percent)."""
    f_scores = {}
    k_scores = {}
    for name, tasks in per_dataset.items():
        for task, vals in tasks.items():
            f_scores[(name, task)] = vals["F"]
            k_scores[(name, task)] = vals["QWK"]
    report = {
        "datasets": {name: tasks for name, tasks in per_dataset.items()},
        "mF": 100.0 * aggregate(f_scores) if f_scores else None,
        "mQWK": 100.0 * aggregate(k_scores) if k_scores else None,
    }
    return report


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
