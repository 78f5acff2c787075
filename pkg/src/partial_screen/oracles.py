"""Slow reference implementations used to check the fast paths.

Everything here is written by direct summation or explicit loops, with no
shared code with the modules it checks. The test suite and the ``verify``
command both compare against these.
"""

from __future__ import annotations

import math

import numpy as np


def _center(n: int, k: int) -> int:
    """Index of unshifted bin ``k`` once the zero frequency sits at ``n // 2``."""
    return (k + n // 2) % n


def dft2_direct(x: np.ndarray) -> np.ndarray:
    """Shifted 2D DFT of an [..., H, W] array by explicit summation."""
    x = np.asarray(x, dtype=np.float64)
    height, width = x.shape[-2:]
    yy = np.arange(height)[:, None]
    xx = np.arange(width)[None, :]
    out = np.zeros(x.shape, dtype=complex)
    for u in range(height):
        for v in range(width):
            basis = np.exp(-2j * np.pi * (u * yy / height + v * xx / width))
            out[..., _center(height, u), _center(width, v)] = np.sum(x * basis, axis=(-2, -1))
    return out


def idft2_direct(z: np.ndarray) -> np.ndarray:
    """Complex inverse of :func:`dft2_direct`, including the 1/(H*W) factor."""
    z = np.asarray(z, dtype=complex)
    height, width = z.shape[-2:]
    out = np.zeros(z.shape, dtype=complex)
    for i in range(height):
        for j in range(width):
            acc = 0
            for u in range(height):
                for v in range(width):
                    phase = 2j * np.pi * (u * i / height + v * j / width)
                    acc = acc + z[..., _center(height, u), _center(width, v)] * np.exp(phase)
            out[..., i, j] = acc / (height * width)
    return out


def region_bounds(r: float, n: int) -> tuple[int, int]:
    side = max(1, min(n, int(math.floor(r * n + 0.5))))
    start = n // 2 - side // 2
    return start, start + side


def dropout_direct(x: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Multiply the direct-DFT amplitude by ``keep``, keep the phase, invert."""
    z = dft2_direct(x)
    amp, phase = np.abs(z), np.angle(z)
    return np.real(idft2_direct(amp * keep * np.exp(1j * phase)))


def two_pass_stats(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean, then population std around that mean, over the last two axes."""
    values = np.asarray(values, dtype=np.float64)
    flat = values.reshape(values.shape[:-2] + (-1,))
    n = flat.shape[-1]
    mu = flat.sum(axis=-1) / n
    var = ((flat - mu[..., None]) ** 2).sum(axis=-1) / n
    return mu, np.sqrt(var)


def uncert_direct(x, scale_mu, scale_sigma, r, z_mu, z_sigma, floor=1e-5) -> np.ndarray:
    """Low-frequency AdaIN with noisy statistics, step by step on the direct DFT."""
    x = np.asarray(x, dtype=np.float64)
    z = dft2_direct(x)
    amp, phase = np.abs(z), np.angle(z)
    h0, h1 = region_bounds(r, x.shape[-2])
    w0, w1 = region_bounds(r, x.shape[-1])
    inner = amp[..., h0:h1, w0:w1]
    mu, sigma = two_pass_stats(inner)
    beta = mu + np.asarray(scale_mu) * np.asarray(z_mu)
    gamma = sigma + np.asarray(scale_sigma) * np.asarray(z_sigma)
    eff = np.maximum(sigma, floor)
    new = amp.copy()
    new[..., h0:h1, w0:w1] = gamma[..., None, None] * (inner - mu[..., None, None]) / eff[..., None, None] + beta[..., None, None]
    return np.real(idft2_direct(new * np.exp(1j * phase)))


# -- labels and losses ----------------------------------------------------------

def pseudo_label_rule(delta: int, prob: float, tau: float) -> int:
    """Pseudo label for one entry: -1 on known tasks or inside the confidence band."""
    if delta == 1:
        return -1
    if prob > tau:
        return 1
    if prob < 1 - tau:
        return 0
    return -1


def partial_bce_loop(probs, labels, eps=1e-7) -> float:
    total, count = 0.0, 0
    for p, y in zip(np.ravel(probs), np.ravel(labels)):
        if y == -1:
            continue
        p = min(max(float(p), eps), 1 - eps)
        total -= math.log(p) if y == 1 else math.log(1 - p)
        count += 1
    return total / count if count else 0.0


def mmd_loop(f_teacher, f_student, bandwidth: float) -> float:
    ft = np.asarray(f_teacher, dtype=np.float64)
    fs = np.asarray(f_student, dtype=np.float64)
    rows_t = ft.reshape(-1, ft.shape[-1])
    rows_s = fs.reshape(-1, fs.shape[-1])
    acc = 0.0
    for a, b in zip(rows_t, rows_s):
        d2 = sum((ai - bi) ** 2 for ai, bi in zip(a, b))
        acc += 2.0 * (1.0 - math.exp(-d2 / (2.0 * bandwidth**2)))
    return acc / len(rows_t)


def median_distance_loop(a, b, floor=1e-3) -> float:
    pooled = [*np.asarray(a).reshape(-1, a.shape[-1]), *np.asarray(b).reshape(-1, b.shape[-1])]
    dists = []
    for i in range(len(pooled)):
        for j in range(i + 1, len(pooled)):
            dists.append(math.sqrt(float(np.sum((pooled[i] - pooled[j]) ** 2))))
    return max(float(np.median(dists)), floor) if dists else floor


# -- metrics ----------------------------------------------------------------------

def confusion_loop(preds, labels, levels: int) -> list[list[int]]:
    table = [[0] * levels for _ in range(levels)]
    for p, y in zip(preds, labels):
        table[int(y)][int(p)] += 1
    return table


def macro_f_loop(preds, labels) -> float:
    table = confusion_loop(preds, labels, 2)
    scores = []
    for cls in (1, 0):
        tp = table[cls][cls]
        fp = table[1 - cls][cls]
        fn = table[cls][1 - cls]
        scores.append(2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0)
    return sum(scores) / 2


def qwk_loop(preds, labels, levels: int = 2) -> float:
    table = confusion_loop(preds, labels, levels)
    n = sum(sum(row) for row in table)
    if n == 0:
        return 0.0
    row_tot = [sum(table[i]) for i in range(levels)]
    col_tot = [sum(table[i][j] for i in range(levels)) for j in range(levels)]
    num = den = 0.0
    for i in range(levels):
        for j in range(levels):
            w = (i - j) ** 2 / max(levels - 1, 1) ** 2
            num += w * table[i][j]
            den += w * row_tot[i] * col_tot[j] / n
    return 1.0 - num / den if den else 0.0
