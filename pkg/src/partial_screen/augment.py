"""Low-frequency feature augmentations in the amplitude spectrum.

Two augmentations operate on the centered amplitude spectrum of a feature
map and leave the phase untouched:

* ``lf_dropout`` zeroes random amplitude bins inside the centered
  low-frequency square.
* ``lf_uncert`` re-styles the low-frequency amplitudes per channel with
  AdaIN, using statistics perturbed by Gaussian noise of learnable scale.

Both act on the last two axes, so any leading [B, C] layout works; stats
and noise are per leading index (per sample, per channel).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .spectral import (
    Spectrum,
    angle,
    fft2_centered,
    ifft2_centered,
    magnitude,
    polar,
    region_dft,
    region_idft_add,
)
from .tensor import Tensor

SIGMA_FLOOR = 1e-5


class AugmentError(ValueError):
    pass


@dataclass(frozen=True)
class LowFreqRegion:
    """Centered square of low-frequency bins.

    Each side holds ``max(1, round(r * dim))`` bins (halves round up) and
    starts at ``dim // 2 - side // 2``, so the zero-frequency bin is always
    inside.
    """

    height: int
    width: int
    r: float

    def __post_init__(self):
        if not (0.0 < self.r <= 1.0):
            raise AugmentError(f"r must lie in (0, 1], got {self.r}")

    @staticmethod
    def side(r: float, dim: int) -> int:
        return max(1, min(dim, int(math.floor(r * dim + 0.5))))

    @property
    def slices(self) -> tuple[slice, slice]:
        sh, sw = self.side(self.r, self.height), self.side(self.r, self.width)
        h0 = self.height // 2 - sh // 2
        w0 = self.width // 2 - sw // 2
        return slice(h0, h0 + sh), slice(w0, w0 + sw)

    @property
    def size(self) -> int:
        return self.side(self.r, self.height) * self.side(self.r, self.width)

    def mask(self) -> np.ndarray:
        out = np.zeros((self.height, self.width), dtype=bool)
        out[self.slices] = True
        return out


@dataclass
class DropMask:
    values: np.ndarray
    seed: int | None = None


def draw_drop_mask(shape, r: float, p: float, rng: np.random.Generator, seed=None) -> DropMask:
    """Bernoulli(1-p) keep-mask inside the low-frequency region, ones elsewhere.

    Draws are independent per entry of ``shape`` (per sample and channel).
    """
    if not (0.0 <= p <= 1.0):
        raise AugmentError(f"p must lie in [0, 1], got {p}")
    region = LowFreqRegion(shape[-2], shape[-1], r)
    sh, sw = region.slices
    mask = np.ones(shape)
    inner = mask[..., sh, sw]
    mask[..., sh, sw] = (rng.random(inner.shape) >= p).astype(mask.dtype)
    return DropMask(mask, seed)


def dropout_spectrum(spec: Spectrum, mask: DropMask) -> Spectrum:
    if mask.values.shape != spec.amplitude.shape:
        raise AugmentError(f"mask {mask.values.shape} does not match spectrum {spec.amplitude.shape}")
    return Spectrum(spec.amplitude * Tensor(mask.values), spec.phase, spec.shifted)


def lf_dropout(
    x,
    r: float,
    p: float,
    rng: np.random.Generator | None = None,
    mask: DropMask | None = None,
    method: str = "region",
) -> Tensor:
    """Drop low-frequency amplitude bins and transform back.

    ``method="full"`` goes through the whole spectrum; ``"region"`` (the
    default) computes only the bins inside the low-frequency square and adds
    the resulting change to ``x``. Both give the same map.
    """
    if not (0.0 <= p <= 1.0):
        raise AugmentError(f"p must lie in [0, 1], got {p}")
    if not (0.0 < r <= 1.0):
        raise AugmentError(f"r must lie in (0, 1], got {r}")
    x = T.as_tensor(x)
    if mask is None:
        if rng is None:
            raise AugmentError("lf_dropout needs either an rng or a frozen mask")
        mask = draw_drop_mask(x.shape, r, p, rng)
    if method == "full":
        return ifft2_centered(dropout_spectrum(fft2_centered(x), mask), strict=False)
    if mask.values.shape != x.shape:
        raise AugmentError(f"mask {mask.values.shape} does not match input {x.shape}")
    sh, sw = LowFreqRegion(x.shape[-2], x.shape[-1], r).slices
    z = region_dft(x, sh, sw)
    dz = z * Tensor(mask.values[..., sh, sw] - 1.0)
    return region_idft_add(x, dz, sh, sw)


@dataclass
class LFStats:
    mu: Tensor
    sigma: Tensor


def _channel_stats(inner: Tensor) -> LFStats:
    mu = inner.mean(axis=(-2, -1))
    centered = inner - T.reshape(mu, mu.shape + (1, 1))
    sigma = T.sqrt((centered * centered).mean(axis=(-2, -1)))
    return LFStats(mu, sigma)


def lowfreq_stats(amplitude, r: float) -> LFStats:
    """Per-channel mean and population std over the low-frequency region."""
    amplitude = T.as_tensor(amplitude)
    sh, sw = LowFreqRegion(amplitude.shape[-2], amplitude.shape[-1], r).slices
    return _channel_stats(amplitude[..., sh, sw])


def _restyle(amp: Tensor, stats: LFStats, scale_mu, scale_sigma, z_mu, z_sigma, floor: float) -> Tensor:
    """AdaIN of ``amp`` from ``stats`` toward the noise-perturbed statistics."""
    if floor <= 0:
        raise AugmentError("sigma floor must be positive")
    scale_mu, scale_sigma = T.as_tensor(scale_mu), T.as_tensor(scale_sigma)
    if np.any(scale_mu.data < 0) or np.any(scale_sigma.data < 0):
        raise AugmentError("noise scales must be nonnegative")
    beta = stats.mu + scale_mu * T.as_tensor(z_mu)
    gamma = stats.sigma + scale_sigma * T.as_tensor(z_sigma)
    eff = T.maximum(stats.sigma, floor)
    if not np.all(eff.data > 0) or not np.all(np.isfinite(eff.data)):
        raise AugmentError("degenerate low-frequency statistics")

    def grid(v):
        return T.reshape(v, v.shape + (1, 1))

    return grid(gamma) * ((amp - grid(stats.mu)) / grid(eff)) + grid(beta)


def uncert_spectrum(
    spec: Spectrum,
    scale_mu,
    scale_sigma,
    r: float,
    z_mu,
    z_sigma,
    floor: float = SIGMA_FLOOR,
) -> Spectrum:
    """Spectrum with low-frequency amplitudes restyled; other bins untouched."""
    amp = spec.amplitude
    restyled = _restyle(amp, lowfreq_stats(amp, r), scale_mu, scale_sigma, z_mu, z_sigma, floor)
    region = LowFreqRegion(amp.shape[-2], amp.shape[-1], r).mask()
    return Spectrum(T.where(region, restyled, amp), spec.phase, spec.shifted)


def lf_uncert(
    x,
    scale_mu,
    scale_sigma,
    r: float,
    z_mu,
    z_sigma,
    floor: float = SIGMA_FLOOR,
    method: str = "region",
) -> Tensor:
    """Low-frequency AdaIN with noisy target statistics ``mu + s_mu*z_mu``, ``sigma + s_sigma*z_sigma``."""
    x = T.as_tensor(x)
    if method == "full":
        spec = uncert_spectrum(fft2_centered(x), scale_mu, scale_sigma, r, z_mu, z_sigma, floor)
        return ifft2_centered(spec, strict=False)
    sh, sw = LowFreqRegion(x.shape[-2], x.shape[-1], r).slices
    z = region_dft(x, sh, sw)
    amp = magnitude(z)
    restyled = _restyle(amp, _channel_stats(amp), scale_mu, scale_sigma, z_mu, z_sigma, floor)
    return region_idft_add(x, polar(restyled, angle(z)) - z, sh, sw)


class NoiseScales:
    """Learnable per-block, per-channel noise scales behind a softplus."""

    def __init__(self, channels: list[int], init: float = 0.1):
        if init < 0:
            raise AugmentError("noise scale init must be nonnegative")
        raw = _inverse_softplus(init)
        self.raw_mu = [Tensor(np.full(c, raw), requires_grad=True) for c in channels]
        self.raw_sigma = [Tensor(np.full(c, raw), requires_grad=True) for c in channels]

    def __len__(self) -> int:
        return len(self.raw_mu)

    def scales(self, block: int) -> tuple[Tensor, Tensor]:
        return T.softplus(self.raw_mu[block]), T.softplus(self.raw_sigma[block])

    def parameters(self) -> list[Tensor]:
        return [*self.raw_mu, *self.raw_sigma]

    def exposed(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [
            (np.logaddexp(0.0, m.data), np.logaddexp(0.0, s.data))
            for m, s in zip(self.raw_mu, self.raw_sigma)
        ]


def _inverse_softplus(value: float) -> float:
    if value == 0:
        # softplus(-60) ~ 1e-26: numerically zero noise
        return -60.0
    return float(value + np.log(-np.expm1(-value)))
