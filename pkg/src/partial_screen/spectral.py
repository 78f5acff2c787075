"""Centered 2D frequency transforms with amplitude/phase outputs.

The forward transform is unnormalized and the inverse carries the
``1/(H*W)`` factor. After shifting, the zero-frequency bin sits at
``(H//2, W//2)``; for even sizes the Nyquist row/column lands at index 0.
Transforms act on the last two axes, so leading batch/channel axes are
handled independently.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _make, as_tensor

RESIDUE_TOLERANCE = 1e-4


class SpectrumError(ValueError):
    pass


@dataclass
class Spectrum:
    amplitude: Tensor
    phase: Tensor
    shifted: bool = True

    @property
    def shape(self):
        return self.amplitude.shape


def _shift(z):
    return np.fft.fftshift(z, axes=(-2, -1))


def _unshift(z):
    return np.fft.ifftshift(z, axes=(-2, -1))


def _complex_spectrum(x: Tensor) -> Tensor:
    """Shifted complex DFT of the last two axes as a complex graph node."""
    height, width = x.shape[-2:]
    n = height * width
    z = _shift(np.fft.fft2(x.data, axes=(-2, -1)))

    def backward(g):
        return (np.real(np.fft.ifft2(_unshift(g), axes=(-2, -1))) * n,)

    return _make(z, (x,), backward)


def _abs(z: Tensor) -> Tensor:
    mag = np.abs(z.data)
    nz = mag > 0
    unit = np.where(nz, z.data / np.where(nz, mag, 1.0), 0.0)
    return _make(mag, (z,), lambda g: (g * unit,))


def _angle(z: Tensor) -> Tensor:
    mag2 = np.abs(z.data) ** 2
    nz = mag2 > 0
    # dP/dRe = -Im/|z|^2, dP/dIm = Re/|z|^2, i.e. 1j*z/|z|^2 in cotangent form
    direction = np.where(nz, 1j * z.data / np.where(nz, mag2, 1.0), 0.0)
    return _make(np.angle(z.data), (z,), lambda g: (g * direction,))


def fft2_centered(x) -> Spectrum:
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-1] < 1 or x.shape[-2] < 1:
        raise SpectrumError(f"need at least a [H,W] map, got shape {x.shape}")
    if not np.all(np.isfinite(x.data)):
        bad = int(np.size(x.data) - np.count_nonzero(np.isfinite(x.data)))
        raise SpectrumError(f"non-finite input to fft2_centered ({bad} entries)")
    z = _complex_spectrum(x)
    return Spectrum(_abs(z), _angle(z), shifted=True)


def ifft2_centered(spec: Spectrum, strict: bool = True) -> Tensor:
    """Inverse of :func:`fft2_centered`, returning the real part.

    With ``strict`` the imaginary residue must stay below
    ``RESIDUE_TOLERANCE`` relative to the output norm. Augmentations that
    perturb individual bins break conjugate symmetry by design and pass
    ``strict=False``, which keeps the real part.
    """
    if not spec.shifted:
        raise SpectrumError("expected a center-shifted spectrum")
    amp, phase = as_tensor(spec.amplitude), as_tensor(spec.phase)
    if amp.shape != phase.shape:
        raise SpectrumError(f"amplitude {amp.shape} and phase {phase.shape} differ")
    height, width = amp.shape[-2:]
    n = height * width
    rotor = np.exp(1j * phase.data)
    spatial = np.fft.ifft2(_unshift(amp.data * rotor), axes=(-2, -1))
    out = np.real(spatial)
    if strict:
        residue = float(np.max(np.abs(np.imag(spatial)), initial=0.0))
        scale = float(np.linalg.norm(out))
        if residue > RESIDUE_TOLERANCE * max(scale, 1e-12):
            raise SpectrumError(
                f"imaginary residue {residue:.3e} exceeds tolerance for output norm {scale:.3e}"
            )

    def backward(g):
        gz = _shift(np.fft.fft2(g, axes=(-2, -1))) / n
        proj = gz * np.conj(rotor)
        ga = np.real(proj) if amp.requires_grad else None
        gp = amp.data * np.imag(proj) if phase.requires_grad else None
        return ga, gp

    return _make(out, (amp, phase), backward)


# -- region-restricted transforms ---------------------------------------------
#
# Both augmentations only touch a small centered block of bins. Since the
# transform is linear, the augmented map equals ``x + Re(iDFT(dZ))`` with
# ``dZ`` supported on that block, which needs only the block's DFT rows.


@functools.lru_cache(maxsize=64)
def _dft_rows(n: int, start: int, stop: int) -> np.ndarray:
    """Rows of the shifted DFT matrix for shifted indices ``start:stop``."""
    freqs = np.arange(start, stop) - n // 2
    return np.exp(-2j * np.pi * np.outer(freqs, np.arange(n)) / n)


def region_dft(x, rows: slice, cols: slice) -> Tensor:
    """Complex shifted spectrum of ``x`` restricted to ``[rows, cols]``."""
    x = as_tensor(x)
    height, width = x.shape[-2:]
    eh = _dft_rows(height, rows.start, rows.stop)
    ew = _dft_rows(width, cols.start, cols.stop)
    z = eh @ x.data @ ew.T

    def backward(g):
        return (np.real(np.conj(eh).T @ g @ np.conj(ew)),)

    return _make(z, (x,), backward)


def region_idft_add(x, dz, rows: slice, cols: slice) -> Tensor:
    """``x`` plus the real inverse transform of a spectrum change on ``[rows, cols]``."""
    x, dz = as_tensor(x), as_tensor(dz)
    height, width = x.shape[-2:]
    n = height * width
    eh = _dft_rows(height, rows.start, rows.stop)
    ew = _dft_rows(width, cols.start, cols.stop)
    out = x.data + np.real(np.conj(eh).T @ dz.data @ np.conj(ew)) / n

    def backward(g):
        gdz = (eh @ g @ ew.T) / n if dz.requires_grad else None
        return g, gdz

    return _make(out, (x, dz), backward)


def magnitude(z) -> Tensor:
    return _abs(as_tensor(z))


def angle(z) -> Tensor:
    return _angle(as_tensor(z))


def polar(amplitude, phase) -> Tensor:
    """Complex tensor ``amplitude * exp(1j * phase)``."""
    amplitude, phase = as_tensor(amplitude), as_tensor(phase)
    rotor = np.exp(1j * phase.data)

    def backward(g):
        proj = g * np.conj(rotor)
        ga = np.real(proj) if amplitude.requires_grad else None
        gp = amplitude.data * np.imag(proj) if phase.requires_grad else None
        return ga, gp

    return _make(amplitude.data * rotor, (amplitude, phase), backward)
