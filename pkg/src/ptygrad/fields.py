"""Complex 2D fields, centered unitary FFTs, and cross-correlation registration.

Every other module builds on the conventions fixed here: fields are
float64/complex128, FFTs are centered (zero frequency in the middle of the
array) and unitary (energy preserving), and frequency grids are laid out in
standard FFT order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class FieldError(ValueError):
    """Raised for invalid field data (non-finite values, bad shapes)."""


@dataclass(frozen=True)
class ComplexField:
    """A 2D complex array with a physical pixel pitch in meters.

    Pixels are square; ``pitch`` is the side length of one pixel.
    """

    data: np.ndarray
    pitch: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        object.__setattr__(self, "data", data)
        if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] < 2:
            raise FieldError(f"field must be 2D with both sides >= 2, got shape {data.shape}")
        if not (np.isfinite(self.pitch) and self.pitch > 0):
            raise FieldError(f"pitch must be positive and finite, got {self.pitch}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "ComplexField":
        return ComplexField(data, self.pitch)


def _check_finite(data: np.ndarray) -> None:
    if not np.all(np.isfinite(data)):
        bad = np.argwhere(~np.isfinite(data))[0]
        raise FieldError(f"non-finite value at index {tuple(int(i) for i in bad)}")


def frequency_grid(shape: tuple[int, int], pitch: float) -> tuple[np.ndarray, np.ndarray]:
    """Angular spatial frequency grids (ky, kx) in rad/m, FFT order.

    Zero frequency sits at index 0; values are 2*pi*fftfreq, so
    max |k| = pi/pitch along each axis.
    """
    ky = 2.0 * np.pi * np.fft.fftfreq(shape[0], d=pitch)
    kx = 2.0 * np.pi * np.fft.fftfreq(shape[1], d=pitch)
    return np.meshgrid(ky, kx, indexing="ij")


def fft2_unitary(f: ComplexField) -> ComplexField:
    """Centered unitary 2D DFT: fftshift(fft2(ifftshift(f)))/sqrt(N_total)."""
    _check_finite(f.data)
    out = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(f.data), norm="ortho"))
    return f.with_data(out)


def ifft2_unitary(f: ComplexField) -> ComplexField:
    """Exact inverse of :func:`fft2_unitary`."""
    _check_finite(f.data)
    out = np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(f.data), norm="ortho"))
    return f.with_data(out)


def energy(f: ComplexField) -> float:
    """Total energy sum(|f|^2)."""
    return float(np.sum(np.abs(f.data) ** 2))


def shift_register(a: ComplexField, b: ComplexField) -> tuple[int, int]:
    """Integer shift (dy, dx) such that b best matches a rolled by (dy, dx).

    The shift maximizes the modulus of the circular cross-correlation,
    computed via FFTs. Exact ties are broken by the lexicographically
    smallest signed (dy, dx).
    """
    if a.shape != b.shape:
        raise FieldError(f"shape mismatch: {a.shape} vs {b.shape}")
    if energy(a) == 0.0 or energy(b) == 0.0:
        raise FieldError("shift registration undefined for zero-energy input")
    corr = np.fft.ifft2(np.fft.fft2(b.data) * np.conj(np.fft.fft2(a.data)))
    mag = np.abs(corr)
    peak = mag.max()
    candidates = np.argwhere(mag == peak)
    h, w = a.shape
    signed = [(int((dy + h // 2) % h - h // 2), int((dx + w // 2) % w - w // 2))
              for dy, dx in candidates]
    return min(signed)


def roll_field(f: ComplexField, shift: tuple[int, int]) -> ComplexField:
    """Circularly shift a field by integer (dy, dx)."""
    return f.with_data(np.roll(f.data, shift, axis=(0, 1)))
