"""Free-space propagation between object and detector planes.

Two models are provided: the angular spectrum method (near and far field,
two FFTs, differentiable in the propagation distance) and the Fraunhofer
far-field model (single FFT with coordinate rescaling). Global amplitude
and phase prefactors of the Fraunhofer map are dropped; only intensities
are ever measured.

Note the angular spectrum method is alias-free only for |z| up to roughly
N * pitch^2 / wavelength; beyond that, high spatial frequencies wrap around
the frame. This is fine for synthetic data reconstructed with the same
model, but keep it in mind when choosing geometries.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .fields import ComplexField, fft2_unitary, frequency_grid, ifft2_unitary


class OpticsError(ValueError):
    """Raised for invalid propagation parameters."""


class Propagator(str, Enum):
    ANGULAR_SPECTRUM = "angular_spectrum"
    FRAUNHOFER = "fraunhofer"


def transfer_kernel(shape: tuple[int, int], pitch: float, wavelength: float,
                    z: float) -> tuple[np.ndarray, np.ndarray]:
    """Angular spectrum transfer function and its axial wavenumber.

    Returns (H, kappa) in *centered* layout (zero frequency at the array
    center, matching the output of the centered unitary FFT), where
    H = exp(i*z*kappa) and kappa = sqrt(k^2 - kx^2 - ky^2) with the
    principal branch, so evanescent components decay for z > 0.

    kappa is also what the distance derivative needs: dH/dz = i*kappa*H.
    """
    if wavelength <= 0:
        raise OpticsError(f"wavelength must be positive, got {wavelength}")
    ky, kx = frequency_grid(shape, pitch)
    k = 2.0 * np.pi / wavelength
    kappa = np.sqrt(k**2 - kx**2 - ky**2 + 0j)
    h = np.exp(1j * z * kappa)
    return np.fft.fftshift(h), np.fft.fftshift(kappa)


def transfer_function(shape: tuple[int, int], pitch: float, wavelength: float,
                      z: float) -> np.ndarray:
    """Centered angular spectrum transfer function H(kx, ky; z)."""
    return transfer_kernel(shape, pitch, wavelength, z)[0]


def propagate_as(f: ComplexField, wavelength: float, z: float) -> ComplexField:
    """Angular spectrum propagation over distance z (negative z backpropagates).

    Output pitch equals input pitch.
    """
    h, _ = transfer_kernel(f.shape, f.pitch, wavelength, z)
    spectrum = fft2_unitary(f)
    return ifft2_unitary(spectrum.with_data(h * spectrum.data))


def fraunhofer_pitch(n: int, source_pitch: float, wavelength: float, z: float) -> float:
    """Detector-plane pixel pitch of the single-FFT far-field map."""
    return wavelength * z / (n * source_pitch)


def propagate_fraunhofer(f: ComplexField, wavelength: float, z: float) -> ComplexField:
    """Far-field propagation: one centered unitary FFT with rescaled pitch.

    The 1/(i*lambda*z) amplitude factor and the quadratic output phase are
    omitted; they cancel in any intensity.
    """
    if wavelength <= 0:
        raise OpticsError(f"wavelength must be positive, got {wavelength}")
    if z <= 0:
        raise OpticsError(f"Fraunhofer model requires z > 0, got {z}")
    if f.shape[0] != f.shape[1]:
        raise OpticsError("Fraunhofer model expects square frames")
    out = fft2_unitary(f)
    return ComplexField(out.data, fraunhofer_pitch(f.shape[0], f.pitch, wavelength, z))


def fresnel_chirp(shape: tuple[int, int], pitch: float, wavelength: float,
                  z: float) -> np.ndarray:
    """Quadratic phase exp(i*k*r^2/(2z)), centered; absorb into the probe to
    model Fresnel diffraction with the single-FFT far-field map."""
    k = 2.0 * np.pi / wavelength
    ys = (np.arange(shape[0]) - shape[0] // 2) * pitch
    xs = (np.arange(shape[1]) - shape[1] // 2) * pitch
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.exp(1j * k * (xx**2 + yy**2) / (2.0 * z))
