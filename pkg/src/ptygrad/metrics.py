"""Reconstruction quality metrics.

The headline figure of merit is the normalized complex correlation between
ground truth and estimate; its modulus measures fidelity and its argument
is the irrelevant global phase. Because reconstructions can be laterally
shifted relative to the truth, the shift is estimated and compensated
before correlating. Amplitude-only and phase-only variants are reported
alongside; the phase variant correlates exp(i*phase) so it is immune to
global phase offsets and wrapping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import ComplexField, FieldError, roll_field, shift_register


class MetricError(ValueError):
    """Raised for degenerate metric inputs."""


@dataclass(frozen=True)
class CorrelationReport:
    """Shift-compensated correlation summary between truth and estimate."""

    complex_corr: complex
    corr_abs: float
    corr_arg: float
    corr_amp: float
    corr_phase: float
    shift: tuple[int, int]


def complex_correlation(truth: ComplexField | np.ndarray,
                        estimate: ComplexField | np.ndarray) -> complex:
    """Normalized inner product sum(conj(O) * O_hat) / (||O|| * ||O_hat||)."""
    a = truth.data if isinstance(truth, ComplexField) else np.asarray(truth)
    b = estimate.data if isinstance(estimate, ComplexField) else np.asarray(estimate)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    na = np.sqrt(np.sum(np.abs(a) ** 2))
    nb = np.sqrt(np.sum(np.abs(b) ** 2))
    if na == 0.0 or nb == 0.0:
        raise MetricError("correlation undefined for zero-energy input")
    return complex(np.sum(np.conj(a) * b) / (na * nb))


def amplitude_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized correlation of the moduli (no mean removal; amplitudes are
    non-negative, matching the complex definition applied to |O|)."""
    return abs(complex_correlation(np.abs(a) + 0j, np.abs(b) + 0j))


def phase_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """|correlation of exp(i*phase)|; immune to global phase and wrapping."""
    return abs(complex_correlation(np.exp(1j * np.angle(a)), np.exp(1j * np.angle(b))))


def remove_phase_tilt(truth: np.ndarray, estimate: np.ndarray,
                      weights: np.ndarray, passes: int = 3) -> np.ndarray:
    """Strip the best-fit linear phase ramp of estimate relative to truth.

    A joint linear phase on the object paired with the opposite ramp on the
    probe shifts every predicted frame by a constant phase only, so the
    data cannot pin this mode down; quotienting it out keeps the metric
    from penalizing an unobservable gauge drift. The ramp slope is
    estimated from weighted products of neighboring pixels of
    d = estimate * conj(truth) (robust to wrapping) and removed
    iteratively.
    """
    est = np.array(estimate)
    d = est * np.conj(truth)
    yy, xx = np.meshgrid(np.arange(truth.shape[0]), np.arange(truth.shape[1]),
                         indexing="ij")
    for _ in range(passes):
        qy = np.angle(np.sum(weights[1:, :] * weights[:-1, :]
                             * d[1:, :] * np.conj(d[:-1, :])))
        qx = np.angle(np.sum(weights[:, 1:] * weights[:, :-1]
                             * d[:, 1:] * np.conj(d[:, :-1])))
        ramp = np.exp(-1j * (qy * yy + qx * xx))
        est = est * ramp
        d = d * ramp
    return est


def registered_correlation(truth: ComplexField, estimate: ComplexField,
                           crop_margin: int = 0,
                           mask: np.ndarray | None = None,
                           detrend_tilt: bool = False) -> CorrelationReport:
    """Correlation after compensating the lateral shift of the estimate.

    The shift is found on a central crop (the margin excludes border pixels
    never constrained by data), the estimate is translated, and all
    correlations are evaluated on the cropped region. An optional boolean
    ``mask`` restricts registration and evaluation to the given pixels
    (e.g. the illuminated scan region); ``detrend_tilt`` additionally
    removes the linear-phase gauge mode before correlating.
    """
    if truth.shape != estimate.shape:
        raise MetricError(f"shape mismatch: {truth.shape} vs {estimate.shape}")
    h, w = truth.shape
    if h - 2 * crop_margin < 16 or w - 2 * crop_margin < 16:
        raise MetricError(f"crop margin {crop_margin} leaves less than 16x16 pixels")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != truth.shape:
            raise MetricError(f"mask shape {mask.shape} != field shape {truth.shape}")
        if not mask.any():
            raise MetricError("mask selects no pixels")

    def crop(x):
        return x[crop_margin: h - crop_margin, crop_margin: w - crop_margin]

    sel = np.ones(truth.shape, dtype=bool) if mask is None else mask
    try:
        dy, dx = shift_register(
            ComplexField(crop(truth.data * sel), truth.pitch),
            ComplexField(crop(estimate.data * sel), estimate.pitch))
    except FieldError as exc:
        raise MetricError(str(exc)) from exc
    aligned = roll_field(estimate, (-dy, -dx)).data
    if detrend_tilt:
        aligned = remove_phase_tilt(truth.data, aligned, sel * np.abs(truth.data))
    if mask is None:
        a, b = crop(truth.data), crop(aligned)
    else:
        region = crop(sel).astype(bool)
        a, b = crop(truth.data)[region], crop(aligned)[region]
    c = complex_correlation(a, b)
    return CorrelationReport(complex_corr=c, corr_abs=abs(c),
                             corr_arg=float(np.angle(c)),
                             corr_amp=amplitude_correlation(a, b),
                             corr_phase=phase_correlation(a, b),
                             shift=(dy, dx))
