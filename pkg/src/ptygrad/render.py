"""Render complex fields to 8-bit PNG images."""

from __future__ import annotations

import numpy as np
from matplotlib import colormaps
from matplotlib.colors import hsv_to_rgb
from matplotlib.image import imsave

from .fields import ComplexField

MODES = ("amplitude", "phase", "complex_wheel")


def field_to_rgb(f: ComplexField, mode: str) -> np.ndarray:
    """RGB array in [0, 1] for one of the render modes.

    amplitude: linear grayscale between min and max modulus.
    phase: cyclic colormap over [-pi, pi).
    complex_wheel: hue encodes phase, lightness the normalized modulus.
    """
    amp = np.abs(f.data)
    if mode == "amplitude":
        lo, hi = amp.min(), amp.max()
        gray = np.zeros_like(amp) if hi == lo else (amp - lo) / (hi - lo)
        return np.repeat(gray[..., None], 3, axis=-1)
    t = (np.angle(f.data) + np.pi) / (2.0 * np.pi)   # [0, 1)
    if mode == "phase":
        return colormaps["hsv"](t)[..., :3]
    if mode == "complex_wheel":
        peak = amp.max()
        value = amp / peak if peak > 0 else np.zeros_like(amp)
        hsv = np.stack([t, np.ones_like(t), value], axis=-1)
        return hsv_to_rgb(hsv)
    raise ValueError(f"unknown render mode {mode!r} (choose from {MODES})")


def render_field(f: ComplexField, mode: str, path) -> None:
    """Write the rendered field as an 8-bit PNG."""
    imsave(path, field_to_rgb(f, mode), format="png")
