"""The ptychographic forward model and its data carriers.

An exit wave is formed as the product of a probe with a window of the
object extracted at the scan position, propagated to the detector plane,
and squared into a predicted intensity. The reconstruction loss is the
mean squared error between measured and predicted intensities, averaged
over both positions and pixels so its magnitude does not depend on the
frame size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import ComplexField
from .optics import Propagator, propagate_as, propagate_fraunhofer


class ModelError(ValueError):
    """Raised for inconsistent geometry, positions, or frame data."""


@dataclass(frozen=True)
class PtychoGeometry:
    """Experimental geometry shared by a whole dataset."""

    wavelength: float          # m
    z: float                   # object-detector distance, m
    detector_pitch: float      # m
    object_pitch: float        # m
    frame_size: int            # detector frames are frame_size x frame_size
    propagator: Propagator = Propagator.ANGULAR_SPECTRUM

    def __post_init__(self):
        for name in ("wavelength", "z", "detector_pitch", "object_pitch"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ModelError(f"{name} must be positive and finite, got {v}")
        if self.frame_size < 16:
            raise ModelError(f"frame_size must be >= 16, got {self.frame_size}")


@dataclass(frozen=True)
class ScanPosition:
    """One lateral object displacement, in meters and derived integer pixels."""

    index: int
    offset: tuple[float, float]        # (y, x) in meters
    pixel_offset: tuple[int, int]      # derived: round(offset / object_pitch)

    @classmethod
    def from_offset(cls, index: int, offset: tuple[float, float],
                    object_pitch: float) -> "ScanPosition":
        py = int(round(offset[0] / object_pitch))
        px = int(round(offset[1] / object_pitch))
        return cls(index, (float(offset[0]), float(offset[1])), (py, px))


@dataclass
class PtychoDataset:
    """Measured or synthetic intensity frames plus geometry metadata."""

    geometry: PtychoGeometry
    positions: list[ScanPosition]
    frames: np.ndarray                 # (N_pos, N, N) real, counts
    normalization_scale: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        n = self.geometry.frame_size
        if self.frames.ndim != 3 or self.frames.shape[1:] != (n, n):
            raise ModelError(f"frames must have shape (N_pos, {n}, {n}), got {self.frames.shape}")
        if len(self.positions) != self.frames.shape[0] or len(self.positions) < 1:
            raise ModelError("positions and frames counts disagree or are empty")
        if not np.all(np.isfinite(self.frames)) or self.frames.min() < 0:
            raise ModelError("frames must be finite and non-negative")

    @property
    def num_positions(self) -> int:
        return len(self.positions)

    def normalize(self) -> "PtychoDataset":
        """Scale frames so the highest pixel over the whole set equals 1.

        The original maximum is kept in ``normalization_scale``. Already
        normalized datasets are returned unchanged.
        """
        peak = float(self.frames.max())
        if peak == 0.0:
            raise ModelError("cannot normalize an all-zero dataset")
        if peak == 1.0:
            return self
        return PtychoDataset(self.geometry, self.positions, self.frames / peak,
                             normalization_scale=self.normalization_scale * peak,
                             meta=dict(self.meta))


@dataclass
class ReconstructionState:
    """Current object, probe, and distance estimate of a solver."""

    obj: ComplexField              # M x M, M >= frame + scan span
    probe: ComplexField            # N x N
    z_estimate: float
    epoch: int = 0

    def copy(self) -> "ReconstructionState":
        return ReconstructionState(self.obj.with_data(self.obj.data.copy()),
                                   self.probe.with_data(self.probe.data.copy()),
                                   self.z_estimate, self.epoch)


def window_slices(obj_shape: tuple[int, int], pos: ScanPosition,
                  n: int) -> tuple[slice, slice]:
    """Slices placing an n x n probe window in the object array.

    Pixel offsets are measured from the object center so that positions
    may be signed displacements around zero.
    """
    cy = (obj_shape[0] - n) // 2 + pos.pixel_offset[0]
    cx = (obj_shape[1] - n) // 2 + pos.pixel_offset[1]
    if cy < 0 or cx < 0 or cy + n > obj_shape[0] or cx + n > obj_shape[1]:
        raise ModelError(f"probe window out of bounds at position {pos.index} "
                         f"(corner ({cy}, {cx}), object {obj_shape})")
    return slice(cy, cy + n), slice(cx, cx + n)


def extract_window(obj: ComplexField, pos: ScanPosition, n: int) -> ComplexField:
    """N x N copy of the object at the position's pixel offset."""
    sy, sx = window_slices(obj.shape, pos, n)
    return ComplexField(obj.data[sy, sx].copy(), obj.pitch)


def embed_add(target: np.ndarray, window: np.ndarray, pos: ScanPosition,
              obj_shape: tuple[int, int]) -> np.ndarray:
    """Adjoint of extract_window: accumulate a window back into an object-shaped
    array at the position's offset."""
    sy, sx = window_slices(obj_shape, pos, window.shape[0])
    target[sy, sx] += window
    return target


def exit_wave(obj: ComplexField, probe: ComplexField, pos: ScanPosition) -> ComplexField:
    """Projection-approximation exit wave: object window times probe."""
    window = extract_window(obj, pos, probe.shape[0])
    return probe.with_data(window.data * probe.data)


def propagate(f: ComplexField, geometry: PtychoGeometry, z: float) -> ComplexField:
    if geometry.propagator is Propagator.ANGULAR_SPECTRUM:
        return propagate_as(f, geometry.wavelength, z)
    return propagate_fraunhofer(f, geometry.wavelength, z)


def predict_intensity(state: ReconstructionState, geometry: PtychoGeometry,
                      pos: ScanPosition) -> np.ndarray:
    """Predicted detector intensity |propagate(exit wave)|^2 at one position."""
    psi = exit_wave(state.obj, state.probe, pos)
    cam = propagate(psi, geometry, state.z_estimate)
    return np.abs(cam.data) ** 2


def mse_loss(dataset: PtychoDataset, state: ReconstructionState) -> float:
    """Mean squared intensity error over all positions and pixels."""
    total = 0.0
    for i, pos in enumerate(dataset.positions):
        pred = predict_intensity(state, dataset.geometry, pos)
        if pred.shape != dataset.frames[i].shape:
            raise ModelError("predicted/measured frame shape mismatch")
        total += float(np.sum((dataset.frames[i] - pred) ** 2))
    n = dataset.geometry.frame_size
    return total / (dataset.num_positions * n * n)


def scan_pixel_span(positions: list[ScanPosition]) -> tuple[int, int]:
    """(span_y, span_x) of the integer pixel offsets."""
    py = [p.pixel_offset[0] for p in positions]
    px = [p.pixel_offset[1] for p in positions]
    return max(py) - min(py), max(px) - min(px)


def object_size_for(positions: list[ScanPosition], frame_size: int,
                    margin: int = 8) -> int:
    """Object side length guaranteeing in-bounds windows with headroom.

    Windows are placed relative to the object center, so the size is set by
    the largest absolute offset (not the span, which under-sizes asymmetric
    scans)."""
    reach = 0
    for p in positions:
        reach = max(reach, abs(p.pixel_offset[0]), abs(p.pixel_offset[1]))
    return frame_size + 2 * reach + margin


def coverage_mask(obj_shape: tuple[int, int], positions: list[ScanPosition],
                  n: int) -> np.ndarray:
    """Integer map counting how many probe windows cover each object pixel."""
    count = np.zeros(obj_shape, dtype=np.int64)
    for pos in positions:
        sy, sx = window_slices(obj_shape, pos, n)
        count[sy, sx] += 1
    return count
