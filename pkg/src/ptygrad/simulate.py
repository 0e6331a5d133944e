"""Synthetic ptychography datasets: phantoms, probes, scan trajectories, noise.

The named presets reproduce the synthetic-experiment conditions (80
overlapping positions at 60 % linear overlap, a few hundred counts per
pixel of shot noise, sigma = 10 counts of read-out noise, 12-bit
quantization) at two scales: "paper" (512 x 512 object) and "desk"
(256 x 256 object, sized so the full benchmark suite runs on a laptop).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .fields import ComplexField, energy
from .model import (Propagator, PtychoDataset, PtychoGeometry,
                    ReconstructionState, ScanPosition, coverage_mask,
                    predict_intensity, scan_pixel_span)


class SimulationError(ValueError):
    """Raised for inconsistent simulation parameters."""


@dataclass
class Phantom:
    """Complex object defined by a transmittance image and a phase image."""

    transmittance: np.ndarray      # in [0, 1]
    phase: np.ndarray              # in [-pi, pi)

    def __post_init__(self):
        self.transmittance = np.asarray(self.transmittance, dtype=np.float64)
        self.phase = np.asarray(self.phase, dtype=np.float64)
        if self.transmittance.shape != self.phase.shape:
            raise SimulationError("transmittance and phase shapes differ")
        if self.transmittance.min() < 0 or self.transmittance.max() > 1:
            raise SimulationError("transmittance must lie in [0, 1]")

    def to_field(self, pitch: float) -> ComplexField:
        return ComplexField(self.transmittance * np.exp(1j * self.phase), pitch)


@dataclass(frozen=True)
class NoiseSpec:
    """Shot noise, read-out noise, and detector quantization parameters."""

    photon_scale: float            # peak expected counts over the dataset
    gaussian_sigma: float = 10.0   # counts
    bit_depth: Optional[int] = 12  # None disables quantization
    rng_seed: int = 0

    def __post_init__(self):
        if self.photon_scale <= 0:
            raise SimulationError("photon_scale must be positive")
        if self.gaussian_sigma < 0:
            raise SimulationError("gaussian_sigma must be non-negative")
        if self.bit_depth is not None and not 8 <= self.bit_depth <= 16:
            raise SimulationError("bit_depth must be in [8, 16]")


@dataclass(frozen=True)
class TrajectorySpec:
    """Scan trajectory parameters; min spacing follows the linear overlap
    definition: spacing = (1 - overlap) * probe_diameter."""

    kind: str                      # "poisson_disk" | "concentric" | "raster_jittered"
    overlap: float
    probe_diameter: float          # m
    num_positions: int
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.overlap < 1:
            raise SimulationError("overlap must be in (0, 1)")
        if self.num_positions < 1:
            raise SimulationError("num_positions must be >= 1")

    @property
    def min_spacing(self) -> float:
        return (1.0 - self.overlap) * self.probe_diameter


def random_phantom(size: int, seed: int = 0, feature_px: float = 6.0,
                   phase_span: float = 0.9 * np.pi) -> Phantom:
    """Smooth pseudo-random transmittance/phase pair standing in for the two
    grayscale source images.

    ``feature_px`` is the Gaussian correlation length of the textures and
    ``phase_span`` the half-range of the phase image (phase values cover
    [-phase_span, +phase_span]).
    """
    rng = np.random.default_rng(seed)
    trans = gaussian_filter(rng.standard_normal((size, size)), feature_px)
    trans = (trans - trans.min()) / (trans.max() - trans.min())
    trans = 0.25 + 0.75 * trans
    phase = gaussian_filter(rng.standard_normal((size, size)), feature_px)
    phase = (phase - phase.min()) / (phase.max() - phase.min())
    phase = -phase_span + 2.0 * phase_span * phase
    return Phantom(trans, phase)


def sector_star(size: int, num_spokes: int = 72, inner_radius: float = 0.0) -> Phantom:
    """Binary sector-star (Siemens star) resolution phantom with a transparent
    center disc and flat phase."""
    if num_spokes < 2 or num_spokes % 2 != 0:
        raise SimulationError("num_spokes must be even and >= 2")
    ys = np.arange(size) - size / 2.0 + 0.5
    yy, xx = np.meshgrid(ys, ys, indexing="ij")
    theta = np.arctan2(yy, xx) + np.pi
    sector = np.floor(theta / (2.0 * np.pi / num_spokes)).astype(int) % 2
    trans = sector.astype(np.float64)
    trans[np.hypot(yy, xx) < inner_radius] = 1.0
    return Phantom(trans, np.zeros_like(trans))


def make_probe(kind: str, diameter: float, frame_size: int, pitch: float,
               wavelength: Optional[float] = None, defocus: float = 0.0,
               diffuser_rad: float = 2.5, diffuser_feature_px: float = 3.0,
               rng_seed: int = 0) -> ComplexField:
    """Unit-energy illumination model on an N x N frame.

    "aperture" is a circular top-hat with a 2-pixel cosine-tapered edge;
    "focused_gaussian" has a Gaussian amplitude whose modulus falls to
    1/e^2 at radius diameter/2; "diffuse_aperture" is the aperture with a
    smooth random phase screen (a diffuser), propagated ``defocus`` meters
    so the resulting speckle spreads across the frame — the structured
    illumination that makes near-field ptychography well conditioned.
    """
    from .optics import propagate_as
    extent = frame_size * pitch
    if diameter > extent:
        raise SimulationError(f"probe diameter {diameter} exceeds frame extent {extent}")
    ys = (np.arange(frame_size) - frame_size // 2) * pitch
    yy, xx = np.meshgrid(ys, ys, indexing="ij")
    r = np.hypot(yy, xx)
    radius = diameter / 2.0
    if kind in ("aperture", "diffuse_aperture"):
        taper = 2.0 * pitch
        amp = np.clip((radius - r) / taper, 0.0, 1.0)
        amp = 0.5 * (1.0 - np.cos(np.pi * amp))
    elif kind == "focused_gaussian":
        amp = np.exp(-2.0 * (r / radius) ** 2)
    else:
        raise SimulationError(f"unknown probe kind {kind!r}")
    amp = amp.astype(np.complex128)
    if kind == "diffuse_aperture":
        if wavelength is None:
            raise SimulationError("diffuse_aperture needs a wavelength")
        rng = np.random.default_rng(rng_seed)
        screen = gaussian_filter(rng.standard_normal((frame_size, frame_size)),
                                 diffuser_feature_px)
        screen *= diffuser_rad / max(screen.std(), 1e-12)
        amp = amp * np.exp(1j * screen)
        if defocus != 0.0:
            amp = propagate_as(ComplexField(amp, pitch), wavelength, defocus).data
    total = float(np.sum(np.abs(amp) ** 2))
    if total == 0.0:
        raise SimulationError("probe has zero energy")
    return ComplexField(amp / np.sqrt(total), pitch)


def poisson_disk_positions(extent: float, min_spacing: float,
                           seed: int = 0, k: int = 30) -> list[tuple[float, float]]:
    """Bridson blue-noise samples on [-extent/2, extent/2]^2, (y, x) in meters.

    All pairwise distances are >= min_spacing; the sampling is maximal up
    to the usual Bridson dart-throwing limit (k candidate darts per active
    point) and deterministic for a fixed seed.
    """
    if min_spacing <= 0:
        raise SimulationError("min_spacing must be positive")
    if extent < min_spacing:
        raise SimulationError("extent smaller than min_spacing")
    rng = np.random.default_rng(seed)
    cell = min_spacing / math.sqrt(2.0)
    gw = int(math.ceil(extent / cell))
    grid = -np.ones((gw, gw), dtype=np.int64)
    points: list[tuple[float, float]] = []

    def grid_idx(p):
        return min(int(p[0] / cell), gw - 1), min(int(p[1] / cell), gw - 1)

    def fits(p):
        gy, gx = grid_idx(p)
        for iy in range(max(gy - 2, 0), min(gy + 3, gw)):
            for ix in range(max(gx - 2, 0), min(gx + 3, gw)):
                j = grid[iy, ix]
                if j >= 0 and math.hypot(points[j][0] - p[0], points[j][1] - p[1]) < min_spacing:
                    return False
        return True

    first = (extent / 2.0, extent / 2.0)
    points.append(first)
    gy, gx = grid_idx(first)
    grid[gy, gx] = 0
    active = [0]
    while active:
        pick = int(rng.integers(len(active)))
        base = points[active[pick]]
        for _ in range(k):
            ang = rng.uniform(0.0, 2.0 * np.pi)
            rad = min_spacing * (1.0 + rng.uniform())
            cand = (base[0] + rad * math.sin(ang), base[1] + rad * math.cos(ang))
            if 0.0 <= cand[0] < extent and 0.0 <= cand[1] < extent and fits(cand):
                points.append(cand)
                gy, gx = grid_idx(cand)
                grid[gy, gx] = len(points) - 1
                active.append(len(points) - 1)
                break
        else:
            active[pick] = active[-1]
            active.pop()
    half = extent / 2.0
    return [(p[0] - half, p[1] - half) for p in points]


def concentric_positions(num_rings: int, radial_step: float) -> list[tuple[float, float]]:
    """Center point plus rings at radius r*step carrying ceil(2*pi*r) points."""
    pts = [(0.0, 0.0)]
    for ring in range(1, num_rings + 1):
        n = int(math.ceil(2.0 * np.pi * ring))
        radius = ring * radial_step
        for j in range(n):
            ang = 2.0 * np.pi * j / n
            pts.append((radius * math.sin(ang), radius * math.cos(ang)))
    return pts


def raster_jittered_positions(rows: int, cols: int, step: float,
                              jitter: float = 0.25, seed: int = 0) -> list[tuple[float, float]]:
    """Raster grid with uniform jitter (fraction of step) to break the grid
    pathology."""
    rng = np.random.default_rng(seed)
    pts = []
    for r in range(rows):
        for c in range(cols):
            jy, jx = rng.uniform(-jitter, jitter, 2) * step
            pts.append(((r - (rows - 1) / 2.0) * step + jy,
                        (c - (cols - 1) / 2.0) * step + jx))
    return pts


def trajectory_positions(spec: TrajectorySpec) -> list[tuple[float, float]]:
    """Generate at least num_positions samples and keep the ones closest to
    the scan center (deterministic)."""
    if spec.kind == "poisson_disk":
        extent = spec.min_spacing * (math.sqrt(spec.num_positions / 0.55) + 2.0)
        pts = poisson_disk_positions(extent, spec.min_spacing, spec.rng_seed)
        while len(pts) < spec.num_positions:
            extent *= 1.2
            pts = poisson_disk_positions(extent, spec.min_spacing, spec.rng_seed)
    elif spec.kind == "concentric":
        rings = 1
        pts = concentric_positions(rings, spec.min_spacing)
        while len(pts) < spec.num_positions:
            rings += 1
            pts = concentric_positions(rings, spec.min_spacing)
    elif spec.kind == "raster_jittered":
        side = int(math.ceil(math.sqrt(spec.num_positions)))
        pts = raster_jittered_positions(side, side, spec.min_spacing, seed=spec.rng_seed)
    else:
        raise SimulationError(f"unknown trajectory kind {spec.kind!r}")
    order = sorted(range(len(pts)), key=lambda i: (math.hypot(*pts[i]), i))
    return [pts[i] for i in order[: spec.num_positions]]


def synthesize(truth_object: ComplexField, probe: ComplexField,
               positions: list[tuple[float, float]], geometry: PtychoGeometry,
               noise: Optional[NoiseSpec], meta: Optional[dict] = None) -> PtychoDataset:
    """Simulate intensity frames for every scan position.

    With ``noise=None`` the clean predicted intensities are returned
    unscaled. Otherwise frames are scaled so the brightest clean pixel has
    ``photon_scale`` expected counts, Poisson shot noise and Gaussian
    read-out noise are added (independent per-position RNG streams), and
    the result is clamped at zero and quantized to the detector bit depth.
    """
    scan = [ScanPosition.from_offset(i, p, geometry.object_pitch)
            for i, p in enumerate(positions)]
    count = coverage_mask(truth_object.shape, scan, geometry.frame_size)
    if count.max() == 0:
        raise SimulationError("no probe window overlaps the object")
    truth = ReconstructionState(truth_object, probe, geometry.z, epoch=0)
    clean = np.stack([predict_intensity(truth, geometry, pos) for pos in scan])
    info = dict(meta or {})
    if noise is None:
        frames = clean
    else:
        scale = noise.photon_scale / clean.max()
        frames = np.empty_like(clean)
        for i in range(len(scan)):
            rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence(entropy=noise.rng_seed, spawn_key=(i,))))
            lam = clean[i] * scale
            noisy = rng.poisson(lam).astype(np.float64)
            if noise.gaussian_sigma > 0:
                noisy += rng.normal(0.0, noise.gaussian_sigma, lam.shape)
            noisy = np.maximum(noisy, 0.0)
            if noise.bit_depth is not None:
                noisy = np.clip(np.floor(noisy), 0, 2 ** noise.bit_depth - 1)
            frames[i] = noisy
        info["noise"] = {"photon_scale": noise.photon_scale,
                         "gaussian_sigma": noise.gaussian_sigma,
                         "bit_depth": noise.bit_depth}
        info["rng"] = {"algorithm": "pcg64", "seed": int(noise.rng_seed),
                       "stream": "seedsequence-per-position"}
    return PtychoDataset(geometry, scan, frames, normalization_scale=1.0, meta=info)


@dataclass
class SyntheticExperiment:
    """A synthesized dataset together with its ground truth."""

    dataset: PtychoDataset
    truth_object: ComplexField
    probe: ComplexField


# Synthetic-experiment presets. "paper" mirrors the published conditions
# (512 object, 6.45 um pixels, lambda = 561 nm, 80 positions at 60 % overlap,
# ~300 peak counts, sigma = 10, 12 bits); "desk" is the scaled-down analogue
# used by the benchmark suite. Both use diffused (speckle) illumination: a
# random phase screen on the aperture, propagated so the structured beam
# fills the frame — flat illumination leaves the near-field phase problem
# badly conditioned and most detector pixels dark.
PRESETS: dict[str, dict] = {
    "paper": dict(object_size=512, frame_size=256, wavelength=561e-9,
                  pitch=6.45e-6, z=15e-3, probe_diameter_px=56,
                  probe_kind="diffuse_aperture", probe_defocus=60e-3,
                  num_positions=80, overlap=0.6, photon_scale=300.0,
                  gaussian_sigma=10.0, bit_depth=12,
                  feature_px=12.0, phase_span=np.pi / 2),
    "desk": dict(object_size=256, frame_size=128, wavelength=561e-9,
                 pitch=12.9e-6, z=35e-3, probe_diameter_px=24,
                 probe_kind="diffuse_aperture", probe_defocus=100e-3,
                 num_positions=80, overlap=0.6, photon_scale=300.0,
                 gaussian_sigma=10.0, bit_depth=12,
                 feature_px=10.0, phase_span=np.pi / 2),
}


def preset_experiment(name: str = "desk", seed: int = 0, noiseless: bool = False,
                      propagator: Propagator = Propagator.ANGULAR_SPECTRUM,
                      phantom: Optional[Phantom] = None) -> SyntheticExperiment:
    """Build a synthetic experiment from a named preset."""
    if name not in PRESETS:
        raise SimulationError(f"unknown preset {name!r} (choose from {sorted(PRESETS)})")
    p = PRESETS[name]
    geom = PtychoGeometry(wavelength=p["wavelength"], z=p["z"],
                          detector_pitch=p["pitch"], object_pitch=p["pitch"],
                          frame_size=p["frame_size"], propagator=propagator)
    diameter = p["probe_diameter_px"] * p["pitch"]
    probe_params = {"wavelength": p["wavelength"], "defocus": p["probe_defocus"]}
    probe = make_probe(p["probe_kind"], diameter, p["frame_size"], p["pitch"],
                       **probe_params)
    if phantom is None:
        phantom = random_phantom(p["object_size"], seed=seed,
                                 feature_px=p["feature_px"],
                                 phase_span=p["phase_span"])
    truth = phantom.to_field(p["pitch"])
    traj = TrajectorySpec("poisson_disk", p["overlap"], diameter,
                          p["num_positions"], rng_seed=seed)
    positions = trajectory_positions(traj)
    span = scan_pixel_span([ScanPosition.from_offset(i, pos, p["pitch"])
                            for i, pos in enumerate(positions)])
    if max(span) + p["frame_size"] > p["object_size"]:
        raise SimulationError("preset trajectory does not fit the object array")
    noise = None if noiseless else NoiseSpec(p["photon_scale"], p["gaussian_sigma"],
                                             p["bit_depth"], rng_seed=seed)
    meta = {"preset": name, "seed": int(seed), "probe_diameter_m": diameter,
            "probe_kind": p["probe_kind"], "probe_params": probe_params}
    dataset = synthesize(truth, probe, positions, geom, noise, meta=meta)
    return SyntheticExperiment(dataset, truth, probe)
