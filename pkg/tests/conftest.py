"""Shared fixtures: small, fast synthetic instances for unit tests."""

import numpy as np
import pytest

from ptygrad.fields import ComplexField
from ptygrad.model import Propagator, PtychoGeometry, ReconstructionState
from ptygrad.simulate import make_probe, random_phantom, synthesize

WAVELENGTH = 561e-9


def tiny_experiment(frame_size=16, num_positions=4, object_size=None, seed=0,
                    propagator=Propagator.ANGULAR_SPECTRUM, pitch=25.8e-6,
                    z=None, noise=None):
    """A small noiseless (by default) synthetic instance.

    Positions are placed on a jittered ring inside the object so windows
    always fit; the probe is an aperture two thirds of the frame.
    """
    if object_size is None:
        object_size = 2 * frame_size
    if z is None:
        # safely inside the angular spectrum alias-free range
        z = 0.25 * frame_size * pitch**2 / WAVELENGTH
    geom = PtychoGeometry(wavelength=WAVELENGTH, z=z, detector_pitch=pitch,
                          object_pitch=pitch, frame_size=frame_size,
                          propagator=propagator)
    rng = np.random.default_rng(seed)
    span = (object_size - frame_size - 2) // 2
    positions = []
    for _ in range(num_positions):
        py, px = rng.integers(-span, span + 1, size=2)
        positions.append((py * pitch, px * pitch))
    probe = make_probe("aperture", frame_size * pitch * 2 / 3, frame_size, pitch)
    phantom = random_phantom(object_size, seed=seed, feature_px=3.0,
                             phase_span=np.pi / 2)
    truth = phantom.to_field(pitch)
    dataset = synthesize(truth, probe, positions, geom, noise,
                         meta={"probe_diameter_m": frame_size * pitch * 2 / 3,
                               "probe_kind": "aperture"})
    state = ReconstructionState(truth, probe, geom.z)
    return dataset, state


def random_field(shape, seed=0, pitch=1e-6):
    rng = np.random.default_rng(seed)
    data = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return ComplexField(data, pitch)


@pytest.fixture
def tiny():
    return tiny_experiment()
