"""Ptychography simulation and reconstruction toolkit.

Projection solvers (ePIE, mPIE) and a gradient solver built on a
complex-valued reverse-mode autodiff tape, plus synthetic data generation,
quality metrics, a single-file dataset container, and a CLI.
"""

from .fields import ComplexField, energy, fft2_unitary, ifft2_unitary, shift_register
from .model import (PtychoDataset, PtychoGeometry, ReconstructionState,
                    ScanPosition, mse_loss, predict_intensity)
from .optics import Propagator, propagate_as, propagate_fraunhofer
from .simulate import NoiseSpec, Phantom, TrajectorySpec, preset_experiment
from .metrics import complex_correlation, registered_correlation
from .estimators import AdamSolver, EPIESolver, MPIESolver, initial_state
from .autodiff import AdConfig, backward, forward_record, reconstruct_ad, recover_distance
from .ptyd import read_dataset, read_state, write_dataset, write_state

__all__ = [
    "ComplexField", "energy", "fft2_unitary", "ifft2_unitary", "shift_register",
    "PtychoDataset", "PtychoGeometry", "ReconstructionState", "ScanPosition",
    "mse_loss", "predict_intensity", "Propagator", "propagate_as",
    "propagate_fraunhofer", "NoiseSpec", "Phantom", "TrajectorySpec",
    "preset_experiment", "complex_correlation", "registered_correlation",
    "AdamSolver", "EPIESolver", "MPIESolver", "initial_state", "AdConfig",
    "backward", "forward_record", "reconstruct_ad", "recover_distance",
    "read_dataset", "read_state", "write_dataset", "write_state",
]

__version__ = "0.1.0"
