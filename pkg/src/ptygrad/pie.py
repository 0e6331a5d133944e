"""Projection-type ptychography solvers: ePIE and momentum-accelerated mPIE.

Both sweep the scan positions in a seeded random order, replace the
modulus of the propagated exit wave by the measured one, backpropagate,
and apply the standard object/probe update rules. mPIE additionally
regularizes the update denominators and applies a momentum kick to object
and probe after each full pass. Position updates within an epoch are
inherently serial (each reads the previous update) and are never
parallelized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fields import ComplexField, ifft2_unitary
from .model import PtychoDataset, ReconstructionState, propagate, window_slices
from .optics import Propagator, propagate_as


class SolverError(RuntimeError):
    """Raised when a solver cannot proceed (bad configuration, shape errors)."""


class DivergenceError(SolverError):
    """Raised when an update produces non-finite values."""


@dataclass
class PieConfig:
    """Hyperparameters for ePIE/mPIE epochs.

    Defaults follow the commonly used published values; the regularization
    mix ``mpie_reg`` blends the plain and max-normalized denominators, and
    ``friction``/``momentum_gain`` control the after-pass momentum kick.
    """

    alpha_obj: float = 0.25
    beta_probe: float = 0.25
    mpie_reg: float = 0.15
    friction: float = 0.9
    momentum_gain: float = 0.2
    max_iters: int = 100
    probe_update_enabled: bool = True
    probe_update_start_epoch: int = 2
    # Optional refinement window: noisy data slowly pumps read-noise
    # structure into the probe once it has converged, so the update can be
    # stopped after a fixed number of epochs (None = never stop).
    probe_update_stop_epoch: Optional[int] = None
    # Step-size decay: after ``step_decay_epoch`` epochs the object/probe
    # steps are multiplied by ``step_decay``. Projection updates against
    # very noisy moduli keep random-walking weakly illuminated pixels after
    # convergence; decaying the step freezes the converged solution.
    step_decay_epoch: Optional[int] = None
    step_decay: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if self.alpha_obj <= 0 or self.beta_probe <= 0:
            raise SolverError("step sizes must be positive")
        if not 0 <= self.mpie_reg <= 1:
            raise SolverError("mpie_reg must be in [0, 1]")
        if not 0 <= self.friction < 1:
            raise SolverError("friction must be in [0, 1)")
        if not 0 < self.step_decay <= 1:
            raise SolverError("step_decay must be in (0, 1]")


@dataclass
class MomentumBuffers:
    """Momentum velocity and previous-iterate snapshots for mPIE."""

    v_obj: np.ndarray
    v_probe: np.ndarray
    prev_obj: np.ndarray
    prev_probe: np.ndarray

    @classmethod
    def for_state(cls, state: ReconstructionState) -> "MomentumBuffers":
        return cls(np.zeros_like(state.obj.data), np.zeros_like(state.probe.data),
                   state.obj.data.copy(), state.probe.data.copy())


def fourier_magnitude_project(psi: ComplexField, i_meas: np.ndarray,
                              eps: float = 1e-12) -> ComplexField:
    """Replace the modulus by sqrt(I_meas), keeping the phase.

    Where |psi| < eps the phase is undefined and sqrt(I_meas) is used with
    zero phase. The output modulus squared equals I_meas exactly.
    """
    i_meas = np.asarray(i_meas, dtype=np.float64)
    if i_meas.shape != psi.shape:
        raise SolverError(f"shape mismatch: {psi.shape} vs {i_meas.shape}")
    if i_meas.min() < 0:
        raise SolverError("measured intensity must be non-negative")
    mag = np.abs(psi.data)
    target = np.sqrt(i_meas)
    out = np.where(mag < eps, target.astype(np.complex128),
                   target * psi.data / np.where(mag < eps, 1.0, mag))
    return psi.with_data(out)


def _backpropagate(f: ComplexField, dataset: PtychoDataset, z: float) -> ComplexField:
    geom = dataset.geometry
    if geom.propagator is Propagator.ANGULAR_SPECTRUM:
        return propagate_as(f, geom.wavelength, -z)
    # Fraunhofer: inverse of the single centered unitary FFT
    return ComplexField(ifft2_unitary(f).data, geom.object_pitch)


def _position_order(n: int, seed: int, epoch: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(epoch,)))
    return rng.permutation(n)


def _pie_sweep(state: ReconstructionState, dataset: PtychoDataset, cfg: PieConfig,
               regularized: bool) -> None:
    """One in-place pass over all positions with the (e/m)PIE update rules."""
    geom = dataset.geometry
    n = geom.frame_size
    obj = state.obj.data
    probe = state.probe.data
    decay = (cfg.step_decay if cfg.step_decay_epoch is not None
             and state.epoch + 1 > cfg.step_decay_epoch else 1.0)
    alpha = cfg.alpha_obj * decay
    beta = cfg.beta_probe * decay
    update_probe = (cfg.probe_update_enabled
                    and state.epoch + 1 >= cfg.probe_update_start_epoch
                    and (cfg.probe_update_stop_epoch is None
                         or state.epoch + 1 <= cfg.probe_update_stop_epoch))
    for idx in _position_order(dataset.num_positions, cfg.rng_seed, state.epoch):
        pos = dataset.positions[idx]
        sy, sx = window_slices(state.obj.shape, pos, n)
        window = obj[sy, sx].copy()
        psi = window * probe
        cam = propagate(ComplexField(psi, geom.object_pitch), geom, state.z_estimate)
        cam_proj = fourier_magnitude_project(cam, dataset.frames[idx])
        psi_new = _backpropagate(cam_proj, dataset, state.z_estimate).data
        dpsi = psi_new - psi
        p2 = np.abs(probe) ** 2
        p2max = p2.max()
        if regularized:
            denom_o = (1.0 - cfg.mpie_reg) * p2 + cfg.mpie_reg * p2max
        else:
            denom_o = p2max
        obj[sy, sx] += alpha * np.conj(probe) * dpsi / denom_o
        if update_probe:
            o2 = np.abs(window) ** 2
            o2max = o2.max()
            if o2max > 0:
                if regularized:
                    denom_p = (1.0 - cfg.mpie_reg) * o2 + cfg.mpie_reg * o2max
                else:
                    denom_p = o2max
                probe += beta * np.conj(window) * dpsi / denom_p
    if not (np.all(np.isfinite(obj)) and np.all(np.isfinite(probe))):
        raise DivergenceError(f"PIE update diverged at epoch {state.epoch}")


def epie_epoch(state: ReconstructionState, dataset: PtychoDataset,
               cfg: PieConfig) -> ReconstructionState:
    """One ePIE pass over all positions (in place); returns the state."""
    _pie_sweep(state, dataset, cfg, regularized=False)
    state.epoch += 1
    return state


def mpie_epoch(state: ReconstructionState, dataset: PtychoDataset, cfg: PieConfig,
               buffers: MomentumBuffers) -> ReconstructionState:
    """One mPIE pass: regularized updates plus an after-pass momentum kick."""
    _pie_sweep(state, dataset, cfg, regularized=True)
    obj, probe = state.obj.data, state.probe.data
    buffers.v_obj = cfg.friction * buffers.v_obj + (obj - buffers.prev_obj)
    buffers.v_probe = cfg.friction * buffers.v_probe + (probe - buffers.prev_probe)
    obj += cfg.momentum_gain * buffers.v_obj
    probe += cfg.momentum_gain * buffers.v_probe
    buffers.prev_obj = state.obj.data.copy()
    buffers.prev_probe = state.probe.data.copy()
    if not (np.all(np.isfinite(state.obj.data)) and np.all(np.isfinite(state.probe.data))):
        raise DivergenceError(f"mPIE momentum diverged at epoch {state.epoch}")
    state.epoch += 1
    return state
