"""Scikit-learn style solver frontends.

Each solver is an estimator: construct with hyperparameters, call
``fit(dataset)``, and read the reconstruction from the fitted attributes
``object_``, ``probe_``, ``z_``, and ``history_``. ``get_params`` /
``set_params`` come from the sklearn base class so the solvers compose
with the wider ecosystem (cloning, grid search over learning rates, ...).
"""

from __future__ import annotations

import time
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import autodiff, pie
from .fields import ComplexField, energy
from .model import (ModelError, PtychoDataset, ReconstructionState,
                    mse_loss, object_size_for)
from .simulate import make_probe


def check_dataset(dataset: PtychoDataset) -> PtychoDataset:
    """Validate and normalize a dataset before solving."""
    if not isinstance(dataset, PtychoDataset):
        raise ModelError("expected a PtychoDataset")
    return dataset.normalize()


def initial_state(dataset: PtychoDataset, probe: Optional[ComplexField] = None,
                  z: Optional[float] = None, init_phase: float = 0.0,
                  seed: int = 0) -> ReconstructionState:
    """Weak-information starting point: a unit-transmittance object with
    flat phase (or, for ``init_phase`` > 0, seeded uniform random phase in
    ``[-init_phase, init_phase]`` radians), and (unless given) an aperture
    probe scaled so its energy matches the mean measured frame energy."""
    geom = dataset.geometry
    n = geom.frame_size
    m = object_size_for(dataset.positions, n)
    if init_phase > 0.0:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                           spawn_key=(0xC0,)))
        data = np.exp(1j * rng.uniform(-init_phase, init_phase, (m, m)))
    else:
        data = np.ones((m, m), dtype=np.complex128)
    obj = ComplexField(data, geom.object_pitch)
    if probe is None:
        diameter = dataset.meta.get("probe_diameter_m", n * geom.object_pitch / 4.0)
        probe = make_probe(dataset.meta.get("probe_kind", "aperture"),
                           diameter, n, geom.object_pitch,
                           **dataset.meta.get("probe_params", {}))
        target = float(np.mean(np.sum(dataset.frames, axis=(1, 2))))
        if target > 0:
            probe = probe.with_data(probe.data * np.sqrt(target / energy(probe)))
    return ReconstructionState(obj, probe,
                               geom.z if z is None else z, epoch=0)


class _FittedMixin:
    def _require_fitted(self):
        if not hasattr(self, "object_"):
            raise NotFittedError("call fit() first")

    @property
    def state_(self) -> ReconstructionState:
        self._require_fitted()
        return ReconstructionState(self.object_, self.probe_, self.z_, self.n_epochs_)


class EPIESolver(BaseEstimator, _FittedMixin):
    """Extended ptychographic iterative engine."""

    def __init__(self, alpha_obj=0.25, beta_probe=0.25, epochs=100,
                 probe_update=True, probe_update_stop=None,
                 step_decay_epoch=None, step_decay=0.1, init_phase=0.0,
                 seed=0, budget_seconds=None):
        self.alpha_obj = alpha_obj
        self.beta_probe = beta_probe
        self.epochs = epochs
        self.probe_update = probe_update
        self.probe_update_stop = probe_update_stop
        self.step_decay_epoch = step_decay_epoch
        self.step_decay = step_decay
        self.init_phase = init_phase
        self.seed = seed
        self.budget_seconds = budget_seconds

    def _config(self) -> pie.PieConfig:
        return pie.PieConfig(alpha_obj=self.alpha_obj, beta_probe=self.beta_probe,
                             max_iters=self.epochs,
                             probe_update_enabled=self.probe_update,
                             probe_update_stop_epoch=self.probe_update_stop,
                             step_decay_epoch=self.step_decay_epoch,
                             step_decay=self.step_decay,
                             rng_seed=self.seed)

    def _epoch(self, state, dataset, cfg, buffers):
        pie.epie_epoch(state, dataset, cfg)

    def fit(self, dataset: PtychoDataset, probe: Optional[ComplexField] = None,
            callback=None):
        dataset = check_dataset(dataset)
        cfg = self._config()
        state = initial_state(dataset, probe, init_phase=self.init_phase,
                              seed=self.seed)
        buffers = pie.MomentumBuffers.for_state(state)
        records = []
        elapsed = 0.0
        for epoch in range(self.epochs):
            t0 = time.monotonic()
            self._epoch(state, dataset, cfg, buffers)
            elapsed += time.monotonic() - t0
            records.append(autodiff.EpochRecord(epoch + 1, elapsed,
                                                mse_loss(dataset, state),
                                                state.z_estimate))
            if callback is not None and callback(epoch + 1, state, records[-1]):
                break
            if self.budget_seconds is not None and elapsed >= self.budget_seconds:
                break
        self._finish(state, records)
        return self

    def _finish(self, state, records):
        self.object_ = state.obj
        self.probe_ = state.probe
        self.z_ = state.z_estimate
        self.n_epochs_ = state.epoch
        self.history_ = records


class MPIESolver(EPIESolver):
    """Momentum-accelerated PIE."""

    def __init__(self, alpha_obj=0.25, beta_probe=0.25, mpie_reg=0.15,
                 friction=0.9, momentum_gain=0.2, epochs=100,
                 probe_update=True, probe_update_stop=None,
                 step_decay_epoch=None, step_decay=0.1, init_phase=0.0,
                 seed=0, budget_seconds=None):
        super().__init__(alpha_obj=alpha_obj, beta_probe=beta_probe,
                         epochs=epochs, probe_update=probe_update,
                         probe_update_stop=probe_update_stop,
                         step_decay_epoch=step_decay_epoch,
                         step_decay=step_decay, init_phase=init_phase,
                         seed=seed, budget_seconds=budget_seconds)
        self.mpie_reg = mpie_reg
        self.friction = friction
        self.momentum_gain = momentum_gain

    def _config(self) -> pie.PieConfig:
        return pie.PieConfig(alpha_obj=self.alpha_obj, beta_probe=self.beta_probe,
                             mpie_reg=self.mpie_reg, friction=self.friction,
                             momentum_gain=self.momentum_gain,
                             max_iters=self.epochs,
                             probe_update_enabled=self.probe_update,
                             probe_update_stop_epoch=self.probe_update_stop,
                             step_decay_epoch=self.step_decay_epoch,
                             step_decay=self.step_decay,
                             rng_seed=self.seed)

    def _epoch(self, state, dataset, cfg, buffers):
        pie.mpie_epoch(state, dataset, cfg, buffers)


class AdamSolver(BaseEstimator, _FittedMixin):
    """Gradient-based reconstruction via the recorded forward model.

    ``lr`` follows the optimizer's usual meaning for the object and probe;
    the distance (when ``train_z``) moves in scaled units z/z_init with
    its own rate.
    """

    def __init__(self, lr=0.04, lr_probe=None, lr_z=1e-3, epochs=300,
                 train_probe=True, train_z=False, batch_size=None,
                 init_phase=0.0, seed=0, budget_seconds=None):
        self.lr = lr
        self.lr_probe = lr_probe
        self.lr_z = lr_z
        self.epochs = epochs
        self.train_probe = train_probe
        self.train_z = train_z
        self.batch_size = batch_size
        self.init_phase = init_phase
        self.seed = seed
        self.budget_seconds = budget_seconds

    def _config(self) -> autodiff.AdConfig:
        return autodiff.AdConfig(lr_object=self.lr, lr_probe=self.lr_probe,
                                 lr_z=self.lr_z, train_probe=self.train_probe,
                                 train_z=self.train_z, epochs=self.epochs,
                                 batch_size=self.batch_size, rng_seed=self.seed)

    def fit(self, dataset: PtychoDataset, probe: Optional[ComplexField] = None,
            z_init: Optional[float] = None, callback=None):
        dataset = check_dataset(dataset)
        init = initial_state(dataset, probe, z=z_init,
                             init_phase=self.init_phase, seed=self.seed)
        if self.train_z and probe is not None:
            init = ReconstructionState(init.obj, probe, init.z_estimate)

        def wrapped(epoch, state, record):
            stop = False
            if callback is not None:
                stop = bool(callback(epoch, state, record))
            if self.budget_seconds is not None and record.seconds >= self.budget_seconds:
                stop = True
            return stop

        state, records = autodiff.reconstruct_ad(dataset, init, self._config(),
                                                 callback=wrapped)
        self.object_ = state.obj
        self.probe_ = state.probe
        self.z_ = state.z_estimate
        self.n_epochs_ = state.epoch
        self.history_ = records
        return self


SOLVERS = {"epie": EPIESolver, "mpie": MPIESolver, "adam": AdamSolver}
