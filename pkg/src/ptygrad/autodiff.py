"""Reverse-mode automatic differentiation through the ptychographic forward
model, with complex (Wirtinger) gradients and an Adam optimizer.

The forward pass records a tape of the operations that turn object, probe,
and distance into the intensity loss; the backward pass walks the tape in
reverse applying each operation's adjoint rule. Gradients of the real loss
with respect to complex tensors use the conjugate-cotangent convention
g = dL/d(conj(y)), so a plain step theta <- theta - lr * g descends the
loss. The propagation distance enters through the angular spectrum
transfer function H(z) = exp(i*z*kappa), whose derivative i*kappa*H makes
the distance a trainable scalar.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .fields import ComplexField
from .model import (PtychoDataset, ReconstructionState, embed_add,
                    window_slices)
from .optics import Propagator, transfer_kernel


class AdError(RuntimeError):
    """Raised for autodiff/solver failures and bad configurations."""


class DivergenceError(AdError):
    """Raised when the loss leaves the finite range; carries the epoch."""


def _fftu(a: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(a), norm="ortho"))


def _ifftu(a: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(a), norm="ortho"))


# Op kinds on the tape. "object"/"probe" are the parameter leaves.
OPS = ("object", "probe", "extract", "multiply", "fft", "ifft",
       "transfer", "abs_square", "mse")


@dataclass
class Node:
    """One recorded operation: kind, input node ids, forward value, and
    whatever the adjoint rule needs."""

    op: str
    inputs: tuple[int, ...]
    value: np.ndarray | float
    cache: dict = field(default_factory=dict)


@dataclass
class Tape:
    """Topologically ordered record of one forward evaluation."""

    nodes: list[Node] = field(default_factory=list)
    object_id: int = -1
    probe_id: int = -1
    obj_shape: tuple[int, int] = (0, 0)
    train_z: bool = False

    def add(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1


@dataclass
class WirtingerGrad:
    """Conjugate-cotangent gradients of the loss."""

    g_obj: np.ndarray
    g_probe: np.ndarray
    g_z: float = 0.0


def forward_record(state: ReconstructionState, dataset: PtychoDataset,
                   subset: Optional[Sequence[int]] = None,
                   train_z: bool = False) -> tuple[float, Tape]:
    """Evaluate the mean squared intensity error over ``subset`` (all
    positions by default) while recording the computation on a tape."""
    geom = dataset.geometry
    if train_z and geom.propagator is not Propagator.ANGULAR_SPECTRUM:
        raise AdError("trainable distance requires the angular spectrum model; "
                      "the far-field map has no distance dependence")
    idxs = list(range(dataset.num_positions)) if subset is None else list(subset)
    n = geom.frame_size
    tape = Tape(obj_shape=state.obj.shape, train_z=train_z)
    tape.object_id = tape.add(Node("object", (), state.obj.data))
    tape.probe_id = tape.add(Node("probe", (), state.probe.data))
    if geom.propagator is Propagator.ANGULAR_SPECTRUM:
        h, kappa = transfer_kernel((n, n), geom.object_pitch, geom.wavelength,
                                   state.z_estimate)
    intensity_ids = []
    measured = []
    for i in idxs:
        pos = dataset.positions[i]
        sy, sx = window_slices(state.obj.shape, pos, n)
        window = state.obj.data[sy, sx]
        ex_id = tape.add(Node("extract", (tape.object_id,), window, {"pos": pos}))
        psi = window * state.probe.data
        mul_id = tape.add(Node("multiply", (ex_id, tape.probe_id), psi))
        if geom.propagator is Propagator.ANGULAR_SPECTRUM:
            spec = _fftu(psi)
            fft_id = tape.add(Node("fft", (mul_id,), spec))
            prop = h * spec
            tr_id = tape.add(Node("transfer", (fft_id,), prop,
                                  {"h": h, "kappa": kappa}))
            cam = _ifftu(prop)
            cam_id = tape.add(Node("ifft", (tr_id,), cam))
        else:
            cam = _fftu(psi)
            cam_id = tape.add(Node("fft", (mul_id,), cam))
        inten = np.abs(cam) ** 2
        intensity_ids.append(tape.add(Node("abs_square", (cam_id,), inten)))
        measured.append(dataset.frames[i])
    total = sum(float(np.sum((m - tape.nodes[j].value) ** 2))
                for j, m in zip(intensity_ids, measured))
    loss = total / (len(idxs) * n * n)
    tape.add(Node("mse", tuple(intensity_ids), loss,
                  {"measured": measured, "count": len(idxs), "n": n}))
    if not np.isfinite(loss):
        raise DivergenceError("non-finite loss in forward pass")
    return loss, tape


def backward(tape: Tape) -> WirtingerGrad:
    """Walk the tape in reverse, accumulating conjugate cotangents."""
    cot: dict[int, np.ndarray] = {}
    g_obj = np.zeros(tape.obj_shape, dtype=np.complex128)
    g_probe = None
    g_z = 0.0
    for nid in range(len(tape.nodes) - 1, -1, -1):
        node = tape.nodes[nid]
        if node.op == "mse":
            scale = 1.0 / (node.cache["count"] * node.cache["n"] ** 2)
            for j, meas in zip(node.inputs, node.cache["measured"]):
                ibar = 2.0 * (tape.nodes[j].value - meas) * scale
                cot[j] = cot.get(j, 0.0) + ibar
            continue
        ybar = cot.pop(nid, None)
        if ybar is None:
            continue
        if node.op == "abs_square":
            (j,) = node.inputs
            cot[j] = cot.get(j, 0.0) + ybar * tape.nodes[j].value
        elif node.op == "fft":
            (j,) = node.inputs
            cot[j] = cot.get(j, 0.0) + _ifftu(ybar)
        elif node.op == "ifft":
            (j,) = node.inputs
            cot[j] = cot.get(j, 0.0) + _fftu(ybar)
        elif node.op == "transfer":
            (j,) = node.inputs
            h = node.cache["h"]
            cot[j] = cot.get(j, 0.0) + ybar * np.conj(h)
            if tape.train_z:
                x = tape.nodes[j].value
                kappa = node.cache["kappa"]
                g_z += float(np.sum(2.0 * np.real(
                    np.conj(ybar) * (1j * kappa * h * x))))
        elif node.op == "multiply":
            j_win, j_probe = node.inputs
            probe = tape.nodes[j_probe].value
            window = tape.nodes[j_win].value
            cot[j_win] = cot.get(j_win, 0.0) + ybar * np.conj(probe)
            cot[j_probe] = cot.get(j_probe, 0.0) + ybar * np.conj(window)
        elif node.op == "extract":
            pos = node.cache["pos"]
            embed_add(g_obj, np.asarray(ybar), pos, tape.obj_shape)
        elif node.op == "probe":
            g_probe = np.asarray(ybar)
        elif node.op == "object":
            pass
        else:
            raise AdError(f"no adjoint rule for op {node.op!r}")
    if g_probe is None:
        g_probe = np.zeros_like(tape.nodes[tape.probe_id].value)
    return WirtingerGrad(g_obj=g_obj, g_probe=g_probe, g_z=g_z)


@dataclass
class AdamState:
    """First/second moment buffers for one tensor (complex m, real v)."""

    m: np.ndarray | complex
    v: np.ndarray | float
    t: int = 0

    @classmethod
    def like(cls, value) -> "AdamState":
        if np.isscalar(value):
            return cls(0.0, 0.0)
        return cls(np.zeros_like(value), np.zeros(np.shape(value)))


def adam_step(value, grad, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update; complex tensors keep a complex first moment and a
    real second moment accumulated from |g|^2."""
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * np.abs(grad) ** 2
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    return value - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class AdConfig:
    """Configuration of the gradient-based reconstruction loop."""

    lr_object: float = 0.04
    lr_probe: Optional[float] = None     # defaults to lr_object
    lr_z: float = 1e-3                   # in scaled units z/z_init
    train_object: bool = True
    train_probe: bool = True
    train_z: bool = False
    epochs: int = 100
    batch_size: Optional[int] = None     # None = full batch
    rng_seed: int = 0                    # minibatch shuffling only
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    keep_best: bool = False              # needs a truth-scored callback

    def __post_init__(self):
        if self.lr_object <= 0 or (self.lr_probe is not None and self.lr_probe <= 0):
            raise AdError("learning rates must be positive")
        if self.train_z and self.lr_z <= 0:
            raise AdError("lr_z must be positive when z is trainable")


@dataclass
class EpochRecord:
    epoch: int
    seconds: float       # cumulative solver time, metric evaluation excluded
    loss: float
    z_estimate: float


def reconstruct_ad(dataset: PtychoDataset, init: ReconstructionState, cfg: AdConfig,
                   callback: Optional[Callable[[int, ReconstructionState, "EpochRecord"],
                                               Optional[bool]]] = None,
                   score: Optional[Callable[[ReconstructionState], float]] = None,
                   ) -> tuple[ReconstructionState, list[EpochRecord]]:
    """Run Adam over the recorded forward model.

    One epoch is one full pass over the positions: a single optimizer step
    in full-batch mode, or one step per minibatch otherwise. ``callback``
    runs after each epoch outside the timed section; returning True stops
    the loop early. Raises on divergence, carrying the epoch index.

    With ``cfg.keep_best`` and a ``score`` function (typically a
    truth-referenced correlation, evaluated outside the timed section),
    the returned state is the snapshot with the highest score instead of
    the final iterate; the history always reflects every epoch run.
    """
    state = init.copy()
    lr_probe = cfg.lr_probe if cfg.lr_probe is not None else cfg.lr_object
    adam_obj = AdamState.like(state.obj.data)
    adam_probe = AdamState.like(state.probe.data)
    adam_z = AdamState.like(0.0)
    z_init = state.z_estimate
    z_scaled = 1.0
    history: list[EpochRecord] = []
    best: Optional[tuple[float, ReconstructionState]] = None
    elapsed = 0.0
    npos = dataset.num_positions
    full_batch = cfg.batch_size is None or cfg.batch_size >= npos
    for epoch in range(cfg.epochs):
        batches: list[Optional[list[int]]]
        if full_batch:
            batches = [None]
        else:
            # fresh seeded shuffle per epoch, as in standard SGD practice
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=cfg.rng_seed, spawn_key=(epoch,)))
            order = rng.permutation(npos)
            batches = [list(map(int, order[i: i + cfg.batch_size]))
                       for i in range(0, npos, cfg.batch_size)]
        t0 = time.monotonic()
        loss = 0.0
        for batch in batches:
            try:
                loss, tape = forward_record(state, dataset, batch, cfg.train_z)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}") from exc
            grad = backward(tape)
            if cfg.train_object:
                new_obj = adam_step(state.obj.data, grad.g_obj, adam_obj,
                                    cfg.lr_object, cfg.beta1, cfg.beta2, cfg.eps)
                state.obj = state.obj.with_data(new_obj)
            if cfg.train_probe:
                new_probe = adam_step(state.probe.data, grad.g_probe, adam_probe,
                                      lr_probe, cfg.beta1, cfg.beta2, cfg.eps)
                state.probe = state.probe.with_data(new_probe)
            if cfg.train_z:
                g_scaled = grad.g_z * z_init
                z_scaled = adam_step(z_scaled, g_scaled, adam_z, cfg.lr_z,
                                     cfg.beta1, cfg.beta2, cfg.eps)
                state.z_estimate = float(z_scaled * z_init)
        state.epoch = epoch + 1
        elapsed += time.monotonic() - t0
        if not np.isfinite(loss):
            raise DivergenceError(f"loss diverged at epoch {epoch}")
        history.append(EpochRecord(epoch + 1, elapsed, loss, state.z_estimate))
        if cfg.keep_best and score is not None:
            s = float(score(state))
            if best is None or s > best[0]:
                best = (s, state.copy())
        if callback is not None and callback(epoch + 1, state, history[-1]):
            break
    if best is not None:
        return best[1], history
    return state, history


def recover_distance(dataset: PtychoDataset, init: ReconstructionState,
                     cfg: AdConfig, known_probe: ComplexField,
                     ) -> tuple[ReconstructionState, list[float]]:
    """Jointly optimize object and distance with a calibrated, frozen probe.

    Returns the final state and the per-epoch distance trajectory.
    """
    import dataclasses
    cfg = dataclasses.replace(cfg, train_z=True, train_probe=False)
    start = ReconstructionState(init.obj, known_probe, init.z_estimate, init.epoch)
    traj: list[float] = []

    def record(_epoch: int, st: ReconstructionState, _rec: EpochRecord):
        traj.append(st.z_estimate)

    state, _ = reconstruct_ad(dataset, start, cfg, callback=record)
    return state, traj
