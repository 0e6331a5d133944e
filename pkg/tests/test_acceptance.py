"""End-to-end acceptance gate.

Eight criteria covering gradient correctness, solver quality under wall-clock
budgets on the noisy and noiseless desk presets, distance recovery, optics and
metric properties, and container/CLI reproducibility. The budgeted runs are
cached at module scope and shared between criteria; the whole module takes
tens of minutes and dominates the suite runtime. Wall-clock cases assume the
machine is otherwise idle.
"""

import struct
import time

import numpy as np
import pytest

from ptygrad import ptyd
from ptygrad.autodiff import AdConfig, backward, forward_record, recover_distance
from ptygrad.bench import CSV_COLUMNS, ConvergenceLog, LogRow, run_solver
from ptygrad.cli import main
from ptygrad.estimators import check_dataset, initial_state
from ptygrad.fields import ComplexField, roll_field, shift_register
from ptygrad.metrics import complex_correlation, registered_correlation
from ptygrad.model import Propagator, mse_loss
from ptygrad.optics import propagate_as, propagate_fraunhofer, transfer_kernel
from ptygrad.pie import PieConfig, epie_epoch
from ptygrad.simulate import preset_experiment

from conftest import random_field, tiny_experiment

A2_BUDGET = 120.0
A8_BUDGET = 4 * A2_BUDGET
A2_SEEDS = (1, 2, 3)
A2_SOLVERS = ("epie", "mpie", "adam:0.01", "adam:0.04")

_experiments = {}
_logs = {}


def _experiment(seed, noiseless=False):
    key = (seed, noiseless)
    if key not in _experiments:
        _experiments[key] = preset_experiment("desk", seed=seed,
                                              noiseless=noiseless)
    return _experiments[key]


def _noisy_log(seed, spec):
    """Budgeted solver run on the noisy desk preset, cached.

    Seed 1 runs mPIE and Adam(0.04) to the 4x budget so the same log serves
    both the budget criterion (A2, read at 120 s) and the long-run
    overfitting trend (A8); everything else runs to the 120 s budget.
    """
    key = (seed, spec)
    if key not in _logs:
        budget = A8_BUDGET if (seed == 1 and spec in ("mpie", "adam:0.04")) \
            else A2_BUDGET
        exp = _experiment(seed)
        _, log = run_solver(spec, exp.dataset, truth=exp.truth_object,
                            budget_seconds=budget, seed=seed)
        _logs[key] = log
    return _logs[key]


def _within(log, seconds, attr="corr_abs"):
    rows = [r for r in log.rows if r.wall_clock_s <= seconds]
    return rows or log.rows[:1]


def _majority(flags):
    return sum(bool(f) for f in flags) >= (len(flags) // 2 + 1)


# --------------------------------------------------------------------------
# A1: finite-difference gradient check
# --------------------------------------------------------------------------

class TestA1GradientCheck:
    def test_tape_gradients_match_finite_differences(self):
        start = time.monotonic()
        rng = np.random.default_rng(11)
        checked = 0
        for _ in range(20):
            n = int(rng.integers(16, 33))
            npos = int(rng.integers(1, 9))
            prop = Propagator.ANGULAR_SPECTRUM if rng.random() < 0.5 \
                else Propagator.FRAUNHOFER
            ds, truth = tiny_experiment(frame_size=n, num_positions=npos,
                                        seed=int(rng.integers(1 << 30)),
                                        propagator=prop)
            ds = check_dataset(ds)
            state = initial_state(ds)
            state.obj.data[...] *= (1.0 + 0.1 * rng.standard_normal(state.obj.shape)
                                    + 0.1j * rng.standard_normal(state.obj.shape))
            train_z = prop is Propagator.ANGULAR_SPECTRUM
            _, tape = forward_record(state, ds, train_z=train_z)
            grad = backward(tape)

            for g, attr in ((grad.g_obj, "obj"), (grad.g_probe, "probe")):
                d = (rng.standard_normal(g.shape)
                     + 1j * rng.standard_normal(g.shape))
                d *= 1e-6 / np.abs(d).max()
                expected = 2.0 * np.real(np.sum(np.conj(g) * d))
                plus = state.copy()
                minus = state.copy()
                getattr(plus, attr).data[...] += d
                getattr(minus, attr).data[...] -= d
                lp, _ = forward_record(plus, ds)
                lm, _ = forward_record(minus, ds)
                fd = (lp - lm) / 2.0
                assert abs(fd - expected) <= 1e-4 * max(abs(fd), abs(expected))
            if train_z:
                h = 1e-9
                plus = state.copy()
                minus = state.copy()
                plus.z_estimate += h
                minus.z_estimate -= h
                lp, _ = forward_record(plus, ds)
                lm, _ = forward_record(minus, ds)
                fd = (lp - lm) / (2.0 * h)
                assert abs(fd - grad.g_z) <= 1e-4 * max(abs(fd),
                                                        abs(grad.g_z))
            checked += 1
        assert checked == 20
        assert time.monotonic() - start < 60.0


# --------------------------------------------------------------------------
# A2: noisy desk preset, budgeted solver matrix (3-seed majority)
# --------------------------------------------------------------------------

class TestA2NoisyBudget:
    def test_all_solvers_reach_090(self):
        flags = []
        for seed in A2_SEEDS:
            peaks = [max(r.corr_abs for r in _within(_noisy_log(seed, s),
                                                     A2_BUDGET))
                     for s in A2_SOLVERS]
            flags.append(all(p >= 0.90 for p in peaks))
        assert _majority(flags), flags

    def test_adam_004_within_005_of_mpie_at_budget(self):
        flags = []
        for seed in A2_SEEDS:
            mpie = _within(_noisy_log(seed, "mpie"), A2_BUDGET)[-1].corr_abs
            adam = _within(_noisy_log(seed, "adam:0.04"),
                           A2_BUDGET)[-1].corr_abs
            flags.append(adam >= mpie - 0.05)
        assert _majority(flags), flags

    def test_low_lr_adam_slower_at_half_budget(self):
        flags = []
        for seed in A2_SEEDS:
            lo = _within(_noisy_log(seed, "adam:0.01"), 60.0)[-1].corr_abs
            hi = _within(_noisy_log(seed, "adam:0.04"), 60.0)[-1].corr_abs
            flags.append(lo < hi)
        assert _majority(flags), flags


# --------------------------------------------------------------------------
# A3: distance recovery
# --------------------------------------------------------------------------

class TestA3DistanceRecovery:
    @pytest.mark.parametrize("z0", [50e-3, 20e-3])
    def test_z_recovered_within_1mm(self, z0):
        exp = _experiment(1, noiseless=True)
        ds = check_dataset(exp.dataset)
        z_true = ds.geometry.z
        init = initial_state(ds, probe=exp.probe, z=z0)
        cfg = AdConfig(lr_object=0.04, lr_z=3.5e-3, train_z=True,
                       train_probe=False, epochs=200)
        _, traj = recover_distance(ds, init, cfg, known_probe=exp.probe)
        errors = [abs(z - z_true) for z in traj]
        assert errors[-1] < 1e-3, f"final error {errors[-1] * 1e3:.2f} mm"
        running_min = errors[19]
        for err in errors[20:]:
            assert err <= running_min + 0.5e-3, \
                f"non-monotone: {err * 1e3:.2f} mm vs min {running_min * 1e3:.2f}"
            running_min = min(running_min, err)


# --------------------------------------------------------------------------
# A4: noiseless desk preset quality
# --------------------------------------------------------------------------

class TestA4Noiseless:
    def test_mpie_reaches_099_at_100_epochs(self):
        exp = _experiment(1, noiseless=True)
        _, log = run_solver("mpie", exp.dataset, truth=exp.truth_object,
                            max_epochs=100, seed=1)
        assert log.final() >= 0.99, log.final()

    def test_adam_reaches_099_at_300_epochs(self):
        exp = _experiment(1, noiseless=True)
        _, log = run_solver("adam:0.04", exp.dataset, truth=exp.truth_object,
                            max_epochs=300, seed=1)
        assert log.final() >= 0.99, log.final()

    def test_ground_truth_is_epie_fixed_point(self):
        from ptygrad.model import ReconstructionState
        exp = _experiment(1, noiseless=True)
        ds = exp.dataset
        state = ReconstructionState(exp.truth_object.copy(), exp.probe.copy(),
                                    ds.geometry.z)
        loss_before = mse_loss(ds, state)
        for _ in range(3):
            epie_epoch(state, ds, PieConfig())
        assert abs(mse_loss(ds, state) - loss_before) <= 1e-10


# --------------------------------------------------------------------------
# A5: optics properties
# --------------------------------------------------------------------------

class TestA5Optics:
    def test_parseval_and_semigroup(self):
        for seed in range(5):
            f = random_field((64, 64), seed=seed, pitch=12.9e-6)
            lam = 561e-9
            prop = propagate_as(f, lam, 10e-3)
            assert np.sum(np.abs(prop.data) ** 2) == pytest.approx(
                np.sum(np.abs(f.data) ** 2), rel=1e-10)
            two_step = propagate_as(propagate_as(f, lam, 4e-3), lam, 6e-3)
            np.testing.assert_allclose(two_step.data, prop.data, atol=1e-10)

    def test_as_matches_fraunhofer_in_far_field(self):
        n, diameter_px, pitch, lam = 256, 7, 6.45e-6, 561e-9
        z = n * pitch ** 2 / lam          # Fraunhofer sampling-matched plane
        fresnel = (diameter_px * pitch / 2.0) ** 2 / (lam * z)
        assert fresnel < 0.05
        ys = np.arange(n) - n // 2
        yy, xx = np.meshgrid(ys, ys, indexing="ij")
        aperture = (np.hypot(yy, xx) <= diameter_px / 2.0).astype(complex)
        f = ComplexField(aperture, pitch)
        i_as = np.abs(propagate_as(f, lam, z).data) ** 2
        i_fr = np.abs(propagate_fraunhofer(f, lam, z).data) ** 2
        assert np.max(np.abs(i_as - i_fr)) <= 0.05 * i_fr.max()

    def test_transfer_kernel_z_derivative(self):
        lam, pitch, z, h = 561e-9, 12.9e-6, 35e-3, 1e-10
        H, kappa = transfer_kernel((32, 32), pitch, lam, z)
        dH = 1j * kappa * H
        Hp, _ = transfer_kernel((32, 32), pitch, lam, z + h)
        Hm, _ = transfer_kernel((32, 32), pitch, lam, z - h)
        fd = (Hp - Hm) / (2 * h)
        np.testing.assert_allclose(dH, fd, atol=1e-6 * np.abs(fd).max())


# --------------------------------------------------------------------------
# A6: correlation metric oracle
# --------------------------------------------------------------------------

class TestA6Metric:
    def test_brute_force_oracle(self):
        a = random_field((32, 32), seed=5).data
        b = random_field((32, 32), seed=6).data
        expected = np.vdot(a, b) / np.sqrt(np.vdot(a, a).real
                                           * np.vdot(b, b).real)
        assert complex_correlation(a, b) == pytest.approx(expected, abs=1e-12)

    def test_invariances(self):
        a = random_field((32, 32), seed=7).data
        base = abs(complex_correlation(a, a * (0.7 + 0.1j)))
        assert base == pytest.approx(1.0, abs=1e-12)
        rot = complex_correlation(a, a * np.exp(1.3j))
        assert abs(rot) == pytest.approx(1.0, abs=1e-12)
        assert np.angle(rot) == pytest.approx(1.3, abs=1e-12)

    def test_exact_shift_registration(self):
        f = random_field((24, 24), seed=8)
        for dy, dx in [(0, 0), (1, -2), (-3, 4), (5, 5)]:
            shifted = roll_field(f, (dy, dx))
            shift = shift_register(f, shifted)
            assert shift == (dy, dx)
            rep = registered_correlation(f, shifted)
            assert rep.corr_abs == pytest.approx(1.0, abs=1e-12)


# --------------------------------------------------------------------------
# A7: container and reproducibility
# --------------------------------------------------------------------------

class TestA7Container:
    def test_round_trip_bit_exact(self, tmp_path):
        exp = _experiment(1)
        path = tmp_path / "d.ptyd"
        ptyd.write_dataset(exp.dataset, path, frame_dtype="f64")
        back = ptyd.read_dataset(path)
        np.testing.assert_array_equal(back.frames, exp.dataset.frames)
        assert back.geometry == exp.dataset.geometry
        assert [p.offset for p in back.positions] == \
            [p.offset for p in exp.dataset.positions]

    def test_header_fuzz_1000_mutations(self, tmp_path):
        exp = _experiment(1)
        path = tmp_path / "d.ptyd"
        ptyd.write_dataset(exp.dataset, path)
        raw = path.read_bytes()
        (hlen,) = struct.unpack("<Q", raw[6:14])
        rng = np.random.default_rng(1234)
        target = tmp_path / "fuzz.ptyd"
        for _ in range(1000):
            idx = int(rng.integers(0, 14 + hlen))
            delta = int(rng.integers(1, 256))
            mutated = bytearray(raw)
            mutated[idx] = (mutated[idx] + delta) % 256
            target.write_bytes(bytes(mutated))
            with pytest.raises(ptyd.DataError):
                ptyd.read_dataset(target)

    def test_cli_simulate_seed7_byte_identical(self, tmp_path):
        a, b = str(tmp_path / "a.ptyd"), str(tmp_path / "b.ptyd")
        for out in (a, b):
            assert main(["simulate", "--preset", "desk", "--seed", "7",
                         "--out", out]) == 0
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read()

    def test_convergence_csv_schema(self, tmp_path):
        assert CSV_COLUMNS == ["epoch", "wall_clock_s", "loss", "corr_abs",
                               "corr_amp", "corr_phase", "z_m"]
        log = ConvergenceLog()
        log.append(LogRow(1, 0.1, 2.0, 0.5, 0.6, 0.7, 35e-3))
        path = tmp_path / "c.csv"
        log.write_csv(path)
        assert path.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)


# --------------------------------------------------------------------------
# A8: long-run overfitting trend at 4x budget
# --------------------------------------------------------------------------

class TestA8Overfitting:
    def test_adam_peaks_then_degrades(self):
        log = _noisy_log(1, "adam:0.04")
        assert log.rows[-1].wall_clock_s >= 0.95 * A8_BUDGET
        assert log.peak() - log.final() >= 0.005

    def test_mpie_degrades_less_than_adam(self):
        adam = _noisy_log(1, "adam:0.04")
        mpie = _noisy_log(1, "mpie")
        assert (mpie.peak() - mpie.final()) < (adam.peak() - adam.final())
