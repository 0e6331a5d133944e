"""Metric oracle tests: Eq.-4 correlation, invariances, registration."""

import numpy as np
import pytest

from ptygrad.fields import roll_field
from ptygrad.metrics import (CorrelationReport, MetricError,
                             amplitude_correlation, complex_correlation,
                             phase_correlation, registered_correlation,
                             remove_phase_tilt)

from conftest import random_field


class TestComplexCorrelation:
    def test_brute_force_oracle(self):
        a = random_field((16, 16), seed=1).data
        b = random_field((16, 16), seed=2).data
        expected = np.sum(np.conj(a) * b) / (
            np.sqrt(np.sum(np.abs(a) ** 2)) * np.sqrt(np.sum(np.abs(b) ** 2)))
        assert complex_correlation(a, b) == pytest.approx(expected, abs=1e-12)

    def test_self_correlation_is_one(self):
        a = random_field((16, 16), seed=3).data
        assert complex_correlation(a, a) == pytest.approx(1.0 + 0j, abs=1e-12)

    def test_cauchy_schwarz_bound(self):
        for seed in range(10):
            a = random_field((12, 12), seed=seed).data
            b = random_field((12, 12), seed=seed + 100).data
            assert abs(complex_correlation(a, b)) <= 1.0 + 1e-12

    def test_global_phase_and_scale_invariance_of_modulus(self):
        a = random_field((16, 16), seed=4).data
        b = random_field((16, 16), seed=5).data
        base = abs(complex_correlation(a, b))
        scaled = abs(complex_correlation(a, 3.7 * np.exp(1.3j) * b))
        assert scaled == pytest.approx(base, abs=1e-12)

    def test_global_phase_appears_in_argument(self):
        a = random_field((16, 16), seed=6).data
        rotated = complex_correlation(a, a * np.exp(0.8j))
        assert np.angle(rotated) == pytest.approx(0.8, abs=1e-12)

    def test_accepts_fields_and_arrays(self):
        f = random_field((8, 8), seed=7)
        assert complex_correlation(f, f.data) == pytest.approx(1.0 + 0j, abs=1e-12)

    def test_zero_energy_raises(self):
        with pytest.raises(MetricError):
            complex_correlation(np.zeros((8, 8)), np.ones((8, 8)))

    def test_shape_mismatch_raises(self):
        with pytest.raises(MetricError):
            complex_correlation(np.ones((8, 8)), np.ones((8, 9)))


class TestVariants:
    def test_amplitude_ignores_phase(self):
        a = random_field((16, 16), seed=8).data
        noisy_phase = np.abs(a) * np.exp(1j * np.random.default_rng(0)
                                         .uniform(-np.pi, np.pi, a.shape))
        assert amplitude_correlation(a, noisy_phase) == pytest.approx(1.0, abs=1e-12)

    def test_phase_constant_offset_immunity(self):
        a = random_field((16, 16), seed=9).data
        assert phase_correlation(a, a * np.exp(0.7j)) == pytest.approx(1.0, abs=1e-12)

    def test_phase_ignores_amplitude(self):
        a = random_field((16, 16), seed=10).data
        assert phase_correlation(a, 5.0 * a) == pytest.approx(1.0, abs=1e-12)


class TestRemovePhaseTilt:
    def test_recovers_ramped_estimate(self):
        truth = random_field((32, 32), seed=11).data
        yy, xx = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
        ramped = truth * np.exp(1j * (0.11 * yy - 0.07 * xx))
        fixed = remove_phase_tilt(truth, ramped, np.abs(truth))
        assert abs(complex_correlation(truth, fixed)) == pytest.approx(1.0, abs=1e-8)

    def test_leaves_untilted_input_unchanged(self):
        truth = random_field((32, 32), seed=12).data
        fixed = remove_phase_tilt(truth, truth, np.abs(truth))
        assert abs(complex_correlation(truth, fixed)) == pytest.approx(1.0, abs=1e-10)


class TestRegisteredCorrelation:
    def test_exact_for_injected_shifts(self):
        truth = random_field((32, 32), seed=13)
        for shift in [(0, 0), (2, -3), (-4, 4), (5, 1)]:
            est = roll_field(truth, shift)
            rep = registered_correlation(truth, est)
            assert rep.shift == shift
            assert rep.corr_abs == pytest.approx(1.0, abs=1e-12)

    def test_report_fields_consistent(self):
        truth = random_field((32, 32), seed=14)
        est = truth.with_data(truth.data * np.exp(0.4j))
        rep = registered_correlation(truth, est)
        assert isinstance(rep, CorrelationReport)
        assert rep.corr_abs == pytest.approx(abs(rep.complex_corr))
        assert rep.corr_arg == pytest.approx(0.4, abs=1e-12)
        assert rep.corr_phase == pytest.approx(1.0, abs=1e-12)

    def test_mask_ignores_outside_pixels(self):
        truth = random_field((32, 32), seed=15)
        mask = np.zeros((32, 32), bool)
        mask[8:24, 8:24] = True
        corrupted = truth.data.copy()
        corrupted[~mask] = 17.0  # garbage outside the mask
        rep = registered_correlation(truth, truth.with_data(corrupted), mask=mask)
        assert rep.corr_abs == pytest.approx(1.0, abs=1e-12)

    def test_detrend_tilt_restores_gauged_estimate(self):
        truth = random_field((32, 32), seed=16)
        yy, xx = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
        gauged = truth.with_data(truth.data * np.exp(1j * 0.09 * (yy - xx)))
        plain = registered_correlation(truth, gauged)
        detrended = registered_correlation(truth, gauged, detrend_tilt=True)
        assert detrended.corr_abs > plain.corr_abs
        assert detrended.corr_abs == pytest.approx(1.0, abs=1e-6)

    def test_crop_margin_too_large_raises(self):
        truth = random_field((32, 32), seed=17)
        with pytest.raises(MetricError):
            registered_correlation(truth, truth, crop_margin=12)

    def test_bad_mask_raises(self):
        truth = random_field((32, 32), seed=18)
        with pytest.raises(MetricError):
            registered_correlation(truth, truth, mask=np.zeros((32, 32), bool))
        with pytest.raises(MetricError):
            registered_correlation(truth, truth, mask=np.ones((8, 8), bool))

    def test_shape_mismatch_raises(self):
        with pytest.raises(MetricError):
            registered_correlation(random_field((32, 32)), random_field((16, 16)))
