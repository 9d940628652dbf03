#!/usr/bin/env python3
"""
Tests for the cosine and uniform noise schedules.
"""

import os
import sys

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from schedule import (CLIP_EPS, NoiseSchedule, ScheduleError, cosine_schedule, cosine_weights,
                      make_schedule, uniform_schedule)


class TestCosineSchedule:

    @pytest.mark.parametrize("K,alpha_max,T", [(64, 1.075, 3.2), (128, 0.6875, 6.4),
                                               (256, 4.5, 12.8), (8, 0.5, 1.0)])
    def test_total_noise_budget(self, K, alpha_max, T):
        schedule = cosine_schedule(K, alpha_max, T)
        weights = cosine_weights(K)
        rescaled = weights * (alpha_max * T / weights.sum())
        assert rescaled.sum() == pytest.approx(alpha_max * T, abs=1e-10)
        # only the tiny leading steps are lifted to the clip floor
        unclipped = rescaled >= CLIP_EPS
        np.testing.assert_allclose(schedule.alphas[unclipped], rescaled[unclipped], rtol=1e-14)
        assert schedule.alphas.sum() == pytest.approx(alpha_max * T, abs=K * CLIP_EPS)

    def test_nondecreasing(self):
        alphas = cosine_schedule(64, 1.075, 3.2).alphas
        assert np.all(np.diff(alphas) >= 0)
        assert np.all(np.diff(cosine_weights(512)) >= 0)

    def test_single_step(self):
        schedule = cosine_schedule(1, 0.5, 1.0)
        assert schedule.K == 1
        assert schedule.alpha(1) == pytest.approx(0.5)

    def test_alphas_clipped_into_open_interval(self):
        schedule = cosine_schedule(64, 1.0, 3.2)
        assert schedule.alphas.min() >= CLIP_EPS
        assert schedule.alphas.max() <= 1.0 - CLIP_EPS

    def test_oversized_budget_is_reported(self):
        with pytest.raises(ScheduleError):
            cosine_schedule(4, 10.0, 1.0)

    def test_invalid_arguments(self):
        with pytest.raises(ScheduleError):
            cosine_schedule(0, 1.0, 1.0)
        with pytest.raises(ScheduleError):
            cosine_schedule(8, -1.0, 1.0)
        with pytest.raises(ScheduleError):
            cosine_schedule(8, 1.0, 1.0, s=-0.1)

    def test_schedule_error_is_value_error(self):
        assert issubclass(ScheduleError, ValueError)


class TestUniformSchedule:

    def setup_method(self):
        self.schedule = uniform_schedule(10, 1.0, 1.0)

    def test_constant_step(self):
        np.testing.assert_allclose(self.schedule.alphas, np.full(10, 0.1))

    def test_lambda_values(self):
        np.testing.assert_allclose(self.schedule.lambdas, 1.0 - np.sqrt(0.9))

    def test_kappa_values(self):
        root = np.sqrt(0.9)
        assert self.schedule.kappa(3) == pytest.approx(root * (1.0 - root))

    def test_sum_exact(self):
        assert self.schedule.alphas.sum() == pytest.approx(1.0)

    def test_step_too_large(self):
        with pytest.raises(ScheduleError):
            uniform_schedule(2, 4.0, 1.0)


class TestDerivedQuantities:

    @pytest.mark.parametrize("K", [64, 128, 256, 512])
    def test_lambda_tends_to_half_alpha(self, K):
        schedule = cosine_schedule(K, 1.0, 0.05 * K)
        ratio = schedule.lambdas / schedule.alphas
        assert np.all(np.abs(ratio - 0.5) <= schedule.alphas)

    def test_invariants(self):
        schedule = cosine_schedule(32, 2.0, 1.6)
        assert np.all((schedule.lambdas > 0) & (schedule.lambdas < 1))
        assert np.all(schedule.kappas > 0)

    def test_em_beta_delta(self):
        schedule = uniform_schedule(4, 1.0, 1.0)
        assert 2.0 * schedule.em_beta_delta(2) == pytest.approx(-np.log(0.75))

    def test_survival(self):
        schedule = uniform_schedule(4, 1.0, 1.0)
        assert schedule.survival(0) == 1.0
        assert schedule.survival(3) == pytest.approx(0.75 ** 1.5)

    def test_delta(self):
        assert cosine_schedule(64, 1.0, 3.2).delta == pytest.approx(0.05)

    def test_make_schedule_dispatch(self):
        assert make_schedule('uniform', 10, 1.0, 1.0).kind == 'uniform'
        assert make_schedule('cosine', 10, 1.0, 1.0).kind == 'cosine'
        with pytest.raises(ScheduleError):
            make_schedule('linear', 10, 1.0, 1.0)

    def test_rejects_alphas_outside_unit_interval(self):
        with pytest.raises(ScheduleError):
            NoiseSchedule('uniform', np.array([0.5, 1.0]), 1.0, 1.0, 1.0)


class TestSerialization:

    def test_json_round_trip_is_exact(self):
        schedule = cosine_schedule(64, 1.075, 3.2, sigma=1.3)
        restored = NoiseSchedule.from_json(schedule.to_json())
        np.testing.assert_array_equal(restored.alphas, schedule.alphas)
        assert restored.to_dict() == schedule.to_dict()

    def test_json_fields(self):
        data = uniform_schedule(4, 1.0, 1.0).to_dict()
        assert set(data) == {'kind', 'K', 'alpha_max', 'T', 's', 'sigma', 'alphas'}
        assert data['K'] == 4

    def test_mismatched_step_count(self):
        data = uniform_schedule(4, 1.0, 1.0).to_dict()
        data['K'] = 5
        with pytest.raises(ScheduleError):
            NoiseSchedule.from_dict(data)
