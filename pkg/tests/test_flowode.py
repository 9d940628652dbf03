#!/usr/bin/env python3
"""
Tests for the probability-flow ODE sampler and its divergence estimators.
"""

import os
import sys

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from base import RunConfig
from diffcore import NonFiniteError, RngStream
from samplers import FlowODESampler, GaussianOracleDrift, SamplerFactory, flow_sample_and_logdensity
from samplers.base import gaussian_log_density
from samplers.flowode import exact_divergence, heun_step, hutchinson_divergence
from schedule import cosine_schedule, uniform_schedule
from targets import gaussian_target


def zero_drift(k, y):
    return np.zeros_like(y)


def elementwise_drift(k, y):
    return np.tanh(y) + 0.01 * k


class TestHeunStep:

    def test_linear_drift_second_order(self):
        A = np.array([[0.5, -1.0], [0.3, 0.2]])
        schedule = uniform_schedule(4, 1.0, 1.0, sigma=1.5)
        h = 0.5 * 1.5 ** 2 * 0.25
        y = np.array([[1.0, -2.0], [0.3, 0.7]])
        out = heun_step(lambda k, v: v @ A.T, 3, y, schedule)
        M = np.eye(2) + h * A + 0.5 * h * h * A @ A
        np.testing.assert_allclose(out, y @ M.T, rtol=1e-14)

    def test_non_finite_drift(self):
        schedule = uniform_schedule(4, 1.0, 1.0)
        with pytest.raises(NonFiniteError):
            heun_step(lambda k, v: np.full_like(v, np.inf), 2, np.zeros((1, 1)), schedule)


class TestDivergence:

    def setup_method(self):
        self.y = RngStream(0).normal((6, 3))

    def test_one_dimension_is_exact(self):
        y = RngStream(1).normal((10, 1))
        est = hutchinson_divergence(lambda k, v: np.sin(v), 1, y, 1, RngStream(2))
        np.testing.assert_allclose(est, np.cos(y[:, 0]), atol=1e-8)

    def test_constant_drift(self):
        drift = lambda k, v: np.full_like(v, 2.5)  # noqa: E731
        np.testing.assert_array_equal(exact_divergence(drift, 1, self.y), 0.0)
        np.testing.assert_array_equal(hutchinson_divergence(drift, 1, self.y, 3, RngStream(3)), 0.0)

    def test_linear_map_trace(self):
        A = np.array([[1.0, 2.0, 0.0], [-1.0, 0.5, 3.0], [0.4, 0.0, -2.0]])
        drift = lambda k, v: v @ A.T  # noqa: E731
        np.testing.assert_allclose(exact_divergence(drift, 1, self.y), np.trace(A), atol=1e-8)
        est, se = hutchinson_divergence(drift, 1, self.y, 4000, RngStream(4), return_std_error=True)
        assert np.all(np.abs(est - np.trace(A)) < 5.0 * se + 1e-8)
        assert np.all(se > 0)

    def test_diagonal_jacobian_hutchinson_is_exact(self):
        np.testing.assert_allclose(hutchinson_divergence(elementwise_drift, 1, self.y, 1, RngStream(5)),
                                   exact_divergence(elementwise_drift, 1, self.y), atol=1e-8)

    def test_single_probe_standard_error(self):
        _, se = hutchinson_divergence(elementwise_drift, 1, self.y, 1, RngStream(6),
                                      return_std_error=True)
        np.testing.assert_array_equal(se, 0.0)

    def test_invalid_probe_count(self):
        with pytest.raises(ValueError):
            hutchinson_divergence(elementwise_drift, 1, self.y, 0, RngStream(7))


class TestFlowSampling:

    def test_zero_drift_is_identity(self):
        schedule = cosine_schedule(16, 1.0, 0.8, sigma=1.3)
        target = gaussian_target([0.0, 0.0])
        init = RngStream(8).normal((10, 2))
        result = flow_sample_and_logdensity(zero_drift, schedule, target, 10, RngStream(9), init=init)
        np.testing.assert_array_equal(result.samples, init)
        np.testing.assert_allclose(result.log_q, gaussian_log_density(init, 1.3 ** 2), rtol=1e-14)
        assert len(result.trajectory.states) == 17

    def test_gaussian_oracle_recovers_log_z(self):
        schedule = cosine_schedule(256, 0.78125, 12.8)
        target = gaussian_target([6.0], 1.0)
        drift = GaussianOracleDrift([6.0], schedule, lag=0)
        result = flow_sample_and_logdensity(drift, schedule, target, 2000, RngStream(10),
                                            divergence='exact')
        assert result.report.ln_z_is == pytest.approx(0.5 * np.log(2.0 * np.pi), abs=0.1)
        # translation flow: no volume change
        np.testing.assert_allclose(result.trajectory.log_density_delta, 0.0, atol=1e-8)

    def test_hutchinson_matches_exact_for_diagonal_jacobian(self):
        schedule = cosine_schedule(8, 1.0, 0.4)
        target = gaussian_target([0.0, 0.0, 0.0])
        init = RngStream(11).normal((20, 3))
        exact = flow_sample_and_logdensity(elementwise_drift, schedule, target, 20, RngStream(12),
                                           divergence='exact', init=init)
        hutch = flow_sample_and_logdensity(elementwise_drift, schedule, target, 20, RngStream(12),
                                           divergence='hutchinson', n_probes=2, init=init)
        np.testing.assert_allclose(hutch.log_q, exact.log_q, atol=1e-7)
        np.testing.assert_array_equal(hutch.samples, exact.samples)
        assert hutch.trajectory.n_probes == 2
        assert exact.trajectory.n_probes == 1

    def test_unknown_divergence_mode(self):
        schedule = uniform_schedule(4, 1.0, 1.0)
        with pytest.raises(ValueError):
            flow_sample_and_logdensity(zero_drift, schedule, gaussian_target([0.0]), 4,
                                       RngStream(0), divergence='autograd')


class TestFlowODESampler:

    def test_factory_and_evaluate(self):
        config = RunConfig.from_dict({'method': 'flow-ode', 'K': 8, 'hidden': [4], 'emb_dim': 4,
                                      'divergence': 'hutchinson', 'n_probes': 2})
        sampler = SamplerFactory.create(config, gaussian_target([0.0, 0.0]), RngStream(0))
        assert isinstance(sampler, FlowODESampler)
        samples, report = sampler.evaluate(50, RngStream(1))
        assert samples.shape == (50, 2)
        assert report.n_samples == 50
        # fresh network: zero drift, so the flow returns the base draw
        assert report.ln_z_is == pytest.approx(np.log(2.0 * np.pi), abs=1e-10)

    def test_evaluate_requires_two_samples(self):
        config = RunConfig.from_dict({'method': 'flow-ode', 'K': 4, 'hidden': [2], 'emb_dim': 2})
        sampler = SamplerFactory.create(config, gaussian_target([0.0]), RngStream(0))
        with pytest.raises(ValueError):
            sampler.evaluate(1, RngStream(0))
