#!/usr/bin/env python3
"""
Tests for the Path Integral Sampler baseline and the drift magnitude report.
"""

import json
import os
import sys

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from base import ConfigError, RunConfig
from diffcore import RngStream
from driftnet import DriftArchitecture, DriftNetwork
from experiments import PisOracleDrift, drift_magnitude_report
from samplers import LogZReport, PISSampler, PisConfig, SamplerFactory
from samplers.pis import analytic_pis_drift, pis_step
from targets import gaussian_target


def zero_drift(k, y):
    return np.zeros_like(y)


def make_sampler(target, config):
    net = DriftNetwork(DriftArchitecture(dim=target.dim, steps=config.K, hidden=(4,), emb_dim=4))
    return PISSampler(target, config, net)


class TestPisStep:

    def test_hand_example(self):
        config = PisConfig(sigma=1.0, T=1.0, K=20)
        out = pis_step(lambda k, y: np.full_like(y, 2.0), 1, np.zeros((1, 1)), config,
                       np.zeros((1, 1)))
        assert config.delta == pytest.approx(0.05)
        assert out.y[0, 0] == pytest.approx(0.1)
        assert out.cost[0] == pytest.approx(0.1)

    def test_noise_scale(self):
        config = PisConfig(sigma=2.0, T=1.0, K=4)
        out = pis_step(zero_drift, 1, np.zeros((1, 1)), config, np.ones((1, 1)))
        assert out.y[0, 0] == pytest.approx(2.0 * 0.5)
        assert out.cost[0] == 0.0

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            PisConfig(sigma=0.0, T=1.0, K=4)
        with pytest.raises(ValueError):
            PisConfig(sigma=1.0, T=1.0, K=0)
        with pytest.raises(ValueError):
            PisConfig(sigma=1.0, T=1.0, K=4, step_kind='linear')


class TestPisDeltas:

    def test_cosine_deltas_sum_to_horizon(self):
        config = PisConfig(sigma=1.0, T=3.2, K=64, step_kind='cosine')
        assert config.deltas.sum() == pytest.approx(3.2, rel=1e-12)
        assert np.all(np.diff(config.deltas) <= 0)

    def test_uniform_deltas(self):
        np.testing.assert_allclose(PisConfig(1.0, 2.0, 8).deltas, 0.25)


class TestPisSampler:

    def test_zero_drift_terminal_variance(self):
        config = PisConfig(sigma=1.3, T=2.0, K=20)
        target = gaussian_target([0.0], 1.0)
        traj = make_sampler(target, config).rollout(zero_drift, 100000, RngStream(0))
        assert traj.reference_variance == pytest.approx(1.69 * 2.0)
        assert traj.terminal.var() == pytest.approx(1.69 * 2.0, rel=0.02)
        np.testing.assert_array_equal(traj.states[0], 0.0)

    def test_perfect_proposal_has_constant_weights(self):
        config = PisConfig(sigma=1.5, T=2.0, K=10)
        variance = config.sigma ** 2 * config.T
        target = gaussian_target([0.0, 0.0, 0.0], variance)
        sampler = make_sampler(target, config)
        log_w = sampler.log_weights(sampler.rollout(zero_drift, 500, RngStream(1)))
        assert np.std(log_w) < 1e-10
        np.testing.assert_allclose(log_w, 1.5 * np.log(2.0 * np.pi * variance), rtol=1e-12)

    def test_analytic_control_recovers_log_z(self):
        config = PisConfig(sigma=1.0, T=3.2, K=128)
        target = gaussian_target([2.0], 1.0)
        sampler = make_sampler(target, config)
        traj = sampler.rollout(PisOracleDrift([2.0], config), 4000, RngStream(2))
        report = LogZReport.from_log_weights(sampler.log_weights(traj))
        ln_z = 0.5 * np.log(2.0 * np.pi)
        assert report.ln_z_is == pytest.approx(ln_z, abs=0.05)
        assert report.elbo <= ln_z + 0.01

    def test_factory_builds_pis(self):
        config = RunConfig.from_dict({'method': 'pis', 'K': 16, 'pis_step': 'cosine',
                                      'hidden': [4], 'emb_dim': 4})
        sampler = SamplerFactory.create(config, gaussian_target([0.0]), RngStream(0))
        assert isinstance(sampler, PISSampler)
        assert sampler.config.step_kind == 'cosine'
        assert sampler.reference_variance == pytest.approx(0.8)

    def test_factory_rejects_bad_horizon(self):
        config = RunConfig.from_dict({'method': 'pis', 'K': 16})
        config.T = -1.0
        with pytest.raises(ConfigError):
            SamplerFactory.create(config, gaussian_target([0.0]), RngStream(0))


class TestAnalyticPisDrift:

    def test_endpoint_exceeds_mid_horizon(self):
        x = np.zeros(1)
        end = analytic_pis_drift([6.0], x, 3.2, 1.0, 3.2)
        mid = analytic_pis_drift([6.0], x, 1.6, 1.0, 3.2)
        assert np.abs(end) > np.abs(mid)
        assert end[0] == pytest.approx(6.0)

    def test_matched_reference_gives_constant_drift(self):
        # sigma^2 T = s^2 removes the state dependence
        for t in (0.0, 1.0, 2.0):
            for x in (-3.0, 0.0, 4.0):
                u = analytic_pis_drift([6.0], np.array([x]), t, 1.0, 2.0, target_variance=2.0)
                assert u[0] == pytest.approx(3.0)

    def test_time_outside_horizon(self):
        with pytest.raises(ValueError):
            analytic_pis_drift([1.0], np.zeros(1), 5.0, 1.0, 3.2)


class TestDriftMagnitudeReport:

    def setup_method(self):
        self.report = drift_magnitude_report(K=64, n=200, seed=3)

    def test_structure(self):
        report = self.report
        assert report['experiment'] == 'drift-magnitude'
        assert report['drift_source'] == 'analytic'
        assert len(report['dds']['mean_per_step']) == 64
        assert len(report['pis']['var_per_step']) == 64
        assert isinstance(report['pis_variance_exceeds_dds'], bool)
        json.dumps(report)

    def test_both_samplers_reach_the_mode(self):
        assert self.report['dds']['terminal_mean'] == pytest.approx(6.0, abs=0.3)
        assert self.report['pis']['terminal_mean'] == pytest.approx(6.0, abs=0.5)

    def test_seeded(self):
        again = drift_magnitude_report(K=64, n=200, seed=3)
        assert again['dds'] == self.report['dds']
        assert again['pis'] == self.report['pis']

    def test_analytic_mode_needs_unit_sigma(self):
        with pytest.raises(ValueError):
            drift_magnitude_report(K=16, n=10, dds_sigma=2.0)


class TestPisObjective:

    def setup_method(self):
        self.config = PisConfig(sigma=1.2, T=1.6, K=16)
        self.sampler = make_sampler(gaussian_target([1.0, -1.0]), self.config)

    def test_zero_drift_loss(self):
        # zero control: no cost, loss is the terminal log ratio only
        traj = self.sampler.rollout(zero_drift, 40, RngStream(4))
        log_w = self.sampler.log_weights(traj)
        assert float(self.sampler.pis_loss(traj)) == pytest.approx(-np.mean(log_w))

    def test_estimate_is_seeded(self):
        a = self.sampler.pis_estimate_log_z(60, RngStream(5))
        b = self.sampler.estimate_log_z(60, RngStream(5))
        assert a.ln_z_is == b.ln_z_is
        assert a.n_samples == 60
