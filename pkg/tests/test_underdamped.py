#!/usr/bin/env python3
"""
Tests for the underdamped (phase-space) sampler.
"""

import os
import sys

import numpy as np
import pytest

# Add src to path for imports
PROJECT_ROOT = os.path.join(os.path.dirname(__file__), '..')
sys.path.insert(0, os.path.join(PROJECT_ROOT, 'src'))

from base import ConfigError, RunConfig
from diffcore import RngStream
from driftnet import DriftArchitecture, DriftNetwork
from orchestrator import ExperimentOrchestrator
from samplers import PhaseState, SamplerFactory, TrainConfig, UnderdampedSampler
from samplers.underdamped import (harmonic_flow, harmonic_flow_inverse, momentum_kick,
                                  underdamped_dds_step, underdamped_log_rnd,
                                  underdamped_ref_step)
from schedule import cosine_schedule
from targets import gaussian_target


def coupled_drift(k, y, momentum=None):
    return 0.2 * np.tanh(y) - 0.1 * momentum + 0.05 * k


def gaussian_logpdf(x, mean, var):
    return np.sum(-0.5 * np.log(2.0 * np.pi * var) - 0.5 * (x - mean) ** 2 / var, axis=-1)


class TestHarmonicFlow:

    def setup_method(self):
        rng = RngStream(0)
        self.state = PhaseState(rng.normal((20, 3)), rng.normal((20, 3)), mass=2.5)

    def test_inverse_composition_is_identity(self):
        for tau in (0.01, 0.3, 2.0):
            there = harmonic_flow(self.state, tau, 1.7)
            back = harmonic_flow_inverse(there, tau, 1.7)
            np.testing.assert_allclose(back.y, self.state.y, atol=1e-12)
            np.testing.assert_allclose(back.n, self.state.n, atol=1e-12)

    def test_full_period_is_identity(self):
        sigma = 1.7
        period = 2.0 * np.pi * sigma * np.sqrt(self.state.mass)
        back = harmonic_flow_inverse(self.state, period, sigma)
        np.testing.assert_allclose(back.y, self.state.y, atol=1e-12)
        np.testing.assert_allclose(back.n, self.state.n, atol=1e-12)
        half = harmonic_flow_inverse(self.state, 0.5 * period, sigma)
        np.testing.assert_allclose(half.y, -self.state.y, atol=1e-12)

    def test_hamiltonian_conserved(self):
        h0 = self.state.hamiltonian(1.7)
        np.testing.assert_allclose(harmonic_flow(self.state, 0.7, 1.7).hamiltonian(1.7), h0,
                                   rtol=1e-12)
        np.testing.assert_allclose(harmonic_flow_inverse(self.state, 0.7, 1.7).hamiltonian(1.7), h0,
                                   rtol=1e-12)

    def test_zero_time_is_identity(self):
        out = harmonic_flow(self.state, 0.0, 1.0)
        np.testing.assert_array_equal(out.y, self.state.y)

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            harmonic_flow_inverse(self.state, -0.1, 1.0)

    def test_mass_validation(self):
        with pytest.raises(ValueError):
            PhaseState(np.zeros(1), np.zeros(1), mass=0.0)


class TestReferenceStep:

    def test_stationary_phase_space_gaussian(self):
        sigma, mass, n = 1.4, 0.5, 100000
        rng = RngStream(1)
        state = PhaseState(sigma * rng.normal((n, 1)), np.sqrt(mass) * rng.normal((n, 1)), mass)
        for alpha in (0.05, 0.4, 0.8):
            state = underdamped_ref_step(state, alpha, rng.normal((n, 1)), 0.3, sigma)
        assert state.y.var() == pytest.approx(sigma ** 2, rel=0.02)
        assert state.n.var() == pytest.approx(mass, rel=0.02)
        assert abs(np.mean(state.y * state.n)) < 0.02

    def test_zero_drift_kick_matches_reference(self):
        rng = RngStream(2)
        state = PhaseState(rng.normal((5, 2)), rng.normal((5, 2)), 1.0)
        eps = rng.normal((5, 2))
        ref = underdamped_ref_step(state, 0.3, eps, 0.2, 1.0)
        half = harmonic_flow_inverse(state, 0.2, 1.0)
        out = momentum_kick(half, np.zeros((5, 2)), 0.3, eps)
        np.testing.assert_allclose(out.y, ref.n, rtol=1e-15)
        np.testing.assert_array_equal(out.cost, 0.0)


class TestUnderdampedLogRnd:

    def setup_method(self):
        self.schedule = cosine_schedule(12, 1.0, 0.6)
        self.mass = 0.8
        net = DriftNetwork(DriftArchitecture(dim=2, steps=12, hidden=(4,), emb_dim=4, momentum=True))
        self.sampler = UnderdampedSampler(gaussian_target([1.0, -1.0]), self.schedule, net, self.mass)

    def test_matches_momentum_transition_densities(self):
        traj = self.sampler.rollout(coupled_drift, 40, RngStream(3))
        K = self.schedule.K
        oracle = np.zeros(40)
        for k in range(K):
            j = K - k
            alpha = self.schedule.alpha(j)
            root = np.sqrt(1.0 - alpha)
            half_n = traj.half_momenta[k]
            f = coupled_drift(j, traj.states[k + 1], momentum=half_n)
            n_next = traj.momenta[k + 1]
            var = alpha * self.mass
            oracle += (gaussian_logpdf(n_next, root * (half_n + 2.0 * (1.0 - root) * self.mass * f), var)
                       - gaussian_logpdf(n_next, root * half_n, var))
        np.testing.assert_allclose(traj.log_rnd, oracle, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(underdamped_log_rnd(traj, coupled_drift, self.schedule, self.mass),
                                   oracle, rtol=1e-10, atol=1e-10)

    def test_trajectory_layout(self):
        traj = self.sampler.rollout(coupled_drift, 4, RngStream(4))
        assert len(traj.states) == 13
        assert len(traj.momenta) == 13
        assert len(traj.half_momenta) == 12
        assert traj.reference_variance == 1.0

    def test_requires_half_momenta(self):
        traj = self.sampler.rollout(coupled_drift, 4, RngStream(5))
        traj.half_momenta = None
        with pytest.raises(ValueError):
            underdamped_log_rnd(traj, coupled_drift, self.schedule, self.mass)

    def test_estimate_log_z_with_fresh_network(self):
        report = self.sampler.estimate_log_z(200, RngStream(6))
        assert np.isfinite(report.ln_z_is)
        assert report.elbo <= report.ln_z_is


class TestUnderdampedConfig:

    def test_factory_requires_mass(self):
        config = RunConfig.from_dict({'method': 'udmp', 'K': 8})
        with pytest.raises(ConfigError):
            SamplerFactory.create(config, gaussian_target([0.0]), RngStream(0))

    def test_factory_builds_momentum_network(self):
        config = RunConfig.from_dict({'method': 'udmp', 'K': 8, 'mass': 1.0, 'hidden': [4],
                                      'emb_dim': 4})
        sampler = SamplerFactory.create(config, gaussian_target([0.0, 0.0]), RngStream(0))
        assert isinstance(sampler, UnderdampedSampler)
        assert sampler.network.arch.momentum
        assert sampler.tau == pytest.approx(0.05)

    def test_rejects_plain_network(self):
        net = DriftNetwork(DriftArchitecture(dim=1, steps=4, hidden=(2,), emb_dim=2))
        with pytest.raises(ValueError):
            UnderdampedSampler(gaussian_target([0.0]), cosine_schedule(4, 1.0, 0.2), net, 1.0)


class TestUnderdampedStep:

    def setup_method(self):
        rng = RngStream(7)
        self.state = PhaseState(rng.normal((6, 2)), rng.normal((6, 2)), mass=0.9)
        self.eps = rng.normal((6, 2))

    def test_zero_drift_matches_reference(self):
        ref = underdamped_ref_step(self.state, 0.3, self.eps, 0.2, 1.2)
        out, cost, stochastic, half_n = underdamped_dds_step(
            lambda k, y, momentum=None: np.zeros_like(y), 5, self.state, 0.3, self.eps, 0.2, 1.2)
        np.testing.assert_allclose(out.y, ref.y, rtol=1e-15)
        np.testing.assert_allclose(out.n, ref.n, rtol=1e-15)
        np.testing.assert_array_equal(cost, 0.0)
        np.testing.assert_array_equal(stochastic, 0.0)
        np.testing.assert_allclose(half_n, harmonic_flow_inverse(self.state, 0.2, 1.2).n)

    def test_drift_sees_post_flow_state(self):
        seen = {}

        def recording_drift(k, y, momentum=None):
            seen['y'], seen['n'] = y, momentum
            return np.zeros_like(y)

        underdamped_dds_step(recording_drift, 3, self.state, 0.3, self.eps, 0.2, 1.2)
        half = harmonic_flow_inverse(self.state, 0.2, 1.2)
        np.testing.assert_array_equal(seen['y'], half.y)
        np.testing.assert_array_equal(seen['n'], half.n)


class TestUnderdampedObjective:

    def setup_method(self):
        net = DriftNetwork(DriftArchitecture(dim=1, steps=8, hidden=(4,), emb_dim=4, momentum=True))
        self.sampler = UnderdampedSampler(gaussian_target([0.5]), cosine_schedule(8, 1.0, 0.4), net, 1.0)

    def test_loss_matches_shared_objective(self):
        traj = self.sampler.rollout(coupled_drift, 30, RngStream(8))
        loss = float(self.sampler.underdamped_kl_loss(traj))
        assert loss == pytest.approx(float(self.sampler.kl_loss(traj)))

    def test_estimate_is_seeded(self):
        a = self.sampler.underdamped_estimate_log_z(50, RngStream(9))
        b = self.sampler.estimate_log_z(50, RngStream(9))
        assert a.ln_z_is == b.ln_z_is
        assert a.elbo == b.elbo


@pytest.mark.slow
class TestTrainedUnderdamped:
    """Trained phase-space sampler on N((6, 6), I); the exact ln Z is ln(2 pi)."""

    def setup_method(self):
        orchestrator = ExperimentOrchestrator(os.path.join(PROJECT_ROOT, 'config.yaml'))
        config = orchestrator.resolve({'preset': 'gaussian-udmp-k64', 'iterations': 3000,
                                       'batch_size': 300, 'early_stop': False})
        self.target = orchestrator.build_target(config)
        self.sampler = SamplerFactory.create(config, self.target, RngStream(0))
        self.sampler.train(TrainConfig.from_run_config(config), RngStream(0))

    def test_log_z_and_terminal_marginal(self):
        report = self.sampler.estimate_log_z(2000, RngStream(5))
        assert abs(report.ln_z_is - self.target.exact_log_z) <= 0.2

        positions = self.sampler.sample(2000, RngStream(6)).terminal
        assert positions.shape == (2000, 2)
        np.testing.assert_allclose(positions.mean(axis=0), [6.0, 6.0], atol=0.15)
        np.testing.assert_allclose(positions.var(axis=0), [1.0, 1.0], atol=0.25)

    def test_mean_log_weight_below_log_z(self):
        n = 2000
        log_w = self.sampler.log_weights(self.sampler.sample(n, RngStream(7)))
        se = np.std(log_w, ddof=1) / np.sqrt(n)
        assert np.mean(log_w) <= self.target.exact_log_z + 3.0 * se
