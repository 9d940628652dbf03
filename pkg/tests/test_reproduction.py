#!/usr/bin/env python3
"""
Reproduction checks on the funnel and Gaussian targets.

Training runs take minutes each; they carry ``@pytest.mark.slow`` and only run with
``pytest --runslow``. The untrained-network bound checks are quick and always run.
"""

import os
import sys

import numpy as np
import pytest

# Add src to path for imports
PROJECT_ROOT = os.path.join(os.path.dirname(__file__), '..')
sys.path.insert(0, os.path.join(PROJECT_ROOT, 'src'))

from base import RunConfig
from diffcore import RngStream
from driftnet import load_checkpoint
from orchestrator import ExperimentOrchestrator
from samplers import GaussianOracleDrift, SamplerFactory, TrainConfig

SEEDS = [0, 1, 2, 3, 4]
N_EVAL = 2000


def elbo_bound(sampler, n, seed):
    """Mean log weight and its standard error over ``n`` fresh paths."""
    log_w = sampler.log_weights(sampler.sample(n, RngStream(seed)))
    return float(np.mean(log_w)), float(np.std(log_w, ddof=1) / np.sqrt(n))


def sampler_from_checkpoint(orchestrator, path):
    network, metadata = load_checkpoint(path)
    config = RunConfig.from_dict(metadata['config'])
    target = orchestrator.build_target(config)
    return SamplerFactory.get(config.method).from_config(config, target, network)


@pytest.fixture(scope='module')
def orchestrator():
    return ExperimentOrchestrator(os.path.join(PROJECT_ROOT, 'config.yaml'))


@pytest.fixture(scope='module')
def funnel_runs(orchestrator, tmp_path_factory):
    """DDS and Euler-Maruyama runs at K=64 with the fitted funnel settings, shared below."""
    root = tmp_path_factory.mktemp('funnel')
    summaries = {}
    for preset in ('funnel-dds-k64', 'funnel-em-ablation-k64'):
        config = orchestrator.resolve({'preset': preset, 'name': preset, 'seeds': SEEDS,
                                       'batch_size': 300, 'eval_batch': N_EVAL,
                                       'eval_every': 0, 'deterministic': True})
        summaries[preset] = orchestrator.run(config, run_dir=root / preset)
    return summaries


class TestUntrainedElboBound:

    @pytest.mark.parametrize("preset", ['gaussian-dds-k64', 'gaussian-udmp-k64',
                                        'funnel-dds-k64', 'funnel-udmp-k64'])
    def test_mean_log_weight_below_log_z(self, orchestrator, preset):
        config = orchestrator.resolve({'preset': preset})
        target = orchestrator.build_target(config)
        sampler = SamplerFactory.create(config, target, RngStream(0))
        mean, se = elbo_bound(sampler, N_EVAL, seed=1)
        assert mean <= target.exact_log_z + 3.0 * se


@pytest.mark.slow
class TestFunnelReproduction:

    def test_dds_median_log_z(self, funnel_runs):
        summary = funnel_runs['funnel-dds-k64']
        assert summary['status'] == 'completed'
        assert len(summary['ln_z']) == len(SEEDS)
        assert -0.5 <= summary['median'] <= 0.1

    def test_euler_maruyama_overestimates(self, funnel_runs):
        em = [v for v in funnel_runs['funnel-em-ablation-k64']['ln_z'] if v is not None]
        exact = [v for v in funnel_runs['funnel-dds-k64']['ln_z'] if v is not None]
        assert len(em) == len(SEEDS)
        assert np.mean(em) >= np.mean(exact) + 1.0
        assert np.mean(em) > 0.0

    def test_trained_bound_holds_for_exponential_integrator(self, orchestrator, funnel_runs):
        run_dir = funnel_runs['funnel-dds-k64']['run_dir']
        sampler = sampler_from_checkpoint(orchestrator, os.path.join(run_dir, 'checkpoint_seed0.ckpt'))
        mean, se = elbo_bound(sampler, N_EVAL, seed=11)
        assert mean <= 0.0 + 3.0 * se

    def test_trained_bound_fails_for_euler_maruyama(self, orchestrator, funnel_runs):
        run_dir = funnel_runs['funnel-em-ablation-k64']['run_dir']
        sampler = sampler_from_checkpoint(orchestrator, os.path.join(run_dir, 'checkpoint_seed0.ckpt'))
        mean, se = elbo_bound(sampler, N_EVAL, seed=11)
        assert mean > 0.0 + 3.0 * se

    def test_euler_maruyama_bias_shrinks_with_steps(self, orchestrator, tmp_path):
        config = orchestrator.resolve({'preset': 'funnel-em-ablation-k512', 'name': 'em512',
                                       'seeds': [0, 1, 2], 'eval_batch': N_EVAL,
                                       'eval_every': 0, 'deterministic': True})
        summary = orchestrator.run(config, run_dir=tmp_path / 'em512')
        assert abs(summary['median']) <= 0.5

    def test_pis_median_not_above_log_z(self, orchestrator, tmp_path):
        config = orchestrator.resolve({'preset': 'funnel-pis-k64', 'name': 'pis64',
                                       'seeds': SEEDS, 'eval_batch': N_EVAL,
                                       'eval_every': 0, 'deterministic': True})
        summary = orchestrator.run(config, run_dir=tmp_path / 'pis64')
        errors = [run['std_error'] for run in summary['runs'] if run['std_error'] is not None]
        assert summary['median'] <= 0.0 + 3.0 * float(np.median(errors))


@pytest.mark.slow
class TestGaussianDriftRecovery:

    def setup_method(self):
        self.orchestrator = ExperimentOrchestrator(os.path.join(PROJECT_ROOT, 'config.yaml'))
        config = self.orchestrator.resolve({'preset': 'gaussian-dds-k64', 'iterations': 3000,
                                            'batch_size': 300, 'early_stop': False})
        self.target = self.orchestrator.build_target(config)
        self.sampler = SamplerFactory.create(config, self.target, RngStream(0))
        self.sampler.train(TrainConfig.from_run_config(config), RngStream(0))

    def test_log_z_and_drift(self):
        report = self.sampler.estimate_log_z(N_EVAL, RngStream(5))
        assert report.ln_z_is == pytest.approx(np.log(2.0 * np.pi), abs=0.05)

        schedule = self.sampler.schedule
        oracle = GaussianOracleDrift([6.0, 6.0], schedule, lag=1)
        learned = self.sampler.drift_field()
        traj = self.sampler.sample(500, RngStream(6))
        offsets = np.linspace(-1.0, 1.0, 5)
        wanted, got = [], []
        # 5x5 grid around the mean path; early steps have a tiny drift, so pool all steps
        for k in range(schedule.K):
            j = schedule.K - k
            centre = traj.states[k].mean(axis=0)
            grid = np.array([[centre[0] + a, centre[1] + b] for a in offsets for b in offsets])
            wanted.append(oracle(j, grid))
            got.append(np.asarray(learned(j, grid)))
        wanted, got = np.concatenate(wanted), np.concatenate(got)
        assert np.linalg.norm(got - wanted) / np.linalg.norm(wanted) <= 0.1
