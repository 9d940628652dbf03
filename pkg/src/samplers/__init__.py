"""
Diffusion samplers and the factory that builds them from run configurations.

Every concrete sampler registers itself with ``SamplerFactory`` when its module
is imported, so importing this package makes all methods available.

Notice: to add a method, subclass ``Sampler``, implement ``rollout``,
``reference_variance``, ``steps`` and ``from_config``, register it at the
bottom of its module and import that module here.

Usage Example:
--------------
    from samplers import SamplerFactory

    sampler = SamplerFactory.create(run_config, target, RngStream(seed))
    sampler.train(TrainConfig.from_run_config(run_config), RngStream(seed))
    report = sampler.estimate_log_z(2000, RngStream(seed).substream(2))
"""

# Import base classes
from .base import (LogZReport, Sampler, SamplerFactory, TrainConfig, TrainResult, Trajectory,
                   loss_plateaued)

# Import specific implementations (this triggers registration)
from .dds import DDSSampler, EMAblationSampler, GaussianOracleDrift
from .pis import PISSampler, PisConfig
from .underdamped import PhaseState, UnderdampedSampler
from .flowode import FlowODESampler, FlowResult, flow_sample_and_logdensity

__all__ = [
    'LogZReport',
    'Sampler',
    'SamplerFactory',
    'TrainConfig',
    'TrainResult',
    'Trajectory',
    'loss_plateaued',
    'DDSSampler',
    'EMAblationSampler',
    'GaussianOracleDrift',
    'PISSampler',
    'PisConfig',
    'PhaseState',
    'UnderdampedSampler',
    'FlowODESampler',
    'FlowResult',
    'flow_sample_and_logdensity',
]

# Verify registrations happened
import logging
logger = logging.getLogger(__name__)
logger.debug(f"Available samplers: {SamplerFactory.list_available()}")
