"""
Probability-flow ODE sampler.

Deterministic counterpart of the reverse diffusion, reusing the trained drift:

    dy = sigma^2 beta f(y) dt

integrated with Heun steps of size h_j = sigma^2 alpha_j / 2 from y_0 ~ N(0, sigma^2 I).
The log density of the pushed-forward sample is

    log q(y_K) = log N(y_0; 0, sigma^2 I) - l,    l = sum_j h_j (div f_j + div f_{j-1}) / 2

with the divergence taken exactly (coordinate JVPs) or by the Hutchinson
estimator with Rademacher probes. JVPs use central finite differences of the
drift field, so they include the score path.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from diffcore import NonFiniteError, RngStream, value_of
from schedule import NoiseSchedule
from targets import TargetDensity

from .base import LogZReport, SamplerFactory, gaussian_log_density, target_log_density
from .dds import DDSSampler


FD_STEP = 1e-5
EXACT_DIVERGENCE_MAX_DIM = 16


@dataclass
class OdeTrajectory:
    states: List[np.ndarray]
    log_density_delta: np.ndarray
    n_probes: int
    log_density_se: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class FlowResult:
    samples: np.ndarray
    log_q: np.ndarray
    report: LogZReport
    trajectory: OdeTrajectory


def _evaluate(drift: Callable, k: int, y: np.ndarray) -> np.ndarray:
    f = np.asarray(value_of(drift(k, y)), dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise NonFiniteError('drift', "Non-finite drift in flow integration")
    return f


def heun_step(drift: Callable, k: int, y: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Predictor-corrector step from network index k to k - 1."""
    h = 0.5 * schedule.sigma ** 2 * schedule.alpha(k)
    f0 = _evaluate(drift, k, y)
    predicted = y + h * f0
    f1 = _evaluate(drift, k - 1, predicted)
    return y + 0.5 * h * (f0 + f1)


def _jvp(drift: Callable, k: int, y: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (_evaluate(drift, k, y + FD_STEP * v) - _evaluate(drift, k, y - FD_STEP * v)) / (2.0 * FD_STEP)


def hutchinson_divergence(drift: Callable, k: int, y: np.ndarray, n_probes: int, rng: RngStream,
                          return_std_error: bool = False):
    """
    Mean over Rademacher probes of v.(J v); shape (N,).

    With ``return_std_error`` also returns the per-sample standard error over probes
    (zero for a single probe).
    """
    if n_probes < 1:
        raise ValueError(f"n_probes must be at least 1, got {n_probes}")
    y = np.asarray(y, dtype=np.float64)
    estimates = np.empty((n_probes,) + y.shape[:-1])
    for p in range(n_probes):
        v = rng.rademacher(y.shape)
        estimates[p] = np.sum(v * _jvp(drift, k, y, v), axis=-1)
    mean = estimates.mean(axis=0)
    if not return_std_error:
        return mean
    se = estimates.std(axis=0, ddof=1) / np.sqrt(n_probes) if n_probes > 1 else np.zeros_like(mean)
    return mean, se


def exact_divergence(drift: Callable, k: int, y: np.ndarray) -> np.ndarray:
    """Trace of the drift Jacobian by looping over coordinate directions."""
    y = np.asarray(y, dtype=np.float64)
    d = y.shape[-1]
    total = np.zeros(y.shape[:-1])
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        total = total + _jvp(drift, k, y, e)[..., i]
    return total


def flow_sample_and_logdensity(drift: Callable, schedule: NoiseSchedule, target: TargetDensity,
                               n: int, rng: RngStream, divergence: str = 'auto',
                               n_probes: int = 1, init: Optional[np.ndarray] = None) -> FlowResult:
    """
    Integrate the flow and its log-density change; aggregate importance weights.

    Args:
        divergence: 'exact', 'hutchinson', or 'auto' (exact for d <= 16).
        init: Optional base samples y_0 replacing the random draw.
    """
    d = target.dim
    if divergence == 'auto':
        divergence = 'exact' if d <= EXACT_DIVERGENCE_MAX_DIM else 'hutchinson'
    if divergence not in ('exact', 'hutchinson'):
        raise ValueError(f"Unknown divergence mode: {divergence}")
    sigma = schedule.sigma
    y = sigma * rng.normal((n, d)) if init is None else np.asarray(init, dtype=np.float64)
    probe_rng = rng.substream(7)
    log_base = gaussian_log_density(y, sigma ** 2)

    def div(k, state):
        if divergence == 'exact':
            return exact_divergence(drift, k, state), np.zeros(state.shape[:-1])
        return hutchinson_divergence(drift, k, state, n_probes, probe_rng, return_std_error=True)

    states = [y]
    delta = np.zeros(n)
    variance = np.zeros(n)
    for j in range(schedule.K, 0, -1):
        h = 0.5 * sigma ** 2 * schedule.alpha(j)
        f0 = _evaluate(drift, j, y)
        predicted = y + h * f0
        f1 = _evaluate(drift, j - 1, predicted)
        div0, se0 = div(j, y)
        div1, se1 = div(j - 1, predicted)
        delta = delta + 0.5 * h * (div0 + div1)
        variance = variance + (0.5 * h) ** 2 * (se0 ** 2 + se1 ** 2)
        y = y + 0.5 * h * (f0 + f1)
        states.append(y)

    probes = n_probes if divergence == 'hutchinson' else 1
    traj = OdeTrajectory(states, delta, probes, np.sqrt(variance))
    log_q = log_base - delta
    log_weights = np.asarray(target_log_density(target, y)) - log_q
    return FlowResult(y, log_q, LogZReport.from_log_weights(log_weights), traj)


class FlowODESampler(DDSSampler):
    """Trains like DDS; samples and estimates ln Z through the probability-flow ODE."""

    method = 'flow-ode'

    def __init__(self, target, schedule, network, divergence: str = 'auto', n_probes: int = 1,
                 parametrisation: str = 'rescaled'):
        super().__init__(target, schedule, network, parametrisation=parametrisation)
        self.divergence = divergence
        self.n_probes = n_probes
        self.logger.debug(f"Flow ODE sampler: divergence={divergence}, n_probes={n_probes}")

    def flow(self, n_samples: int, rng: RngStream) -> FlowResult:
        return flow_sample_and_logdensity(self.drift_field(), self.schedule, self.target, n_samples,
                                          rng, self.divergence, self.n_probes)

    def evaluate(self, n_samples: int, rng: RngStream):
        if n_samples < 2:
            raise ValueError(f"n_samples must be at least 2, got {n_samples}")
        result = self.flow(n_samples, rng)
        return result.samples, result.report

    @classmethod
    def from_config(cls, config, target, network):
        return cls(target, cls.build_schedule(config), network, config.divergence,
                   config.n_probes, config.parametrisation)


SamplerFactory.register(FlowODESampler.method, FlowODESampler)
