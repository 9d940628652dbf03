"""
Denoising diffusion sampler (overdamped)
========================================

The reference process is the exact Ornstein-Uhlenbeck transition

    y' = sqrt(1 - a) y + sigma sqrt(a) eps

which keeps N(0, sigma^2 I) invariant. The learned process adds a drift term
``c * f(K - k, y)``; with Gaussian transitions on both sides the log
Radon-Nikodym derivative of a path is the sum over steps of

    c^2 |f|^2 / (2 s^2)  +  c f.eps / s          (s = transition noise std)

The first sum is the Girsanov cost, the second the stochastic term.

Drift coefficients ``c``:
    rescaled (default): sigma^2 a
    lambda:             2 sigma^2 (1 - sqrt(1 - a))
    Euler-Maruyama:     2 sigma^2 b, with decay (1 - b) and noise sigma sqrt(2 b),
                        b = -ln(1 - a) / 2

The lambda form uses the per-step lambda_k = 1 - sqrt(1 - a_k), about a_k / 2, so the
two forms agree to first order in a.
"""

from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

import diffcore
from base import ConfigError, RunConfig
from diffcore import NonFiniteError, value_of
from driftnet import DriftNetwork
from schedule import NoiseSchedule, make_schedule
from targets import TargetDensity

from .base import Sampler, SamplerFactory, Trajectory


INTEGRATORS = ('exponential', 'em')


class StepOutput(NamedTuple):
    y: object
    cost: object
    stochastic: np.ndarray


class StepCoefficients(NamedTuple):
    decay: float
    drift: float
    noise: float


def _check_drift(f):
    if not np.all(np.isfinite(value_of(f))):
        raise NonFiniteError('drift', "Non-finite drift output")


def controlled_gaussian_step(y, f, eps: np.ndarray, coeffs: StepCoefficients) -> StepOutput:
    """y' = decay y + drift f + noise eps, with the matching path-ratio increments."""
    _check_drift(f)
    y_next = coeffs.decay * y + coeffs.drift * f + coeffs.noise * eps
    cost = diffcore.sum_sq(f) * (coeffs.drift ** 2 / (2.0 * coeffs.noise ** 2))
    stochastic = (coeffs.drift / coeffs.noise) * np.sum(value_of(f) * eps, axis=-1)
    return StepOutput(y_next, cost, stochastic)


def exponential_coefficients(alpha: float, sigma: float,
                             parametrisation: str = 'rescaled') -> StepCoefficients:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if parametrisation == 'rescaled':
        drift = sigma ** 2 * alpha
    elif parametrisation == 'lambda':
        drift = 2.0 * sigma ** 2 * (1.0 - np.sqrt(1.0 - alpha))
    else:
        raise ValueError(f"Unknown parametrisation: {parametrisation}")
    return StepCoefficients(float(np.sqrt(1.0 - alpha)), float(drift), float(sigma * np.sqrt(alpha)))


def em_coefficients(beta_delta: float, sigma: float) -> StepCoefficients:
    if not 0.0 < beta_delta < 1.0:
        raise ValueError(f"Euler-Maruyama step beta*delta={beta_delta} must lie in (0, 1)")
    return StepCoefficients(1.0 - beta_delta, 2.0 * sigma ** 2 * beta_delta,
                            float(sigma * np.sqrt(2.0 * beta_delta)))


def reference_step(y, alpha: float, eps: np.ndarray, sigma: float = 1.0):
    """Exact OU transition; leaves N(0, sigma^2 I) invariant."""
    c = exponential_coefficients(alpha, sigma)
    return c.decay * y + c.noise * eps


def dds_step(drift: Callable, k: int, y, alpha: float, sigma: float, eps: np.ndarray,
             parametrisation: str = 'rescaled') -> StepOutput:
    """
    One exponential-integrator step with drift ``drift(k, y)``.

    ``k`` is the network step index (K - step for a reverse pass). With a zero
    drift this is exactly ``reference_step`` with zero cost.
    """
    return controlled_gaussian_step(y, drift(k, y), eps,
                                    exponential_coefficients(alpha, sigma, parametrisation))


def em_reference_step(y, beta_delta: float, eps: np.ndarray, sigma: float = 1.0):
    """Euler-Maruyama OU step; one-step variance sigma^2 (1 + (beta delta)^2)."""
    c = em_coefficients(beta_delta, sigma)
    return c.decay * y + c.noise * eps


def em_step(drift: Callable, k: int, y, beta_delta: float, sigma: float,
            eps: np.ndarray) -> StepOutput:
    return controlled_gaussian_step(y, drift(k, y), eps, em_coefficients(beta_delta, sigma))


def step_coefficients(schedule: NoiseSchedule, index: int, integrator: str = 'exponential',
                      parametrisation: str = 'rescaled') -> StepCoefficients:
    """Coefficients at 1-based schedule ``index``."""
    if integrator == 'exponential':
        return exponential_coefficients(schedule.alpha(index), schedule.sigma, parametrisation)
    if integrator == 'em':
        return em_coefficients(schedule.em_beta_delta(index), schedule.sigma)
    raise ValueError(f"Unknown integrator: {integrator}")


def log_rnd(traj: Trajectory, drift: Callable, schedule: NoiseSchedule,
            integrator: str = 'exponential', parametrisation: str = 'rescaled') -> np.ndarray:
    """
    Recompute log(q / p_ref) of stored paths from their states and noises.

    Raises:
        ValueError: if the trajectory does not carry one noise per step.
    """
    K = schedule.K
    if not traj.noises or len(traj.noises) != K or len(traj.states) != K + 1:
        raise ValueError("Trajectory must store K+1 states and K noises")
    total = np.zeros(value_of(traj.states[0]).shape[:-1])
    for k in range(K):
        j = K - k
        coeffs = step_coefficients(schedule, j, integrator, parametrisation)
        y = value_of(traj.states[k])
        f = value_of(drift(j, y))
        eps = traj.noises[k]
        total = total + (coeffs.drift ** 2 / (2.0 * coeffs.noise ** 2)) * np.sum(f * f, axis=-1) \
            + (coeffs.drift / coeffs.noise) * np.sum(f * eps, axis=-1)
    return total


def analytic_gaussian_drift(mu: Sequence[float], t: Optional[float] = None, *,
                            step: Optional[int] = None, schedule: Optional[NoiseSchedule] = None,
                            target_variance: float = 1.0) -> np.ndarray:
    """
    Value-function gradient for a Gaussian target N(mu, target_variance I).

    Continuous time (``t``): mu exp(-t), valid for sigma = beta = 1 and unit variance.
    Discrete time (``step`` with ``schedule``): sqrt(prod_{i <= step}(1 - alpha_i)) mu / sigma^2,
    valid when the target variance equals sigma^2. The exact rescaled drift of
    the reverse step at network index j is the value at ``step = j - 1``.

    Raises:
        ValueError: outside those regimes.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    if step is not None:
        if schedule is None:
            raise ValueError("A schedule is required for the discrete-time drift")
        if not np.isclose(target_variance, schedule.sigma ** 2):
            raise ValueError("Discrete analytic drift requires target variance == sigma^2")
        if not 0 <= step <= schedule.K:
            raise ValueError(f"step must lie in 0..{schedule.K}, got {step}")
        return schedule.survival(step) * mu / schedule.sigma ** 2
    if t is None:
        raise ValueError("Pass either t or step")
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    if not np.isclose(target_variance, 1.0):
        raise ValueError("Continuous analytic drift requires a unit-variance target")
    return mu * np.exp(-t)


class GaussianOracleDrift:
    """
    Drift callable ``(k, y) -> f`` returning the analytic value-function gradient.

    ``lag=1`` gives the exact drift of the stochastic reverse step; ``lag=0``
    gives the gradient at the current noise level (probability-flow ODE).
    """

    def __init__(self, mu: Sequence[float], schedule: NoiseSchedule, lag: int = 1):
        self.mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
        self.schedule = schedule
        self.lag = lag

    def __call__(self, k: int, y, momentum=None):
        step = max(k - self.lag, 0)
        g = analytic_gaussian_drift(self.mu, step=step, schedule=self.schedule,
                                    target_variance=self.schedule.sigma ** 2)
        return np.broadcast_to(g, value_of(y).shape).copy()


class DDSSampler(Sampler):
    """Overdamped DDS with the exact OU reference and exponential integrator."""

    method = 'dds'

    def __init__(self, target: TargetDensity, schedule: NoiseSchedule, network: DriftNetwork,
                 integrator: str = 'exponential', parametrisation: str = 'rescaled'):
        super().__init__(target, network)
        if integrator not in INTEGRATORS:
            raise ValueError(f"Unknown integrator: {integrator}")
        if network.arch.steps != schedule.K:
            raise ValueError(f"Network embeds {network.arch.steps} steps, schedule has {schedule.K}")
        self.schedule = schedule
        self.integrator = integrator
        self.parametrisation = parametrisation
        self.logger.debug(f"{self.method} sampler: K={schedule.K}, integrator={integrator}, "
                          f"parametrisation={parametrisation}")

    @property
    def reference_variance(self) -> float:
        return self.schedule.sigma ** 2

    @property
    def steps(self) -> int:
        return self.schedule.K

    def rollout(self, drift, n, rng, init=None, noises=None) -> Trajectory:
        K, d, sigma = self.schedule.K, self.target.dim, self.schedule.sigma
        y = sigma * rng.normal((n, d)) if init is None else np.asarray(init, dtype=np.float64)
        states, used_noises = [y], []
        cost = np.zeros(n)
        stochastic = np.zeros(n)
        for k in range(K):
            j = K - k
            eps = rng.normal((n, d)) if noises is None else np.asarray(noises[k], dtype=np.float64)
            coeffs = step_coefficients(self.schedule, j, self.integrator, self.parametrisation)
            out = controlled_gaussian_step(y, drift(j, y), eps, coeffs)
            y = out.y
            cost = cost + out.cost
            stochastic = stochastic + out.stochastic
            states.append(y)
            used_noises.append(eps)
        return Trajectory(states, used_noises, cost, stochastic, self.reference_variance)

    def log_rnd(self, traj: Trajectory) -> np.ndarray:
        return log_rnd(traj, self.drift_field(), self.schedule, self.integrator, self.parametrisation)

    @classmethod
    def build_schedule(cls, config: RunConfig) -> NoiseSchedule:
        return make_schedule(config.schedule, config.K, config.alpha_max, config.T,
                             config.sigma, config.s)

    @classmethod
    def validate_config(cls, config: RunConfig) -> None:
        try:
            cls.build_schedule(config)
        except ValueError as exc:
            raise ConfigError(f"Invalid schedule for {config.method}: {exc}") from exc

    @classmethod
    def from_config(cls, config, target, network):
        return cls(target, cls.build_schedule(config), network,
                   parametrisation=config.parametrisation)


class EMAblationSampler(DDSSampler):
    """DDS with Euler-Maruyama reference and proposal steps (not stationarity preserving)."""

    method = 'em-ablation'

    def __init__(self, target, schedule, network, parametrisation: str = 'rescaled'):
        super().__init__(target, schedule, network, integrator='em', parametrisation=parametrisation)

    @classmethod
    def validate_config(cls, config: RunConfig) -> None:
        super().validate_config(config)
        schedule = cls.build_schedule(config)
        worst = max(schedule.em_beta_delta(j) for j in range(1, schedule.K + 1))
        if worst >= 1.0:
            raise ConfigError(f"Euler-Maruyama step beta*delta={worst:.3f} >= 1; increase K")

    @classmethod
    def from_config(cls, config, target, network):
        return cls(target, cls.build_schedule(config), network, config.parametrisation)


SamplerFactory.register(DDSSampler.method, DDSSampler)
SamplerFactory.register(EMAblationSampler.method, EMAblationSampler)
