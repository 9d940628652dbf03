"""
Underdamped DDS on (position, momentum) phase space.

Each reverse step composes the exact inverse harmonic flow with a controlled
OU step on the momentum:

    (y', n') = flow_inverse(y, n, tau)
    n''      = sqrt(1 - a) (n' + 2 (1 - sqrt(1 - a)) m f(K - k, y', n')) + sqrt(a m) eps

Only the momentum transition is stochastic, so the path log ratio is

    2 kappa^2 m |f|^2 / a  +  2 kappa sqrt(m) f.eps / sqrt(a)
"""

from dataclasses import dataclass

import numpy as np

import diffcore
from base import ConfigError, RunConfig
from diffcore import value_of
from driftnet import DriftArchitecture
from schedule import NoiseSchedule

from .base import Sampler, SamplerFactory, Trajectory
from .dds import DDSSampler, StepOutput, _check_drift


@dataclass
class PhaseState:
    y: object
    n: object
    mass: float

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError(f"Mass must be positive, got {self.mass}")

    def hamiltonian(self, sigma: float) -> np.ndarray:
        y, n = value_of(self.y), value_of(self.n)
        return np.sum(y * y, axis=-1) / (2.0 * sigma ** 2) + np.sum(n * n, axis=-1) / (2.0 * self.mass)


def _rotation(tau: float, sigma: float, mass: float):
    omega = tau / (np.sqrt(mass) * sigma)
    return np.cos(omega), np.sin(omega), sigma / np.sqrt(mass)


def harmonic_flow(state: PhaseState, tau: float, sigma: float) -> PhaseState:
    """Exact flow of H = |y|^2/(2 sigma^2) + |n|^2/(2 m) for time tau."""
    cos, sin, ratio = _rotation(tau, sigma, state.mass)
    y = cos * state.y + (ratio * sin) * state.n
    n = (-sin / ratio) * state.y + cos * state.n
    return PhaseState(y, n, state.mass)


def harmonic_flow_inverse(state: PhaseState, tau: float, sigma: float) -> PhaseState:
    """Inverse flow, momentum flip composed with the forward flow and a second flip."""
    if tau < 0:
        raise ValueError(f"tau must be non-negative, got {tau}")
    cos, sin, ratio = _rotation(tau, sigma, state.mass)
    y = cos * state.y - (ratio * sin) * state.n
    n = (sin / ratio) * state.y + cos * state.n
    return PhaseState(y, n, state.mass)


def underdamped_ref_step(state: PhaseState, alpha: float, eps: np.ndarray, tau: float,
                         sigma: float) -> PhaseState:
    """Reference transition; leaves N(0, sigma^2 I) x N(0, m I) invariant."""
    half = harmonic_flow_inverse(state, tau, sigma)
    n = np.sqrt(1.0 - alpha) * half.n + np.sqrt(alpha * state.mass) * eps
    return PhaseState(half.y, n, state.mass)


def momentum_kick(half: PhaseState, f, alpha: float, eps: np.ndarray) -> StepOutput:
    """Controlled momentum OU step after the harmonic sub-step. ``y`` holds the new momentum."""
    _check_drift(f)
    mass = half.mass
    root = np.sqrt(1.0 - alpha)
    kappa = root * (1.0 - root)
    n = root * (half.n + (2.0 * (1.0 - root) * mass) * f) + np.sqrt(alpha * mass) * eps
    cost = diffcore.sum_sq(f) * (2.0 * kappa ** 2 * mass / alpha)
    stochastic = (2.0 * kappa * np.sqrt(mass) / np.sqrt(alpha)) * np.sum(value_of(f) * eps, axis=-1)
    return StepOutput(n, cost, stochastic)


def underdamped_dds_step(drift, k: int, state: PhaseState, alpha: float, eps: np.ndarray,
                         tau: float, sigma: float):
    """
    One controlled phase-space step.

    Returns:
        (PhaseState, cost increment, stochastic increment, momentum after the flow)
    """
    half = harmonic_flow_inverse(state, tau, sigma)
    out = momentum_kick(half, drift(k, half.y, momentum=half.n), alpha, eps)
    return PhaseState(half.y, out.y, state.mass), out.cost, out.stochastic, half.n


def underdamped_log_rnd(traj: Trajectory, drift, schedule: NoiseSchedule, mass: float) -> np.ndarray:
    """Recompute the momentum-transition log ratio of stored phase-space paths."""
    K = schedule.K
    if traj.half_momenta is None or len(traj.noises) != K:
        raise ValueError("Trajectory must store half-step momenta and K noises")
    total = np.zeros(traj.terminal.shape[:-1])
    for k in range(K):
        j = K - k
        alpha = schedule.alpha(j)
        kappa = schedule.kappa(j)
        y = value_of(traj.states[k + 1])
        f = value_of(drift(j, y, momentum=value_of(traj.half_momenta[k])))
        total = total + 2.0 * kappa ** 2 * mass / alpha * np.sum(f * f, axis=-1) \
            + 2.0 * kappa * np.sqrt(mass / alpha) * np.sum(f * traj.noises[k], axis=-1)
    return total


class UnderdampedSampler(Sampler):
    """Underdamped DDS. Momentum is discarded; y_K is the sample."""

    method = 'udmp'

    def __init__(self, target, schedule: NoiseSchedule, network, mass: float):
        super().__init__(target, network)
        if not network.arch.momentum:
            raise ValueError("Underdamped sampler needs a network with momentum input")
        if mass <= 0:
            raise ValueError(f"Mass must be positive, got {mass}")
        self.schedule = schedule
        self.mass = float(mass)
        self.logger.debug(f"Underdamped sampler: K={schedule.K}, mass={self.mass}")

    @property
    def reference_variance(self) -> float:
        return self.schedule.sigma ** 2

    @property
    def steps(self) -> int:
        return self.schedule.K

    @property
    def tau(self) -> float:
        return self.schedule.delta

    def rollout(self, drift, n, rng, init=None, noises=None) -> Trajectory:
        K, d, sigma = self.schedule.K, self.target.dim, self.schedule.sigma
        if init is None:
            y = sigma * rng.normal((n, d))
            momentum = np.sqrt(self.mass) * rng.normal((n, d))
        else:
            y, momentum = (np.asarray(v, dtype=np.float64) for v in init)
        state = PhaseState(y, momentum, self.mass)
        states, momenta, half_momenta, used_noises = [y], [momentum], [], []
        cost = np.zeros(n)
        stochastic = np.zeros(n)
        for k in range(K):
            j = K - k
            eps = rng.normal((n, d)) if noises is None else np.asarray(noises[k], dtype=np.float64)
            state, cost_inc, stoch_inc, half_n = underdamped_dds_step(
                drift, j, state, self.schedule.alpha(j), eps, self.tau, sigma)
            cost = cost + cost_inc
            stochastic = stochastic + stoch_inc
            states.append(state.y)
            momenta.append(state.n)
            half_momenta.append(half_n)
            used_noises.append(eps)
        return Trajectory(states, used_noises, cost, stochastic, self.reference_variance,
                          momenta=momenta, half_momenta=half_momenta)

    def log_rnd(self, traj: Trajectory) -> np.ndarray:
        return underdamped_log_rnd(traj, self.drift_field(), self.schedule, self.mass)

    def underdamped_kl_loss(self, traj: Trajectory):
        return self.kl_loss(traj)

    def underdamped_estimate_log_z(self, n_samples, rng):
        return self.estimate_log_z(n_samples, rng)

    @classmethod
    def architecture(cls, config: RunConfig, target) -> DriftArchitecture:
        return DriftArchitecture(dim=target.dim, steps=config.K, hidden=tuple(config.hidden),
                                 emb_dim=config.emb_dim, inner_clip=config.inner_clip,
                                 outer_clip=config.outer_clip, momentum=True)

    @classmethod
    def validate_config(cls, config: RunConfig) -> None:
        if config.mass is None or config.mass <= 0:
            raise ConfigError("Method udmp requires a positive 'mass'")
        DDSSampler.validate_config(config)

    @classmethod
    def from_config(cls, config, target, network):
        return cls(target, DDSSampler.build_schedule(config), network, config.mass)


SamplerFactory.register(UnderdampedSampler.method, UnderdampedSampler)
