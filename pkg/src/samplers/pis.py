"""
Path Integral Sampler baseline.

Controlled Brownian motion started at the origin:

    y' = y + delta_k u(K - k, y) + sigma sqrt(delta_k) eps

against the uncontrolled walk, whose terminal law is N(0, sigma^2 T I).
"""

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

import diffcore
from base import ConfigError, RunConfig
from diffcore import value_of
from schedule import COSINE_OFFSET, cosine_weights

from .base import Sampler, SamplerFactory, Trajectory
from .dds import StepOutput, _check_drift


@dataclass(frozen=True)
class PisConfig:
    sigma: float
    T: float
    K: int
    step_kind: str = 'uniform'
    s: float = COSINE_OFFSET

    def __post_init__(self):
        if self.sigma <= 0 or self.T <= 0:
            raise ValueError(f"sigma and T must be positive, got {self.sigma}, {self.T}")
        if self.K < 1:
            raise ValueError(f"K must be at least 1, got {self.K}")
        if self.step_kind not in ('uniform', 'cosine'):
            raise ValueError(f"Unknown PIS step kind: {self.step_kind}")

    @property
    def delta(self) -> float:
        return self.T / self.K

    @property
    def deltas(self) -> np.ndarray:
        """Step sizes in simulation order; they always sum to T."""
        if self.step_kind == 'uniform':
            return np.full(self.K, self.delta)
        # large steps first, fine steps where the drift steepens
        weights = cosine_weights(self.K, self.s)[::-1]
        return self.T * weights / weights.sum()


def pis_step(drift: Callable, k: int, y, config: PisConfig, eps: np.ndarray,
             delta: float = None) -> StepOutput:
    """One controlled step; cost increment delta |u|^2 / (2 sigma^2)."""
    delta = config.delta if delta is None else delta
    u = drift(k, y)
    _check_drift(u)
    root = np.sqrt(delta)
    y_next = y + delta * u + (config.sigma * root) * eps
    cost = diffcore.sum_sq(u) * (delta / (2.0 * config.sigma ** 2))
    stochastic = (root / config.sigma) * np.sum(value_of(u) * eps, axis=-1)
    return StepOutput(y_next, cost, stochastic)


def analytic_pis_drift(mu: Sequence[float], x: np.ndarray, t: float, sigma: float, T: float,
                       target_variance: float = 1.0) -> np.ndarray:
    """
    Optimal control at time t for the target N(mu, target_variance I).

    u(x, t) = sigma^2 (mu / s2 - p x) / (1 + p sigma^2 (T - t)),  p = 1/s2 - 1/(sigma^2 T)
    """
    if not 0.0 <= t <= T:
        raise ValueError(f"t must lie in [0, {T}], got {t}")
    mu = np.asarray(mu, dtype=np.float64)
    precision = 1.0 / target_variance - 1.0 / (sigma ** 2 * T)
    denom = 1.0 + precision * sigma ** 2 * (T - t)
    if denom <= 0:
        raise ValueError("Reference variance too small for this target at time t")
    return sigma ** 2 * (mu / target_variance - precision * np.asarray(x, dtype=np.float64)) / denom


class PISSampler(Sampler):
    """Path Integral Sampler sharing the DDS network, loss and estimator."""

    method = 'pis'

    def __init__(self, target, config: PisConfig, network):
        super().__init__(target, network)
        if network.arch.steps != config.K:
            raise ValueError(f"Network embeds {network.arch.steps} steps, config has {config.K}")
        self.config = config
        self.logger.debug(f"PIS sampler: K={config.K}, sigma={config.sigma}, step={config.step_kind}")

    @property
    def reference_variance(self) -> float:
        return self.config.sigma ** 2 * self.config.T

    @property
    def steps(self) -> int:
        return self.config.K

    def rollout(self, drift, n, rng, init=None, noises=None) -> Trajectory:
        K, d = self.config.K, self.target.dim
        deltas = self.config.deltas
        y = np.zeros((n, d)) if init is None else np.asarray(init, dtype=np.float64)
        states, used_noises = [y], []
        cost = np.zeros(n)
        stochastic = np.zeros(n)
        for k in range(K):
            eps = rng.normal((n, d)) if noises is None else np.asarray(noises[k], dtype=np.float64)
            out = pis_step(drift, K - k, y, self.config, eps, float(deltas[k]))
            y = out.y
            cost = cost + out.cost
            stochastic = stochastic + out.stochastic
            states.append(y)
            used_noises.append(eps)
        return Trajectory(states, used_noises, cost, stochastic, self.reference_variance)

    def pis_loss(self, traj: Trajectory):
        return self.kl_loss(traj)

    def pis_estimate_log_z(self, n_samples, rng):
        return self.estimate_log_z(n_samples, rng)

    @classmethod
    def validate_config(cls, config: RunConfig) -> None:
        try:
            PisConfig(config.sigma, config.T, config.K, config.pis_step, config.s)
        except ValueError as exc:
            raise ConfigError(f"Invalid PIS settings: {exc}") from exc

    @classmethod
    def from_config(cls, config, target, network):
        return cls(target, PisConfig(config.sigma, config.T, config.K, config.pis_step, config.s),
                   network)


SamplerFactory.register(PISSampler.method, PISSampler)
