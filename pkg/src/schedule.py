"""
Noise schedules for the discrete-time diffusions.

A schedule owns the per-step noise fractions alpha_1..alpha_K and everything
derived from them. Step ``k`` of a reverse pass (k = 0..K-1) uses
``alpha(K - k)``; the helpers below take the 1-based schedule index.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np

logger = logging.getLogger(__name__)

CLIP_EPS = 1e-6
COSINE_OFFSET = 0.008


class ScheduleError(ValueError):
    """Schedule parameters produce a step outside (0, 1)."""


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    kind: str
    alphas: np.ndarray
    sigma: float
    T: float
    alpha_max: float
    s: float = COSINE_OFFSET
    lambdas: np.ndarray = field(init=False, repr=False, compare=False)
    kappas: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=np.float64)
        if alphas.ndim != 1 or alphas.size < 1:
            raise ScheduleError("A schedule needs at least one step")
        if np.any(alphas <= 0.0) or np.any(alphas >= 1.0):
            raise ScheduleError("Every alpha must lie strictly inside (0, 1)")
        if self.sigma <= 0:
            raise ScheduleError(f"sigma must be positive, got {self.sigma}")
        root = np.sqrt(1.0 - alphas)
        object.__setattr__(self, 'alphas', alphas)
        object.__setattr__(self, 'lambdas', 1.0 - root)
        object.__setattr__(self, 'kappas', root * (1.0 - root))

    @property
    def K(self) -> int:
        return int(self.alphas.size)

    @property
    def delta(self) -> float:
        """Uniform time step T/K."""
        return self.T / self.K

    def alpha(self, index: int) -> float:
        """alpha at 1-based schedule index."""
        return float(self.alphas[index - 1])

    def lam(self, index: int) -> float:
        return float(self.lambdas[index - 1])

    def kappa(self, index: int) -> float:
        return float(self.kappas[index - 1])

    def em_beta_delta(self, index: int) -> float:
        """beta_k * delta such that 2 beta_k delta = -ln(1 - alpha_k)."""
        return float(-0.5 * np.log1p(-self.alphas[index - 1]))

    def survival(self, index: int) -> float:
        """sqrt(prod_{i <= index} (1 - alpha_i)); 1.0 for index 0."""
        if index <= 0:
            return 1.0
        return float(np.sqrt(np.prod(1.0 - self.alphas[:index])))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'K': self.K,
            'alpha_max': self.alpha_max,
            'T': self.T,
            's': self.s,
            'sigma': self.sigma,
            'alphas': [float(a) for a in self.alphas],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'NoiseSchedule':
        alphas = np.asarray(data['alphas'], dtype=np.float64)
        if 'K' in data and int(data['K']) != alphas.size:
            raise ScheduleError(f"K={data['K']} does not match {alphas.size} stored alphas")
        return cls(kind=data['kind'], alphas=alphas, sigma=float(data.get('sigma', 1.0)),
                   T=float(data['T']), alpha_max=float(data['alpha_max']),
                   s=float(data.get('s', COSINE_OFFSET)))

    @classmethod
    def from_json(cls, text: str) -> 'NoiseSchedule':
        return cls.from_dict(json.loads(text))


def _check_common(K: int, alpha_max: float, T: float):
    if K < 1:
        raise ScheduleError(f"K must be at least 1, got {K}")
    if alpha_max <= 0 or T <= 0:
        raise ScheduleError(f"alpha_max and T must be positive, got {alpha_max}, {T}")


def cosine_weights(K: int, s: float = COSINE_OFFSET) -> np.ndarray:
    """Unnormalized cosine law, nondecreasing in k = 1..K."""
    if s < 0:
        raise ScheduleError(f"Offset s must be non-negative, got {s}")
    k = np.arange(1, K + 1, dtype=np.float64)
    root = np.cos(0.5 * np.pi * (1.0 - k / K + s) / (1.0 + s)) ** 2
    return root * root


def cosine_schedule(K: int, alpha_max: float, T: float, s: float = COSINE_OFFSET,
                    sigma: float = 1.0) -> NoiseSchedule:
    """
    Cosine schedule with sum(alpha) = alpha_max * T.

    sqrt(alpha_k) follows cos^2(pi/2 (1 - k/K + s)/(1 + s)); the vector is then
    rescaled to the total noise budget and clipped into (1e-6, 1 - 1e-6).

    Raises:
        ScheduleError: if any rescaled step reaches 1 before clipping.
    """
    _check_common(K, alpha_max, T)
    weights = cosine_weights(K, s)
    alphas = weights * (alpha_max * T / weights.sum())
    if np.any(alphas >= 1.0):
        worst = int(np.argmax(alphas)) + 1
        raise ScheduleError(
            f"alpha_{worst}={alphas[worst - 1]:.4f} >= 1 for alpha_max*T={alpha_max * T}; "
            f"increase K or reduce alpha_max*T")
    alphas = np.clip(alphas, CLIP_EPS, 1.0 - CLIP_EPS)
    logger.debug(f"Cosine schedule K={K}: alpha range [{alphas[0]:.3e}, {alphas[-1]:.3e}]")
    return NoiseSchedule('cosine', alphas, sigma, T, alpha_max, s)


def uniform_schedule(K: int, alpha_max: float, T: float, sigma: float = 1.0) -> NoiseSchedule:
    """Constant step alpha_k = alpha_max * T / K."""
    _check_common(K, alpha_max, T)
    step = alpha_max * T / K
    if step >= 1.0:
        raise ScheduleError(f"Uniform step {step} exceeds 1; increase K")
    return NoiseSchedule('uniform', np.full(K, step), sigma, T, alpha_max, 0.0)


def make_schedule(kind: str, K: int, alpha_max: float, T: float, sigma: float = 1.0,
                  s: float = COSINE_OFFSET) -> NoiseSchedule:
    if kind == 'cosine':
        return cosine_schedule(K, alpha_max, T, s, sigma)
    if kind == 'uniform':
        return uniform_schedule(K, alpha_max, T, sigma)
    raise ScheduleError(f"Unknown schedule kind: {kind}")
