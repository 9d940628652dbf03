"""
Base Sampler Classes and Factory
================================

This module provides the shared machinery of every diffusion sampler in the
package: the trajectory container, the log-normalizing-constant report, the
training configuration, the ``Sampler`` base class and the ``SamplerFactory``
registry used by the experiment runner.

A sampler couples a target density, a drift network and a discrete-time
process. Subclasses only describe the process (``rollout``) and which reference
density the terminal state is compared against; the reverse-KL loss, the
importance weights, the ln Z estimate and the Adam training loop are shared.

Examples:
--------

Training a DDS sampler on a Gaussian target:
    target = gaussian_target([6.0, 6.0])
    schedule = cosine_schedule(64, alpha_max=3.125, T=3.2)
    net = DriftNetwork.initialize(DriftArchitecture(dim=2, steps=64), RngStream(0))
    sampler = DDSSampler(target, schedule, net)
    result = sampler.train(TrainConfig(iterations=3000), RngStream(0))
    report = sampler.estimate_log_z(2000, RngStream(1))

Creating a sampler from a run configuration:
    sampler = SamplerFactory.create(run_config, target, rng)
"""

import abc
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

import diffcore
from base import ConfigError, DivergenceError, RunConfig
from diffcore import NonFiniteError, RngStream, Tape, Var, adam_init, adam_step, value_of
from driftnet import DriftArchitecture, DriftField, DriftNetwork
from targets import LOG_2PI, TargetDensity

logger = logging.getLogger(__name__)


@dataclass
class Trajectory:
    """
    A batch of simulated paths.

    Attributes:
        states: y_0..y_K, each of shape (N, d); arrays, or tape values while training.
        noises: eps_1..eps_K, each of shape (N, d).
        girsanov_cost: Accumulated quadratic drift cost per path, shape (N,).
        stochastic_term: Accumulated drift-noise inner products per path, shape (N,).
        reference_variance: Per-coordinate variance of the terminal reference density.
        momenta: n_0..n_K for phase-space samplers.
        half_momenta: Momenta right after each harmonic sub-step.
    """
    states: List[Any]
    noises: List[np.ndarray]
    girsanov_cost: Any
    stochastic_term: np.ndarray
    reference_variance: float
    momenta: Optional[List[Any]] = None
    half_momenta: Optional[List[Any]] = None

    @property
    def steps(self) -> int:
        return len(self.states) - 1

    @property
    def terminal(self) -> np.ndarray:
        return value_of(self.states[-1])

    @property
    def log_rnd(self) -> np.ndarray:
        """log(q / p_ref) of every path."""
        return value_of(self.girsanov_cost) + self.stochastic_term


@dataclass
class LogZReport:
    """Importance weights and their aggregates."""
    log_weights: np.ndarray
    elbo: float
    ln_z_is: float
    std_error: float
    n_samples: int
    ess: float

    @classmethod
    def from_log_weights(cls, log_weights: np.ndarray) -> 'LogZReport':
        """
        Aggregate per-sample log weights.

        Raises:
            ValueError: with fewer than two samples (no standard error).
            NonFiniteError: if any log weight is NaN or infinite.
        """
        lw = np.asarray(log_weights, dtype=np.float64).ravel()
        if lw.size < 2:
            raise ValueError(f"At least two samples are needed for a standard error, got {lw.size}")
        if not np.all(np.isfinite(lw)):
            raise NonFiniteError('log_weights', "Non-finite importance weight")
        n = lw.size
        ln_z = diffcore.logsumexp(lw) - np.log(n)
        normalized = np.exp(lw - diffcore.logsumexp(lw))
        return cls(log_weights=lw, elbo=float(lw.mean()), ln_z_is=float(ln_z),
                   std_error=float(lw.std(ddof=1) / np.sqrt(n)), n_samples=n,
                   ess=float(1.0 / np.sum(normalized ** 2)))

    def to_dict(self) -> Dict[str, Any]:
        return {'elbo': self.elbo, 'ln_z_is': self.ln_z_is, 'se': self.std_error,
                'n_samples': self.n_samples, 'ess': self.ess}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    lr_decay: float = 1.0
    lr_decay_every: int = 100
    iterations: int = 3000
    batch_size: int = 300
    eval_batch: int = 2000
    eval_every: int = 500
    early_stop: bool = True
    plateau_window: int = 200
    plateau_tol: float = 1e-3
    deterministic: bool = False
    progress: bool = False

    @classmethod
    def from_run_config(cls, config: RunConfig) -> 'TrainConfig':
        return cls(**{name: getattr(config, name) for name in cls.__dataclass_fields__})

    def learning_rate_at(self, iteration: int) -> float:
        return self.learning_rate * self.lr_decay ** (iteration // max(self.lr_decay_every, 1))


@dataclass
class TrainResult:
    losses: List[float] = field(default_factory=list)
    records: List[Dict[str, Any]] = field(default_factory=list)
    iterations_run: int = 0
    stopped_early: bool = False


def loss_plateaued(losses: List[float], window: int, tol: float) -> bool:
    """Relative change of consecutive window means below ``tol``."""
    if window < 1 or len(losses) < 2 * window:
        return False
    previous = float(np.mean(losses[-2 * window:-window]))
    current = float(np.mean(losses[-window:]))
    return abs(current - previous) < tol * max(abs(previous), 1.0)


def gaussian_log_density(y, variance: float):
    """log N(y; 0, variance I) over the last axis; works on tape values."""
    d = value_of(y).shape[-1]
    return diffcore.sum_sq(y) * (-0.5 / variance) - 0.5 * d * (LOG_2PI + np.log(variance))


def target_log_density(target: TargetDensity, y):
    """log gamma(y); on the tape its gradient comes from ``grad_log_gamma``."""
    def vjp(g, yv):
        return g[..., None] * target.grad_log_gamma(yv)

    out = diffcore.apply(y, target.log_gamma, vjp, op='log_gamma')
    if not isinstance(out, Var) and not np.all(np.isfinite(out)):
        raise NonFiniteError('log_gamma', "Non-finite target log density")
    return out


class Sampler(abc.ABC):
    """
    Abstract base class for the diffusion samplers.

    Template Method Pattern:
        ``train`` and ``estimate_log_z`` implement the invariant parts of the
        algorithm and delegate the process-specific parts to subclasses:
        - rollout(): simulate a batch of paths with a given drift
        - reference_variance: terminal reference density variance
        - architecture() / validate_config() / from_config(): construction

    Attributes:
        target (TargetDensity): Unnormalized target density.
        network (DriftNetwork): Drift network, updated in place by ``train``.
    """

    method: str = ""

    def __init__(self, target: TargetDensity, network: DriftNetwork):
        if network.arch.dim != target.dim:
            raise ValueError(f"Network dimension {network.arch.dim} != target dimension {target.dim}")
        self.target = target
        self.network = network
        self.logger = logging.getLogger(self.__class__.__name__)

    # -- process-specific ---------------------------------------------------

    @property
    @abc.abstractmethod
    def reference_variance(self) -> float:
        """Per-coordinate variance of the Gaussian the terminal state is compared to."""

    @property
    @abc.abstractmethod
    def steps(self) -> int:
        """Number of discrete steps K."""

    @abc.abstractmethod
    def rollout(self, drift: Callable, n: int, rng: RngStream,
                init: Optional[np.ndarray] = None,
                noises: Optional[List[np.ndarray]] = None) -> Trajectory:
        """
        Simulate ``n`` paths under ``drift``.

        Args:
            drift: Callable ``(k, y[, momentum]) -> f`` at network step index k.
            n: Number of paths.
            rng: Source of the initial state and step noises.
            init: Optional initial state(s) replacing the random start.
            noises: Optional step noises replacing the random draws.
        """

    @classmethod
    def architecture(cls, config: RunConfig, target: TargetDensity) -> DriftArchitecture:
        return DriftArchitecture(dim=target.dim, steps=config.K, hidden=tuple(config.hidden),
                                 emb_dim=config.emb_dim, inner_clip=config.inner_clip,
                                 outer_clip=config.outer_clip)

    @classmethod
    def validate_config(cls, config: RunConfig) -> None:
        """Method-specific checks. Raises ConfigError."""

    @classmethod
    @abc.abstractmethod
    def from_config(cls, config: RunConfig, target: TargetDensity,
                    network: DriftNetwork) -> 'Sampler':
        """Build a sampler from a validated run configuration."""

    # -- shared -------------------------------------------------------------

    def drift_field(self, params=None) -> DriftField:
        return DriftField(self.network, self.target, params)

    def kl_loss(self, traj: Trajectory):
        """
        Mean of r_K + log N(y_K; 0, v I) - log gamma(y_K) over the batch.

        Using gamma instead of pi shifts the loss by the constant ln Z.
        """
        terminal = traj.states[-1]
        per_path = (traj.girsanov_cost
                    + gaussian_log_density(terminal, traj.reference_variance)
                    - target_log_density(self.target, terminal))
        return diffcore.mean(per_path)

    def log_weights(self, traj: Trajectory) -> np.ndarray:
        terminal = traj.terminal
        log_gamma = np.asarray(target_log_density(self.target, terminal))
        return log_gamma - gaussian_log_density(terminal, traj.reference_variance) - traj.log_rnd

    def sample(self, n: int, rng: RngStream) -> Trajectory:
        return self.rollout(self.drift_field(), n, rng)

    def evaluate(self, n_samples: int, rng: RngStream) -> Tuple[np.ndarray, LogZReport]:
        """Terminal samples and the importance-weight report of ``n_samples`` fresh paths."""
        if n_samples < 2:
            raise ValueError(f"n_samples must be at least 2, got {n_samples}")
        traj = self.sample(n_samples, rng)
        return traj.terminal, LogZReport.from_log_weights(self.log_weights(traj))

    def estimate_log_z(self, n_samples: int, rng: RngStream) -> LogZReport:
        return self.evaluate(n_samples, rng)[1]

    def train(self, config: TrainConfig, rng: RngStream,
              on_record: Optional[Callable[[Dict[str, Any]], None]] = None) -> TrainResult:
        """
        Adam on the reverse-KL loss with reparameterized paths.

        Evaluations run every ``eval_every`` iterations (when positive) and once
        at the end, each on ``eval_batch`` paths from an independent substream.

        Raises:
            DivergenceError: on a non-finite loss or gradient, with the iteration index.
        """
        train_rng = rng.substream(0)
        eval_rng = rng.substream(1)
        state = adam_init(self.network.num_parameters, config.learning_rate)
        result = TrainResult()
        started = time.perf_counter()

        def evaluate(iteration: int, loss: Optional[float]):
            report = self.estimate_log_z(config.eval_batch, eval_rng)
            record = {
                'iter': iteration,
                'loss': loss,
                'elbo': report.elbo,
                'ln_z_is': report.ln_z_is,
                'se': report.std_error,
                'seed': rng.seed,
                'wallclock_ms': None if config.deterministic
                else round(1000.0 * (time.perf_counter() - started), 3),
            }
            result.records.append(record)
            if on_record is not None:
                on_record(record)
            self.logger.debug(f"iter {iteration}: elbo={report.elbo:.4f} ln_z={report.ln_z_is:.4f}")

        progress = tqdm(range(config.iterations), desc=self.method, disable=not config.progress)
        for iteration in progress:
            tape = Tape()
            param_vars = [tape.variable(p) for p in self.network.params]
            try:
                traj = self.rollout(self.drift_field(param_vars), config.batch_size, train_rng)
                loss = self.kl_loss(traj)
            except NonFiniteError as exc:
                raise DivergenceError(iteration, str(exc)) from exc
            tape.backward(loss)
            flat_grad = np.concatenate([tape.gradient(v).ravel() for v in param_vars])
            if not np.all(np.isfinite(flat_grad)):
                raise DivergenceError(iteration, "non-finite gradient")
            new_params, state = adam_step(state, self.network.flat_parameters(), flat_grad,
                                          config.learning_rate_at(iteration))
            self.network.load_flat(new_params)
            result.losses.append(float(loss.value))
            result.iterations_run = iteration + 1
            if config.eval_every > 0 and (iteration + 1) % config.eval_every == 0:
                evaluate(iteration + 1, result.losses[-1])
            if config.early_stop and loss_plateaued(result.losses, config.plateau_window,
                                                    config.plateau_tol):
                self.logger.info(f"Loss plateaued after {iteration + 1} iterations")
                result.stopped_early = True
                break
        progress.close()

        if not result.records or result.records[-1]['iter'] != result.iterations_run:
            evaluate(result.iterations_run, result.losses[-1] if result.losses else None)
        return result


class SamplerFactory:
    """
    Registry of sampler classes keyed by method name.

    Concrete samplers register themselves when their module is imported, so
    importing the ``samplers`` package makes every method available.
    """

    _registry: Dict[str, type] = {}

    @classmethod
    def register(cls, name: str, sampler_class: type):
        if not name:
            raise ValueError("Sampler name must be non-empty")
        if not issubclass(sampler_class, Sampler):
            raise TypeError(f"{sampler_class} is not a Sampler")
        cls._registry[name] = sampler_class

    @classmethod
    def get(cls, name: str) -> type:
        if name not in cls._registry:
            raise ConfigError(f"Unknown sampler method: {name}")
        return cls._registry[name]

    @classmethod
    def create(cls, config: RunConfig, target: TargetDensity, rng: RngStream,
               network: Optional[DriftNetwork] = None) -> Sampler:
        """Validate ``config`` for its method and build the sampler with a fresh network."""
        sampler_class = cls.get(config.method)
        sampler_class.validate_config(config)
        if network is None:
            network = DriftNetwork.initialize(sampler_class.architecture(config, target), rng)
        return sampler_class.from_config(config, target, network)

    @classmethod
    def list_available(cls) -> List[str]:
        return sorted(cls._registry)
