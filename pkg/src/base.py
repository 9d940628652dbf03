"""
Base classes for the dds-lab experiment runner
"""

import logging
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Any, Dict, List, Optional

VERSION = "0.3.0"

METHODS = ('dds', 'pis', 'udmp', 'flow-ode', 'em-ablation')
SCHEDULE_KINDS = ('cosine', 'uniform')
PARAMETRISATIONS = ('rescaled', 'lambda')
DIVERGENCE_MODES = ('auto', 'exact', 'hutchinson')

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Run configuration failed validation."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, iteration: int, reason: str = "non-finite loss"):
        self.iteration = iteration
        self.reason = reason
        super().__init__(f"Training diverged at iteration {iteration}: {reason}")


class RunStatus(Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    DIVERGED = "diverged"
    FAILED = "failed"


@dataclass
class RunConfig:
    """Flat run configuration. ``T`` defaults to 0.05 * K."""
    name: str = "run"
    method: str = "dds"
    target: str = "gaussian"
    target_params: Dict[str, Any] = field(default_factory=dict)
    K: int = 64
    sigma: float = 1.0
    alpha_max: float = 1.0
    T: Optional[float] = None
    s: float = 0.008
    schedule: str = "cosine"
    parametrisation: str = "rescaled"
    mass: Optional[float] = None
    pis_step: str = "uniform"
    hidden: List[int] = field(default_factory=lambda: [64, 64])
    emb_dim: int = 64
    inner_clip: float = 1e2
    outer_clip: float = 1e4
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
    divergence: str = "auto"
    n_probes: int = 1
    seeds: List[int] = field(default_factory=lambda: [0])
    output_dir: Optional[str] = None
    deterministic: bool = False
    progress: bool = False
    preset: Optional[str] = None

    def __post_init__(self):
        if self.T is None and isinstance(self.K, int):
            self.T = 0.05 * self.K

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunConfig':
        """Build and validate a config; unknown keys are rejected."""
        if not isinstance(data, dict):
            raise ConfigError("Run configuration must be a mapping")
        unknown = sorted(set(data) - set(cls.field_names()))
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}")
        try:
            config = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        config._coerce()
        config.validate()
        return config

    def _coerce(self):
        try:
            for key in ('K', 'emb_dim', 'iterations', 'batch_size', 'eval_batch', 'eval_every',
                        'plateau_window', 'n_probes', 'lr_decay_every'):
                setattr(self, key, int(getattr(self, key)))
            if self.T is None:
                self.T = 0.05 * self.K
            for key in ('sigma', 'alpha_max', 'T', 's', 'inner_clip', 'outer_clip', 'learning_rate',
                        'lr_decay', 'plateau_tol'):
                setattr(self, key, float(getattr(self, key)))
            if self.mass is not None:
                self.mass = float(self.mass)
            if isinstance(self.seeds, int):
                self.seeds = [self.seeds]
            self.seeds = [int(s) for s in self.seeds]
            self.hidden = [int(h) for h in self.hidden]
            self.target_params = dict(self.target_params or {})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"Invalid value in configuration: {exc}") from exc

    def validate(self):
        """Generic checks; method-specific checks live on the sampler classes."""
        if self.method not in METHODS:
            raise ConfigError(f"Unknown method: {self.method} (expected one of {', '.join(METHODS)})")
        if self.schedule not in SCHEDULE_KINDS:
            raise ConfigError(f"Unknown schedule kind: {self.schedule}")
        if self.pis_step not in SCHEDULE_KINDS:
            raise ConfigError(f"Unknown PIS step kind: {self.pis_step}")
        if self.parametrisation not in PARAMETRISATIONS:
            raise ConfigError(f"Unknown parametrisation: {self.parametrisation}")
        if self.divergence not in DIVERGENCE_MODES:
            raise ConfigError(f"Unknown divergence mode: {self.divergence}")
        if self.K < 1:
            raise ConfigError(f"K must be at least 1, got {self.K}")
        for key in ('sigma', 'alpha_max', 'T', 'learning_rate', 'lr_decay', 'inner_clip', 'outer_clip'):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be non-negative, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.eval_batch < 2:
            raise ConfigError(f"eval_batch must be at least 2, got {self.eval_batch}")
        if self.n_probes < 1:
            raise ConfigError(f"n_probes must be at least 1, got {self.n_probes}")
        if not self.seeds:
            raise ConfigError("At least one seed is required")
        if any(s < 0 for s in self.seeds):
            raise ConfigError(f"Seeds must be non-negative, got {self.seeds}")
        if not self.hidden:
            raise ConfigError("hidden must list at least one layer size")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class RunInfo:
    """Outcome of one seeded run."""
    seed: int
    status: RunStatus
    started_at: float
    completed_at: Optional[float] = None
    ln_z: Optional[float] = None
    elbo: Optional[float] = None
    std_error: Optional[float] = None
    iterations_run: int = 0
    diverged_at: Optional[int] = None
    message: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['status'] = self.status.value
        return data
