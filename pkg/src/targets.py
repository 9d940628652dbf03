"""
Target Densities
================

Unnormalized target densities gamma with analytic gradients, and CSV dataset
ingestion for the Bayesian logistic regression targets.

Every ``log_gamma`` / ``grad_log_gamma`` is batched: ``x`` has shape ``(..., d)``
and the log density has shape ``(...)``.

Targets are also reachable by name through ``TargetRegistry`` so that run
configs can build them from a ``target`` key plus ``target_params``.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg, special, stats
from scipy.stats import qmc

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
EVIDENCE_CHUNK = 2 ** 16


class DatasetError(ValueError):
    """CSV dataset could not be parsed. ``row``/``column`` are 1-based when known."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[int] = None):
        self.row = row
        self.column = column
        location = ""
        if row is not None:
            location = f"row {row}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(f"{location}{message}")


@dataclass(frozen=True)
class TargetDensity:
    """Unnormalized density gamma = Z * pi on R^dim."""
    name: str
    dim: int
    log_gamma: Callable[[np.ndarray], np.ndarray]
    grad_log_gamma: Callable[[np.ndarray], np.ndarray]
    exact_log_z: Optional[float] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"Target dimension must be positive, got {self.dim}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix U (n x d) with binary labels."""
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        labels = np.asarray(self.labels, dtype=np.float64).ravel()
        if features.shape[0] != labels.size:
            raise ValueError(f"{features.shape[0]} feature rows but {labels.size} labels")
        if labels.size == 0:
            raise ValueError("Dataset is empty")
        if not np.all(np.isfinite(features)):
            raise ValueError("Dataset features must be finite")
        bad = np.flatnonzero((labels != 0.0) & (labels != 1.0))
        if bad.size:
            raise DatasetError(f"label {labels[bad[0]]} outside {{0,1}}", row=int(bad[0]) + 1, column=1)
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'labels', labels)

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])


def _as_batch(x: np.ndarray, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != dim:
        raise ValueError(f"Expected trailing dimension {dim}, got shape {x.shape}")
    return x


def _check_variance(sigma2) -> np.ndarray:
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma2 <= 0):
        raise ValueError(f"Variance must be positive, got {sigma2}")
    return sigma2


# ---------------------------------------------------------------------------
# Analytic targets
# ---------------------------------------------------------------------------

def gaussian_target(mu: Sequence[float], sigma2: Union[float, Sequence[float]] = 1.0) -> TargetDensity:
    """gamma(x) = exp(-sum (x - mu)^2 / (2 sigma2)); ln Z = sum 0.5 ln(2 pi sigma2)."""
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    dim = mu.size
    sigma2 = np.broadcast_to(_check_variance(sigma2), (dim,)).copy()

    def log_gamma(x):
        diff = _as_batch(x, dim) - mu
        return -0.5 * np.sum(diff * diff / sigma2, axis=-1)

    def grad_log_gamma(x):
        return -(_as_batch(x, dim) - mu) / sigma2

    return TargetDensity('gaussian', dim, log_gamma, grad_log_gamma,
                         float(0.5 * np.sum(np.log(2.0 * np.pi * sigma2))))


def funnel_target(dim: int = 10, scale2: float = 9.0) -> TargetDensity:
    """Neal's funnel: x1 ~ N(0, 9), x_i | x1 ~ N(0, exp(x1)). Normalized, ln Z = 0."""
    if dim < 2:
        raise ValueError(f"Funnel needs at least 2 dimensions, got {dim}")
    n_rest = dim - 1

    def log_gamma(x):
        x = _as_batch(x, dim)
        x1, rest = x[..., 0], x[..., 1:]
        head = -0.5 * (np.log(2.0 * np.pi * scale2) + x1 * x1 / scale2)
        tail = -0.5 * n_rest * (LOG_2PI + x1) - 0.5 * np.exp(-x1) * np.sum(rest * rest, axis=-1)
        return head + tail

    def grad_log_gamma(x):
        x = _as_batch(x, dim)
        x1, rest = x[..., 0], x[..., 1:]
        inv = np.exp(-x1)
        g = np.empty_like(x)
        g[..., 0] = -x1 / scale2 - 0.5 * n_rest + 0.5 * inv * np.sum(rest * rest, axis=-1)
        g[..., 1:] = -rest * inv[..., None]
        return g

    return TargetDensity('funnel', dim, log_gamma, grad_log_gamma, 0.0)


def mixture_target(means: Sequence[Sequence[float]], weights: Optional[Sequence[float]] = None,
                   sigma2: float = 1.0) -> TargetDensity:
    """gamma(x) = sum_j w_j N(x; mu_j, sigma2 I); ln Z = ln sum w_j."""
    if len(means) == 0:
        raise ValueError("Mixture needs at least one component")
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    n_comp, dim = means.shape
    weights = np.ones(n_comp) if weights is None else np.asarray(weights, dtype=np.float64)
    if weights.shape != (n_comp,):
        raise ValueError(f"{weights.size} weights for {n_comp} components")
    if np.any(weights <= 0):
        raise ValueError("Mixture weights must be positive")
    sigma2 = float(_check_variance(sigma2))
    log_w = np.log(weights) - 0.5 * dim * np.log(2.0 * np.pi * sigma2)

    def _component_logs(x):
        diff = _as_batch(x, dim)[..., None, :] - means
        return log_w - 0.5 * np.sum(diff * diff, axis=-1) / sigma2, diff

    def log_gamma(x):
        logs, _ = _component_logs(x)
        return special.logsumexp(logs, axis=-1)

    def grad_log_gamma(x):
        logs, diff = _component_logs(x)
        resp = special.softmax(logs, axis=-1)
        return -np.sum(resp[..., None] * diff, axis=-2) / sigma2

    return TargetDensity('mixture', dim, log_gamma, grad_log_gamma, float(np.log(weights.sum())))


# ---------------------------------------------------------------------------
# Bayesian models
# ---------------------------------------------------------------------------

def logistic_regression_target(data: Dataset, sigma_w2: float = 1.0,
                               intercept: bool = False) -> TargetDensity:
    """
    Bayesian logistic regression posterior, unnormalized.

    Args:
        data: Dataset with labels in {0, 1}.
        sigma_w2: Prior variance of every weight.
        intercept: Append a constant feature so the last weight is a bias.
    """
    sigma_w2 = float(_check_variance(sigma_w2))
    U = data.features
    if intercept:
        U = np.hstack([U, np.ones((data.n, 1))])
    y = data.labels
    dim = U.shape[1]
    prior_const = -0.5 * dim * np.log(2.0 * np.pi * sigma_w2)

    def log_gamma(x):
        x = _as_batch(x, dim)
        z = x @ U.T
        loglik = np.sum(y * special.log_expit(z) + (1.0 - y) * special.log_expit(-z), axis=-1)
        return prior_const - 0.5 * np.sum(x * x, axis=-1) / sigma_w2 + loglik

    def grad_log_gamma(x):
        x = _as_batch(x, dim)
        z = x @ U.T
        return (y - special.expit(z)) @ U - x / sigma_w2

    return TargetDensity('logistic', dim, log_gamma, grad_log_gamma, None)


BROWNIAN_STEPS = 30
BROWNIAN_OBSERVED = tuple(range(0, 10)) + tuple(range(19, 30))


def brownian_mask(n_steps: int = BROWNIAN_STEPS) -> np.ndarray:
    """Observed indices {1..10} and {20..30} (1-based) of the 30-step walk."""
    mask = np.zeros(n_steps, dtype=bool)
    mask[[i for i in BROWNIAN_OBSERVED if i < n_steps]] = True
    return mask


def brownian_synthetic_observations(seed: int = 0, innovation_scale: float = 0.1,
                                    observation_scale: float = 0.15,
                                    n_steps: int = BROWNIAN_STEPS) -> np.ndarray:
    """Draw a random walk and noisy observations of it (all n_steps entries)."""
    gen = np.random.default_rng(seed)
    walk = np.cumsum(innovation_scale * gen.standard_normal(n_steps))
    return walk + observation_scale * gen.standard_normal(n_steps)


def kalman_log_evidence(obs: np.ndarray, mask: np.ndarray, innovation_scale: float,
                        observation_scale: float) -> float:
    """log p(y_observed) for the Gaussian random walk with fixed scales."""
    q = innovation_scale ** 2
    r = observation_scale ** 2
    mean, var, total = 0.0, q, 0.0
    for i, (value, seen) in enumerate(zip(obs, mask)):
        if i > 0:
            var += q
        if seen:
            s = var + r
            resid = value - mean
            total += -0.5 * (LOG_2PI + np.log(s) + resid * resid / s)
            gain = var / s
            mean += gain * resid
            var *= (1.0 - gain)
    return float(total)


def brownian_target(obs: Sequence[float], mask: Optional[Sequence[bool]] = None,
                    prior_scale: float = 2.0,
                    fixed_scales: Optional[Tuple[float, float]] = None) -> TargetDensity:
    """
    Brownian motion with Gaussian observation noise.

    State: 30 latent positions followed by the log innovation scale and the
    log observation scale (d = 32). Scales are standard deviations with
    LogNormal(0, prior_scale) priors. With ``fixed_scales`` the two
    hyperparameters are removed (d = 30) and the Kalman evidence becomes the
    exact ln Z.
    """
    obs = np.asarray(obs, dtype=np.float64).ravel()
    n_steps = obs.size
    mask = brownian_mask(n_steps) if mask is None else np.asarray(mask, dtype=bool).ravel()
    if mask.size != n_steps:
        raise ValueError(f"Mask length {mask.size} does not match {n_steps} observations")
    if not mask.any():
        raise ValueError("Mask must mark at least one observed index")
    obs_masked = np.where(mask, obs, 0.0)
    n_obs = int(mask.sum())
    p2 = prior_scale ** 2

    def innovations(x):
        return np.diff(x, axis=-1, prepend=0.0)

    def walk_terms(x, log_inn, log_obs):
        e = innovations(x)
        r = (obs_masked - x) * mask
        inn_prec = np.exp(-2.0 * log_inn)
        obs_prec = np.exp(-2.0 * log_obs)
        value = (-0.5 * n_steps * LOG_2PI - n_steps * log_inn
                 - 0.5 * inn_prec * np.sum(e * e, axis=-1)
                 - 0.5 * n_obs * LOG_2PI - n_obs * log_obs
                 - 0.5 * obs_prec * np.sum(r * r, axis=-1))
        return value, e, r, inn_prec, obs_prec

    def latent_grad(e, r, inn_prec, obs_prec):
        # d/dx_j of -0.5 sum e_i^2: -e_j + e_{j+1}
        nxt = np.concatenate([e[..., 1:], np.zeros_like(e[..., :1])], axis=-1)
        return inn_prec[..., None] * (nxt - e) + obs_prec[..., None] * r

    if fixed_scales is not None:
        inn_scale, obs_scale = (float(v) for v in fixed_scales)
        if inn_scale <= 0 or obs_scale <= 0:
            raise ValueError(f"Scales must be positive, got {fixed_scales}")
        log_inn, log_obs = np.log(inn_scale), np.log(obs_scale)

        def log_gamma(x):
            x = _as_batch(x, n_steps)
            value, *_ = walk_terms(x, log_inn, log_obs)
            return value

        def grad_log_gamma(x):
            x = _as_batch(x, n_steps)
            _, e, r, inn_prec, obs_prec = walk_terms(x, log_inn, log_obs)
            shape = x.shape[:-1]
            return latent_grad(e, r, np.full(shape, inn_prec), np.full(shape, obs_prec))

        return TargetDensity('brownian_fixed', n_steps, log_gamma, grad_log_gamma,
                             kalman_log_evidence(obs, mask, inn_scale, obs_scale))

    dim = n_steps + 2

    def log_gamma(x):
        x = _as_batch(x, dim)
        latents, log_inn, log_obs = x[..., :n_steps], x[..., n_steps], x[..., n_steps + 1]
        value, *_ = walk_terms(latents, log_inn, log_obs)
        prior = -LOG_2PI - np.log(p2) - 0.5 * (log_inn ** 2 + log_obs ** 2) / p2
        return value + prior

    def grad_log_gamma(x):
        x = _as_batch(x, dim)
        latents, log_inn, log_obs = x[..., :n_steps], x[..., n_steps], x[..., n_steps + 1]
        _, e, r, inn_prec, obs_prec = walk_terms(latents, log_inn, log_obs)
        g = np.empty_like(x)
        g[..., :n_steps] = latent_grad(e, r, inn_prec, obs_prec)
        g[..., n_steps] = -n_steps + inn_prec * np.sum(e * e, axis=-1) - log_inn / p2
        g[..., n_steps + 1] = -n_obs + obs_prec * np.sum(r * r, axis=-1) - log_obs / p2
        return g

    return TargetDensity('brownian', dim, log_gamma, grad_log_gamma, None)


def lgcp_covariance(grid_side: int, sigma2: float = 1.91, beta: float = 1.0 / 33.0) -> np.ndarray:
    """Exponential kernel sigma2 * exp(-|u - v| / (M beta)) on grid-index coordinates."""
    idx = np.arange(grid_side, dtype=np.float64)
    points = np.stack(np.meshgrid(idx, idx, indexing='ij'), axis=-1).reshape(-1, 2)
    dist = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    return sigma2 * np.exp(-dist / (grid_side * beta))


def lgcp_synthetic_counts(grid_side: int, seed: int = 0, sigma2: float = 1.91,
                          beta: float = 1.0 / 33.0, mean: Optional[float] = None,
                          offset: Optional[float] = None) -> np.ndarray:
    """Poisson counts from one draw of the latent Gaussian field."""
    dim = grid_side * grid_side
    mean = np.log(126.0) - 0.5 * sigma2 if mean is None else mean
    offset = 1.0 / dim if offset is None else offset
    gen = np.random.default_rng(seed)
    chol = linalg.cholesky(lgcp_covariance(grid_side, sigma2, beta), lower=True)
    field = mean + chol @ gen.standard_normal(dim)
    return gen.poisson(offset * np.exp(field)).astype(np.float64)


def lgcp_log_evidence(mean: float, covariance: np.ndarray, offset: float, counts: Sequence[float],
                      log2_points: int = 20, seed: int = 0) -> float:
    """
    ln Z of an LGCP by scrambled Sobol importance sampling from the Gaussian prior.

    A loose oracle for small grids only; the prior proposal degrades quickly with d.
    """
    cov = np.asarray(covariance, dtype=np.float64)
    y = np.asarray(counts, dtype=np.float64).ravel()
    dim = cov.shape[0]
    chol = linalg.cholesky(cov, lower=True)
    n = 2 ** int(log2_points)
    chunk = min(n, EVIDENCE_CHUNK)
    sobol = qmc.Sobol(d=dim, scramble=True, seed=seed)
    partial = []
    for _ in range(n // chunk):
        x = mean + stats.norm.ppf(sobol.random(chunk)) @ chol.T
        partial.append(special.logsumexp(x @ y - offset * np.sum(np.exp(x), axis=-1)))
    log_z = float(special.logsumexp(partial) - np.log(n))
    logger.debug(f"LGCP evidence over {n} Sobol points: {log_z:.4f}")
    return log_z


def lgcp_target(grid_side: int = 8, mean: Optional[float] = None, sigma2: float = 1.91,
                beta: float = 1.0 / 33.0, offset: Optional[float] = None,
                counts: Optional[Sequence[float]] = None, covariance: Optional[np.ndarray] = None,
                seed: int = 0, evidence_points: Optional[int] = None) -> TargetDensity:
    """
    Log Gaussian Cox process on an M x M grid.

    log gamma(x) = log N(x; mean, K) + sum_i (x_i y_i - a exp(x_i)).
    Counts default to a seeded synthetic draw from the model itself. With
    ``evidence_points`` (log2 of the Sobol sample size) ``exact_log_z`` holds the
    quasi-Monte Carlo evidence.

    Raises:
        ValueError: if M < 2 or the covariance is not positive definite.
    """
    if grid_side < 2:
        raise ValueError(f"Grid side must be at least 2, got {grid_side}")
    dim = grid_side * grid_side
    mean = np.log(126.0) - 0.5 * sigma2 if mean is None else float(mean)
    offset = 1.0 / dim if offset is None else float(offset)
    if covariance is None:
        cov = lgcp_covariance(grid_side, sigma2, beta)
    else:
        cov = np.asarray(covariance, dtype=np.float64)
    if cov.shape != (dim, dim):
        raise ValueError(f"Covariance shape {cov.shape} does not match grid dimension {dim}")
    try:
        factor = linalg.cho_factor(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError(f"LGCP covariance is not positive definite: {exc}") from exc
    precision = linalg.cho_solve(factor, np.eye(dim))
    log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
    if counts is None:
        counts = lgcp_synthetic_counts(grid_side, seed, sigma2, beta, mean, offset)
    y = np.asarray(counts, dtype=np.float64).ravel()
    if y.size != dim:
        raise ValueError(f"{y.size} counts for a {grid_side}x{grid_side} grid")
    norm_const = -0.5 * (dim * LOG_2PI + log_det)

    def log_gamma(x):
        x = _as_batch(x, dim)
        diff = x - mean
        quad = np.einsum("...i,ij,...j->...", diff, precision, diff)
        return norm_const - 0.5 * quad + np.sum(x * y - offset * np.exp(x), axis=-1)

    def grad_log_gamma(x):
        x = _as_batch(x, dim)
        return -(x - mean) @ precision + y - offset * np.exp(x)

    exact = None
    if evidence_points is not None:
        exact = lgcp_log_evidence(mean, cov, offset, y, evidence_points, seed)
    return TargetDensity('lgcp', dim, log_gamma, grad_log_gamma, exact)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def load_csv_dataset(path: Union[str, Path], standardize: bool = True) -> Dataset:
    """
    Load a header-less ``label,feature_1,...`` CSV file.

    Features are standardized per column to zero mean and unit variance;
    constant columns become zeros.

    Raises:
        FileNotFoundError: if the file does not exist.
        DatasetError: on empty files, unparseable cells or non-binary labels.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset file not found: {path}")
    try:
        raw = pd.read_csv(path, header=None, dtype=str, skip_blank_lines=True,
                          skipinitialspace=True, encoding='utf-8')
    except pd.errors.EmptyDataError as exc:
        raise DatasetError(f"empty dataset file {path}") from exc
    except pd.errors.ParserError as exc:
        raise DatasetError(f"malformed CSV in {path}: {exc}") from exc
    if raw.empty:
        raise DatasetError(f"empty dataset file {path}")
    if raw.shape[1] < 2:
        raise DatasetError("expected a label column followed by at least one feature", row=1)

    numeric = raw.apply(lambda col: pd.to_numeric(col.str.strip(), errors='coerce'))
    bad = numeric.isna().to_numpy()
    if bad.any():
        r, c = (int(v) for v in np.argwhere(bad)[0])
        cell = raw.iat[r, c]
        reason = "missing value" if pd.isna(cell) else f"cannot parse {cell!r} as a number"
        raise DatasetError(reason, row=r + 1, column=c + 1)

    values = numeric.to_numpy(dtype=np.float64)
    labels, features = values[:, 0], values[:, 1:]
    bad_labels = np.flatnonzero((labels != 0.0) & (labels != 1.0))
    if bad_labels.size:
        r = int(bad_labels[0])
        raise DatasetError(f"label {labels[r]} outside {{0,1}}", row=r + 1, column=1)
    if standardize:
        centred = features - features.mean(axis=0)
        scale = features.std(axis=0)
        features = centred / np.where(scale > 0, scale, 1.0)
    logger.info(f"Loaded dataset {path.name}: {features.shape[0]} rows, {features.shape[1]} features")
    return Dataset(features, labels)


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

class TargetRegistry:
    """
    Name -> builder registry used by run configs.

    Builders take ``(params, base_dir)`` where ``params`` is the ``target_params``
    mapping of a run config and ``base_dir`` resolves relative dataset paths.
    """

    _registry: Dict[str, Callable[[Dict[str, Any], Path], TargetDensity]] = {}

    @classmethod
    def register(cls, name: str, builder: Callable[[Dict[str, Any], Path], TargetDensity]):
        cls._registry[name] = builder

    @classmethod
    def create(cls, name: str, params: Optional[Dict[str, Any]] = None,
               base_dir: Union[str, Path] = '.') -> TargetDensity:
        if name not in cls._registry:
            raise ValueError(f"Unknown target type: {name}")
        return cls._registry[name](dict(params or {}), Path(base_dir))

    @classmethod
    def list_available(cls) -> List[str]:
        return sorted(cls._registry)


def _build_gaussian(params, base_dir):
    return gaussian_target(params.get('mu', [0.0, 0.0]), params.get('sigma2', 1.0))


def _build_funnel(params, base_dir):
    return funnel_target(params.get('dim', 10), params.get('scale2', 9.0))


def _build_mixture(params, base_dir):
    return mixture_target(params.get('means', [[-2.0, 0.0], [2.0, 0.0]]),
                          params.get('weights'), params.get('sigma2', 1.0))


def _build_logistic(params, base_dir):
    if 'dataset' not in params:
        raise ValueError("Logistic regression target requires target_params.dataset")
    path = Path(params['dataset'])
    if not path.is_absolute():
        path = base_dir / path
    return logistic_regression_target(load_csv_dataset(path), params.get('sigma_w2', 1.0),
                                      params.get('intercept', False))


def _build_brownian(params, base_dir):
    obs = params.get('observations')
    if obs is None:
        obs = brownian_synthetic_observations(params.get('seed', 0))
    fixed = params.get('fixed_scales')
    return brownian_target(obs, params.get('mask'), params.get('prior_scale', 2.0),
                           tuple(fixed) if fixed is not None else None)


def _build_lgcp(params, base_dir):
    return lgcp_target(params.get('grid_side', 8), params.get('mean'), params.get('sigma2', 1.91),
                       params.get('beta', 1.0 / 33.0), params.get('offset'), params.get('counts'),
                       seed=params.get('seed', 0), evidence_points=params.get('evidence_points'))


TargetRegistry.register('gaussian', _build_gaussian)
TargetRegistry.register('funnel', _build_funnel)
TargetRegistry.register('mixture', _build_mixture)
TargetRegistry.register('logistic', _build_logistic)
TargetRegistry.register('brownian', _build_brownian)
TargetRegistry.register('lgcp', _build_lgcp)
