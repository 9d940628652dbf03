"""
Drift network
=============

The two-network drift

    f(k, x) = clip(NN1(emb(k), x) + NN2(emb(k)) * clip(score(x), c_in), c_out)

with a sinusoidal step embedding, tanh MLPs and zero-initialised output
layers, so a fresh network has drift exactly zero everywhere. The target score
enters as a constant: it never receives gradients.

``drift_eval`` runs on plain arrays or on tape values (``diffcore.Var``); the
caller decides by passing tape variables as ``params``.

Checkpoint format: one UTF-8 JSON header line followed by the flat parameter
vector as little-endian float64.
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

import diffcore
from diffcore import NonFiniteError, RngStream, value_of
from targets import TargetDensity

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "dds-lab-checkpoint"
MAX_FREQUENCY = 1000.0


@dataclass(frozen=True)
class DriftArchitecture:
    dim: int
    steps: int
    hidden: Tuple[int, ...] = (64, 64)
    emb_dim: int = 64
    inner_clip: float = 1e2
    outer_clip: float = 1e4
    momentum: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'hidden', tuple(int(h) for h in self.hidden))
        if self.dim < 1 or self.steps < 1:
            raise ValueError(f"dim and steps must be positive, got {self.dim}, {self.steps}")
        if self.emb_dim < 2 or self.emb_dim % 2:
            raise ValueError(f"emb_dim must be an even number >= 2, got {self.emb_dim}")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError(f"hidden sizes must be positive, got {self.hidden}")

    @property
    def state_inputs(self) -> int:
        return self.dim * (2 if self.momentum else 1)

    def layer_shapes(self) -> List[Tuple[int, int]]:
        """(fan_in, fan_out) of every dense layer, NN1 first then NN2."""
        shapes = []
        for fan_in in (self.emb_dim + self.state_inputs, self.emb_dim):
            sizes = (fan_in,) + self.hidden + (self.dim,)
            shapes.extend(zip(sizes[:-1], sizes[1:]))
        return shapes

    @property
    def layers_per_net(self) -> int:
        return len(self.hidden) + 1

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['hidden'] = list(self.hidden)
        return data


def time_embedding(k: int, K: int, dim: int = 64) -> np.ndarray:
    """
    Sinusoidal features [sin(w_j k/K), cos(w_j k/K)] with w_j geometric in [1, 1000].
    """
    half = dim // 2
    if half == 1:
        freqs = np.ones(1)
    else:
        freqs = MAX_FREQUENCY ** (np.arange(half) / (half - 1))
    angle = freqs * (float(k) / float(K))
    return np.concatenate([np.sin(angle), np.cos(angle)])


class DriftNetwork:
    """Parameters and forward pass of the two-network drift."""

    def __init__(self, arch: DriftArchitecture, params: Optional[List[np.ndarray]] = None):
        self.arch = arch
        self.logger = logging.getLogger(self.__class__.__name__)
        if params is None:
            params = []
            for fan_in, fan_out in arch.layer_shapes():
                params.extend([np.zeros((fan_in, fan_out)), np.zeros(fan_out)])
        expected = [s for fi, fo in arch.layer_shapes() for s in ((fi, fo), (fo,))]
        if [p.shape for p in params] != expected:
            raise ValueError("Parameter shapes do not match the architecture")
        self.params = [np.asarray(p, dtype=np.float64) for p in params]

    @classmethod
    def initialize(cls, arch: DriftArchitecture, rng: RngStream) -> 'DriftNetwork':
        """Glorot-uniform hidden layers; output layers of both nets exactly zero."""
        params: List[np.ndarray] = []
        per_net = arch.layers_per_net
        for i, (fan_in, fan_out) in enumerate(arch.layer_shapes()):
            if (i + 1) % per_net == 0:
                weight = np.zeros((fan_in, fan_out))
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                weight = limit * (2.0 * rng.uniform(fan_in * fan_out) - 1.0)
                weight = weight.reshape(fan_in, fan_out)
            params.extend([weight, np.zeros(fan_out)])
        net = cls(arch, params)
        net.logger.debug(f"Initialised drift network with {net.num_parameters} parameters")
        return net

    @property
    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params))

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def load_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_parameters:
            raise ValueError(f"Expected {self.num_parameters} parameters, got {flat.size}")
        offset = 0
        for i, p in enumerate(self.params):
            self.params[i] = flat[offset:offset + p.size].reshape(p.shape).copy()
            offset += p.size

    def copy(self) -> 'DriftNetwork':
        return DriftNetwork(self.arch, [p.copy() for p in self.params])

    def __call__(self, k: int, x, score: np.ndarray, momentum=None, params=None):
        return drift_eval(self, k, x, score, momentum=momentum, params=params)


def _mlp(inputs, layers: Sequence):
    h = inputs
    n_layers = len(layers) // 2
    for i in range(n_layers):
        weight, bias = layers[2 * i], layers[2 * i + 1]
        h = diffcore.matmul(h, weight) + bias
        if i < n_layers - 1:
            h = diffcore.tanh(h)
    return h


def drift_eval(net: DriftNetwork, k: int, x, score: np.ndarray, momentum=None, params=None):
    """
    Clipped drift at step index ``k``.

    Args:
        net: The drift network.
        k: Step index in 0..K (0 is allowed for the flow corrector).
        x: States, shape (..., d); array or tape value.
        score: grad log pi(x), treated as a constant.
        momentum: Momenta for the underdamped network, same shape as x.
        params: Optional tape variables replacing ``net.params``.

    Raises:
        NonFiniteError: if x or score contain NaN or infinity.
    """
    arch = net.arch
    layers = net.params if params is None else params
    score = np.asarray(score, dtype=np.float64)
    if not np.all(np.isfinite(value_of(x))):
        raise NonFiniteError('drift_eval', "Non-finite state passed to drift_eval")
    if not np.all(np.isfinite(score)):
        raise NonFiniteError('drift_eval', "Non-finite score passed to drift_eval")
    if arch.momentum and momentum is None:
        raise ValueError("Underdamped drift requires momentum input")

    emb = time_embedding(k, arch.steps, arch.emb_dim)
    split = 2 * arch.layers_per_net
    state = [x, momentum] if arch.momentum else [x]
    out1 = _mlp(diffcore.concat([emb] + state), layers[:split])
    gate = _mlp(emb, layers[split:])
    inner = np.clip(score, -arch.inner_clip, arch.inner_clip)
    return diffcore.clip(out1 + gate * inner, arch.outer_clip)


class DriftField:
    """
    Callable ``(k, y[, momentum]) -> drift`` binding a network to a target score.

    The score is always computed from the plain value of ``y`` so it stays
    detached on the tape.
    """

    def __init__(self, net: DriftNetwork, target: TargetDensity, params=None):
        self.net = net
        self.target = target
        self.params = params

    def __call__(self, k: int, y, momentum=None):
        score = self.target.grad_log_gamma(value_of(y))
        return drift_eval(self.net, k, y, score, momentum=momentum, params=self.params)


def save_checkpoint(path: Union[str, Path], net: DriftNetwork,
                    metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write the JSON header line and the float64 little-endian payload."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        'format': CHECKPOINT_MAGIC,
        'architecture': net.arch.to_dict(),
        'num_parameters': net.num_parameters,
        'metadata': metadata or {},
    }
    payload = net.flat_parameters().astype('<f8').tobytes()
    with open(path, 'wb') as f:
        f.write(json.dumps(header, sort_keys=True).encode('utf-8') + b"\n")
        f.write(payload)
    logger.info(f"Saved checkpoint {path} ({net.num_parameters} parameters)")
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[DriftNetwork, Dict[str, Any]]:
    """Read a checkpoint written by ``save_checkpoint``; returns (network, metadata)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    with open(path, 'rb') as f:
        header_line = f.readline()
        payload = f.read()
    try:
        header = json.loads(header_line.decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"Corrupt checkpoint header in {path}") from exc
    if header.get('format') != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a drift network checkpoint")
    arch_data = dict(header['architecture'])
    arch_data['hidden'] = tuple(arch_data['hidden'])
    net = DriftNetwork(DriftArchitecture(**arch_data))
    flat = np.frombuffer(payload, dtype='<f8').astype(np.float64)
    if flat.size != header['num_parameters']:
        raise ValueError(f"Checkpoint payload holds {flat.size} values, "
                         f"header says {header['num_parameters']}")
    net.load_flat(flat)
    return net, header.get('metadata', {})
