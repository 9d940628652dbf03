"""
Dense numerics core
===================

Deterministic random streams, a vector-level reverse-mode tape, and the Adam
optimizer used to train every drift network in the package.

The tape records batched numpy operations. Operations are written against the
module-level helpers (``tanh``, ``sum_sq``, ``concat`` ...) which dispatch on
their argument: plain ``np.ndarray`` inputs are evaluated eagerly, ``Var``
inputs are recorded on the owning tape. The same forward code therefore serves
both sampling (no gradients) and training (gradients w.r.t. parameters).

Examples:
--------

    tape = Tape()
    x = tape.variable(np.array([3.0]))
    y = sum_sq(x)
    tape.backward(y)
    tape.gradient(x)          # array([6.])

    g = grad(lambda v: sum_sq(v @ A.T), x0)
"""

from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special


class NonFiniteError(ArithmeticError):
    """A forward value, drift or density evaluated to NaN or infinity."""

    def __init__(self, op: str, message: Optional[str] = None):
        self.op = op
        super().__init__(message or f"Non-finite value produced by '{op}'")


class UnsupportedOperationError(TypeError):
    """Operation outside the op set the tape can differentiate."""


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

class RngStream:
    """
    Counter-based standard-normal stream.

    Uniforms come from a Philox generator keyed by ``(seed, stream)``; normals are
    produced with Box-Muller. A spare variate is cached between calls so that
    ``normal(3); normal(3)`` yields exactly the same numbers as ``normal(6)``.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0:
            raise ValueError(f"Seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.stream = int(stream)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        self._generator = np.random.Generator(np.random.Philox(seq))
        self._spare = np.empty(0)

    def substream(self, index: int) -> 'RngStream':
        """Independent stream derived from the same seed."""
        return RngStream(self.seed, stream=self.stream * 1_000_003 + index + 1)

    def uniform(self, n: int) -> np.ndarray:
        """n uniforms on [0, 1)."""
        return self._generator.random(n)

    def standard_normal(self, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError(f"Sample count must be at least 1, got {n}")
        take = min(n, self._spare.size)
        head, self._spare = self._spare[:take], self._spare[take:]
        remaining = n - take
        if remaining == 0:
            return head.copy()
        pairs = (remaining + 1) // 2
        u = self._generator.random(2 * pairs).reshape(pairs, 2)
        u1 = 1.0 - u[:, 0]  # (0, 1]
        u2 = u[:, 1]
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        fresh = np.empty(2 * pairs)
        fresh[0::2] = radius * np.cos(angle)
        fresh[1::2] = radius * np.sin(angle)
        self._spare = fresh[remaining:]
        return np.concatenate([head, fresh[:remaining]])

    def normal(self, shape: Union[int, Tuple[int, ...]]) -> np.ndarray:
        """Standard normals reshaped to ``shape`` (row-major fill)."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        return self.standard_normal(int(np.prod(shape))).reshape(shape)

    def rademacher(self, shape: Union[int, Tuple[int, ...]]) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        u = self.uniform(int(np.prod(shape))).reshape(shape)
        return np.where(u < 0.5, -1.0, 1.0)


def sample_std_normal(rng: RngStream, n: int) -> np.ndarray:
    """n independent standard normal variates drawn from ``rng``."""
    return rng.standard_normal(n)


def logsumexp(v) -> float:
    """Overflow-safe log of the sum of exponentials of a nonempty vector."""
    arr = np.asarray(v, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("logsumexp of an empty vector is undefined")
    return float(special.logsumexp(arr))


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Var:
    """A value recorded on a ``Tape``."""

    # Makes numpy defer binary operators to the reflected Var methods.
    __array_ufunc__ = None

    def __init__(self, tape: 'Tape', value, parents: Sequence['Var'] = (),
                 backward: Optional[Callable[[np.ndarray], Tuple]] = None,
                 op: str = "leaf"):
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(op)
        self.tape = tape
        self.value = value
        self.parents = tuple(parents)
        self.backward = backward
        self.op = op
        self.index = tape._record(self)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.value.shape})"

    # arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return _binary(self, other, "add", np.add,
                       lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, "sub", np.subtract,
                       lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        return _binary(other, self, "sub", np.subtract,
                       lambda g, a, b: g, lambda g, a, b: -g)

    def __mul__(self, other):
        return _binary(self, other, "mul", np.multiply,
                       lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise UnsupportedOperationError("Division by a tape value is not supported")
        return self * (1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return Var(self.tape, -self.value, (self,), lambda g: (-g,), "neg")

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, power):
        raise UnsupportedOperationError("Powers are not part of the tape op set; use sum_sq or mul")

    def __getitem__(self, item):
        raise UnsupportedOperationError("Indexing tape values is not supported; use concat/split-free forms")


def _tape_of(*values) -> Optional['Tape']:
    for v in values:
        if isinstance(v, Var):
            return v.tape
    return None


def _value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def value_of(x) -> np.ndarray:
    """Plain array behind a tape value (or the array itself)."""
    return _value(x)


def _binary(a, b, op, fn, grad_a, grad_b) -> Var:
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    out = fn(av, bv)
    parents, grads = [], []
    if isinstance(a, Var):
        parents.append(a)
        grads.append(grad_a)
    if isinstance(b, Var):
        parents.append(b)
        grads.append(grad_b)

    def backward(g):
        return tuple(gf(g, av, bv) for gf in grads)

    return Var(tape, out, parents, backward, op)


def matmul(a, b):
    """Matrix product; one side may be a constant array."""
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    if tape is None:
        return av @ bv
    if bv.ndim != 2 or av.ndim not in (1, 2):
        raise UnsupportedOperationError(f"matmul expects (n,) or (n,i) @ (i,o), got {av.shape} @ {bv.shape}")
    parents, grads = [], []
    if isinstance(a, Var):
        parents.append(a)
        grads.append(lambda g: g @ bv.T)
    if isinstance(b, Var):
        parents.append(b)
        if av.ndim == 1:
            grads.append(lambda g: np.outer(av, g))
        else:
            grads.append(lambda g: av.T @ g)

    def backward(g):
        return tuple(gf(g) for gf in grads)

    return Var(tape, av @ bv, parents, backward, "matmul")


def _unary(x, op, fn, dfn):
    """dfn(g, x_value, out_value) -> parent gradient."""
    if not isinstance(x, Var):
        return fn(np.asarray(x, dtype=np.float64))
    xv = x.value
    out = fn(xv)
    return Var(x.tape, out, (x,), lambda g: (dfn(g, xv, out),), op)


def tanh(x):
    return _unary(x, "tanh", np.tanh, lambda g, xv, out: g * (1.0 - out * out))


def sigmoid(x):
    return _unary(x, "sigmoid", special.expit, lambda g, xv, out: g * out * (1.0 - out))


def exp(x):
    return _unary(x, "exp", np.exp, lambda g, xv, out: g * out)


def log(x):
    return _unary(x, "log", np.log, lambda g, xv, out: g / xv)


def clip(x, bound: float):
    """Elementwise clip to [-bound, bound]; zero gradient where saturated."""
    def dclip(g, xv, out):
        return g * ((xv > -bound) & (xv < bound))

    return _unary(x, "clip", lambda v: np.clip(v, -bound, bound), dclip)


def sum_all(x, axis: Optional[int] = None):
    """Sum over ``axis`` (all axes when None)."""
    if not isinstance(x, Var):
        return np.sum(x, axis=axis)
    shape = x.value.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Var(x.tape, np.sum(x.value, axis=axis), (x,), backward, "sum")


def mean(x):
    n = _value(x).size
    return sum_all(x) * (1.0 / n)


def sum_sq(x):
    """Squared Euclidean norm over the last axis."""
    if not isinstance(x, Var):
        return np.sum(x * x, axis=-1)
    xv = x.value
    return Var(x.tape, np.sum(xv * xv, axis=-1), (x,),
               lambda g: (2.0 * g[..., None] * xv,), "sum_sq")


def dot(x, eps: np.ndarray):
    """Row-wise inner product with a constant array."""
    if not isinstance(x, Var):
        return np.sum(x * eps, axis=-1)
    return sum_all(x * eps, axis=-1)


def concat(parts: Sequence, axis: int = -1):
    """Concatenate along the last axis after broadcasting leading dimensions."""
    values = [_value(p) for p in parts]
    lead = np.broadcast_shapes(*[v.shape[:-1] for v in values])
    values = [np.broadcast_to(v, lead + v.shape[-1:]) for v in values]
    out = np.concatenate(values, axis=-1)
    tape = _tape_of(*parts)
    if tape is None:
        return out
    widths = np.cumsum([v.shape[-1] for v in values])[:-1]
    var_slots = [i for i, p in enumerate(parts) if isinstance(p, Var)]

    def backward(g):
        pieces = np.split(g, widths, axis=-1)
        return tuple(pieces[i] for i in var_slots)

    return Var(tape, out, [parts[i] for i in var_slots], backward, "concat")


def apply(x, fn: Callable[[np.ndarray], np.ndarray],
          vjp: Callable[[np.ndarray, np.ndarray], np.ndarray], op: str = "custom"):
    """
    Custom primitive with a user-supplied vector-Jacobian product.

    ``vjp(g, x_value)`` must return the gradient w.r.t. ``x`` given the output
    cotangent ``g``.
    """
    if not isinstance(x, Var):
        return fn(np.asarray(x, dtype=np.float64))
    xv = x.value
    return Var(x.tape, fn(xv), (x,), lambda g: (vjp(g, xv),), op)


class Tape:
    """Wengert list of ``Var`` nodes in creation (topological) order."""

    def __init__(self):
        self.nodes: List[Var] = []
        self._grads: Optional[List[Optional[np.ndarray]]] = None

    def _record(self, var: Var) -> int:
        self.nodes.append(var)
        return len(self.nodes) - 1

    def variable(self, value) -> Var:
        return Var(self, np.array(value, dtype=np.float64), op="leaf")

    def backward(self, output: Var, seed: Optional[np.ndarray] = None) -> None:
        """Reverse sweep from ``output``; each node is visited once."""
        if output.tape is not self:
            raise ValueError("Output belongs to a different tape")
        grads: List[Optional[np.ndarray]] = [None] * len(self.nodes)
        if seed is None:
            grads[output.index] = np.ones_like(output.value)
        else:
            grads[output.index] = np.asarray(seed, dtype=np.float64)
        for node in reversed(self.nodes[:output.index + 1]):
            g = grads[node.index]
            if g is None or node.backward is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                pg = _unbroadcast(np.asarray(pg, dtype=np.float64), parent.value.shape)
                if grads[parent.index] is None:
                    grads[parent.index] = pg
                else:
                    grads[parent.index] = grads[parent.index] + pg
        self._grads = grads

    def gradient(self, var: Var) -> np.ndarray:
        if self._grads is None:
            raise RuntimeError("backward() has not been run on this tape")
        g = self._grads[var.index]
        return np.zeros_like(var.value) if g is None else g


def grad(f: Callable[[Var], Var], x) -> np.ndarray:
    """Exact reverse-mode gradient of the scalar program ``f`` at ``x``."""
    tape = Tape()
    xv = tape.variable(x)
    out = f(xv)
    if not isinstance(out, Var):
        return np.zeros_like(xv.value)
    if out.value.size != 1:
        raise ValueError(f"grad expects a scalar output, got shape {out.value.shape}")
    tape.backward(out)
    return tape.gradient(xv)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    """Moment accumulators and hyperparameters of one Adam optimizer."""
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(n_params: int, learning_rate: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(m=np.zeros(n_params), v=np.zeros(n_params),
                     learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray,
              learning_rate: Optional[float] = None) -> Tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Returns new parameters and state."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(
            f"Shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    lr = state.learning_rate if learning_rate is None else learning_rate
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, step=step)
