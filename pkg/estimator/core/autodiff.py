"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` is immutable. Tensors created from plain data are
constants; a tensor becomes *tracked* when it is a leaf watched by a
:class:`Tape` or the result of an op with at least one tracked input. Every
op goes through :func:`record_op`, which evaluates the forward rule, checks
the result for NaN/Inf and, when a tape is involved, appends a node holding
what the backward rule needs.

There is no global graph: a tape is created per rollout, parameters are
attached to it through :meth:`ParameterSet.attach`, and
:meth:`Tape.backward` consumes it.
"""

import logging
from collections.abc import Callable, Iterator, Mapping
from dataclasses import dataclass, field
from numbers import Real

import numpy as np
from scipy.linalg import solve_triangular

from estimator.conf import velest_setting
from estimator.exceptions import (
    NonFiniteError,
    NotPositiveDefiniteError,
    NotSymmetricError,
    ShapeError,
    TapeError,
    UnsupportedOpError,
)

logger = logging.getLogger(__name__)


class Tensor:
    __slots__ = ("values", "node_id", "tape")

    # let numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, values, node_id=None, tape=None):
        array = np.array(values, dtype=np.float64)
        if not np.isfinite(array).all():
            raise NonFiniteError("tensor values must be finite")
        array.setflags(write=False)
        self.values = array
        self.node_id = node_id
        self.tape = tape

    @classmethod
    def _wrap(cls, array, node_id=None, tape=None):
        tensor = cls.__new__(cls)
        array = np.asarray(array, dtype=np.float64)
        array.setflags(write=False)
        tensor.values = array
        tensor.node_id = node_id
        tensor.tape = tape
        return tensor

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    @property
    def tracked(self):
        return self.node_id is not None

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.values

    def item(self):
        return float(self.values)

    def __repr__(self):
        flag = f", node={self.node_id}" if self.tracked else ""
        return f"Tensor({self.values!r}{flag})"

    def __iter__(self):
        if self.ndim == 0:
            raise TypeError("iteration over a 0-d tensor")
        for i in range(self.shape[0]):
            yield self[i]

    def __getitem__(self, key):
        return index(self, key)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        if isinstance(other, Real):
            return scale(self, float(other))
        return hadamard(self, other)

    def __rmul__(self, other):
        if isinstance(other, Real):
            return scale(self, float(other))
        return hadamard(other, self)

    def __truediv__(self, other):
        if isinstance(other, Real):
            return scale(self, 1.0 / float(other))
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


@dataclass
class _Node:
    kind: str
    inputs: tuple
    backward: Callable | None
    saved: tuple
    attrs: dict
    name: str | None = None


class Tape:
    """Ordered record of the ops of one rollout.

    Nodes are appended as ops execute, so every node's inputs precede it.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._leaves: dict[str, int] = {}
        self._leaf_shapes: dict[str, tuple] = {}
        self.visits = 0
        self.consumed = False

    def __len__(self):
        return len(self._nodes)

    def watch(self, name, values):
        """Register a named leaf and return it as a tracked tensor."""
        self._ensure_open()
        if name in self._leaves:
            raise TapeError(f"leaf {name!r} already watched on this tape")
        tensor = as_tensor(values)
        node_id = self._append(_Node("leaf", (), None, (), {}, name))
        self._leaves[name] = node_id
        self._leaf_shapes[name] = tensor.shape
        return Tensor._wrap(tensor.values, node_id, self)

    def _append(self, node):
        self._nodes.append(node)
        return len(self._nodes) - 1

    def _ensure_open(self):
        if self.consumed:
            raise TapeError("tape was already consumed by a backward pass")

    def backward(self, loss):
        """Return d(loss)/d(leaf) for every watched leaf, keyed by name.

        Leaves the loss does not depend on get zeros. The tape is consumed.
        """
        self._ensure_open()
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise TapeError("loss is not tracked on this tape")
        if loss.shape != ():
            raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")

        grads: list[np.ndarray | None] = [None] * len(self._nodes)
        grads[loss.node_id] = np.ones(())
        self.visits = 0
        for node_id in range(len(self._nodes) - 1, -1, -1):
            self.visits += 1
            grad = grads[node_id]
            node = self._nodes[node_id]
            if grad is None or node.backward is None:
                continue
            input_grads = node.backward(grad, *node.saved, **node.attrs)
            for input_id, input_grad in zip(node.inputs, input_grads):
                if input_id is None or input_grad is None:
                    continue
                if grads[input_id] is None:
                    grads[input_id] = np.array(input_grad, dtype=np.float64)
                else:
                    grads[input_id] = grads[input_id] + input_grad

        result = {}
        for name, node_id in self._leaves.items():
            grad = grads[node_id]
            result[name] = np.zeros(self._leaf_shapes[name]) if grad is None else grad
        self.consumed = True
        self._nodes = []
        return result


def backward(loss):
    """Run the backward pass of the tape ``loss`` was recorded on."""
    if not isinstance(loss, Tensor) or loss.tape is None:
        raise TapeError("loss is not tracked on any tape")
    return loss.tape.backward(loss)


# -- op rules -----------------------------------------------------------------


@dataclass(frozen=True)
class OpRule:
    forward: Callable
    backward: Callable


def _unbroadcast(grad, shape):
    grad = np.asarray(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _require_matrix(array, kind):
    if array.ndim != 2:
        raise ShapeError(f"{kind}: expected a matrix, got shape {array.shape}")


def _matmul_fwd(a, b):
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul: unsupported shapes {a.shape} @ {b.shape}")
    return a @ b


def _matmul_bwd(g, out, a, b):
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    if a.ndim == 1:
        return b @ g, np.outer(a, g)
    if b.ndim == 1:
        return np.outer(g, b), a.T @ g
    return g @ b.T, a.T @ g


def _transpose_fwd(a):
    if a.ndim > 2:
        raise ShapeError(f"transpose: expected at most 2 dims, got {a.shape}")
    return a.T


def _sum_bwd(g, out, a, axis=None):
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape),)


def _mean_bwd(g, out, a, axis=None):
    count = a.size if axis is None else a.shape[axis]
    return (_sum_bwd(g, out, a, axis)[0] / count,)


def _index_bwd(g, out, a, key):
    # basic indexing only: no repeated elements
    full = np.zeros(a.shape)
    full[key] += g
    return (full,)


def _concat_bwd(g, out, *arrays, axis=0):
    splits = np.cumsum([array.shape[axis] for array in arrays])[:-1]
    return tuple(np.split(g, splits, axis=axis))


def _stack_bwd(g, out, *arrays, axis=0):
    return tuple(np.take(g, i, axis=axis) for i in range(len(arrays)))


def _outer_fwd(a, b):
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeError(f"outer: expected vectors, got {a.shape} and {b.shape}")
    return np.outer(a, b)


def _cholesky_fwd(s):
    _require_matrix(s, "cholesky")
    if s.shape[0] != s.shape[1]:
        raise ShapeError(f"cholesky: matrix must be square, got {s.shape}")
    scale_ = max(np.abs(s).max(initial=0.0), np.finfo(float).tiny)
    asymmetry = np.abs(s - s.T).max(initial=0.0)
    if asymmetry > velest_setting("SYMMETRY_RTOL") * scale_:
        raise NotSymmetricError(f"cholesky: asymmetry {asymmetry:.3e} exceeds tolerance")
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(_failing_pivot(s)) from None


def _failing_pivot(s):
    for k in range(s.shape[0]):
        try:
            np.linalg.cholesky(s[: k + 1, : k + 1])
        except np.linalg.LinAlgError:
            return k
    return s.shape[0] - 1


def _phi(a):
    lower = np.tril(a)
    lower[np.diag_indices_from(lower)] *= 0.5
    return lower


def _cholesky_bwd(g, chol, s):
    # closed-form rule: dS = L^-T phi(L^T dL) L^-1, symmetrized
    p = _phi(chol.T @ np.tril(g))
    left = solve_triangular(chol, p, lower=True, trans="T")
    grad = solve_triangular(chol, left.T, lower=True, trans="T").T
    return (0.5 * (grad + grad.T),)


def _solve_fwd(chol, b, transpose=False):
    _require_matrix(chol, "lower_triangular_solve")
    if chol.shape[0] != chol.shape[1] or b.shape[0] != chol.shape[0]:
        raise ShapeError(f"lower_triangular_solve: shapes {chol.shape} and {b.shape} do not conform")
    return solve_triangular(chol, b, lower=True, trans="T" if transpose else "N")


def _solve_bwd(g, x, chol, b, transpose=False):
    if transpose:
        grad_b = solve_triangular(chol, g, lower=True, trans="N")
        grad_l = -np.tril(np.outer(x, grad_b) if x.ndim == 1 else x @ grad_b.T)
    else:
        grad_b = solve_triangular(chol, g, lower=True, trans="T")
        grad_l = -np.tril(np.outer(grad_b, x) if x.ndim == 1 else grad_b @ x.T)
    return grad_l, grad_b


def _atan2_bwd(g, out, y, x):
    denom = x * x + y * y
    return _unbroadcast(g * x / denom, y.shape), _unbroadcast(-g * y / denom, x.shape)


_RULES: dict[str, OpRule] = {
    "add": OpRule(
        lambda a, b: a + b,
        lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    ),
    "subtract": OpRule(
        lambda a, b: a - b,
        lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    ),
    "hadamard": OpRule(
        lambda a, b: a * b,
        lambda g, out, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
    ),
    "divide": OpRule(
        lambda a, b: a / b,
        lambda g, out, a, b: (
            _unbroadcast(g / b, a.shape),
            _unbroadcast(-g * a / (b * b), b.shape),
        ),
    ),
    "scale": OpRule(
        lambda a, factor: a * factor,
        lambda g, out, a, factor: (g * factor,),
    ),
    "matmul": OpRule(_matmul_fwd, _matmul_bwd),
    "transpose": OpRule(_transpose_fwd, lambda g, out, a: (g.T,)),
    "tanh": OpRule(np.tanh, lambda g, out, a: (g * (1.0 - out * out),)),
    "sin": OpRule(np.sin, lambda g, out, a: (g * np.cos(a),)),
    "cos": OpRule(np.cos, lambda g, out, a: (-g * np.sin(a),)),
    "arctan": OpRule(np.arctan, lambda g, out, a: (g / (1.0 + a * a),)),
    "atan2": OpRule(np.arctan2, _atan2_bwd),
    "abs": OpRule(np.abs, lambda g, out, a: (g * np.sign(a),)),
    "maximum": OpRule(
        lambda a, floor: np.maximum(a, floor),
        lambda g, out, a, floor: (g * (a > floor),),
    ),
    "clamp": OpRule(
        lambda a, low, high: np.clip(a, low, high),
        lambda g, out, a, low, high: (g * ((a >= low) & (a <= high)),),
    ),
    "sum": OpRule(lambda a, axis=None: np.sum(a, axis=axis), _sum_bwd),
    "mean": OpRule(lambda a, axis=None: np.mean(a, axis=axis), _mean_bwd),
    "slice": OpRule(lambda a, key: a[key], _index_bwd),
    "reshape": OpRule(
        lambda a, shape: a.reshape(shape),
        lambda g, out, a, shape: (g.reshape(a.shape),),
    ),
    "concat": OpRule(lambda *arrays, axis=0: np.concatenate(arrays, axis=axis), _concat_bwd),
    "stack": OpRule(lambda *arrays, axis=0: np.stack(arrays, axis=axis), _stack_bwd),
    "outer": OpRule(_outer_fwd, lambda g, out, a, b: (g @ b, g.T @ a)),
    "square": OpRule(np.square, lambda g, out, a: (2.0 * a * g,)),
    "sqrt_elementwise": OpRule(np.sqrt, lambda g, out, a: (g / (2.0 * out),)),
    "cholesky": OpRule(_cholesky_fwd, _cholesky_bwd),
    "lower_triangular_solve": OpRule(_solve_fwd, _solve_bwd),
}

def record_op(kind, inputs, **attrs):
    """Evaluate op ``kind`` on ``inputs`` and record it on their tape."""
    rule = _RULES.get(kind)
    if rule is None:
        raise UnsupportedOpError(f"unsupported op kind {kind!r}")
    tensors = [as_tensor(value) for value in inputs]
    arrays = [tensor.values for tensor in tensors]
    try:
        with np.errstate(all="ignore"):
            out = np.asarray(rule.forward(*arrays, **attrs), dtype=np.float64)
    except (ValueError, IndexError) as exc:
        raise ShapeError(f"{kind}: {exc}") from exc
    if not np.isfinite(out).all():
        raise NonFiniteError(f"{kind} produced non-finite values")

    tape = None
    for tensor in tensors:
        if tensor.tape is None:
            continue
        if tape is not None and tensor.tape is not tape:
            raise TapeError(f"{kind}: inputs are tracked on different tapes")
        tape = tensor.tape
    if tape is None:
        return Tensor._wrap(out)
    tape._ensure_open()
    out.setflags(write=False)
    node = _Node(
        kind,
        tuple(tensor.node_id for tensor in tensors),
        rule.backward,
        (out, *arrays),
        attrs,
    )
    return Tensor._wrap(out, tape._append(node), tape)


# -- op helpers -----------------------------------------------------------------


def add(a, b):
    return record_op("add", (a, b))


def subtract(a, b):
    return record_op("subtract", (a, b))


def hadamard(a, b):
    return record_op("hadamard", (a, b))


def divide(a, b):
    return record_op("divide", (a, b))


def scale(a, factor):
    return record_op("scale", (a,), factor=float(factor))


def matmul(a, b):
    return record_op("matmul", (a, b))


def transpose(a):
    return record_op("transpose", (a,))


def tanh(a):
    return record_op("tanh", (a,))


def sin(a):
    return record_op("sin", (a,))


def cos(a):
    return record_op("cos", (a,))


def arctan(a):
    return record_op("arctan", (a,))


def atan2(y, x):
    return record_op("atan2", (y, x))


def absolute(a):
    return record_op("abs", (a,))


def maximum(a, floor):
    return record_op("maximum", (a,), floor=float(floor))


def clamp(a, low, high):
    return record_op("clamp", (a,), low=float(low), high=float(high))


def reduce_sum(a, axis=None):
    return record_op("sum", (a,), axis=axis)


def reduce_mean(a, axis=None):
    return record_op("mean", (a,), axis=axis)


def index(a, key):
    return record_op("slice", (a,), key=key)


def reshape(a, shape):
    return record_op("reshape", (a,), shape=tuple(shape))


def concat(tensors, axis=0):
    return record_op("concat", tuple(tensors), axis=axis)


def stack(tensors, axis=0):
    return record_op("stack", tuple(tensors), axis=axis)


def outer(a, b):
    return record_op("outer", (a, b))


def square(a):
    return record_op("square", (a,))


def sqrt(a):
    return record_op("sqrt_elementwise", (a,))


def cholesky(s):
    return record_op("cholesky", (s,))


def solve_lower(chol, b, transpose=False):
    """Solve ``L x = b`` (or ``L^T x = b``) for lower-triangular ``L``."""
    return record_op("lower_triangular_solve", (chol, b), transpose=transpose)


def symmetrize(a):
    return scale(add(a, transpose(a)), 0.5)


def robust_cholesky(s, jitter=None, retries=None, growth=None):
    """Cholesky factor of ``s``, retrying with diagonal jitter on failure.

    The jitter starts at ``jitter`` and grows by ``growth`` per retry; after
    ``retries`` failed attempts the original pivot diagnostic is raised.
    """
    jitter = velest_setting("JITTER") if jitter is None else jitter
    retries = velest_setting("JITTER_RETRIES") if retries is None else retries
    growth = velest_setting("JITTER_GROWTH") if growth is None else growth
    try:
        return cholesky(s)
    except NotPositiveDefiniteError as exc:
        failure = exc
    eye = np.eye(as_tensor(s).shape[0])
    delta = jitter
    for attempt in range(1, retries + 1):
        logger.warning("cholesky failed at pivot %d, retry %d with jitter %.1e", failure.pivot, attempt, delta)
        try:
            return cholesky(add(s, eye * delta))
        except NotPositiveDefiniteError:
            delta *= growth
    raise NotPositiveDefiniteError(
        failure.pivot,
        f"{failure} (still failing after {retries} jitter retries up to {delta / growth:.1e})",
    )


# -- parameters -----------------------------------------------------------------


class ParameterSet(Mapping):
    """Named float64 arrays, ordered by insertion.

    The optimizer replaces arrays wholesale; :meth:`attach` exposes them as
    leaves of a tape and :meth:`constants` as untracked tensors.
    """

    def __init__(self, arrays=None):
        self._arrays: dict[str, np.ndarray] = {}
        for name, array in (arrays or {}).items():
            self.add(name, array)

    def __getitem__(self, name):
        return self._arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def __repr__(self):
        shapes = ", ".join(f"{name}{array.shape}" for name, array in self._arrays.items())
        return f"ParameterSet({shapes})"

    def add(self, name, array):
        if name in self._arrays:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._arrays[name] = _frozen(array)

    def replace(self, name, array):
        array = _frozen(array)
        if array.shape != self._arrays[name].shape:
            raise ShapeError(f"{name}: shape {array.shape} does not match {self._arrays[name].shape}")
        self._arrays[name] = array

    def merged(self, other):
        result = self.copy()
        for name, array in other.items():
            result.add(name, array)
        return result

    def subset(self, names):
        return ParameterSet({name: self._arrays[name] for name in names})

    def copy(self):
        return ParameterSet(self._arrays)

    @property
    def size(self):
        return sum(array.size for array in self._arrays.values())

    def flat(self, names=None):
        names = list(self._arrays) if names is None else names
        if not names:
            return np.zeros(0)
        return np.concatenate([self._arrays[name].ravel() for name in names])

    def from_flat(self, vector, names=None):
        names = list(self._arrays) if names is None else names
        vector = np.asarray(vector, dtype=np.float64)
        expected = sum(self._arrays[name].size for name in names)
        if vector.size != expected:
            raise ShapeError(f"flat vector has {vector.size} entries, expected {expected}")
        result = self.copy()
        offset = 0
        for name in names:
            shape = self._arrays[name].shape
            count = self._arrays[name].size
            result.replace(name, vector[offset : offset + count].reshape(shape))
            offset += count
        return result

    def attach(self, tape):
        leaves = {}
        for name, array in self._arrays.items():
            leaves[name] = tape.watch(name, array)
        return leaves

    def constants(self):
        return {name: Tensor._wrap(array) for name, array in self._arrays.items()}


def _frozen(array):
    array = np.array(array, dtype=np.float64)
    if not np.isfinite(array).all():
        raise NonFiniteError("parameter values must be finite")
    array.setflags(write=False)
    return array


def zero_gradients(params):
    return {name: np.zeros(array.shape) for name, array in params.items()}


def grad_check(f, params, eps=1e-6, samples=20, seed=0, names=None, floor=1e-12):
    """Max relative error between tape gradients and central differences.

    ``f`` maps a ``{name: Tensor}`` view of ``params`` to a scalar tensor.
    ``samples`` coordinates are drawn from the flat view of ``names``
    (default: all parameters). Gradients smaller than ``floor`` are
    compared in absolute terms.
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    names = list(params) if names is None else list(names)

    tape = Tape()
    loss = f(params.attach(tape))
    grads = tape.backward(loss)
    analytic = np.concatenate([np.ravel(grads[name]) for name in names])

    base = params.flat(names)
    rng = np.random.default_rng(seed)
    coords = rng.choice(base.size, size=min(samples, base.size), replace=False)
    worst = 0.0
    for coord in sorted(coords):
        shifted = []
        for sign in (1.0, -1.0):
            vector = base.copy()
            vector[coord] += sign * eps
            shifted.append(f(params.from_flat(vector, names).constants()).item())
        numeric = (shifted[0] - shifted[1]) / (2.0 * eps)
        denom = max(abs(analytic[coord]), abs(numeric), floor)
        worst = max(worst, abs(analytic[coord] - numeric) / denom)
    logger.debug("grad_check over %d coordinates: max relative error %.3e", len(coords), worst)
    return worst


@dataclass
class GradientAccumulator:
    """Single-owner sum of gradient maps, reduced in submission order."""

    params: ParameterSet
    count: int = 0
    totals: dict = field(default_factory=dict)

    def __post_init__(self):
        self.totals = zero_gradients(self.params)

    def add(self, grads):
        for name in self.totals:
            self.totals[name] = self.totals[name] + grads[name]
        self.count += 1

    def mean(self):
        if self.count == 0:
            return zero_gradients(self.params)
        return {name: total / self.count for name, total in self.totals.items()}
