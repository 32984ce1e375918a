"""Array-valued reverse-mode tape.

Every differentiable operation is a :class:`Primitive` with a numpy
``forward`` and a vector-Jacobian product ``vjp``.  Operations on
:class:`Var` objects are appended to the owning :class:`Tape` in creation
order, so the node list is topologically sorted by construction and a
single reverse sweep yields all adjoints.

Calling a primitive with plain arrays bypasses the tape entirely; the same
model code therefore serves gradient-free inference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from ..errors import ConfigurationError, DomainError, NumericalError, UnsupportedPrimitive


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: Callable[..., tuple[np.ndarray, Any]]
    # vjp(g, out, aux, *args, **attrs) -> one gradient (or None) per positional arg
    vjp: Callable[..., tuple]


@dataclass
class Node:
    prim: Primitive | None  # None for leaves
    inputs: tuple  # node index per arg, or None when the arg is a constant
    consts: tuple  # constant arg values (None where inputs[i] is a node)
    attrs: dict
    value: np.ndarray
    aux: Any = None
    name: str | None = None


class Tape:
    """Single-writer record of primitive applications."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaves: dict[str, int] = {}

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, name=None) -> "Var":
        value = np.asarray(value)
        if not np.issubdtype(value.dtype, np.floating):
            value = value.astype(np.float64)
        if name is not None:
            if name in self._leaves:
                raise ConfigurationError(f"duplicate leaf name {name!r}")
            self._leaves[name] = len(self.nodes)
        self.nodes.append(Node(None, (), (), {}, value, name=name))
        return Var(self, len(self.nodes) - 1)

    def leaves(self, values: dict) -> dict:
        return {k: self.leaf(v, name=k) for k, v in values.items()}

    def record(self, prim, args, attrs) -> "Var":
        inputs, consts, vals = [], [], []
        for a in args:
            if isinstance(a, Var):
                if a.tape is not self:
                    raise ConfigurationError("operands recorded on different tapes")
                inputs.append(a.index)
                consts.append(None)
                vals.append(a.value)
            else:
                inputs.append(None)
                consts.append(a)
                vals.append(a)
        value, aux = prim.forward(*vals, **attrs)
        self.nodes.append(Node(prim, tuple(inputs), tuple(consts), attrs, value, aux))
        return Var(self, len(self.nodes) - 1)

    def backward(self, out: "Var", seed=None) -> list:
        """Adjoint of ``out`` with respect to every node (None if unreached)."""
        adj: list = [None] * (out.index + 1)
        adj[out.index] = np.ones_like(out.value) if seed is None else np.asarray(seed)
        for i in range(out.index, -1, -1):
            g = adj[i]
            node = self.nodes[i]
            if g is None or node.prim is None:
                continue
            if not any(j is not None for j in node.inputs):
                continue
            vals = [self.nodes[j].value if j is not None else c
                    for j, c in zip(node.inputs, node.consts)]
            grads = node.prim.vjp(g, node.value, node.aux, *vals, **node.attrs)
            for j, gj in zip(node.inputs, grads):
                if j is None or gj is None:
                    continue
                adj[j] = gj if adj[j] is None else adj[j] + gj
        return adj

    def replay(self, leaf_values: dict | None = None) -> list[np.ndarray]:
        """Re-run the recorded program, optionally with new named leaf values."""
        leaf_values = leaf_values or {}
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.prim is None:
                values.append(np.asarray(leaf_values.get(node.name, node.value)))
                continue
            vals = [values[j] if j is not None else c
                    for j, c in zip(node.inputs, node.consts)]
            v, _ = node.prim.forward(*vals, **node.attrs)
            values.append(v)
        return values

    def first_nonfinite(self, upto=None) -> int | None:
        end = len(self.nodes) if upto is None else upto + 1
        for i in range(end):
            v = self.nodes[i].value
            if not np.all(np.isfinite(v)):
                return i
        return None


class Var:
    """Handle to a tape node; supports numpy-style arithmetic."""

    __slots__ = ("tape", "index")
    __array_priority__ = 1000

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.shape})"

    def __len__(self):
        return self.shape[0]

    def __add__(self, o):
        if getattr(o, "_outranks_var", False):
            return NotImplemented
        return apply(ADD, self, o)

    def __radd__(self, o):
        if getattr(o, "_outranks_var", False):
            return NotImplemented
        return apply(ADD, o, self)

    def __sub__(self, o):
        if getattr(o, "_outranks_var", False):
            return NotImplemented
        return apply(SUB, self, o)

    def __rsub__(self, o):
        if getattr(o, "_outranks_var", False):
            return NotImplemented
        return apply(SUB, o, self)

    def __mul__(self, o):
        if getattr(o, "_outranks_var", False):
            return NotImplemented
        return apply(MUL, self, o)

    def __rmul__(self, o):
        if getattr(o, "_outranks_var", False):
            return NotImplemented
        return apply(MUL, o, self)

    def __truediv__(self, o):
        if getattr(o, "_outranks_var", False):
            return NotImplemented
        return apply(DIV, self, o)

    def __rtruediv__(self, o):
        if getattr(o, "_outranks_var", False):
            return NotImplemented
        return apply(DIV, o, self)

    def __neg__(self):
        return apply(NEG, self)

    def __pos__(self):
        return self

    def __pow__(self, p):
        if isinstance(p, Var):
            raise UnsupportedPrimitive("pow with a differentiable exponent")
        return apply(POW, self, p=float(p))

    def __matmul__(self, o):
        return apply(MATMUL, self, o)

    def __rmatmul__(self, o):
        return apply(MATMUL, o, self)

    def __getitem__(self, key):
        return apply(GETITEM, self, key=key)

    def sum(self, axis=None, keepdims=False):
        return apply(SUM, self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply(RESHAPE, self, shape=shape)

    def sin(self):
        return apply(SIN, self)

    def cos(self):
        return apply(COS, self)

    def exp(self):
        return apply(EXP, self)

    def log(self):
        return apply(LOG, self)

    def tanh(self):
        return apply(TANH, self)

    def sigmoid(self):
        return apply(SIGMOID, self)

    def silu(self):
        return apply(SILU, self)

    def sqrt(self):
        return apply(SQRT, self)

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            raise UnsupportedPrimitive(f"{ufunc.__name__}.{method}")
        prim = _UFUNCS.get(ufunc.__name__)
        if prim is None:
            raise UnsupportedPrimitive(ufunc.__name__)
        return apply(prim, *inputs)


def apply(prim: Primitive, *args, **attrs):
    """Apply ``prim``; records on a tape iff any argument is a :class:`Var`."""
    tape = next((a.tape for a in args if isinstance(a, Var)), None)
    if tape is None:
        return prim.forward(*args, **attrs)[0]
    return tape.record(prim, args, attrs)


def value_of(x):
    return x.value if isinstance(x, Var) else x


# ---------------------------------------------------------------- primitives

def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    shape = tuple(shape)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _shape(x):
    return np.shape(x)


def _binary(name, f, da, db):
    def forward(a, b):
        return f(a, b), None

    def vjp(g, out, aux, a, b):
        return (unbroadcast(da(g, a, b, out), _shape(a)),
                unbroadcast(db(g, a, b, out), _shape(b)))

    return Primitive(name, forward, vjp)


def _unary(name, f, df):
    def forward(a):
        return f(a), None

    def vjp(g, out, aux, a):
        return (g * df(a, out),)

    return Primitive(name, forward, vjp)


def _checked_div(a, b):
    if np.any(np.asarray(b) == 0):
        raise DomainError("division by zero")
    return a / b


ADD = _binary("add", np.add, lambda g, a, b, o: g, lambda g, a, b, o: g)
SUB = _binary("subtract", np.subtract, lambda g, a, b, o: g, lambda g, a, b, o: -g)
MUL = _binary("multiply", np.multiply, lambda g, a, b, o: g * b, lambda g, a, b, o: g * a)
DIV = _binary("divide", _checked_div, lambda g, a, b, o: g / b, lambda g, a, b, o: -g * o / b)
NEG = _unary("negative", np.negative, lambda a, o: -1.0)
EXP = _unary("exp", np.exp, lambda a, o: o)
SIN = _unary("sin", np.sin, lambda a, o: np.cos(a))
COS = _unary("cos", np.cos, lambda a, o: -np.sin(a))
TANH = _unary("tanh", np.tanh, lambda a, o: 1.0 - o * o)
TRANSPOSE = Primitive("transpose", lambda a, axes: (np.transpose(a, axes), None),
                      lambda g, o, aux, a, axes: (np.transpose(g, np.argsort(axes)),))


def _log(a):
    if np.any(np.asarray(a) <= 0):
        raise DomainError("log of a non-positive value")
    return np.log(a)


def _sqrt(a):
    if np.any(np.asarray(a) < 0):
        raise DomainError("sqrt of a negative value")
    return np.sqrt(a)


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


LOG = _unary("log", _log, lambda a, o: 1.0 / a)
SQRT = _unary("sqrt", _sqrt, lambda a, o: 0.5 / o)
SIGMOID = _unary("sigmoid", _sigmoid, lambda a, o: o * (1.0 - o))
SILU = _unary("silu", lambda a: a * _sigmoid(a),
              lambda a, o: _sigmoid(a) * (1.0 + a * (1.0 - _sigmoid(a))))


def _pow_fwd(a, p):
    a = np.asarray(a)
    if p != int(p) and np.any(a < 0):
        raise DomainError("fractional power of a negative value")
    if p < 0 and np.any(a == 0):
        raise DomainError("negative power of zero")
    return a ** p, None


POW = Primitive("power", _pow_fwd, lambda g, o, aux, a, p: (g * p * a ** (p - 1.0),))


def _maximum_fwd(a, b):
    mask = np.asarray(a) >= np.asarray(b)
    return np.where(mask, a, b), mask


MAXIMUM = Primitive(
    "maximum", _maximum_fwd,
    lambda g, o, mask, a, b: (unbroadcast(np.where(mask, g, 0.0), _shape(a)),
                              unbroadcast(np.where(mask, 0.0, g), _shape(b))))


def _where_fwd(a, b, cond):
    return np.where(cond, a, b), None


WHERE = Primitive(
    "where", _where_fwd,
    lambda g, o, aux, a, b, cond: (unbroadcast(np.where(cond, g, 0.0), _shape(a)),
                                   unbroadcast(np.where(cond, 0.0, g), _shape(b))))


def _matmul_vjp(g, out, aux, a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if b.ndim == 1:
        ga = np.multiply.outer(g, b)
        gb = np.tensordot(a, g, axes=(tuple(range(a.ndim - 1)), tuple(range(g.ndim))))
        return ga, gb
    ga = g @ np.swapaxes(b, -1, -2)
    if a.ndim == 1:
        return ga, np.multiply.outer(a, g)
    gb = np.swapaxes(a, -1, -2) @ g
    return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


MATMUL = Primitive("matmul", lambda a, b: (np.matmul(a, b), None), _matmul_vjp)


def _sum_vjp(g, out, aux, a, axis, keepdims):
    shape = np.shape(a)
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, shape).copy(),)


SUM = Primitive("sum", lambda a, axis, keepdims: (np.sum(a, axis=axis, keepdims=keepdims), None),
                _sum_vjp)
RESHAPE = Primitive("reshape", lambda a, shape: (np.reshape(a, shape), None),
                    lambda g, o, aux, a, shape: (np.reshape(g, np.shape(a)),))


def _getitem_vjp(g, out, aux, a, key):
    full = np.zeros(np.shape(a), dtype=g.dtype)
    if _fancy(key):
        np.add.at(full, key, g)
    else:
        full[key] = g
    return (full,)


def _fancy(key):
    keys = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (list, np.ndarray)) for k in keys)


GETITEM = Primitive("getitem", lambda a, key: (np.asarray(a)[key], None), _getitem_vjp)


def _concat_fwd(*xs, axis):
    return np.concatenate(xs, axis=axis), [np.shape(x)[axis] for x in xs]


def _concat_vjp(g, out, sizes, *xs, axis):
    splits = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, splits, axis=axis))


CONCAT = Primitive("concatenate", _concat_fwd, _concat_vjp)


def _stack_fwd(*xs, axis):
    return np.stack(xs, axis=axis), None


def _stack_vjp(g, out, aux, *xs, axis):
    return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))


STACK = Primitive("stack", _stack_fwd, _stack_vjp)


def _max_reduce_fwd(a, axis):
    idx = np.argmax(a, axis=axis)
    return np.take_along_axis(a, np.expand_dims(idx, axis), axis).squeeze(axis), idx


def _max_reduce_vjp(g, out, idx, a, axis):
    full = np.zeros(np.shape(a), dtype=g.dtype)
    np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
    return (full,)


# ties resolve to the lowest index (np.argmax convention)
MAX_REDUCE = Primitive("max_reduce", _max_reduce_fwd, _max_reduce_vjp)

_UFUNCS = {
    "add": ADD, "subtract": SUB, "multiply": MUL, "true_divide": DIV, "divide": DIV,
    "negative": NEG, "exp": EXP, "log": LOG, "sin": SIN, "cos": COS, "tanh": TANH,
    "sqrt": SQRT, "maximum": MAXIMUM, "matmul": MATMUL,
}


def transpose(x, axes):
    return apply(TRANSPOSE, x, axes=tuple(axes))


def concatenate(xs, axis=-1):
    return apply(CONCAT, *xs, axis=axis)


def stack(xs, axis=0):
    return apply(STACK, *xs, axis=axis)


def max_reduce(x, axis=0):
    return apply(MAX_REDUCE, x, axis=axis)


def where(cond, a, b):
    return apply(WHERE, a, b, cond=np.asarray(cond))


# ------------------------------------------------------------ gradient API

class GradientVector(dict):
    """Mapping parameter name -> gradient array, one entry per parameter."""

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(v) for v in self.values()]) if self else np.zeros(0)


def parameter_gradient(loss: Var, params: dict) -> GradientVector:
    """d loss / d theta for every leaf in ``params`` (zeros when disconnected)."""
    if not isinstance(loss, Var):
        return GradientVector({k: np.zeros_like(value_of(v)) for k, v in params.items()})
    if np.size(loss.value) != 1:
        raise ConfigurationError("loss must be a scalar")
    if not np.all(np.isfinite(loss.value)):
        idx = loss.tape.first_nonfinite(loss.index)
        raise NumericalError(f"non-finite loss; first non-finite value at node {idx}",
                             node_index=idx)
    adj = loss.tape.backward(loss)
    out = GradientVector()
    for name, p in params.items():
        if p.tape is not loss.tape:
            raise ConfigurationError(f"parameter {name!r} lives on a different tape")
        g = adj[p.index] if p.index < len(adj) else None
        out[name] = np.zeros_like(p.value) if g is None else np.asarray(g, dtype=p.value.dtype)
    return out
