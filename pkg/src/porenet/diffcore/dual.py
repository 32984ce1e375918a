"""Second-order forward mode: values carrying one directional Taylor jet."""

from __future__ import annotations

import numbers

import numpy as np

from ..errors import ConfigurationError, DomainError, UnsupportedPrimitive
from . import functions as fn


class Dual2:
    """(value, first, second) directional derivative triple.

    Fields may be floats, arrays, tape variables or Dual2 themselves, which
    gives nested (derivative-of-derivative) evaluation for free.
    """

    __slots__ = ("value", "d1", "d2")
    _outranks_var = True
    __array_priority__ = 2000

    def __init__(self, value, d1=0.0, d2=0.0):
        self.value = value
        self.d1 = d1
        self.d2 = d2

    @staticmethod
    def lift(x) -> "Dual2":
        return x if isinstance(x, Dual2) else Dual2(x, 0.0, 0.0)

    def __repr__(self):
        return f"Dual2({self.value!r}, {self.d1!r}, {self.d2!r})"

    def _chain(self, f0, f1, f2):
        # h = g(f):  h' = g'(f) f',  h'' = g''(f) f'^2 + g'(f) f''
        return Dual2(f0, f1 * self.d1, f2 * self.d1 * self.d1 + f1 * self.d2)

    # arithmetic -------------------------------------------------------
    def __add__(self, o):
        if not isinstance(o, Dual2):
            return Dual2(self.value + o, self.d1, self.d2)
        return Dual2(self.value + o.value, self.d1 + o.d1, self.d2 + o.d2)

    __radd__ = __add__

    def __neg__(self):
        return Dual2(-self.value, -self.d1, -self.d2)

    def __pos__(self):
        return self

    def __sub__(self, o):
        return self + (-o)

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        if not isinstance(o, Dual2):
            return Dual2(self.value * o, self.d1 * o, self.d2 * o)
        return Dual2(self.value * o.value,
                     self.d1 * o.value + self.value * o.d1,
                     self.d2 * o.value + 2.0 * self.d1 * o.d1 + self.value * o.d2)

    __rmul__ = __mul__

    def reciprocal(self):
        v = self.value
        if np.any(np.asarray(fn.primal(v)) == 0):
            raise DomainError("division by zero during derivative propagation")
        r = 1.0 / v
        return self._chain(r, -r * r, 2.0 * r * r * r)

    def __truediv__(self, o):
        if not isinstance(o, Dual2):
            if np.any(np.asarray(fn.primal(o)) == 0):
                raise DomainError("division by zero during derivative propagation")
            return self * (1.0 / o)
        return self * o.reciprocal()

    def __rtruediv__(self, o):
        return self.reciprocal() * o

    def __pow__(self, p):
        if isinstance(p, Dual2):
            return (p * self.log()).exp()
        if not isinstance(p, numbers.Real):
            raise UnsupportedPrimitive(f"power with exponent of type {type(p).__name__}")
        if p == 0:
            return Dual2(self.value * 0.0 + 1.0, 0.0, 0.0)
        if p == 1:
            return self
        if p == 2:
            return self * self
        v = self.value
        pv = np.asarray(fn.primal(v))
        if p < 2 and np.any(pv == 0):
            raise DomainError(f"power {p} is not twice differentiable at zero")
        if p != int(p) and np.any(pv < 0):
            raise DomainError("fractional power of a negative value")
        return self._chain(v ** p, p * v ** (p - 1), p * (p - 1) * v ** (p - 2))

    def __rpow__(self, base):
        return (self * fn.log(base)).exp()

    def __abs__(self):
        return fn.abs_smooth(self)

    # elementary functions ----------------------------------------------
    def sin(self):
        s, c = fn.sin(self.value), fn.cos(self.value)
        return self._chain(s, c, -s)

    def cos(self):
        s, c = fn.sin(self.value), fn.cos(self.value)
        return self._chain(c, -s, -c)

    def exp(self):
        e = fn.exp(self.value)
        return self._chain(e, e, e)

    def log(self):
        if np.any(np.asarray(fn.primal(self.value)) <= 0):
            raise DomainError("log of a non-positive value")
        r = 1.0 / self.value
        return self._chain(fn.log(self.value), r, -r * r)

    def tanh(self):
        t = fn.tanh(self.value)
        s = 1.0 - t * t
        return self._chain(t, s, -2.0 * t * s)

    def sigmoid(self):
        s = fn.sigmoid(self.value)
        q = s * (1.0 - s)
        return self._chain(s, q, q * (1.0 - 2.0 * s))

    def silu(self):
        x = self.value
        s = fn.sigmoid(x)
        q = s * (1.0 - s)
        return self._chain(x * s, s + x * q, q * (2.0 + x * (1.0 - 2.0 * s)))

    def sqrt(self):
        if np.any(np.asarray(fn.primal(self.value)) <= 0):
            raise DomainError("sqrt is not differentiable at or below zero")
        r = fn.sqrt(self.value)
        return self._chain(r, 0.5 / r, -0.25 / (r * self.value))

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        impl = _UFUNCS.get(ufunc.__name__)
        if method != "__call__" or kwargs or impl is None:
            raise UnsupportedPrimitive(ufunc.__name__)
        return impl(*inputs)

    def __bool__(self):
        raise UnsupportedPrimitive("truth value of a differentiable quantity")


_UFUNCS = {
    "add": lambda a, b: Dual2.lift(a) + b,
    "subtract": lambda a, b: Dual2.lift(a) - b,
    "multiply": lambda a, b: Dual2.lift(a) * b,
    "true_divide": lambda a, b: Dual2.lift(a) / b,
    "negative": lambda a: -a,
    "power": lambda a, b: Dual2.lift(a) ** b,
    "sin": fn.sin, "cos": fn.cos, "exp": fn.exp, "log": fn.log,
    "tanh": fn.tanh, "sqrt": fn.sqrt, "maximum": fn.maximum,
    "absolute": abs,
}


def _unpack(out):
    if isinstance(out, Dual2):
        return out.value, out.d1, out.d2
    return out, 0.0 * np.asarray(out), 0.0 * np.asarray(out)


def directional_derivatives(f, x, v):
    """Return ``(f(x), D_v f(x), D_v^2 f(x))`` by second-order propagation.

    ``f`` receives one argument per coordinate and may return a scalar or a
    sequence.  Coordinates may be arrays (one entry per point) for batched
    evaluation.
    """
    x = [np.asarray(xi, dtype=float) for xi in (np.atleast_1d(x) if np.ndim(x) < 2 else x)]
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (len(x),):
        raise ConfigurationError(f"direction has shape {v.shape}, expected ({len(x)},)")
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise ConfigurationError("direction must have unit norm")
    args = [Dual2(xi, vi, 0.0) for xi, vi in zip(x, v)]
    out = f(*args)
    if isinstance(out, (list, tuple)):
        parts = [_unpack(o) for o in out]
        return tuple(np.array([p[i] for p in parts]) for i in range(3))
    return _unpack(out)
