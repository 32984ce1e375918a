"""Elementary functions that dispatch on operand type.

Plain numbers and arrays go to numpy; :class:`~.tape.Var` and
:class:`~.dual.Dual2` operands use their own differentiable methods.  Model
and physics code call these so that one implementation serves inference,
reverse mode and Taylor propagation.
"""

import numpy as np

from . import tape as _tape

SMOOTH_ABS_EPS = 1e-12


def _method(name, fallback):
    def f(x):
        m = getattr(x, name, None)
        if m is not None and not isinstance(x, np.ndarray):
            return m()
        return fallback(x)

    f.__name__ = name
    return f


def _np_sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


sin = _method("sin", np.sin)
cos = _method("cos", np.cos)
exp = _method("exp", np.exp)
log = _method("log", np.log)
tanh = _method("tanh", np.tanh)
sqrt = _method("sqrt", np.sqrt)
sigmoid = _method("sigmoid", _np_sigmoid)
silu = _method("silu", lambda x: x * _np_sigmoid(x))


def abs_smooth(x, eps=SMOOTH_ABS_EPS):
    """sqrt(x*x + eps): differentiable everywhere, within sqrt(eps) of |x|."""
    return sqrt(x * x + eps)


def primal(x):
    """Innermost numeric value of nested Dual2/Var wrappers."""
    while True:
        if hasattr(x, "_outranks_var"):
            x = x.value
        elif isinstance(x, _tape.Var):
            return x.value
        else:
            return x


def where(cond, a, b):
    cond = np.asarray(cond)
    if hasattr(a, "_outranks_var") or hasattr(b, "_outranks_var"):
        from .dual import Dual2

        a, b = Dual2.lift(a), Dual2.lift(b)
        return Dual2(where(cond, a.value, b.value), where(cond, a.d1, b.d1),
                     where(cond, a.d2, b.d2))
    if isinstance(a, _tape.Var) or isinstance(b, _tape.Var):
        return _tape.where(cond, a, b)
    return np.where(cond, a, b)


def maximum(a, b):
    """Elementwise max; derivatives follow the selected branch (ties pick ``a``)."""
    cond = np.asarray(primal(a)) >= np.asarray(primal(b))
    if cond.ndim == 0:
        return a if cond else b
    return where(cond, a, b)


def norm(components, eps=SMOOTH_ABS_EPS):
    """Smoothed Euclidean norm of a sequence of same-shaped components."""
    total = components[0] * components[0]
    for c in components[1:]:
        total = total + c * c
    return sqrt(total + eps)
