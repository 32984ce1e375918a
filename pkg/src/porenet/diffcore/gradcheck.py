import numpy as np

from .tape import Tape, parameter_gradient


def relative_error(analytic, numeric, floor=1e-12):
    a = np.ravel(np.asarray(analytic, dtype=float))
    b = np.ravel(np.asarray(numeric, dtype=float))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def central_difference(f, x, step):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(x))
        flat[i] = orig - step
        fm = float(f(x))
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * step)
    return g


def fd_check(f, x, step=1e-5, grad=None):
    """Worst relative discrepancy between an analytic gradient and central differences.

    The analytic gradient comes from the tape unless ``grad`` (a callable
    returning the gradient at ``x``) is supplied.
    """
    x = np.asarray(x, dtype=float)
    if grad is None:
        tape = Tape()
        xv = tape.leaf(x, "x")
        analytic = parameter_gradient(f(xv), {"x": xv})["x"]
    else:
        analytic = np.asarray(grad(x), dtype=float)
    numeric = central_difference(f, x, step)
    return float(np.max(relative_error(analytic, numeric)))
