"""Batched second-order jets for dense networks.

A jet over ``n`` coordinate directions is stored as one array of shape
``(1 + 2n, N, W)``: slot 0 holds values, slots ``1..n`` the first
derivatives along each coordinate, slots ``n+1..2n`` the pure second
derivatives.  Every point is differentiated with respect to its own
coordinates, so the jet of point ``i`` never mixes with point ``j`` except
through max-pooling, where the maximizing point carries its derivative into
the pooled feature.

The layer operations below are fused tape primitives with hand-written
vector-Jacobian products, so a full network evaluation records only a few
dozen nodes regardless of width.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import ConfigurationError
from . import tape as T
from .dual import Dual2


class Jet:
    __slots__ = ("data", "ndir")

    def __init__(self, data, ndir: int):
        self.data = data
        self.ndir = ndir

    @property
    def value(self):
        return self.data[0]

    @property
    def d1(self):
        return self.data[1:1 + self.ndir]

    @property
    def d2(self):
        return self.data[1 + self.ndir:]

    @property
    def width(self):
        return self.data.shape[-1]

    @property
    def npoints(self):
        return self.data.shape[1]

    def __add__(self, other):
        return Jet(self.data + other.data, self.ndir)

    def scale(self, factor):
        """Multiply by a quantity constant in space (mask, latent vector...)."""
        return Jet(self.data * factor, self.ndir)

    def take(self, idx):
        return Jet(self.data[:, idx], self.ndir)


def seed(coords, features=None, ndir=None, dtype=np.float64) -> Jet:
    """Input jet for per-point coordinates plus spatially constant features."""
    coords = np.asarray(coords, dtype=dtype)
    if coords.ndim != 2:
        raise ConfigurationError("coords must be (N, d)")
    n, d = coords.shape
    ndir = d if ndir is None else ndir
    feats = np.zeros((n, 0), dtype=dtype) if features is None else np.asarray(features, dtype=dtype)
    w = d + feats.shape[1]
    data = np.zeros((1 + 2 * ndir, n, w), dtype=dtype)
    data[0, :, :d] = coords
    data[0, :, d:] = feats
    for k in range(ndir):
        data[1 + k, :, k] = 1.0
    return Jet(data, ndir)


def constant(value, ndir: int) -> Jet:
    """Jet of a quantity independent of the coordinates, shape (N, W)."""
    if isinstance(value, T.Var):
        z = np.zeros((2 * ndir,) + value.shape, dtype=value.dtype)
        return Jet(T.concatenate([value.reshape((1,) + value.shape), z], axis=0), ndir)
    value = np.asarray(value)
    data = np.zeros((1 + 2 * ndir,) + value.shape, dtype=value.dtype)
    data[0] = value
    return Jet(data, ndir)


def concat(jets) -> Jet:
    ndir = jets[0].ndir
    return Jet(T.concatenate([j.data for j in jets], axis=-1), ndir)


# ---------------------------------------------------------------- linear

def _linear_fwd(J, W, b):
    out = np.matmul(J, W)
    if b is not None:
        out[0] += b
    return out, None


def _linear_vjp(g, out, aux, J, W, b):
    gJ = g @ W.T
    gW = J.reshape(-1, J.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    gb = None if b is None else T.unbroadcast(g[0], np.shape(b))
    return gJ, gW, gb


JET_LINEAR = T.Primitive("jet_linear", _linear_fwd, _linear_vjp)


def linear(jet: Jet, W, b=None) -> Jet:
    """Affine map; the bias only touches the value slot."""
    return Jet(T.apply(JET_LINEAR, jet.data, W, b), jet.ndir)


# ------------------------------------------------------------ activation

def _tanh_derivs(v):
    t = np.tanh(v)
    s = 1.0 - t * t
    return t, s, -2.0 * t * s


def _tanh_third(v, f):
    t, s = f[0], f[1]
    return s * (4.0 * t * t - 2.0 * s)


def _silu_derivs(v):
    sg = 0.5 * (1.0 + np.tanh(0.5 * v))
    q = sg * (1.0 - sg)
    return v * sg, sg + v * q, q * (2.0 + v * (1.0 - 2.0 * sg))


def _silu_third(v, f):
    sg = 0.5 * (1.0 + np.tanh(0.5 * v))
    q = sg * (1.0 - sg)
    r = 1.0 - 2.0 * sg
    return q * (r * (3.0 + v * r) - 2.0 * v * q)


def _sin_derivs(v):
    s, c = np.sin(v), np.cos(v)
    return s, c, -s


ACTIVATIONS = {
    "tanh": (_tanh_derivs, _tanh_third),
    "silu": (_silu_derivs, _silu_third),
    "sin": (_sin_derivs, lambda v, f: -f[1]),
}


def _silu_value(v):
    # in place on one temporary; same rounding as v * (0.5 + 0.5 * tanh(v / 2))
    t = np.multiply(v, 0.5)
    np.tanh(t, out=t)
    t *= 0.5
    t += 0.5
    t *= v
    return t


_VALUES_ONLY = {"tanh": np.tanh, "silu": _silu_value, "sin": np.sin}


def _act_fwd(J, kind, ndir):
    if not ndir:
        # derivative factors are only needed by the vjp; recomputed there
        return _VALUES_ONLY[kind](J), None
    derivs, _ = ACTIVATIONS[kind]
    v = J[0]
    f0, f1, f2 = derivs(v)
    out = np.empty_like(J)
    out[0] = f0
    d1 = J[1:1 + ndir]
    out[1:1 + ndir] = f1 * d1
    out[1 + ndir:] = f2 * d1 * d1 + f1 * J[1 + ndir:]
    return out, (f0, f1, f2)


def _act_vjp(g, out, f, J, kind, ndir):
    derivs, third = ACTIVATIONS[kind]
    f0, f1, f2 = derivs(J[0]) if f is None else f
    gJ = np.empty_like(J)
    gv = g[0] * f1
    if ndir:
        f3 = third(J[0], f)
        d1 = J[1:1 + ndir]
        d2 = J[1 + ndir:]
        g1 = g[1:1 + ndir]
        g2 = g[1 + ndir:]
        gv += f2 * ((g1 * d1).sum(0) + (g2 * d2).sum(0)) + f3 * (g2 * d1 * d1).sum(0)
        gJ[1:1 + ndir] = g1 * f1 + 2.0 * f2 * g2 * d1
        gJ[1 + ndir:] = g2 * f1
    gJ[0] = gv
    return (gJ,)


JET_ACT = T.Primitive("jet_activation", _act_fwd, _act_vjp)


def activate(jet: Jet, kind: str) -> Jet:
    if kind not in ACTIVATIONS:
        from ..errors import UnsupportedPrimitive

        raise UnsupportedPrimitive(kind)
    return Jet(T.apply(JET_ACT, jet.data, kind=kind, ndir=jet.ndir), jet.ndir)


# ---------------------------------------------------- pooled + linear

def _pool_select(H):
    a = np.argmax(H[0], axis=0)  # ties -> lowest point index
    cols = np.arange(H.shape[-1])
    return a, H[:, a, cols]  # (S, C): pooled value and derivative at argmax


def _pooled_sparse(sel, a, n):
    S, C = sel.shape
    rows = (np.arange(S - 1)[:, None] * n + a[None, :]).ravel()
    cols = np.tile(np.arange(C), S - 1)
    return sp.csr_matrix((sel[1:].ravel(), (rows, cols)), shape=((S - 1) * n, C))


def _pooled_fwd(H, W):
    S, n, C = H.shape
    out = np.empty((S, n, W.shape[1]), dtype=np.result_type(H, W))
    if S == 1:
        # the argmax is only needed for the vjp, which recomputes it
        out[0] = H[0].max(axis=0) @ W
        return out, None
    a, sel = _pool_select(H)
    out[0] = sel[0] @ W
    out[1:] = (_pooled_sparse(sel, a, n) @ W).reshape(S - 1, n, W.shape[1])
    return out, (a, sel)


def _pooled_vjp(g, out, aux, H, W):
    a, sel = _pool_select(H) if aux is None else aux
    S, n, C = H.shape
    cols = np.arange(C)
    g0 = g[0].sum(0)
    gW = np.outer(sel[0], g0)
    gH = np.zeros_like(H)
    gH[0, a, cols] = W @ g0
    if S > 1:
        ga = g[1:, a, :]  # (S-1, C, O): upstream grad at each channel's argmax point
        gW += np.einsum("sc,sco->co", sel[1:], ga)
        gH[1:, a, cols] = np.einsum("sco,co->sc", ga, W)
    return gH, gW


JET_POOLED_LINEAR = T.Primitive("jet_pooled_linear", _pooled_fwd, _pooled_vjp)


def pooled_linear(jet: Jet, W) -> Jet:
    """``maxpool(jet) @ W`` broadcast back to every point.

    The pooled value is shared by all points; its derivative reaches only the
    point that attains the maximum in each channel.  Evaluated sparsely, so a
    wide pooled feature costs no dense per-point matmul.
    """
    return Jet(T.apply(JET_POOLED_LINEAR, jet.data, W), jet.ndir)


def maxpool(jet: Jet) -> Jet:
    """Pooled feature as an (N, C) jet; mostly for tests and small models."""
    C = jet.width
    eye = np.eye(C, dtype=T.value_of(jet.data).dtype)
    return pooled_linear(jet, eye)


# --------------------------------------------------------------- networks

def fan_in_uniform(rng, fan_in, fan_out, dtype=np.float64):
    """U(-a, a) with a = sqrt(3 / fan_in): weight variance 1 / fan_in."""
    a = np.sqrt(3.0 / fan_in)
    return rng.uniform(-a, a, size=(fan_in, fan_out)).astype(dtype)


class Mlp:
    """Dense network usable with :func:`laplacian_and_jacobian`."""

    def __init__(self, widths, activation="tanh", output_activation=None, seed=0, params=None):
        self.widths = list(widths)
        self.activation = activation
        self.output_activation = output_activation
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            for i, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
                params[f"W{i}"] = fan_in_uniform(rng, a, b)
                params[f"b{i}"] = np.zeros(b)
        self.params = params

    @property
    def in_dim(self):
        return self.widths[0]

    @property
    def n_params(self):
        return sum(np.size(T.value_of(v)) for v in self.params.values())

    def jet(self, x: Jet, params=None) -> Jet:
        p = self.params if params is None else params
        nl = len(self.widths) - 1
        for i in range(nl):
            x = linear(x, p[f"W{i}"], p[f"b{i}"])
            act = self.activation if i < nl - 1 else self.output_activation
            if act is not None:
                x = activate(x, act)
        return x

    def __call__(self, x, params=None):
        x = np.atleast_2d(x)
        return self.jet(constant(x, 0), params).value


def laplacian_and_jacobian(net, point, params=None):
    """Outputs, spatial Jacobian and Laplacian of ``net`` at ``point``.

    ``net`` is either an object with a ``jet`` method (and ``in_dim``) or a
    plain callable taking one argument per coordinate.  For a single point of
    dimension d the shapes are ``(n_out,)``, ``(d, n_out)``, ``(n_out,)``; for
    an ``(N, d)`` batch a leading N axis is added.
    """
    pts = np.asarray(point, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    n, d = pts.shape
    if hasattr(net, "jet"):
        if getattr(net, "in_dim", d) != d:
            raise ConfigurationError(f"network expects {net.in_dim} coordinates, got {d}")
        out = net.jet(seed(pts), params) if params is not None else net.jet(seed(pts))
        val = out.value
        jac = T.transpose(out.d1, (1, 0, 2))
        lap = out.d2.sum(axis=0)
    else:
        val, jac, lap = _callable_derivatives(net, pts)
    if single:
        return val[0], jac[0], lap[0]
    return val, jac, lap


def _callable_derivatives(f, pts):
    n, d = pts.shape
    vals, jac_rows, lap = None, [], None
    for k in range(d):
        args = [Dual2(pts[:, i], 1.0 if i == k else 0.0, 0.0) for i in range(d)]
        try:
            out = f(*args)
        except TypeError as exc:
            raise ConfigurationError(f"function does not accept {d} coordinates: {exc}") from exc
        outs = out if isinstance(out, (list, tuple)) else [out]
        outs = [Dual2.lift(o) for o in outs]
        v = np.stack([np.broadcast_to(o.value, (n,)) for o in outs], axis=-1)
        g1 = np.stack([np.broadcast_to(o.d1, (n,)) for o in outs], axis=-1)
        g2 = np.stack([np.broadcast_to(o.d2, (n,)) for o in outs], axis=-1)
        vals = v
        jac_rows.append(g1)
        lap = g2 if lap is None else lap + g2
    return vals, np.stack(jac_rows, axis=1), lap
