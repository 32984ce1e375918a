"""Parametric 2D porous obstacles, signed distances and point-cloud sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError

BOUNDARY_TAGS = ("inlet", "outlet", "wall", "interface")
INTERIOR, INLET, OUTLET, WALL, INTERFACE = -1, 0, 1, 2, 3
MAX_SAMPLING_ATTEMPTS = 10 ** 6


def onehot(tags) -> np.ndarray:
    """4-wide boundary encoding; interior points (tag -1) map to all zeros."""
    tags = np.asarray(tags, dtype=int)
    out = np.zeros((tags.size, len(BOUNDARY_TAGS)))
    b = tags >= 0
    out[np.nonzero(b)[0], tags[b]] = 1.0
    return out


def _rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class ShapeSpec:
    """A primitive (or union) placed by scale -> rotate -> translate.

    ``center`` and ``translation`` both shift the shape; the former is the
    nominal placement and the latter an augmentation offset.
    """

    primitive: str  # circle | polygon | ellipse | union
    center: tuple = (0.0, 0.0)
    scale: float = 1.0
    rotation: float = 0.0
    translation: tuple = (0.0, 0.0)
    sides: int = 4
    aspect: float = 0.5  # ellipse semi-minor axis (semi-major is 1)
    members: tuple = ()


class Shape:
    """Closed curve with world placement; subclasses work in a unit local frame."""

    def __init__(self, spec: ShapeSpec):
        if not spec.scale > 0:
            raise DomainError(f"shape scale must be positive, got {spec.scale}")
        self.spec = spec
        self.scale = float(spec.scale)
        self.R = _rot(spec.rotation)
        self.offset = np.asarray(spec.center, float) + np.asarray(spec.translation, float)

    # frame maps
    def to_local(self, p):
        return ((np.atleast_2d(p) - self.offset) @ self.R) / self.scale

    def to_world(self, q):
        return (np.atleast_2d(q) * self.scale) @ self.R.T + self.offset

    def signed_distance(self, points):
        return self.scale * self._sdf_local(self.to_local(points))

    def contains(self, points):
        return self.signed_distance(points) < 0

    def boundary_at(self, t):
        """World point at boundary parameter t in [0, 1), proportional to arclength."""
        return self.to_world(self._param_local(np.asarray(t, float) % 1.0))

    @property
    def perimeter(self):
        return self.scale * self._perimeter_local

    @property
    def area(self):
        return self.scale ** 2 * self._area_local

    def boundary_points(self, n, rng=None):
        """n points uniform in arclength (random if ``rng`` is given, else evenly spaced)."""
        t = rng.random(n) if rng is not None else np.arange(n) / n
        return self.boundary_at(t)

    def bbox(self):
        pts = self.boundary_at(np.arange(4096) / 4096)
        return pts.min(axis=0), pts.max(axis=0)

    @property
    def diameter(self):
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))


class Circle(Shape):
    _perimeter_local = 2 * math.pi
    _area_local = math.pi

    def _sdf_local(self, q):
        return np.hypot(q[:, 0], q[:, 1]) - 1.0

    def _param_local(self, t):
        a = 2 * math.pi * t
        return np.stack([np.cos(a), np.sin(a)], axis=-1)


class RegularPolygon(Shape):
    """Unit circumradius, first vertex at (1, 0)."""

    def __init__(self, spec):
        super().__init__(spec)
        if not 3 <= spec.sides <= 8:
            raise DomainError(f"polygon needs 3..8 sides, got {spec.sides}")
        n = spec.sides
        ang = 2 * math.pi * np.arange(n) / n
        self.vertices = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        self._edge = np.roll(self.vertices, -1, axis=0) - self.vertices
        self._edge_len = np.linalg.norm(self._edge, axis=1)
        self._perimeter_local = float(self._edge_len.sum())
        self._area_local = 0.5 * n * math.sin(2 * math.pi / n)

    def _sdf_local(self, q):
        rel = q[:, None, :] - self.vertices[None]
        t = np.clip((rel * self._edge).sum(-1) / self._edge_len ** 2, 0.0, 1.0)
        closest = self.vertices[None] + t[..., None] * self._edge[None]
        dist = np.linalg.norm(q[:, None, :] - closest, axis=-1).min(axis=1)
        # convex, counter-clockwise: inside iff left of every edge
        cross = self._edge[None, :, 0] * rel[..., 1] - self._edge[None, :, 1] * rel[..., 0]
        inside = np.all(cross > 0, axis=1)
        return np.where(inside, -dist, dist)

    def _param_local(self, t):
        s = t * self._perimeter_local
        cum = np.concatenate([[0.0], np.cumsum(self._edge_len)])
        k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(self.vertices) - 1)
        frac = (s - cum[k]) / self._edge_len[k]
        return self.vertices[k] + frac[:, None] * self._edge[k]


def _ellipse_distance(a, b, y0, y1, iters=160):
    """Distance from first-quadrant points to the ellipse x^2/a^2 + y^2/b^2 = 1, a >= b.

    Bisection on the Lagrange-multiplier root (robust for all positions).
    """
    y0 = np.asarray(y0, float)
    y1 = np.asarray(y1, float)
    dist = np.empty_like(y0)

    inner = (y0 > 0) & (y1 > 0)
    z0, z1 = y0[inner] / a, y1[inner] / b
    g = z0 * z0 + z1 * z1 - 1.0
    r0 = (a / b) ** 2
    n0 = r0 * z0
    s0 = z1 - 1.0
    s1 = np.where(g < 0, 0.0, np.hypot(n0, z1) - 1.0)
    for _ in range(iters):
        s = 0.5 * (s0 + s1)
        gs = (n0 / (s + r0)) ** 2 + (z1 / (s + 1.0)) ** 2 - 1.0
        s0 = np.where(gs > 0, s, s0)
        s1 = np.where(gs > 0, s1, s)
    s = 0.5 * (s0 + s1)
    x0 = r0 * y0[inner] / (s + r0)
    x1 = y1[inner] / (s + 1.0)
    dist[inner] = np.hypot(x0 - y0[inner], x1 - y1[inner])

    on_minor = (y0 <= 0) & (y1 > 0)
    dist[on_minor] = np.abs(y1[on_minor] - b)

    on_major = y1 <= 0
    yy = y0[on_major]
    numer, denom = a * yy, a * a - b * b
    near = numer < denom
    xde = np.where(near, numer / denom if denom > 0 else 0.0, 1.0)
    x0 = a * xde
    x1 = b * np.sqrt(np.clip(1.0 - xde * xde, 0.0, None))
    dist[on_major] = np.where(near, np.hypot(x0 - yy, x1), np.abs(yy - a))
    return dist


class Ellipse(Shape):
    """Semi-axes (1, aspect) before scaling."""

    def __init__(self, spec):
        super().__init__(spec)
        self.b = float(spec.aspect)
        self._area_local = math.pi * max(self.b, 0.0)
        phi = np.linspace(0.0, 2 * math.pi, 8193)
        seg = np.hypot(np.diff(np.cos(phi)), self.b * np.diff(np.sin(phi)))
        self._arc = np.concatenate([[0.0], np.cumsum(seg)])
        self._phi = phi
        self._perimeter_local = float(self._arc[-1])

    def _sdf_local(self, q):
        if self.b <= 0:
            raise ConfigurationError("ellipse with zero area has no interior")
        x, y = np.abs(q[:, 0]), np.abs(q[:, 1])
        if self.b <= 1.0:
            d = _ellipse_distance(1.0, self.b, x, y)
        else:
            d = _ellipse_distance(self.b, 1.0, y, x)
        inside = x * x + (y / self.b) ** 2 < 1.0
        return np.where(inside, -d, d)

    def _param_local(self, t):
        phi = np.interp(t * self._perimeter_local, self._arc, self._phi)
        return np.stack([np.cos(phi), self.b * np.sin(phi)], axis=-1)


class Union(Shape):
    """Union of member shapes, expressed in the union's own local frame."""

    refine_samples = 2048

    def __init__(self, spec):
        super().__init__(spec)
        if len(spec.members) < 2:
            raise DomainError("a composite union needs at least two members")
        self.members = [build_shape(m) for m in spec.members]
        t = np.arange(self.refine_samples) / self.refine_samples
        self._samples = []  # per member: (t, local points, kept-on-union-boundary mask)
        for i, m in enumerate(self.members):
            pts = m.boundary_at(t)
            keep = self._outside_others(pts, i)
            self._samples.append((t, pts, keep))
        kept_len = [m.perimeter * keep.mean() for m, (_, _, keep) in zip(self.members, self._samples)]
        self._kept_len = np.asarray(kept_len)
        self._perimeter_local = float(self._kept_len.sum())
        self._area_local = self._estimate_area()

    def _outside_others(self, pts, i):
        keep = np.ones(len(pts), bool)
        for j, o in enumerate(self.members):
            if j != i:
                keep &= o.signed_distance(pts) >= 0
        return keep

    def _estimate_area(self):
        lo = np.min([m.bbox()[0] for m in self.members], axis=0)
        hi = np.max([m.bbox()[1] for m in self.members], axis=0)
        g = np.stack(np.meshgrid(np.linspace(lo[0], hi[0], 200), np.linspace(lo[1], hi[1], 200)), -1)
        inside = self._member_min(g.reshape(-1, 2)) < 0
        return float(inside.mean() * np.prod(hi - lo))

    def _member_min(self, q):
        return np.min([m.signed_distance(q) for m in self.members], axis=0)

    def _sdf_local(self, q):
        out = self._member_min(q)
        inside = np.nonzero(out < 0)[0]
        if inside.size:
            out[inside] = -self._inside_distance(q[inside])
        return out

    def _inside_distance(self, q):
        best = np.full(len(q), np.inf)
        for i, (m, (t, pts, keep)) in enumerate(zip(self.members, self._samples)):
            if not keep.any():
                continue
            kt, kp = t[keep], pts[keep]
            d2 = ((q[:, None, :] - kp[None]) ** 2).sum(-1)
            j = np.argmin(d2, axis=1)
            h = 1.0 / self.refine_samples
            lo, hi = kt[j] - h, kt[j] + h
            tr = _golden_min(lambda tt: np.linalg.norm(m.boundary_at(tt) - q, axis=1), lo, hi)
            cand = m.boundary_at(tr)
            bad = ~self._outside_others(cand, i)
            if bad.any():
                # minimum lies past a junction with another member: locate the junction
                tr[bad] = self._junction(m, i, kt[j][bad], tr[bad])
                cand = m.boundary_at(tr)
            best = np.minimum(best, np.linalg.norm(cand - q, axis=1))
        return best

    def _junction(self, m, i, t_in, t_out, iters=80):
        def inside_other(tt):
            return ~self._outside_others(m.boundary_at(tt), i)

        a, b = t_in.copy(), t_out.copy()
        for _ in range(iters):
            mid = 0.5 * (a + b)
            bad = inside_other(mid)
            b = np.where(bad, mid, b)
            a = np.where(bad, a, mid)
        return a

    def _param_local(self, t):
        # concatenate the kept arcs of every member, proportional to their length
        cum = np.concatenate([[0.0], np.cumsum(self._kept_len)]) / self._perimeter_local
        out = np.empty((len(t), 2))
        for i, (m, (ts, pts, keep)) in enumerate(zip(self.members, self._samples)):
            sel = (t >= cum[i]) & (t < cum[i + 1])
            if not sel.any():
                continue
            u = (t[sel] - cum[i]) / (cum[i + 1] - cum[i])
            kept_t = ts[keep]
            idx = np.minimum((u * len(kept_t)).astype(int), len(kept_t) - 1)
            jitter = (u * len(kept_t) - idx) / self.refine_samples
            p = m.boundary_at(kept_t[idx] + jitter)
            off = ~self._outside_others(p, i)
            p[off] = m.boundary_at(kept_t[idx][off])
            out[sel] = p
        return out


def _golden_min(f, lo, hi, iters=90):
    g = (math.sqrt(5) - 1) / 2
    a, b = lo.copy(), hi.copy()
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = b - g * (b - a)
        d_new = a + g * (b - a)
        c, d = c_new, d_new
        fc, fd = f(c), f(d)
    return 0.5 * (a + b)


_PRIMITIVES = {"circle": Circle, "polygon": RegularPolygon, "ellipse": Ellipse, "union": Union}


def build_shape(spec: ShapeSpec) -> Shape:
    cls = _PRIMITIVES.get(spec.primitive)
    if cls is None:
        raise DomainError(f"unknown primitive {spec.primitive!r}")
    return cls(spec)


def signed_distance(shape: Shape, points):
    """Negative inside the porous region, positive outside, zero on the interface."""
    return shape.signed_distance(np.atleast_2d(np.asarray(points, float)))


def porosity_from_counts(n_porous_pixels, n_total):
    """Void fraction from pixel counts of a canopy image."""
    if n_total <= 0:
        raise DomainError("total pixel count must be positive")
    if not 0 < n_porous_pixels <= n_total:
        raise DomainError("porous pixel count must lie in (0, total]")
    return n_porous_pixels / n_total


# ----------------------------------------------------------------- domain

@dataclass(frozen=True)
class DomainSpec:
    """Axis-aligned duct; sides are named left/right/bottom/top."""

    x0: float = 0.0
    x1: float = 2 * math.pi
    y0: float = 0.0
    y1: float = 2 * math.pi
    inlet: str = "left"
    outlet: str = "right"
    walls: tuple = ("bottom", "top")

    @property
    def height(self):
        return self.y1 - self.y0

    def side_segments(self):
        c = {"left": ((self.x0, self.y0), (self.x0, self.y1)),
             "right": ((self.x1, self.y0), (self.x1, self.y1)),
             "bottom": ((self.x0, self.y0), (self.x1, self.y0)),
             "top": ((self.x0, self.y1), (self.x1, self.y1))}
        tags = {self.inlet: INLET, self.outlet: OUTLET, **{w: WALL for w in self.walls}}
        if sorted(tags) != ["bottom", "left", "right", "top"]:
            raise ConfigurationError("inlet, outlet and walls must cover the four sides once")
        return [(name, np.asarray(c[name], float), tags[name]) for name in ("left", "right", "bottom", "top")]

    def strictly_inside(self, p):
        return (p[:, 0] > self.x0) & (p[:, 0] < self.x1) & (p[:, 1] > self.y0) & (p[:, 1] < self.y1)


def largest_remainder(weights, total):
    """Integer allocation of ``total`` proportional to ``weights`` (Hamilton's method)."""
    w = np.asarray(weights, float)
    exact = total * w / w.sum()
    base = np.floor(exact).astype(int)
    rem = total - base.sum()
    order = np.argsort(-(exact - base), kind="stable")
    base[order[:rem]] += 1
    return base


@dataclass
class SamplerConfig:
    mixture_weight: float = 0.4  # share of interior points drawn near the interface
    near_std: float = 0.05  # Gaussian spread around the interface, fraction of duct height
    interface_fraction: float = 0.25  # share of boundary points placed on the interface
    extra: dict = field(default_factory=dict)


def sample_case(domain: DomainSpec, shape: Shape, counts, seed, coeffs=None, props=None,
                sampler: SamplerConfig | None = None, meta=None, case_id="case"):
    """Fixed-size labeled point cloud: interior block first, then boundary block."""
    from .dataset import CaseMeta, PointCloudCase
    from .physics import FluidProperties, PorousCoefficients

    sampler = sampler or SamplerConfig()
    coeffs = coeffs or PorousCoefficients()
    props = props or FluidProperties()
    n_int, n_bnd = int(counts["interior"]), int(counts["boundary"])
    if n_int <= 0 or n_bnd <= 0:
        raise ConfigurationError("point counts must be positive")
    if not shape.area > 1e-12:
        raise ConfigurationError("porous shape has zero area")
    lo, hi = shape.bbox()
    if not (lo[0] > domain.x0 and lo[1] > domain.y0 and hi[0] < domain.x1 and hi[1] < domain.y1):
        raise ConfigurationError("porous shape does not fit strictly inside the domain")
    rng = np.random.default_rng(seed)

    n_near = int(round(sampler.mixture_weight * n_int))
    attempts = 0
    chunks, total = [], 0
    std = sampler.near_std * domain.height
    span = np.array([domain.x1 - domain.x0, domain.y1 - domain.y0])
    origin = np.array([domain.x0, domain.y0])
    for want, near in ((n_near, True), (n_int - n_near, False)):
        got = 0
        while got < want:
            batch = max(2 * (want - got), 16)
            attempts += batch
            if attempts > MAX_SAMPLING_ATTEMPTS:
                raise ConfigurationError("rejection sampling exhausted its attempt budget")
            if near:
                p = shape.boundary_points(batch, rng) + rng.normal(0.0, std, size=(batch, 2))
            else:
                p = origin + span * rng.random((batch, 2))
            ok = domain.strictly_inside(p)
            p = p[ok]
            if len(p):
                p = p[np.abs(shape.signed_distance(p)) > 1e-9]
            p = p[: want - got]
            chunks.append(p)
            got += len(p)
        total += got
    interior = np.concatenate(chunks, axis=0)
    sdf_int = shape.signed_distance(interior)

    n_iface = int(round(sampler.interface_fraction * n_bnd))
    sides = domain.side_segments()
    lengths = [np.linalg.norm(seg[1] - seg[0]) for _, seg, _ in sides]
    quotas = largest_remainder(lengths, n_bnd - n_iface)
    bpts, btags = [], []
    for (name, seg, tag), q in zip(sides, quotas):
        s = rng.random(q)
        bpts.append(seg[0] + s[:, None] * (seg[1] - seg[0]))
        btags.append(np.full(q, tag))
    bpts.append(shape.boundary_points(n_iface, rng))
    btags.append(np.full(n_iface, INTERFACE))
    bpts = np.concatenate(bpts)
    btags = np.concatenate(btags)
    sdf_b = np.where(btags == INTERFACE, 0.0, shape.signed_distance(bpts))

    coords = np.concatenate([interior, bpts])
    sdf = np.concatenate([sdf_int, sdf_b])
    tags = np.concatenate([np.full(n_int, INTERIOR), btags])
    chi = ((sdf < 0) | (tags == INTERFACE)).astype(np.int8)
    meta = meta or CaseMeta()
    meta = meta.replace(rho=props.rho, mu=props.mu, D=coeffs.D, F=coeffs.F)
    return PointCloudCase(
        coords=coords, chi=chi, sdf=sdf, onehot=onehot(tags),
        D=np.where(chi == 1, coeffs.D, 0.0), F=np.where(chi == 1, coeffs.F, 0.0),
        meta=meta, case_id=case_id,
    )
