"""Synthetic case families: manufactured-solution squares and porous ducts."""

from __future__ import annotations

import math

import numpy as np

from .dataset import CaseMeta, PointCloudCase, select_observations
from .errors import ConfigurationError
from .geometry import DomainSpec, SamplerConfig, ShapeSpec, build_shape, sample_case
from .physics import FluidProperties, PorousCoefficients, darcy_forchheimer_from_porosity, mms_exact

MMS_DOMAIN = DomainSpec(0.0, 2.0 * math.pi, 0.0, 2.0 * math.pi)
MMS_COUNTS = {"interior": 667, "boundary": 168}
DUCT_DOMAIN = DomainSpec(0.0, 3.0, 0.0, 1.0)
DUCT_COUNTS = {"interior": 1000, "boundary": 200}
DUCT_OBSERVATIONS = 500
# mild drag so the manufactured forcing stays O(1): porosity 0.9, grain size 1
MMS_COEFFS = darcy_forchheimer_from_porosity(0.9, 1.0)
PRIMITIVES = ("circle", "polygon", "ellipse")


def random_shape(rng, domain: DomainSpec, size=0.25, primitives=PRIMITIVES) -> ShapeSpec:
    """A primitive near the domain centre, randomly scaled, rotated and offset.

    ``size`` is the nominal circumradius as a fraction of the domain height.
    """
    h = domain.height
    kind = primitives[rng.integers(len(primitives))]
    scale = size * h * rng.uniform(0.8, 1.2)
    cx = domain.x0 + (domain.x1 - domain.x0) * (0.5 if domain.x1 - domain.x0 <= h else 1.0 / 3.0)
    centre = (cx, domain.y0 + 0.5 * h)
    shift = tuple(rng.uniform(-0.05 * h, 0.05 * h, size=2))
    return ShapeSpec(kind, center=centre, scale=scale, rotation=float(rng.uniform(0, 2 * math.pi)),
                     translation=shift, sides=int(rng.integers(3, 9)), aspect=float(rng.uniform(0.45, 0.8)))


def composite_shape(domain: DomainSpec, size=0.25) -> ShapeSpec:
    """Fixed two-member union used as the unseen composite geometry."""
    h = domain.height
    cx = domain.x0 + (domain.x1 - domain.x0) * (0.5 if domain.x1 - domain.x0 <= h else 1.0 / 3.0)
    cy = domain.y0 + 0.5 * h
    r = size * h
    a = ShapeSpec("circle", center=(cx - 0.45 * r, cy), scale=0.8 * r)
    b = ShapeSpec("polygon", center=(cx + 0.45 * r, cy + 0.1 * r), scale=0.8 * r, sides=4, rotation=0.3)
    return ShapeSpec("union", members=(a, b))


def mms_case(spec: ShapeSpec, seed, case_id="mms", props=None, coeffs=None, counts=None,
             domain=MMS_DOMAIN, sampler=None) -> PointCloudCase:
    props = props or FluidProperties()
    coeffs = MMS_COEFFS if coeffs is None else coeffs
    meta = CaseMeta(kind="mms", provenance=f"manufactured solution, {spec.primitive}, seed {seed}")
    case = sample_case(domain, build_shape(spec), counts or MMS_COUNTS, seed, coeffs=coeffs,
                       props=props, sampler=sampler, meta=meta, case_id=case_id)
    u, p = mms_exact(case.coords, props.rho)
    return case.with_reference(u, p).validate()


def _check_count(n):
    if n < 1:
        raise ConfigurationError(f"number of cases must be positive, got {n}")


def mms_cases(n, seed, **kw) -> list[PointCloudCase]:
    """``n`` manufactured-solution cases with independent child seeds."""
    _check_count(n)
    children = np.random.SeedSequence(seed).spawn(n)
    out = []
    for i, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        spec = random_shape(rng, kw.get("domain", MMS_DOMAIN))
        out.append(mms_case(spec, int(rng.integers(2 ** 31)), case_id=f"mms_{i:03d}", **kw))
    return out


def duct_case(spec: ShapeSpec, seed, case_id="duct", inlet_speed=1.0, inlet_angle_deg=0.0,
              props=None, coeffs=None, counts=None, domain=DUCT_DOMAIN, n_observations=0,
              sampler: SamplerConfig | None = None) -> PointCloudCase:
    """A duct with a porous obstacle; no reference fields (physics and boundary data only)."""
    props = props or FluidProperties(rho=1.0, mu=0.05)
    coeffs = coeffs or PorousCoefficients(D=100.0, F=10.0)
    meta = CaseMeta(kind="duct", inlet_speed=float(inlet_speed), inlet_angle_deg=float(inlet_angle_deg),
                    provenance=f"parametric duct, {spec.primitive}, seed {seed}")
    case = sample_case(domain, build_shape(spec), counts or DUCT_COUNTS, seed, coeffs=coeffs,
                       props=props, sampler=sampler, meta=meta, case_id=case_id)
    if n_observations:
        case = select_observations(case, n_observations, seed)
    return case.validate()


def duct_cases(n, seed, speed_range=(0.5, 1.5), angle_range=(0.0, 0.0), D_range=(100.0, 100.0),
               F_range=(10.0, 10.0), **kw) -> list[PointCloudCase]:
    _check_count(n)
    children = np.random.SeedSequence(seed).spawn(n)
    out = []
    for i, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        spec = random_shape(rng, kw.get("domain", DUCT_DOMAIN))
        coeffs = PorousCoefficients(D=float(rng.uniform(*D_range)), F=float(rng.uniform(*F_range)))
        out.append(duct_case(spec, int(rng.integers(2 ** 31)), case_id=f"duct_{i:03d}",
                             inlet_speed=float(rng.uniform(*speed_range)),
                             inlet_angle_deg=float(rng.uniform(*angle_range)), coeffs=coeffs, **kw))
    return out
