"""Steady incompressible Navier-Stokes with Darcy-Forchheimer drag.

Residual functions are written componentwise so the same code runs on
floats, numpy arrays, tape variables and Taylor jets.  Derivative inputs use
the convention ``jacobian[k][i] = d u_i / d x_k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import functions as fn
from .errors import ConfigurationError, DomainError


@dataclass(frozen=True)
class FluidProperties:
    rho: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        if not (self.rho > 0 and self.mu > 0):
            raise DomainError(f"density and viscosity must be positive, got {self}")


@dataclass(frozen=True)
class PorousCoefficients:
    D: float = 0.0  # Darcy coefficient, 1/m^2
    F: float = 0.0  # Forchheimer coefficient, 1/m

    def __post_init__(self):
        if not (self.D >= 0 and self.F >= 0):
            raise DomainError(f"porous coefficients must be non-negative, got {self}")


def darcy_forchheimer_from_porosity(phi, d_p) -> PorousCoefficients:
    """Packed-sphere (Ergun-type) coefficients for porosity ``phi`` and grain size ``d_p``."""
    if not 0.0 < phi <= 1.0:
        raise DomainError(f"porosity must lie in (0, 1], got {phi}")
    if not d_p > 0.0:
        raise DomainError(f"particle diameter must be positive, got {d_p}")
    phi3 = phi ** 3
    return PorousCoefficients(D=180.0 * (1.0 - phi) ** 2 / (d_p ** 2 * phi3),
                              F=1.8 * (1.0 - phi) / (d_p * phi3))


def check_indicator(chi):
    c = np.asarray(fn.primal(chi))
    if not np.all((c == 0) | (c == 1)):
        raise DomainError("region indicator must be 0 or 1")
    return chi


def continuity_residual(jacobian):
    """Divergence of the velocity, i.e. the trace of its Jacobian."""
    d = len(jacobian)
    total = jacobian[0][0]
    for k in range(1, d):
        total = total + jacobian[k][k]
    return total


def drag_coefficient(speed, props: FluidProperties, coeffs: PorousCoefficients, chi):
    return chi * (props.mu * coeffs.D + 0.5 * props.rho * coeffs.F * speed)


def momentum_residual(u, jacobian, laplacian, grad_p, props: FluidProperties,
                      coeffs: PorousCoefficients, chi=0, forcing=None):
    """rho (u.grad)u + grad p - mu lap u + chi (mu D + rho F |u| / 2) u - f, per component.

    |u| is the smoothed norm sqrt(u.u + 1e-12).  With ``chi == 0`` the drag
    term vanishes and the plain Navier-Stokes residual remains.
    """
    d = len(u)
    drag = drag_coefficient(fn.norm(list(u)), props, coeffs, chi)
    out = []
    for i in range(d):
        conv = u[0] * jacobian[0][i]
        for k in range(1, d):
            conv = conv + u[k] * jacobian[k][i]
        r = props.rho * conv + grad_p[i] - props.mu * laplacian[i] + drag * u[i]
        if forcing is not None:
            r = r - forcing[i]
        out.append(r)
    return out


# ------------------------------------------------------ manufactured solution

def mms_velocity(x, y):
    return fn.cos(x) * fn.sin(y), -fn.cos(y) * fn.sin(x)


def mms_pressure(x, y, rho=1.0):
    # balances the convective term of mms_velocity exactly
    return -0.25 * rho * (fn.cos(2.0 * x) + fn.cos(2.0 * y))


def _split_xy(point):
    if isinstance(point, np.ndarray) or np.ndim(point) > 1:
        p = np.asarray(point, dtype=float)
        return p[..., 0], p[..., 1]
    return point[0], point[1]


def mms_exact(point, rho=1.0):
    """Manufactured velocity (shape ``(..., 2)``) and pressure at ``point``."""
    x, y = _split_xy(point)
    ux, uy = mms_velocity(x, y)
    return np.stack([ux, uy], axis=-1), mms_pressure(x, y, rho)


def mms_forcing(point, props: FluidProperties, coeffs: PorousCoefficients, chi=0):
    """Body force making :func:`mms_exact` an exact solution.

    Substituting the manufactured fields gives a vanishing convective plus
    pressure contribution and lap(u) = -2u, leaving
    ``f = 2 mu u + chi (mu D + rho F |u| / 2) u`` for both components.
    """
    x, y = _split_xy(point)
    ux, uy = mms_velocity(x, y)
    c = 2.0 * props.mu + drag_coefficient(fn.norm([ux, uy]), props, coeffs, chi)
    return np.stack([c * ux, c * uy], axis=-1)


def mms_forcing_as_printed(point, props, coeffs, chi=0):
    """The published closed form, whose y viscous term carries the opposite sign."""
    x, y = _split_xy(point)
    ux, uy = mms_velocity(x, y)
    drag = drag_coefficient(fn.norm([ux, uy]), props, coeffs, chi)
    return np.stack([2.0 * props.mu * ux + drag * ux, -2.0 * props.mu * uy + drag * uy], axis=-1)


# ------------------------------------------------------ normalized residuals

@dataclass(frozen=True)
class ResidualScaling:
    """Coefficients of the residuals rewritten in Z-scored variables.

    With x = m_x + s_x x', u_i = m_i + s_i u_i', p = m_p + s_p p', each
    derivative picks up its ratio of standard deviations.  The continuity
    residual is multiplied by ``continuity_factor = s_x0 / s_u0`` and momentum
    component i by ``momentum_factor[i] = s_x0 / (s_u0 s_i)``: the
    continuity coefficient of du_0'/dx_0' becomes 1 and the convective
    coefficient of u_0' du_i'/dx_0' becomes rho.  All factors are 1 for unit
    standard deviations.
    """

    coord_std: tuple
    vel_mean: tuple
    vel_std: tuple
    p_std: float
    continuity_coef: tuple  # s_k / s_xk
    convective_coef: tuple  # [i][k] s_i / s_xk
    pressure_coef: tuple  # [i] s_p / s_xi
    viscous_coef: tuple  # [i][k] s_i / s_xk^2
    continuity_factor: float
    momentum_factor: tuple

    @classmethod
    def from_stats(cls, stats) -> "ResidualScaling":
        sx = np.asarray(stats.coord_std, dtype=float)
        su = np.asarray(stats.vel_std, dtype=float)
        sp_ = float(stats.p_std)
        if np.any(sx <= 0) or np.any(su <= 0) or sp_ <= 0:
            raise ConfigurationError("normalization standard deviations must be positive")
        d = len(sx)
        if len(su) != d:
            raise ConfigurationError("coordinate and velocity statistics differ in dimension")
        return cls(
            coord_std=tuple(sx), vel_mean=tuple(np.asarray(stats.vel_mean, dtype=float)),
            vel_std=tuple(su), p_std=sp_,
            continuity_coef=tuple(su / sx),
            convective_coef=tuple(tuple(su[i] / sx) for i in range(d)),
            pressure_coef=tuple(sp_ / sx),
            viscous_coef=tuple(tuple(su[i] / sx ** 2) for i in range(d)),
            continuity_factor=float(sx[0] / su[0]),
            momentum_factor=tuple(sx[0] / (su[0] * su)),
        )


def scaled_residuals(u, jacobian, second, grad_p, stats, props: FluidProperties,
                     coeffs: PorousCoefficients, chi=0, forcing=None):
    """Continuity and momentum residuals evaluated on normalized fields.

    ``u``, ``jacobian``, ``grad_p`` and the pure second derivatives
    ``second[k][i] = d^2 u_i' / d x_k'^2`` are taken with respect to
    normalized coordinates; ``forcing`` is in physical units.  The results
    equal the physical residuals times the factors documented on
    :class:`ResidualScaling`.
    """
    sc = stats if isinstance(stats, ResidualScaling) else ResidualScaling.from_stats(stats)
    d = len(sc.coord_std)
    cont = sc.continuity_coef[0] * jacobian[0][0]
    for k in range(1, d):
        cont = cont + sc.continuity_coef[k] * jacobian[k][k]
    cont = sc.continuity_factor * cont

    u_phys = [sc.vel_mean[i] + sc.vel_std[i] * u[i] for i in range(d)]
    drag = drag_coefficient(fn.norm(u_phys), props, coeffs, chi)
    mom = []
    for i in range(d):
        conv = u_phys[0] * (sc.convective_coef[i][0] * jacobian[0][i])
        visc = sc.viscous_coef[i][0] * second[0][i]
        for k in range(1, d):
            conv = conv + u_phys[k] * (sc.convective_coef[i][k] * jacobian[k][i])
            visc = visc + sc.viscous_coef[i][k] * second[k][i]
        r = props.rho * conv + sc.pressure_coef[i] * grad_p[i] - props.mu * visc + drag * u_phys[i]
        if forcing is not None:
            r = r - forcing[i]
        mom.append(sc.momentum_factor[i] * r)
    return cont, mom
