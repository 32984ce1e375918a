"""Residual and derivative self-checks shared by ``porenet check`` and the tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from . import models as M
from . import training as Tr
from .dataset import NormalizationStats, compute_normalization, normalize_case
from .diffcore import directional_derivatives, laplacian_and_jacobian
from .diffcore import functions as P
from .diffcore import tape as T
from .diffcore.gradcheck import central_difference, relative_error
from .generate import MMS_DOMAIN, mms_case, random_shape
from .physics import (FluidProperties, PorousCoefficients, ResidualScaling, continuity_residual,
                      darcy_forchheimer_from_porosity, mms_forcing, mms_pressure, mms_velocity,
                      momentum_residual, scaled_residuals)


@dataclass
class OracleResult:
    name: str
    value: float
    threshold: float

    @property
    def passed(self):
        return bool(np.isfinite(self.value) and self.value < self.threshold)

    def line(self):
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.name}: {self.value:.3e} (< {self.threshold:.0e})"


def quasi_random_points(n, lo=0.0, hi=2.0 * np.pi, seed=0):
    sampler = qmc.Halton(d=2, scramble=True, seed=seed)
    return qmc.scale(sampler.random(n), [lo, lo], [hi, hi])


def _mms_fields(x, y, rho):
    ux, uy = mms_velocity(x, y)
    return ux, uy, mms_pressure(x, y, rho)


def mms_residuals(points, props, coeffs, chi):
    """Momentum norm and continuity of the exact MMS fields, derivatives by forward mode."""
    val, jac, lap = laplacian_and_jacobian(lambda x, y: _mms_fields(x, y, props.rho), points)
    u = [val[:, 0], val[:, 1]]
    J = [[jac[:, k, i] for i in range(2)] for k in range(2)]
    grad_p = [jac[:, 0, 2], jac[:, 1, 2]]
    f = mms_forcing(points, props, coeffs, chi).T
    mom = momentum_residual(u, J, [lap[:, 0], lap[:, 1]], grad_p, props, coeffs, chi=chi, forcing=f)
    return np.hypot(mom[0], mom[1]), continuity_residual(J)


def mms_residual_oracle(n=10_000, seed=0):
    props = FluidProperties()
    coeffs = darcy_forchheimer_from_porosity(0.5, 0.1)
    pts = quasi_random_points(n, seed=seed)
    out = []
    for chi in (0.0, 1.0):
        mom, cont = mms_residuals(pts, props, coeffs, chi)
        out.append(OracleResult(f"MMS momentum residual, chi={chi:g}", float(np.max(mom)), 1e-9))
        out.append(OracleResult(f"MMS continuity residual, chi={chi:g}", float(np.max(np.abs(cont))), 1e-12))
    return out


def _probe_field(x, y):
    # smooth and deliberately not divergence free
    return (P.sin(0.7 * x + 0.3 * y) + x * y, P.cos(0.4 * x) * y * y - 0.5 * x, x * x * y - P.sin(y))


def field_derivatives(f, pts):
    """Values (n, 3), ``jac[k][i]`` and pure second derivatives ``second[k][i]`` of ``f``."""
    val, jac, _ = laplacian_and_jacobian(f, pts)
    second = []
    for k in range(2):
        v = np.zeros(2)
        v[k] = 1.0
        second.append(directional_derivatives(f, pts.T, v)[2])
    J = [[jac[:, k, i] for i in range(3)] for k in range(2)]
    S = [[second[k][i] for i in range(3)] for k in range(2)]
    return val, J, S


def scaled_residual_roundtrip_error(stats: NormalizationStats, chi=1.0, coeffs=None, props=None,
                                    n=40, seed=6):
    """Worst relative gap between scaled residuals on normalized fields and physical residuals.

    The scaled side differentiates the field in normalized coordinates; the
    physical side differentiates it in physical coordinates.  The gap is taken
    after dividing out the documented scaling factors.
    """
    props = props or FluidProperties(1.1, 0.05)
    coeffs = coeffs or PorousCoefficients(50.0, 5.0)
    xn = np.random.default_rng(seed).normal(size=(n, 2))
    m, s = np.array(stats.coord_mean), np.array(stats.coord_std)
    vm, vs = np.array(stats.vel_mean), np.array(stats.vel_std)

    def normalized(xp, yp):
        ux, uy, p = _probe_field(m[0] + s[0] * xp, m[1] + s[1] * yp)
        return (ux - vm[0]) / vs[0], (uy - vm[1]) / vs[1], (p - stats.p_mean) / stats.p_std

    val_n, J_n, S_n = field_derivatives(normalized, xn)
    cont_s, mom_s = scaled_residuals([val_n[:, 0], val_n[:, 1]], J_n, S_n, [J_n[0][2], J_n[1][2]],
                                     stats, props, coeffs, chi=chi)
    val, J, S = field_derivatives(_probe_field, m + s * xn)
    lap = [S[0][i] + S[1][i] for i in range(2)]
    cont = continuity_residual(J)
    mom = momentum_residual([val[:, 0], val[:, 1]], J, lap, [J[0][2], J[1][2]], props, coeffs, chi=chi)
    sc = ResidualScaling.from_stats(stats)
    errs = [np.max(relative_error(cont_s / sc.continuity_factor, cont))]
    errs += [np.max(relative_error(mom_s[i] / sc.momentum_factor[i], mom[i])) for i in range(2)]
    return float(max(errs))


def tiny_pipn_config(activation="tanh"):
    """A PIPN small enough (181 parameters in 2D) for entrywise finite differences."""
    return M.PipnConfig(local=(4,), global_=(4, 6), decoder=(4, 4), activation=activation)


def tiny_case(seed=0, n_interior=10, n_boundary=6):
    rng = np.random.default_rng(seed)
    spec = random_shape(rng, MMS_DOMAIN)
    return mms_case(spec, seed, counts={"interior": n_interior, "boundary": n_boundary})


def loss_gradient_errors(seed=0, step=1e-6, weights=None):
    """Per-entry relative error of the tape gradient of the full loss against central differences."""
    case = tiny_case(seed)
    stats = compute_normalization([case])
    nc = normalize_case(case, stats)
    cfg = tiny_pipn_config()
    params = M.init_parameters(cfg, seed)
    model = M.Model(params)
    weights = weights or Tr.LossWeights(1.0, 1.0, 1.0, 0.0)
    tape = T.Tape()
    leaves = tape.leaves(params.values)
    grads = T.parameter_gradient(Tr.compute_loss(model, nc, stats, weights, values=leaves).var, leaves)
    errs = []
    for name, v in params.values.items():
        def f(x, name=name):
            vals = dict(params.values)
            vals[name] = x
            return Tr.compute_loss(model, nc, stats, weights, values=vals).total
        errs.append(relative_error(grads[name], central_difference(f, v, step)))
    return np.concatenate(errs), params.n_params


FD_STEPS = (1e-4, 3e-5, 1e-5, 3e-6)


def spatial_derivative_errors(config=None, n_points=20, seed=0, steps=FD_STEPS):
    """Worst first/second-order discrepancy of model jets against central differences.

    Each probe perturbs one point of the cloud; PIPN outputs depend on the
    whole cloud, so the finite difference sees the max-pool path as well.
    Max-pooling is only piecewise smooth: the step is shrunk until the
    pooled argmax pattern is the same at +h and -h as at the probe, so the
    stencil stays on the smooth piece the jet differentiates.
    """
    config = config or M.PipnConfig(activation="tanh")
    rng = np.random.default_rng(seed)
    case = mms_case(random_shape(rng, MMS_DOMAIN), seed)
    stats = compute_normalization([case])
    nc = normalize_case(case, stats)
    params = M.init_parameters(config, seed)
    feats = M.case_features(nc)
    out = M.pipn_forward(params.values, config, nc.coords, feats)
    a0 = M.pipn_pool_argmax(params.values, config, nc.coords, feats)
    probes = rng.choice(case.n_points, size=n_points, replace=False)
    e1 = e2 = 0.0
    for i in probes:
        for k in range(config.dim):
            for h in steps:
                cp, cm = nc.coords.copy(), nc.coords.copy()
                cp[i, k] += h
                cm[i, k] -= h
                if (np.array_equal(M.pipn_pool_argmax(params.values, config, cp, feats), a0)
                        and np.array_equal(M.pipn_pool_argmax(params.values, config, cm, feats), a0)):
                    break
            fp = M.pipn_forward(params.values, config, cp, feats, ndir=0).value[i]
            fm = M.pipn_forward(params.values, config, cm, feats, ndir=0).value[i]
            d1 = (fp - fm) / (2 * h)
            # second order: central difference of the (separately checked) first-order slot,
            # which keeps roundoff at eps/h instead of eps/h^2
            gp = M.pipn_forward(params.values, config, cp, feats).d1[k][i]
            gm = M.pipn_forward(params.values, config, cm, feats).d1[k][i]
            d2 = (gp - gm) / (2 * h)
            e1 = max(e1, float(np.max(relative_error(out.d1[k][i], d1, floor=1e-3))))
            e2 = max(e2, float(np.max(relative_error(out.d2[k][i], d2, floor=1e-2))))
    return e1, e2


def run_all(seed=0):
    results = mms_residual_oracle(seed=seed)
    stats = NormalizationStats((1.5, -0.4), (2.3, 0.35), (0.2, -0.7), (1.7, 0.45), 0.9, 3.1,
                               0.0, 1.0, 0.0, 1.0)
    results.append(OracleResult("scaled vs physical residual round trip",
                                scaled_residual_roundtrip_error(stats), 1e-10))
    e1, e2 = spatial_derivative_errors(seed=seed)
    results.append(OracleResult("PIPN first spatial derivatives vs finite differences", e1, 1e-5))
    results.append(OracleResult("PIPN second spatial derivatives vs finite differences", e2, 1e-3))
    errs, n = loss_gradient_errors(seed=seed)
    results.append(OracleResult(f"loss parameter gradient vs finite differences ({n} params)",
                                float(np.max(errs)), 1e-4))
    return results
