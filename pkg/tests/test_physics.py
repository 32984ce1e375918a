import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from porenet import diffcore as dc
from porenet.dataset import NormalizationStats
from porenet.errors import ConfigurationError, DomainError
from porenet.oracles import (field_derivatives, mms_residuals, quasi_random_points,
                             scaled_residual_roundtrip_error)
from porenet.physics import (FluidProperties, PorousCoefficients, ResidualScaling, continuity_residual,
                             darcy_forchheimer_from_porosity, mms_exact, mms_forcing, mms_forcing_as_printed,
                             momentum_residual, scaled_residuals)


# ------------------------------------------------------------ porosity map

def test_fully_open_medium():
    c = darcy_forchheimer_from_porosity(1.0, 0.1)
    assert (c.D, c.F) == (0.0, 0.0)


def test_half_porosity_unit_grain():
    c = darcy_forchheimer_from_porosity(0.5, 1.0)
    assert c.D == pytest.approx(360.0, rel=1e-15)
    assert c.F == pytest.approx(7.2, rel=1e-15)


def test_independent_evaluation_with_exact_rationals():
    phi, dp = sp.Rational(9, 10), sp.Rational(1, 20)
    D = 180 * (1 - phi) ** 2 / (dp ** 2 * phi ** 3)
    F = sp.Rational(18, 10) * (1 - phi) / (dp * phi ** 3)
    c = darcy_forchheimer_from_porosity(0.9, 0.05)
    assert c.D == pytest.approx(float(D), rel=1e-12)
    assert c.F == pytest.approx(float(F), rel=1e-12)


@pytest.mark.parametrize("phi,dp", [(0.0, 0.1), (-0.1, 0.1), (1.01, 0.1), (0.5, 0.0), (0.5, -1.0)])
def test_porosity_domain_errors(phi, dp):
    with pytest.raises(DomainError):
        darcy_forchheimer_from_porosity(phi, dp)


def test_coefficients_decrease_monotonically_in_porosity():
    phis = np.linspace(0.01, 1.0, 200)
    cs = [darcy_forchheimer_from_porosity(p, 0.1) for p in phis]
    D = np.array([c.D for c in cs])
    F = np.array([c.F for c in cs])
    assert np.all(np.diff(D) < 0) and np.all(np.diff(F) < 0)
    assert D[0] > 1e8 and F[0] > 1e5
    assert D[-1] == 0 and F[-1] == 0


def test_property_validation():
    with pytest.raises(DomainError):
        FluidProperties(rho=0.0)
    with pytest.raises(DomainError):
        PorousCoefficients(D=-1.0)


# ------------------------------------------------------------ continuity

def test_continuity_examples():
    # u = (x, -y) and u = (x, y): jacobian[k][i] = du_i/dx_k
    assert continuity_residual([[1.0, 0.0], [0.0, -1.0]]) == 0.0
    assert continuity_residual([[1.0, 0.0], [0.0, 1.0]]) == 2.0


def test_continuity_of_mms_field():
    pts = np.random.default_rng(0).uniform(0, 2 * np.pi, size=(1000, 2))
    _, cont = mms_residuals(pts, FluidProperties(), PorousCoefficients(), 0.0)
    assert np.max(np.abs(cont)) < 1e-12


# ------------------------------------------------------------ momentum

def _random_state(rng, n=50):
    u = [rng.normal(size=n) for _ in range(2)]
    J = [[rng.normal(size=n) for _ in range(2)] for _ in range(2)]
    lap = [rng.normal(size=n) for _ in range(2)]
    gp = [rng.normal(size=n) for _ in range(2)]
    return u, J, lap, gp


def test_rest_state_has_zero_residual():
    z = np.zeros(3)
    r = momentum_residual([z, z], [[z, z], [z, z]], [z, z], [z, z], FluidProperties(),
                          PorousCoefficients(5.0, 2.0), chi=1)
    assert all(np.array_equal(ri, z) for ri in r)


def test_gating_equivalence():
    rng = np.random.default_rng(1)
    u, J, lap, gp = _random_state(rng)
    props = FluidProperties(1.3, 0.7)
    a = momentum_residual(u, J, lap, gp, props, PorousCoefficients(0.0, 0.0), chi=1)
    for coeffs in (PorousCoefficients(0.0, 0.0), PorousCoefficients(360.0, 7.2)):
        b = momentum_residual(u, J, lap, gp, props, coeffs, chi=0)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_drag_is_monotone_in_coefficients():
    rng = np.random.default_rng(2)
    u, J, lap, gp = _random_state(rng)
    props = FluidProperties()
    base = momentum_residual(u, J, lap, gp, props, PorousCoefficients(), chi=1)

    def drag(D, F):
        r = momentum_residual(u, J, lap, gp, props, PorousCoefficients(D, F), chi=1)
        return [np.abs(ri - bi) for ri, bi in zip(r, base)]

    grid = [0.0, 0.5, 2.0, 10.0, 100.0]
    for i in range(2):
        byD = np.array([drag(D, 1.0)[i] for D in grid])
        byF = np.array([drag(1.0, F)[i] for F in grid])
        assert np.all(np.diff(byD, axis=0) >= 0) and np.all(np.diff(byF, axis=0) >= 0)


def _symbolic_forcing(mu, rho, D, F, chi):
    x, y = sp.symbols("x y", real=True)
    ux, uy = sp.cos(x) * sp.sin(y), -sp.cos(y) * sp.sin(x)
    p = -rho / 4 * (sp.cos(2 * x) + sp.cos(2 * y))
    speed = sp.sqrt(ux ** 2 + uy ** 2 + sp.Rational(1, 10 ** 12))
    drag = chi * (mu * D + rho * F * speed / 2)
    fx = rho * (ux * sp.diff(ux, x) + uy * sp.diff(ux, y)) + sp.diff(p, x) \
        - mu * (sp.diff(ux, x, 2) + sp.diff(ux, y, 2)) + drag * ux
    fy = rho * (ux * sp.diff(uy, x) + uy * sp.diff(uy, y)) + sp.diff(p, y) \
        - mu * (sp.diff(uy, x, 2) + sp.diff(uy, y, 2)) + drag * uy
    return sp.lambdify((x, y), [sp.simplify(fx), sp.simplify(fy)], "numpy")


@pytest.mark.parametrize("chi", [0, 1])
def test_forcing_matches_symbolic_substitution(chi):
    props = FluidProperties(rho=1.5, mu=0.8)
    coeffs = darcy_forchheimer_from_porosity(0.5, 0.1)
    f_sym = _symbolic_forcing(props.mu, props.rho, coeffs.D, coeffs.F, chi)
    pts = np.random.default_rng(3).uniform(0, 2 * np.pi, size=(200, 2))
    expected = np.stack(f_sym(pts[:, 0], pts[:, 1]), axis=-1)
    got = mms_forcing(pts, props, coeffs, chi)
    scale = np.max(np.abs(expected))
    assert np.max(np.abs(got - expected)) < 1e-12 * scale


def test_mms_exact_values():
    u, _ = mms_exact(np.array([[0.0, 0.0], [np.pi / 2, np.pi / 2], [0.0, np.pi / 2]]))
    assert np.allclose(u, [[0, 0], [0, 0], [1, 0]], atol=1e-15)


def test_viscous_forcing_at_probe_point():
    f = mms_forcing(np.array([0.0, np.pi / 2]), FluidProperties(mu=1.0), PorousCoefficients(), chi=0)
    assert f[0] == pytest.approx(2.0, rel=1e-15)


def test_porous_forcing_vanishes_at_rest_point():
    props, coeffs = FluidProperties(), PorousCoefficients(100.0, 10.0)
    f1 = mms_forcing(np.array([0.0, 0.0]), props, coeffs, chi=1)
    assert np.array_equal(f1, [0.0, 0.0])


def test_printed_forcing_differs_only_in_y_viscous_sign():
    props, coeffs = FluidProperties(mu=0.6), PorousCoefficients(50.0, 4.0)
    pts = quasi_random_points(100)
    derived = mms_forcing(pts, props, coeffs, chi=1)
    printed = mms_forcing_as_printed(pts, props, coeffs, chi=1)
    u, _ = mms_exact(pts)
    assert np.allclose(derived[:, 0], printed[:, 0], rtol=1e-13, atol=0)
    assert np.allclose(derived[:, 1] - printed[:, 1], 4 * props.mu * u[:, 1], atol=1e-14)


@pytest.mark.parametrize("chi", [0.0, 1.0])
def test_mms_residual_small_on_random_points(chi):
    pts = np.random.default_rng(4).uniform(0, 2 * np.pi, size=(1000, 2))
    mom, cont = mms_residuals(pts, FluidProperties(), darcy_forchheimer_from_porosity(0.5, 0.1), chi)
    assert np.max(mom) < 1e-10
    assert np.max(np.abs(cont)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2 * np.pi))
def test_navier_stokes_residual_rotates_with_the_frame(theta):
    rng = np.random.default_rng(5)
    R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    u = rng.normal(size=2)
    G = rng.normal(size=(2, 2))  # G[i, k] = du_i/dx_k
    lap = rng.normal(size=2)
    gp = rng.normal(size=2)
    props = FluidProperties(1.2, 0.3)

    def residual(u, G, lap, gp):
        J = [[G[i, k] for i in range(2)] for k in range(2)]
        return np.array(momentum_residual(list(u), J, list(lap), list(gp), props, PorousCoefficients()))

    r = residual(u, G, lap, gp)
    r_rot = residual(R @ u, R @ G @ R.T, R @ lap, R @ gp)
    assert np.max(np.abs(r_rot - R @ r)) < 1e-10


# ------------------------------------------------------------ scaled residuals

def _stats(coord_mean, coord_std, vel_mean, vel_std, p_mean=0.0, p_std=1.0):
    return NormalizationStats(tuple(coord_mean), tuple(coord_std), tuple(vel_mean), tuple(vel_std),
                              p_mean, p_std, 0.0, 1.0, 0.0, 1.0)


def _roundtrip_errors(stats, chi, coeffs):
    return scaled_residual_roundtrip_error(stats, chi=chi, coeffs=coeffs)


def test_scaled_residuals_identity_normalization():
    stats = _stats((0, 0), (1, 1), (0, 0), (1, 1))
    sc = ResidualScaling.from_stats(stats)
    assert sc.continuity_factor == 1.0 and sc.momentum_factor == (1.0, 1.0)
    assert _roundtrip_errors(stats, 1, PorousCoefficients(20.0, 3.0)) < 1e-13


@pytest.mark.parametrize("chi", [0, 1])
def test_scaled_residual_round_trip(chi):
    stats = _stats((1.5, -0.4), (2.3, 0.35), (0.2, -0.7), (1.7, 0.45), p_mean=0.9, p_std=3.1)
    assert _roundtrip_errors(stats, chi, PorousCoefficients(36000.0, 72.0)) < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.05, 20.0), min_size=5, max_size=5),
       st.lists(st.floats(-3.0, 3.0), min_size=4, max_size=4))
def test_scaled_residual_round_trip_random_stats(stds, means):
    stats = _stats(means[:2], stds[:2], means[2:], stds[2:4], p_mean=0.3, p_std=stds[4])
    assert _roundtrip_errors(stats, 1, PorousCoefficients(50.0, 5.0)) < 1e-10


def test_scaled_continuity_of_divergence_free_field_is_zero():
    stats = _stats((0.5, 2.0), (3.0, 0.2), (0.1, 0.4), (0.9, 2.5))
    m, s = np.array(stats.coord_mean), np.array(stats.coord_std)

    def normalized(xp, yp):
        x, y = m[0] + s[0] * xp, m[1] + s[1] * yp
        ux, uy = dc.cos(x) * dc.sin(y), -dc.cos(y) * dc.sin(x)
        return (ux - 0.1) / 0.9, (uy - 0.4) / 2.5, 0.0 * x

    pts = np.random.default_rng(7).normal(size=(100, 2))
    val, J, S = field_derivatives(normalized, pts)
    cont, _ = scaled_residuals([val[:, 0], val[:, 1]], J, S, [J[0][2], J[1][2]], stats,
                               FluidProperties(), PorousCoefficients())
    assert np.max(np.abs(cont)) < 1e-12


def test_zero_sigma_is_configuration_error():
    with pytest.raises(ConfigurationError):
        ResidualScaling.from_stats(_stats((0, 0), (1, 0), (0, 0), (1, 1)))
