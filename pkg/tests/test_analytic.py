import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentbook.analytic import (
    BookProfile,
    Provenance,
    critical_zeta,
    dreq_rescaled,
    dreq_slope_rescaled,
    jump_at_origin,
    max_amplitude,
    stationary_dr0,
    stationary_dreq,
)
from latentbook.exceptions import ParameterError, UnstableRegimeError
from latentbook.model import ModelParams, g_factor


def _ode_residuals(x, rho_b, rho_a, phi, zeta, eta):
    """Stationary equations on x > 0 in units k = omega = 1, by central differences."""
    h = x[1] - x[0]

    def d2(f):
        return (f[2:] - 2 * f[1:-1] + f[:-2]) / h**2

    xm = x[1:-1]
    e = np.exp(-xm)
    r_b = zeta**2 * d2(rho_b) - rho_b[1:-1]
    r_a = zeta**2 * d2(rho_a) - (e * rho_a[1:-1] + (1 - e) * phi[1:-1])
    r_p = eta**2 * d2(phi) + rho_b[1:-1] - e * rho_a[1:-1] - (1 - e) * phi[1:-1]
    return r_b, r_a, r_p


@pytest.mark.parametrize("zeta", [0.1, 0.35, 1.0, 1.0 + 5e-5, 1.5, 2.5])
def test_dreq_closed_form_solves_the_equations(zeta):
    x = np.linspace(0.05, 12.0, 24001)
    rb, ra, phi = dreq_rescaled(x, zeta)
    for r in _ode_residuals(x, rb, ra, phi, zeta, zeta):
        assert np.max(np.abs(r)) < 1e-5


@pytest.mark.parametrize("zeta", [0.1, 0.35, 1.5])
def test_dr0_closed_form_solves_the_equations(zeta):
    p = ModelParams.from_dimensionless(zeta, 0.0)
    x = np.linspace(0.05, 12.0, 24001)
    b = stationary_dr0(p, x)
    r_b, r_a, r_p = _ode_residuals(x, b.rho_latent_bid, b.rho_latent_ask, b.phi_revealed, zeta, 0.0)
    assert np.max(np.abs(r_b)) < 1e-5
    assert np.max(np.abs(r_a)) < 1e-5
    assert np.max(np.abs(r_p)) < 1e-12


@pytest.mark.parametrize("zeta", [0.2, 1.0, 1.7])
def test_dreq_boundary_conditions(zeta):
    rb, ra, phi = dreq_rescaled(np.array([0.0, 1e-7, 60.0]), zeta)
    # phi odd and continuous, latent books meet at the origin
    assert abs(phi[0]) < 1e-14
    assert rb[0] == pytest.approx(ra[0], rel=1e-14)
    assert rb[0] == pytest.approx(g_factor(zeta), rel=1e-14)
    # far field: linear latent ask, empty revealed book
    assert ra[2] == pytest.approx(60.0, rel=1e-10)
    assert abs(phi[2]) < 1e-10
    # derivative matching for the latent books: rho_B'(0+) = -rho_A'(0+)
    h = 1e-6
    d = np.array(dreq_rescaled(np.array([0.0, h]), zeta))
    assert (d[0, 1] - d[0, 0]) / h == pytest.approx(-(d[1, 1] - d[1, 0]) / h, rel=1e-4)


def test_degenerate_branch_is_continuous():
    x = np.linspace(0.0, 10.0, 201)
    on = dreq_rescaled(x, 1.0)[2]
    for dz in (2e-4, -2e-4, 5e-5, -5e-5):
        off = dreq_rescaled(x, 1.0 + dz)[2]
        assert np.max(np.abs(on - off)) < 2e-4


# 40-digit evaluations of the textbook form (mpmath) near the removable pole
PHI_NEAR_POLE = [
    (1.0002, 0.001, -0.00018175365895476860106),
    (1.0002, 0.05, -0.0090793677235638026774),
    (0.97, 0.001, -0.00019167230123217777293),
    (0.97, 0.05, -0.0095746209747815726476),
]


@pytest.mark.parametrize("zeta, x, ref", PHI_NEAR_POLE)
def test_revealed_density_near_the_pole(zeta, x, ref):
    assert dreq_rescaled(np.array([x]), zeta)[2][0] == pytest.approx(ref, rel=1e-12)


def test_dreq_slope_matches_finite_difference():
    for zeta in (0.3, 1.0, 1.8):
        h = 1e-7
        phi = dreq_rescaled(np.array([0.0, h, 2 * h]), zeta)[2]
        fd = (-3 * phi[0] + 4 * phi[1] - phi[2]) / (2 * h)
        assert fd == pytest.approx(dreq_slope_rescaled(zeta), abs=1e-6)


def test_critical_values():
    assert critical_zeta(0.0) == 2.0
    zc = critical_zeta(1.0)
    assert zc == pytest.approx(1.875129794, abs=1e-9)
    # root of z^3 + 2 z^2 - 3 z - 8
    assert zc**3 + 2 * zc**2 - 3 * zc - 8 == pytest.approx(0.0, abs=1e-12)
    assert dreq_slope_rescaled(zc) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ParameterError):
        critical_zeta(0.5)


def test_dr0_jump_and_limits():
    p = ModelParams.from_dimensionless(0.35, 0.0, k=2.0, L_latent=3.0)
    b = stationary_dr0(p)
    # phi(0+) = L l_l / 2 - L / k ; jump phi(0-) - phi(0+) = -2 phi(0+)
    phi0 = 3.0 * p.l_latent / 2 - 3.0 / 2.0
    assert b.phi_revealed[0] == pytest.approx(phi0, rel=1e-12)
    assert jump_at_origin(p) == pytest.approx(-2 * phi0, rel=1e-12)
    assert b.rho_latent_ask[-1] == pytest.approx(3.0 * b.grid[-1], rel=1e-8)


def test_unequal_rates_scale_revealed_book():
    base = ModelParams.from_dimensionless(0.35, 0.0)
    p = base.replace(omega_unreveal=2.0)
    np.testing.assert_allclose(stationary_dr0(p).phi_revealed, 0.5 * stationary_dr0(base).phi_revealed)


def test_max_amplitude_estimates():
    p = ModelParams.from_dimensionless(0.35, 0.0)
    a = max_amplitude(p)
    assert a.estimate == pytest.approx(1 - 0.35 / 2)
    assert a.grid_max == pytest.approx(1 - 0.35 / 2, rel=1e-12)
    with pytest.raises(UnstableRegimeError):
        max_amplitude(ModelParams.from_dimensionless(2.1, 0.0))
    with pytest.raises(UnstableRegimeError):
        max_amplitude(ModelParams.from_dimensionless(1.9, 1.9))


def test_llob_limit():
    p = ModelParams.from_dimensionless(0.02, 0.02)
    x, _, ra, phi = stationary_dreq(p).rescaled()
    total = ra + np.maximum(-phi, 0.0)
    sel = (x >= 0.1) & (x <= 3.0)
    np.testing.assert_allclose(total[sel], x[sel], rtol=0.02)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 1.8), st.floats(0.1, 1e4))
def test_densities_linear_in_L(zeta, L):
    p1 = ModelParams.from_dimensionless(zeta, zeta)
    pL = p1.replace(L_latent=L)
    b1, bL = stationary_dreq(p1), stationary_dreq(pL)
    np.testing.assert_allclose(bL.phi_revealed, L * b1.phi_revealed, rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(bL.rescaled()[3], b1.rescaled()[3], rtol=1e-12, atol=1e-15)


def test_profile_csv_round_trip(tmp_path):
    p = ModelParams.from_dimensionless(0.35, 0.35)
    b = stationary_dreq(p)
    b.to_csv(tmp_path / "b.csv")
    back = BookProfile.from_csv(tmp_path / "b.csv", p)
    for name in ("grid", "rho_latent_bid", "rho_latent_ask", "phi_revealed"):
        np.testing.assert_array_equal(getattr(back, name), getattr(b, name))


def test_full_line_symmetry():
    b = stationary_dreq(ModelParams.from_dimensionless(0.5, 0.5))
    x, rho_b, rho_a, phi = b.full_line()
    np.testing.assert_array_equal(rho_b, rho_a[::-1])
    np.testing.assert_array_equal(phi, -phi[::-1])
    assert np.all(np.diff(x) >= 0)


def test_profile_validation():
    with pytest.raises(ParameterError):
        BookProfile(np.array([0.0, 1.0]), np.zeros(2), np.zeros(3), np.zeros(2), None, Provenance.BVP)
    with pytest.raises(ParameterError):
        BookProfile(np.array([1.0, 0.5]), np.zeros(2), np.zeros(2), np.zeros(2), None, Provenance.BVP)
    assert math.isfinite(g_factor(0.35))
