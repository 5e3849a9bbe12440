import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentbook.exceptions import ParameterError
from latentbook.model import ModelParams, derived_scales, g_factor, gamma


def test_g_factor_known_values():
    assert g_factor(0.0) == 0.0
    assert g_factor(1.0) == pytest.approx(9.0 / 22.0, rel=1e-15)
    # 2 z^2 (2+z)^2 / ((1+z)^2 (8+3z)) at z = 2
    assert g_factor(2.0) == pytest.approx(2 * 4 * 16 / (9 * 14), rel=1e-15)


def test_g_factor_rejects_negative():
    with pytest.raises(ParameterError):
        g_factor(-0.1)


@given(st.floats(0.0, 50.0))
def test_gamma_is_a_probability(y):
    v = gamma(y)
    assert 0.0 < v <= 1.0
    assert gamma(-y) == 1.0


def test_gamma_vectorised():
    y = np.array([-1.0, 0.0, 1.0])
    np.testing.assert_allclose(gamma(y), [1.0, 1.0, math.exp(-1.0)])


def test_dimensionless_round_trip():
    p = ModelParams.from_dimensionless(0.35, 0.112, k=2.0, omega=3.0, L_latent=7.0)
    assert p.k_ll == pytest.approx(0.35)
    assert p.k_lr == pytest.approx(0.112)
    assert p.ratio == pytest.approx(0.32)
    assert p.J == pytest.approx(7.0 * 3.0 / 4.0)
    assert p.J_revealed == pytest.approx(p.D_revealed * 7.0)


def test_from_lengths_matches_fields():
    p = ModelParams.from_lengths(4599.0, 2.12, 0.042, 0.0084)
    assert p.l_latent == pytest.approx(0.042)
    assert p.l_revealed == pytest.approx(0.0084)
    assert p.k_ll == pytest.approx(2.12 * 0.042)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(D_latent=-1.0, D_revealed=0.0, omega=1.0, k=1.0),
        dict(D_latent=1.0, D_revealed=-1e-3, omega=1.0, k=1.0),
        dict(D_latent=1.0, D_revealed=0.0, omega=0.0, k=1.0),
        dict(D_latent=1.0, D_revealed=0.0, omega=1.0, k=math.inf),
        dict(D_latent=1.0, D_revealed=0.0, omega=1.0, k=1.0, L_latent=math.nan),
    ],
)
def test_invalid_parameters_rejected(kwargs):
    with pytest.raises(ParameterError):
        ModelParams(**kwargs)


def test_json_round_trip(tmp_path):
    p = ModelParams(D_latent=0.3, D_revealed=0.01, omega=2.0, k=1.5, L_latent=10.0)
    path = tmp_path / "p.json"
    p.to_json(path)
    assert ModelParams.from_json(path) == p
    assert set(json.loads(path.read_text())) >= {"D_latent", "D_revealed", "omega", "k", "L_latent"}


def test_unequal_rates_refused_where_unsupported():
    p = ModelParams(D_latent=1.0, D_revealed=1.0, omega=1.0, k=1.0, omega_unreveal=2.0)
    with pytest.raises(ParameterError):
        p.require_equal_rates("test")


def test_critical_rate_scale():
    p = ModelParams.from_dimensionless(0.5, 0.5)
    s = derived_scales(p)
    # omega_c = D_l k^2 / zeta_c^2 makes k l_l equal zeta_c at omega = omega_c
    assert math.sqrt(p.D_latent / s.omega_c) * p.k == pytest.approx(s.zeta_c)


@settings(max_examples=50)
@given(st.floats(0.01, 3.0), st.floats(0.1, 10.0), st.floats(0.1, 1e4))
def test_rescaling_round_trip(k_ll, k, L):
    p = ModelParams.from_dimensionless(k_ll, 0.5 * k_ll, k=k, L_latent=L)
    xi = np.linspace(0.0, 3.0, 7)
    np.testing.assert_allclose(p.from_x(p.to_x(xi)), xi, rtol=1e-12, atol=1e-15)
    rho = np.linspace(0.0, 5.0, 7)
    np.testing.assert_allclose(p.unscale_density(p.rescale_density(rho)), rho, rtol=1e-12)
