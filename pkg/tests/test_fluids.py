"""Two-phase fluid model: Corey curves, densities, fractional flow."""

import numpy as np
import pytest

from fracgraph.fluids import FluidModel
from fracgraph.units import PSI_TO_PA


@pytest.fixture
def fluid():
    return FluidModel()


def test_defaults_give_mobility_ratio_five(fluid):
    assert fluid.mu_o_cp / fluid.mu_w_cp == pytest.approx(5.0)
    assert fluid.corey_n == 2.0
    fluid.validate()


def test_relperm_endpoints(fluid):
    krw, kro, dkrw, dkro = fluid.relperm(np.array([0.2, 0.8]))
    assert krw[0] == 0.0 and kro[0] == pytest.approx(1.0)
    assert krw[1] == pytest.approx(1.0) and kro[1] == 0.0
    # derivatives are clamped to zero outside the mobile window
    krw, kro, dkrw, dkro = fluid.relperm(np.array([0.05, 0.95]))
    assert dkrw[0] == 0.0 and dkro[0] == 0.0
    assert dkrw[1] == 0.0 and dkro[1] == 0.0


def test_relperm_midpoint_hand_value(fluid):
    # s_w = 0.5 -> s_e = 0.5, quadratic Corey: krw = kro = 0.25
    krw, kro, dkrw, dkro = fluid.relperm(np.array([0.5]))
    assert krw[0] == pytest.approx(0.25)
    assert kro[0] == pytest.approx(0.25)
    # d(se^2)/ds_w = 2 * 0.5 / 0.6
    assert dkrw[0] == pytest.approx(2.0 * 0.5 / 0.6)
    assert dkro[0] == pytest.approx(-2.0 * 0.5 / 0.6)


def test_relperm_derivatives_match_fd(fluid):
    s = np.linspace(0.25, 0.75, 11)
    h = 1e-7
    _, _, dkrw, dkro = fluid.relperm(s)
    krw_p, kro_p, _, _ = fluid.relperm(s + h)
    krw_m, kro_m, _, _ = fluid.relperm(s - h)
    np.testing.assert_allclose(dkrw, (krw_p - krw_m) / (2 * h), rtol=1e-6)
    np.testing.assert_allclose(dkro, (kro_p - kro_m) / (2 * h), rtol=1e-6)


def test_density_exponential_and_derivative(fluid):
    p = np.array([20.0e6])
    rho, drho = fluid.density("water", p)
    c = fluid.c_w_per_psi / PSI_TO_PA
    expect = 1000.0 * np.exp(c * (p[0] - fluid.p_ref_pa))
    assert rho[0] == pytest.approx(expect, rel=1e-12)
    assert drho[0] == pytest.approx(c * expect, rel=1e-12)
    with pytest.raises(ValueError):
        fluid.density("gas", p)


def test_incompressible_limit():
    fl = FluidModel(c_w_per_psi=0.0, c_o_per_psi=0.0)
    rho, drho = fl.density("oil", np.array([5e6, 50e6]))
    assert np.all(rho == 850.0)
    assert np.all(drho == 0.0)


def test_fractional_flow_range_and_monotonicity(fluid):
    s = np.linspace(0.2, 0.8, 201)
    f, df = fluid.fractional_flow(s)
    assert f[0] == 0.0 and f[-1] == pytest.approx(1.0)
    assert np.all(np.diff(f) >= 0.0)
    assert np.all((f >= 0.0) & (f <= 1.0))


def test_fractional_flow_derivative_matches_fd(fluid):
    s = np.linspace(0.25, 0.75, 21)
    h = 1e-7
    _, df = fluid.fractional_flow(s)
    fp, _ = fluid.fractional_flow(s + h)
    fm, _ = fluid.fractional_flow(s - h)
    np.testing.assert_allclose(df, (fp - fm) / (2 * h), rtol=1e-5)


def test_fractional_flow_hand_value(fluid):
    # s_e = 0.5: lam_w = 0.25/1, lam_o = 0.25/5, f_w = 1/(1 + 1/5) = 5/6
    f, _ = fluid.fractional_flow(np.array([0.5]))
    assert f[0] == pytest.approx(5.0 / 6.0)


def test_welge_shock_saturation(fluid):
    # quadratic Corey with M = 5 and zero connate water in normalized
    # coordinates: the tangent condition f(s*) / s* = f'(s*) reduces to
    # 6 s*^2 = 1, so S* = s_wc + 0.6 / sqrt(6)
    from fracgraph.verify import bl_shock_saturation
    s_star = bl_shock_saturation(fluid)
    assert s_star == pytest.approx(0.2 + 0.6 / np.sqrt(6.0), abs=1e-10)


def test_validation_rejects_empty_mobile_window():
    with pytest.raises(ValueError):
        FluidModel(s_wc=0.6, s_or=0.5).validate()
