import numpy as np
import pytest
import sympy as sp
from numpy.testing import assert_allclose

from hamtransport.errors import ChartBoundary, ConfigError, GridTooCoarse, NonSPD, StepTooLarge
from hamtransport.geometry import (
    Chart, ConformalTorus, Flat, MeasureModel, RoundSphere, ScaledFamily, bianchi_residual, chart_difference,
    laplace_beltrami_fd, scalar_curvature_evolution_check, small_cholesky, small_inv, spd_inverse,
)

RNG = np.random.default_rng(7)


def sphere_points(n=6):
    return np.stack([RNG.uniform(0.5, 2.6, n), RNG.uniform(0, 2 * np.pi, n)], axis=1)


def test_small_inverse_and_cholesky_match_numpy():
    A = RNG.normal(size=(20, 2, 2))
    spd = A @ np.swapaxes(A, 1, 2) + 0.5 * np.eye(2)
    assert_allclose(small_inv(spd), np.linalg.inv(spd), rtol=1e-12, atol=1e-12)
    assert_allclose(small_cholesky(spd), np.linalg.cholesky(spd), rtol=1e-12, atol=1e-12)
    B = RNG.normal(size=(5, 3, 3))
    spd3 = B @ np.swapaxes(B, 1, 2) + np.eye(3)
    assert_allclose(spd_inverse(spd3), np.linalg.inv(spd3), rtol=1e-12)


def test_spd_inverse_rejects_indefinite_metric():
    with pytest.raises(NonSPD):
        spd_inverse(np.array([[[1.0, 2.0], [2.0, 1.0]]]))
    with pytest.raises(NonSPD):
        spd_inverse(np.array([[[1.0, 0, 0], [0, -1.0, 0], [0, 0, 1.0]]]))


def test_sphere_christoffel_symbols():
    # Gamma^theta_phiphi = -sin cos, Gamma^phi_thetaphi = cot
    S = RoundSphere(2)
    x = sphere_points()
    gam = S.christoffel(0.0, x)
    th = x[:, 0]
    assert_allclose(gam[:, 0, 1, 1], -np.sin(th) * np.cos(th), atol=1e-14)
    assert_allclose(gam[:, 1, 0, 1], np.cos(th) / np.sin(th), atol=1e-14)
    assert_allclose(gam[:, 0, 0, 0], 0.0, atol=1e-14)


@pytest.mark.parametrize("dim,r0", [(2, 1.0), (2, 2.0), (3, 1.0)])
def test_sphere_pack_matches_finite_differences(dim, r0):
    S = RoundSphere(dim, r0)
    x = np.full((3, dim), 1.2)
    x[:, -1] = [0.1, 2.0, 4.0]
    pack = S.curvature_pack(0.0, x)
    fd = S.fd_pack(0.0, x)
    assert_allclose(pack.R, dim * (dim - 1) / r0**2)
    assert_allclose(fd.R, pack.R, rtol=1e-5)
    assert_allclose(fd.Rc, pack.Rc, atol=1e-5)


def test_conformal_torus_scalar_curvature_against_sympy():
    phi_text = "0.2*sin(x1)*cos(x2)"
    M = ConformalTorus(phi_text)
    x1, x2 = sp.symbols("x1 x2")
    phi = 0.2 * sp.sin(x1) * sp.cos(x2)
    R = sp.lambdify((x1, x2), -2 * sp.exp(-2 * phi) * (sp.diff(phi, x1, 2) + sp.diff(phi, x2, 2)))
    x = RNG.uniform(0, 2 * np.pi, (8, 2))
    ref = R(x[:, 0], x[:, 1])
    assert_allclose(M.curvature_pack(0.0, x).R, ref, atol=1e-12)
    assert_allclose(M.fd_pack(0.0, x).R, ref, atol=1e-5)


def test_laplace_beltrami_of_cos_theta():
    # Delta cos(theta) = -2 cos(theta) on the unit sphere
    S = RoundSphere(2)
    x = sphere_points()
    lap = laplace_beltrami_fd(lambda y: np.cos(y[:, 0]), lambda y: S.g(0.0, y), x)
    assert_allclose(lap, -2 * np.cos(x[:, 0]), atol=1e-6)


def test_scaled_family_scale_equation_and_curvature():
    fam = ScaledFamily(RoundSphere(2), "1 - 2*t", "-2", "0")
    assert fam.check_scale(0.0, 0.3) < 1e-12
    x = sphere_points(3)
    for t in (0.0, 0.1, 0.25):
        assert_allclose(fam.curvature_pack(t, x).R, 2.0 / (1 - 2 * t))
        assert_allclose(fam.gdot(t, x), -2.0 * RoundSphere(2).g(t, x))
    assert np.max(fam.ricci_flow_residual(0.1, x)) < 1e-12
    assert np.max(bianchi_residual(fam, 0.1, x)) < 1e-12


def test_scaled_family_rejects_wrong_scale():
    fam = ScaledFamily(RoundSphere(2), "1 - t", "-2", "0")
    with pytest.raises(ConfigError) as err:
        fam.check_scale(0.0, 0.3)
    assert err.value.context["key"] == "metric.s"


@pytest.mark.parametrize("s,c1,c2,t0,t1", [
    ("1 - 2*t", "-2", "0", 0.0, 0.3),
    ("sqrt(t)*(1 + 2*t)", "2*sqrt(t)", "1/(2*t)", 0.5, 1.0),
    ("t*(2 - 2*log(t))", "-2", "1/t", 0.5, 1.0),
])
def test_scalar_curvature_evolution(s, c1, c2, t0, t1):
    fam = ScaledFamily(RoundSphere(2), s, c1, c2)
    assert scalar_curvature_evolution_check(fam, np.linspace(t0 + 0.05, t1 - 0.05, 7)) <= 1e-6


def test_scalar_curvature_evolution_flags_coarse_step():
    fam = ScaledFamily(RoundSphere(2), "1 - 2*t", "-2", "0")
    with pytest.raises(GridTooCoarse):
        scalar_curvature_evolution_check(fam, [0.4], h=0.04, tol=1e-12)


def test_time_derivatives_of_scaled_family():
    fam = ScaledFamily(RoundSphere(2), "sqrt(t)*(1 + 2*t)", "2*sqrt(t)", "1/(2*t)")
    x = sphere_points(4)
    td = fam.time_derivatives(0.7, x)
    sd = fam.s.d(0.7) / fam.s(0.7)
    assert_allclose(td.tr_gdot, 2 * sd, rtol=1e-12)
    assert_allclose(td.div_gdot, 0.0, atol=1e-12)


def test_chart_checks():
    S = RoundSphere(2)
    assert S.chart.legal_mask(np.array([[1.0, 7.0]]))[0]
    assert not S.chart.legal_mask(np.array([[0.05, 1.0]]))[0]
    with pytest.raises(ChartBoundary) as err:
        S.chart.check(np.array([[1.0, 1.0], [3.1, 0.0]]), t=0.5)
    assert err.value.context["particle"] == 1
    with pytest.raises(StepTooLarge):
        S.chart.require_stencil(0.1)
    Chart.torus(2).require_stencil(10.0)


def test_chart_difference_wraps_periodic_axes():
    T = Flat(Chart.torus(2)).chart
    d = chart_difference(T, np.array([0.1, 6.2]), np.array([6.2, 0.1]))
    assert_allclose(d, [0.1 + 2 * np.pi - 6.2, 6.2 - 0.1 - 2 * np.pi])


def test_measure_model_validation():
    with pytest.raises(ConfigError):
        MeasureModel("weighted")
    with pytest.raises(ConfigError):
        MeasureModel("hj_weighted")
    with pytest.raises(ConfigError):
        MeasureModel("lebesgue")
