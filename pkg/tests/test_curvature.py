import numpy as np
import pytest
from numpy.testing import assert_allclose

from hamtransport.curvature import (
    curvature_matrix_analytic, curvature_scaling_check, curvature_trace_analytic, curvature_via_frames,
    darboux_residual, lagrangian_rate, volume_distortion_from_frame, volume_distortion_track,
)
from hamtransport.errors import MissingHJState, NotHomogeneous, UnsupportedKind
from hamtransport.expr import ScalarField, TimeFunction
from hamtransport.flow import integrate_flow
from hamtransport.geometry import Chart, ConformalTorus, Flat, MeasureModel, RoundSphere, ScaledFamily
from hamtransport.hamiltonian import HamiltonianModel, ricci_potential

RNG = np.random.default_rng(11)


def phase_points(N, lo=0.6, hi=2.4, n=2):
    return np.concatenate([RNG.uniform(lo, hi, (N, n)), RNG.normal(size=(N, n))], axis=1)


def families():
    shrink = ScaledFamily(RoundSphere(2), "1 - 2*t", "-2", "0")
    perel = ScaledFamily(RoundSphere(2), "sqrt(t)*(1 + 2*t)", "2*sqrt(t)", "1/(2*t)")
    return [
        ("flat_u", HamiltonianModel(Flat(Chart.torus(2)), "mechanical", "cos(x1) + 0.5*sin(x2)"), 0.0),
        ("sphere_u", HamiltonianModel(RoundSphere(2), "mechanical", "cos(x1)*sin(x2)"), 0.0),
        ("sphere3", HamiltonianModel(RoundSphere(3), "kinetic"), 0.0),
        ("conformal", HamiltonianModel(ConformalTorus("0.1*cos(x1) + 0.05*sin(x2)"), "kinetic"), 0.0),
        ("conformal_t", HamiltonianModel(ConformalTorus("0.1*cos(x1) + 0.05*sin(x2)*t"),
                                         "time_dependent_mechanical", "0.3*sin(x1 + t)"), 0.6),
        ("shrinking", HamiltonianModel(shrink, "time_dependent_mechanical", ricci_potential(shrink, shrink.c1)), 0.2),
        ("perelman", HamiltonianModel(perel, "time_dependent_mechanical", ricci_potential(perel, perel.c1)), 0.6),
        ("drift_flat", HamiltonianModel(Flat(Chart.plane(2)), "drift", "0.2*x1^2 + 0.1*t*sin(x2)",
                                        "0.1*sin(x1) + 0.05*t*cos(x2)"), 0.6),
        ("drift_scaled", HamiltonianModel(perel, "drift", "0.2*cos(x1)", "0.1*cos(x1) + 0.05*t*sin(x2)"), 0.6),
    ]


@pytest.mark.parametrize("name,H,t", families(), ids=lambda v: v if isinstance(v, str) else "")
def test_frames_match_closed_form_trace(name, H, t):
    z = phase_points(20, n=H.dim)
    cm = curvature_via_frames(H, t, z)
    an = curvature_trace_analytic(H, t, z)
    assert np.max(np.abs(cm.trace - an) / np.maximum(1.0, np.abs(an))) <= 1e-3
    assert np.max(cm.vertical_residual) < 1e-4
    assert darboux_residual(H, t, z[:4]) < 1e-8


def test_flat_mechanical_curvature_is_hessian_of_u():
    H = HamiltonianModel(Flat(Chart.torus(2)), "mechanical", "cos(x1)")
    R = curvature_via_frames(H, 0.0, np.array([[0.0, 0.0, 0.3, 0.2]])).R
    assert_allclose(R[0], [[-1.0, 0.0], [0.0, 0.0]], atol=1e-6)


def test_unit_sphere_curvature_matrix():
    # kappa = 1: R = |v|^2 I - v v^T in an orthonormal frame, v = L^T g^{-1} p
    H = HamiltonianModel(RoundSphere(2), "kinetic")
    z = phase_points(10)
    x, p = z[:, :2], z[:, 2:]
    g = RoundSphere(2).g(0.0, x)
    L = np.linalg.cholesky(g)
    v = np.einsum("nji,nj->ni", L, np.linalg.solve(g, p[..., None])[..., 0])
    ref = np.einsum("n,ij->nij", np.sum(v * v, 1), np.eye(2)) - v[:, :, None] * v[:, None, :]
    assert_allclose(curvature_matrix_analytic(H, 0.0, z), ref, atol=1e-12)
    assert_allclose(curvature_via_frames(H, 0.0, z).R, ref, atol=1e-5)


def test_lambda_squared_scaling():
    H = HamiltonianModel(RoundSphere(2), "kinetic")
    z = phase_points(8)
    for lam in (0.5, 2.0, 3.0):
        assert curvature_scaling_check(H, z, lam) <= 1e-6
        assert curvature_scaling_check(H, z, lam, method="analytic") <= 1e-12
    with pytest.raises(NotHomogeneous):
        curvature_scaling_check(HamiltonianModel(RoundSphere(2), "mechanical", "cos(x1)"), z, 2.0)


def test_unsupported_closed_form_matrix():
    H = HamiltonianModel(Flat(Chart.plane(2)), "drift", None, "0.1*sin(x1)")
    with pytest.raises(UnsupportedKind):
        curvature_matrix_analytic(H, 0.0, phase_points(2))


def test_volume_distortion_is_frame_invariant():
    H = HamiltonianModel(RoundSphere(2), "mechanical", "0.3*cos(x1)")
    meas = MeasureModel("weighted", weight=ScalarField("0.2*cos(x1)*cos(x2)", 2))
    z = phase_points(5)
    c, s = np.cos(0.7), np.sin(0.7)
    a = volume_distortion_from_frame(H, meas, 0.0, z)
    b = volume_distortion_from_frame(H, meas, 0.0, z, rotation=np.array([[c, -s], [s, c]]))
    assert_allclose(a, b, atol=1e-12)


def test_lagrangian_rate_matches_flow_derivative():
    fam = ScaledFamily(RoundSphere(2), "sqrt(t)*(1 + 2*t)", "2*sqrt(t)", "1/(2*t)")
    H = HamiltonianModel(fam, "drift", "0.2*cos(x1)", "0.1*cos(x1) + 0.05*t*sin(x2)")
    z0 = phase_points(3, 1.2, 1.8)
    tr = integrate_flow(H, z0, 0.6, 0.7, 400)
    lag = np.stack([H.running_cost(t, z) for t, z in zip(tr.t_grid, tr.points)])
    fd = np.gradient(lag, tr.h, axis=0, edge_order=2)
    k = 200
    assert_allclose(lagrangian_rate(H, tr.t_grid[k], tr.points[k]), fd[k], atol=1e-7)


@pytest.mark.parametrize("kind", ["hj_weighted", "weighted"])
def test_volume_rates_match_finite_differences(kind):
    fam = ScaledFamily(RoundSphere(2), "sqrt(t)*(3 - 2*t)", "-2*sqrt(t)", "1/(2*t)")
    H = HamiltonianModel(fam, "time_dependent_mechanical", ricci_potential(fam, fam.c1))
    if kind == "hj_weighted":
        meas = MeasureModel(kind, k=TimeFunction("t^(-1/2)"))
    else:
        meas = MeasureModel(kind, weight=ScalarField("0.2*cos(x1)*cos(x2) + 0.1*t*sin(x1)", 2))
    z0 = phase_points(4, 1.2, 1.8)
    tr = integrate_flow(H, z0, 0.5, 0.7, 800)
    u = 0.3 + tr.action
    vt = volume_distortion_track(H, meas, tr, u)
    d1 = np.gradient(vt.v, tr.h, axis=0, edge_order=2)
    d2 = np.gradient(vt.vdot, tr.h, axis=0, edge_order=2)
    inner = slice(5, -5)
    assert_allclose(vt.vdot[inner], d1[inner], atol=1e-6)
    assert_allclose(vt.vddot[inner], d2[inner], rtol=1e-6, atol=1e-6)


def test_hj_weighted_needs_u():
    H = HamiltonianModel(RoundSphere(2), "kinetic")
    tr = integrate_flow(H, phase_points(2, 1.2, 1.8), 0.0, 0.1, 16)
    with pytest.raises(MissingHJState):
        volume_distortion_track(H, MeasureModel("hj_weighted", k=TimeFunction("1")), tr)
