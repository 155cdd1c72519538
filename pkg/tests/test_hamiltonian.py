import numpy as np
import pytest
from numpy.testing import assert_allclose

from hamtransport.errors import ConfigError, NonSPD
from hamtransport.geometry import Chart, ConformalTorus, Flat, RoundSphere, ScaledFamily
from hamtransport.hamiltonian import (
    HamiltonianModel, PhasePoint, cost_action, evaluate, omega, ricci_potential, simpson, vector_field,
)
from hamtransport.flow import integrate_flow

RNG = np.random.default_rng(3)
FD = 1e-5


def models():
    fam = ScaledFamily(RoundSphere(2), "1 - 2*t", "-2", "0")
    return [
        HamiltonianModel(RoundSphere(2), "mechanical", "cos(x1)*sin(x2)"),
        HamiltonianModel(ConformalTorus("0.1*cos(x1) + 0.05*sin(x2)*t"), "drift", "0.2*sin(x1)*t",
                         "0.1*sin(x1) + 0.05*t*cos(x2)"),
        HamiltonianModel(fam, "time_dependent_mechanical", ricci_potential(fam, fam.c1)),
        HamiltonianModel(RoundSphere(3), "kinetic"),
    ]


@pytest.mark.parametrize("H", models(), ids=lambda H: H.kind)
def test_blocks_match_finite_differences(H):
    n = H.dim
    x = RNG.uniform(0.5, 2.5, (5, n))
    p = RNG.normal(size=(5, n))
    t = 0.13
    b = H.blocks(t, x, p)
    z = np.concatenate([x, p], 1)
    E = np.eye(n)
    fdx = np.stack([(H.evaluate(t, x + FD * e, p) - H.evaluate(t, x - FD * e, p)) / (2 * FD) for e in E], -1)
    fdp = np.stack([(H.evaluate(t, x, p + FD * e) - H.evaluate(t, x, p - FD * e)) / (2 * FD) for e in E], -1)
    assert_allclose(b.Hx, fdx, atol=1e-8)
    assert_allclose(b.Hp, fdp, atol=1e-8)
    J = H.field_jacobian(t, z)
    fdJ = np.stack([(H.vector_field(t, z + FD * e) - H.vector_field(t, z - FD * e)) / (2 * FD)
                    for e in np.eye(2 * n)], -1)
    assert_allclose(J, fdJ, atol=1e-7)
    ht = (H.evaluate(t + FD, x, p) - H.evaluate(t - FD, x, p)) / (2 * FD)
    assert_allclose(b.Ht, ht, atol=1e-8)
    hpt = (H.blocks(t + FD, x, p).Hp - H.blocks(t - FD, x, p).Hp) / (2 * FD)
    assert_allclose(b.Hpt, hpt, atol=1e-8)
    ham, vf, J2 = H.linearization(t, z)
    assert_allclose(ham, H.hamiltonian(t, z), rtol=1e-13)
    assert_allclose(vf, H.vector_field(t, z), rtol=1e-13, atol=1e-14)
    assert_allclose(J2, J)


@pytest.mark.parametrize("H", models(), ids=lambda H: H.kind)
def test_legendre_duality(H):
    n = H.dim
    x = RNG.uniform(0.5, 2.5, (5, n))
    v = RNG.normal(size=(5, n))
    t = 0.2
    p = H.momentum(t, x, v)
    assert_allclose(H.blocks(t, x, p).Hp, v, atol=1e-13)
    assert_allclose(np.sum(p * v, 1) - H.evaluate(t, x, p), H.lagrangian(t, x, v), atol=1e-13)


def test_flat_kinetic_values():
    H = HamiltonianModel(Flat(Chart.plane(2)), "kinetic")
    pt = PhasePoint(np.array([0.3, 0.1]), np.array([1.0, 2.0]))
    assert_allclose(evaluate(H, 0.0, pt), [2.5])
    tv = vector_field(H, 0.0, pt)
    assert_allclose(tv.dx, [[1.0, 2.0]])
    assert_allclose(tv.dp, [[0.0, 0.0]])


def test_omega_is_antisymmetric_and_canonical():
    a = RNG.normal(size=(4, 6))
    b = RNG.normal(size=(4, 6))
    assert_allclose(omega(a, b), -omega(b, a))
    e_x = np.array([1.0, 0, 0, 0])
    e_p = np.array([0, 0, 1.0, 0])
    assert omega(e_p, e_x) == 1.0


def test_kind_validation():
    with pytest.raises(ConfigError):
        HamiltonianModel(Flat(Chart.plane(2)), "kinetic", "x1")
    with pytest.raises(ConfigError):
        HamiltonianModel(Flat(Chart.plane(2)), "mechanical", "t*x1")
    with pytest.raises(ConfigError):
        HamiltonianModel(ScaledFamily(RoundSphere(2), "1 - 2*t", "-2", "0"), "mechanical")
    with pytest.raises(ConfigError):
        HamiltonianModel(Flat(Chart.plane(2)), "mechanical", None, "x1")
    with pytest.raises(ConfigError):
        HamiltonianModel(Flat(Chart.plane(2)), "relativistic")


def test_check_convex_rejects_bad_metric():
    class Bad(Flat):
        def g(self, t, x):
            return -super().g(t, x)

    H = HamiltonianModel(Bad(Chart.plane(2)), "kinetic")
    with pytest.raises(NonSPD):
        H.check_convex(0.0, np.zeros((1, 2)))


def test_ricci_potential_on_shrinking_sphere():
    fam = ScaledFamily(RoundSphere(2), "1 - 2*t", "-2", "0")
    U = ricci_potential(fam, fam.c1)
    # U = -(c1^2/8) R = -R/2 with R = 2/(1 - 2t)
    assert_allclose(U.value(0.1, np.array([[1.0, 0.0]])), -1.0 / 0.8)


def test_simpson_is_exact_for_cubics():
    t = np.linspace(0, 2, 9)
    assert_allclose(simpson(t**3, t[1] - t[0]), 4.0, rtol=1e-14)


def test_cost_action_of_translation():
    # straight lines: cost |a|^2 T / 2
    H = HamiltonianModel(Flat(Chart.plane(2)), "kinetic")
    a = np.array([0.3, -0.4])
    tr = integrate_flow(H, np.concatenate([[0.0, 0.0], a])[None, :], 0.0, 2.0, 64)
    assert_allclose(cost_action(H, tr), [0.25], rtol=1e-13)
    tr.action = None
    assert_allclose(cost_action(H, tr), [0.25], rtol=1e-13)
