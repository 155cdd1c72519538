import numpy as np
import pytest
from numpy.testing import assert_allclose

from hamtransport.errors import ConfigError
from hamtransport.expr import ScalarField, TimeFunction


def test_scalar_field_derivatives_match_hand_values():
    f = ScalarField("x1^2*sin(x2) + t*x1", 2)
    x = np.array([[0.5, 0.3], [1.0, -0.2]])
    t = 0.7
    assert_allclose(f.value(t, x), x[:, 0] ** 2 * np.sin(x[:, 1]) + t * x[:, 0])
    g = f.grad(t, x)
    assert_allclose(g[:, 0], 2 * x[:, 0] * np.sin(x[:, 1]) + t)
    assert_allclose(g[:, 1], x[:, 0] ** 2 * np.cos(x[:, 1]))
    h = f.hess(t, x)
    assert_allclose(h[:, 0, 1], 2 * x[:, 0] * np.cos(x[:, 1]))
    assert_allclose(h[:, 1, 0], h[:, 0, 1])
    assert_allclose(f.dt(t, x), x[:, 0])
    assert_allclose(f.grad_dt(t, x), np.stack([np.ones(2), np.zeros(2)], axis=1))


def test_third_derivative_is_symmetric_and_correct():
    f = ScalarField("x1^3*x2 + cos(x2)", 2)
    x = np.array([[0.4, 1.1]])
    d3 = f.third(0.0, x)
    assert d3.shape == (1, 2, 2, 2)
    assert_allclose(d3[0, 0, 0, 0], 6 * x[0, 1])
    assert_allclose(d3[0, 0, 0, 1], 6 * x[0, 0])
    assert_allclose(d3[0, 1, 0, 0], d3[0, 0, 0, 1])
    assert_allclose(d3[0, 1, 1, 1], np.sin(x[0, 1]))


def test_constant_field_broadcasts_over_batch():
    f = ScalarField("2", 3)
    assert f.value(0.0, np.zeros((4, 3))).shape == (4,)
    assert f.hess(0.0, np.zeros((4, 3))).shape == (4, 3, 3)
    assert ScalarField("0", 2).is_zero
    assert not ScalarField("x1", 2).time_dependent
    assert ScalarField("t*x1", 2).time_dependent


def test_time_function_derivatives():
    k = TimeFunction("t^(-1/2)")
    assert_allclose(k(4.0), 0.5)
    assert_allclose(k.d(4.0), -0.5 * 4.0 ** -1.5)
    assert_allclose(k.dd(4.0), 0.75 * 4.0 ** -2.5)


@pytest.mark.parametrize("text", ["__import__('os')", "x3 + 1", "foo(x1)", "x1 if t else 0", "x1.real"])
def test_grammar_rejects_names_outside_whitelist(text):
    with pytest.raises(ConfigError) as err:
        ScalarField(text, 2, key="hamiltonian.U.expr")
    assert err.value.context["key"] == "hamiltonian.U.expr"


def test_time_function_rejects_coordinates():
    with pytest.raises(ConfigError):
        TimeFunction("x1 + t", key="params.k")
