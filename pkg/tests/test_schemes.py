import math

import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import tldpinn  # noqa: F401
from tldpinn.autodiff import Tower, sin
from tldpinn.checks import schemes_suite
from tldpinn.errors import UnknownScheme
from tldpinn.pdes import heat_operator
from tldpinn.schemes import (
    SCHEMES,
    builtin,
    cn_residual,
    discrete_residual,
    format_tableau,
    integrate_linear,
    order_conditions,
    required_orders,
    stability_function,
    stage_residuals,
)


def test_builtin_names():
    assert set(SCHEMES) == {"forward_euler", "backward_euler", "trapezoidal", "crank_nicolson",
                            "rk2", "rk4", "gauss_legendre2"}
    with pytest.raises(UnknownScheme):
        builtin("leapfrog")


@pytest.mark.parametrize("name", SCHEMES)
def test_order_conditions_hold(name):
    for label, r in order_conditions(builtin(name)):
        assert abs(r) < 1e-14, label


def test_rk2_fails_third_order_conditions():
    res = dict(order_conditions(builtin("rk2"), upto=3))
    assert abs(res["b.c^2 = 1/3"]) > 0.05


def test_gauss_legendre_nodes():
    np.testing.assert_allclose(builtin("gauss_legendre2").c, [0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6])


def test_tableau_flags():
    assert not builtin("rk4").implicit
    assert builtin("crank_nicolson").implicit and not builtin("crank_nicolson").needs_stage_networks
    assert not builtin("trapezoidal").needs_stage_networks
    assert builtin("gauss_legendre2").needs_stage_networks
    assert "gauss_legendre2" in format_tableau(builtin("gauss_legendre2"))


def test_gauss_legendre_step_matches_direct_2x2_solve():
    tab = builtin("gauss_legendre2")
    lam, tau, u0 = -3.0, 0.2, 1.5
    s = math.sqrt(3) / 6
    A = np.array([[1 - tau * lam / 4, -tau * lam * (0.25 - s)],
                  [-tau * lam * (0.25 + s), 1 - tau * lam / 4]])
    k = np.linalg.solve(A, [lam * u0, lam * u0])
    expected = u0 + tau * 0.5 * (k[0] + k[1])
    np.testing.assert_allclose(integrate_linear(tab, lam, u0, tau, 1)[1], expected, rtol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.floats(-20, 0.5), st.floats(-2, 2))
def test_stability_function_of_crank_nicolson(x, y):
    z = complex(x, y)
    R = stability_function(builtin("crank_nicolson"), z)
    assert abs(R - (1 + z / 2) / (1 - z / 2)) < 1e-12 * max(1, abs(R))


@settings(max_examples=30, deadline=None)
@given(st.floats(-1e3, -1e-3))
def test_implicit_schemes_are_a_stable_on_negative_axis(x):
    for name in ("backward_euler", "crank_nicolson", "gauss_legendre2"):
        assert abs(stability_function(builtin(name), x)) <= 1 + 1e-12


def test_forward_euler_unstable_for_large_steps():
    assert abs(stability_function(builtin("forward_euler"), -3.0)) > 1


def test_integrate_linear_matches_stability_power():
    tab = builtin("rk4")
    out = integrate_linear(tab, -1.0, 1.0, 0.1, 10)
    np.testing.assert_allclose(out[-1], stability_function(tab, -0.1).real ** 10, rtol=1e-14)


def _heat_field(amp):
    x = Tower.variable(jnp.linspace(-0.9, 0.9, 7), 2)
    return x, amp * sin(math.pi * x)


def test_crank_nicolson_heat_residual_vanishes_for_exact_amplification():
    tau = 0.05
    z = -math.pi ** 2 * tau
    g = (1 + z / 2) / (1 - z / 2)
    _, u_prev = _heat_field(1.0)
    _, u_next = _heat_field(g)
    r = cn_residual(u_next, u_prev, heat_operator, tau)
    np.testing.assert_allclose(r, 0.0, atol=1e-12)
    r2 = discrete_residual(builtin("crank_nicolson"), u_next, u_prev, heat_operator, tau)
    np.testing.assert_allclose(r2, 0.0, atol=1e-12)


def test_crank_nicolson_residual_nonzero_for_exponential_decay():
    tau = 0.05
    _, u_prev = _heat_field(1.0)
    _, u_next = _heat_field(math.exp(-math.pi ** 2 * tau))
    r = cn_residual(u_next, u_prev, heat_operator, tau)
    assert np.max(np.abs(r)) > 1e-4


@pytest.mark.parametrize("name", ["forward_euler", "backward_euler", "trapezoidal", "rk2", "rk4"])
def test_discrete_residual_vanishes_on_scheme_amplification(name):
    tab = builtin(name)
    tau = 0.02
    g = stability_function(tab, -math.pi ** 2 * tau).real
    x = Tower.variable(jnp.linspace(-0.9, 0.9, 7), 2 * tab.q + 2)
    u_prev = sin(math.pi * x)
    u_next = g * sin(math.pi * x)
    r = discrete_residual(tab, u_next, u_prev, heat_operator, tau)
    np.testing.assert_allclose(r, 0.0, atol=1e-9)


def test_gauss_legendre_stage_residuals():
    tab = builtin("gauss_legendre2")
    tau, lam = 0.05, -math.pi ** 2
    A = np.eye(2) - tau * lam * tab.a
    kc = np.linalg.solve(A, lam * np.ones(2))  # stage coefficients per unit amplitude
    x = Tower.variable(jnp.linspace(-0.9, 0.9, 5), 2)
    base = sin(math.pi * x)
    stages = [kc[0] * base, kc[1] * base]
    u_next = (1 + tau * tab.b @ kc) * base
    for r in stage_residuals(tab, stages, u_next, base, heat_operator, tau):
        np.testing.assert_allclose(r, 0.0, atol=1e-11)
    with pytest.raises(ValueError):
        discrete_residual(tab, u_next, base, heat_operator, tau)


def test_required_orders():
    assert required_orders(builtin("crank_nicolson"), 2) == (2, 2)
    assert required_orders(builtin("forward_euler"), 2) == (2, 0)
    assert required_orders(builtin("rk4"), 2)[0] == 8
    assert required_orders(builtin("gauss_legendre2"), 4) == (4, 0)


def test_schemes_suite_all_pass():
    assert all(c.passed for c in schemes_suite())
