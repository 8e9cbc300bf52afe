import math

import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import tldpinn  # noqa: F401  (enables float64)
from tldpinn.autodiff import (
    MAX_ORDER,
    ParameterVector,
    Span,
    Tower,
    apply_primitive,
    concat,
    cos,
    grad,
    sin,
    tanh,
    taylor_eval,
)
from tldpinn.checks import derivative_loss, grad_fd_error, random_network, tower_fd_error
from tldpinn.errors import NumericalOverflow, OrderError, UnsupportedPrimitive
from tldpinn.network import MLP


def _mlp_net(mlp):
    return lambda P, x: mlp.apply(P, concat([x[..., None] if isinstance(x, Tower) else x]))[..., 0]


# ---------------------------------------------------------------- taylor_eval

def test_identity_tower():
    t = taylor_eval(lambda P, x: x, None, 0.7, 2)
    np.testing.assert_allclose(t.coeffs, [0.7, 1.0, 0.0])


def test_tanh_tower_at_origin():
    t = taylor_eval(lambda P, x: tanh(x), None, 0.0, 2)
    np.testing.assert_allclose(t.coeffs, [0.0, 1.0, 0.0], atol=1e-15)


def test_tower_has_order_plus_one_coefficients():
    for k in range(MAX_ORDER + 1):
        assert taylor_eval(lambda P, x: sin(x), None, 0.2, k).coeffs.shape == (k + 1,)


def test_two_layer_mlp_derivatives_match_central_differences():
    mlp = MLP(1, 8, 2, modified=False)
    P = mlp.init(3)
    P = P.replace(np.asarray(P.values) + 0.2 * np.random.default_rng(3).standard_normal(len(P)))
    net = lambda Q, x: mlp.apply(Q, concat([x[..., None]]) if isinstance(x, Tower) else x[..., None])[..., 0]  # noqa: E731
    ad = np.asarray(taylor_eval(net, P, 0.3, 4).coeffs)
    for k in range(1, 5):
        f = lambda x: float(np.asarray(taylor_eval(net, P, x, k - 1).coeffs)[k - 1])  # noqa: E731
        errs = []
        for h in (1e-3, 1e-4):
            fd = (-f(0.3 + 2 * h) + 8 * f(0.3 + h) - 8 * f(0.3 - h) + f(0.3 - 2 * h)) / (12 * h)
            errs.append(abs(fd - ad[k]) / abs(ad[k]))
        assert min(errs) < 1e-5, (k, errs)


def test_order_above_four_rejected():
    with pytest.raises(OrderError):
        taylor_eval(lambda P, x: x, None, 0.0, 5)


def test_unsupported_primitive_jax():
    with pytest.raises(UnsupportedPrimitive):
        taylor_eval(lambda P, x: jnp.exp(x), None, 0.1, 2)


def test_unsupported_primitive_numpy():
    with pytest.raises(UnsupportedPrimitive):
        taylor_eval(lambda P, x: np.exp(x), None, 0.1, 2)


def test_unsupported_primitive_by_name():
    with pytest.raises(UnsupportedPrimitive):
        apply_primitive("exp", 1.0)


def test_non_finite_tower_raises():
    with pytest.raises(NumericalOverflow):
        taylor_eval(lambda P, x: x * 1e200 * 1e200, None, 0.5, 2)


def test_two_dimensional_point_uses_direction():
    f = lambda P, xy: sin(xy[0]) * cos(xy[1])  # noqa: E731
    tx = taylor_eval(f, None, [0.3, 0.4], 2)
    ty = taylor_eval(f, None, [0.3, 0.4], 2, direction=[0.0, 1.0])
    np.testing.assert_allclose(tx.coeffs[1], math.cos(0.3) * math.cos(0.4), rtol=1e-14)
    np.testing.assert_allclose(ty.coeffs[2], -math.sin(0.3) * math.cos(0.4), rtol=1e-14)


# ---------------------------------------------------------- primitive towers

def _tanh_derivs(t):
    s = 1 - t * t
    return [t, s, -2 * t * s, -2 * s * s + 4 * t * t * s, 16 * t * s * s - 8 * t ** 3 * s]


@pytest.mark.parametrize("name", ["tanh", "sin", "cos"])
def test_primitive_towers_match_analytic_derivatives(name):
    xs = np.random.default_rng(1).uniform(-2, 2, 10)
    tower = apply_primitive(name, Tower.variable(xs, 4))
    if name == "tanh":
        exact = _tanh_derivs(np.tanh(xs))
    elif name == "sin":
        exact = [np.sin(xs), np.cos(xs), -np.sin(xs), -np.cos(xs), np.sin(xs)]
    else:
        exact = [np.cos(xs), -np.sin(xs), -np.cos(xs), np.sin(xs), np.cos(xs)]
    for k in range(5):
        np.testing.assert_allclose(tower.coeffs[k], exact[k], rtol=1e-10, atol=1e-12)


def test_product_and_sum_towers():
    xs = np.random.default_rng(2).uniform(-1, 1, 10)
    x = Tower.variable(xs, 4)
    t = x * x * x + 2.0 * x
    exact = [xs ** 3 + 2 * xs, 3 * xs ** 2 + 2, 6 * xs, 6 + 0 * xs, 0 * xs]
    for k in range(5):
        np.testing.assert_allclose(t.coeffs[k], exact[k], rtol=1e-12, atol=1e-12)


def test_composite_chain_rule():
    # d/dx sin(x^2) = 2x cos(x^2), d2 = 2 cos(x^2) - 4x^2 sin(x^2)
    x0 = 0.37
    t = taylor_eval(lambda P, x: sin(x * x), None, x0, 2)
    np.testing.assert_allclose(t.coeffs[1], 2 * x0 * math.cos(x0 ** 2), rtol=1e-13)
    np.testing.assert_allclose(t.coeffs[2], 2 * math.cos(x0 ** 2) - 4 * x0 ** 2 * math.sin(x0 ** 2),
                               rtol=1e-13)


coef = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(st.lists(coef, min_size=5, max_size=5), st.lists(coef, min_size=5, max_size=5))
def test_product_is_leibniz_convolution(a, b):
    fa = Tower([jnp.asarray(v / math.factorial(k)) for k, v in enumerate(a)])
    fb = Tower([jnp.asarray(v / math.factorial(k)) for k, v in enumerate(b)])
    prod = np.asarray((fa * fb).coeffs)
    for k in range(5):
        expected = sum(math.comb(k, j) * a[j] * b[k - j] for j in range(k + 1))
        assert prod[k] == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_nth_and_derivative_errors():
    t = Tower.variable(0.5, 2)
    assert float(t.nth(1)) == 1.0
    with pytest.raises(OrderError):
        t.nth(3)
    with pytest.raises(OrderError):
        t.derivative(3)


# ------------------------------------------------------------------------ grad

def test_grad_of_half_square_norm():
    P = ParameterVector.from_arrays([("w", np.array([1.0, -2.0, 3.0]))])
    g = grad(lambda Q: 0.5 * jnp.sum(Q.values ** 2), P)
    np.testing.assert_allclose(g.values, [1.0, -2.0, 3.0])
    assert g.layout == P.layout


def test_grad_of_product():
    g = grad(lambda v: v[0] * v[1], np.array([2.0, 3.0]))
    np.testing.assert_allclose(g, [3.0, 2.0])


def test_grad_of_mlp_mse_componentwise():
    mlp = MLP(1, 6, 1, modified=False)
    P = mlp.init(0)
    P = P.replace(np.asarray(P.values) + 0.1 * np.random.default_rng(0).standard_normal(len(P)))
    x = np.linspace(-1, 1, 8)[:, None]
    y = np.sin(3 * x)

    def loss(Q):
        return jnp.mean((mlp.apply(Q, x) - y) ** 2)

    g = np.asarray(grad(loss, P).values)
    v0 = np.asarray(P.values)
    h = 1e-6
    fd = np.empty_like(v0)
    for i in range(len(v0)):
        e = np.zeros_like(v0)
        e[i] = h
        fd[i] = (float(loss(P.replace(v0 + e))) - float(loss(P.replace(v0 - e)))) / (2 * h)
    np.testing.assert_allclose(fd, g, rtol=1e-6, atol=1e-10)


def test_grad_non_finite_loss():
    with pytest.raises(NumericalOverflow):
        grad(lambda v: jnp.sum(v) / 0.0, np.array([1.0]))


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 10 ** 6))
def test_grad_is_linear(a, b, seed):
    v = np.random.default_rng(seed).standard_normal(4)
    L1 = lambda u: jnp.sum(jnp.sin(u) * u)  # noqa: E731
    L2 = lambda u: jnp.sum(u ** 3) + u[0] * u[1]  # noqa: E731
    lhs = grad(lambda u: a * L1(u) + b * L2(u), v)
    rhs = a * grad(L1, v) + b * grad(L2, v)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_gradient_through_derivative_towers_matches_fd():
    model, P = random_network(5)
    err = grad_fd_error(derivative_loss(model, np.array([-0.4, 0.1, 0.8])), P, n_probe=30)
    assert err < 1e-5


def test_network_towers_match_fd():
    model, P = random_network(7)
    assert tower_fd_error(model, P, np.array([-0.3, 0.2, 0.9])) < 1e-5


def test_gradient_of_uxx_matches_fd_in_theta():
    model, P = random_network(11)
    xs = jnp.array([0.1, 0.6])

    def uxx(Q):
        return jnp.sum(model(Q, Tower.variable(xs, 2))[..., 0].nth(2))

    assert grad_fd_error(uxx, P, n_probe=30) < 1e-5


# ------------------------------------------------------------ ParameterVector

def test_layout_must_partition():
    with pytest.raises(ValueError):
        ParameterVector(np.zeros(5), [Span("a.W", 0, (2,)), Span("b.W", 3, (2,))])
    with pytest.raises(ValueError):
        ParameterVector(np.zeros(4), [Span("a.W", 0, (2,)), Span("a.W", 2, (2,))])
    with pytest.raises(ValueError):
        ParameterVector(np.zeros(5), [Span("a.W", 0, (2,)), Span("b.W", 2, (2,))])


def test_layers_masks_and_last_hidden_layer():
    mlp = MLP(3, 4, 2)
    P = mlp.init(0)
    last = mlp.layer_names[-1]
    assert last in P.layers
    m = P.mask([last])
    assert m.sum() == P.span(f"{last}.W").length + P.span(f"{last}.b").length
    np.testing.assert_array_equal(P[f"{last}.b"], np.zeros(1))
