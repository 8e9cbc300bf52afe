"""Property suites shared by the ``verify`` command and the test-suite.

Each suite returns a list of :class:`Check` rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from tldpinn.autodiff import ParameterVector, Tower, grad
from tldpinn.metrics import ode_order, theorem_study
from tldpinn.network import FourierEmbedding1D, PINNModel
from tldpinn.schemes import SCHEMES, builtin, order_conditions, stability_function


@dataclass
class Check:
    label: str
    value: float
    bound: str
    passed: bool

    def row(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.label:<48s} {self.value:<12.4g} {self.bound}"


def format_table(checks) -> str:
    return "\n".join(c.row() for c in checks)


# ------------------------------------------------------------------ autodiff

def random_network(seed: int):
    """Small random Fourier-embedded network with non-trivial biases."""
    rng = np.random.default_rng(seed)
    M = int(rng.integers(1, 4))
    width = int(rng.integers(4, 12))
    depth = int(rng.integers(1, 4))
    modified = bool(rng.integers(0, 2))
    model = PINNModel.build(FourierEmbedding1D(M, 2.0 + rng.uniform()), width, depth, 1, modified)
    P = model.init(seed)
    values = np.asarray(P.values) + 0.1 * rng.standard_normal(len(P))
    return model, P.replace(values)


_STENCIL = ((-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0))  # fourth-order central, over 12h


def tower_fd_error(model, params, xs, order: int = 4, hs=(1e-3, 1e-4)) -> float:
    """Largest norm-wise relative error of ``d/dx coeff[k-1]`` against ``coeff[k]``.

    Each order takes the best step of the sweep ``hs``.
    """
    xs = np.asarray(xs, dtype=float)

    def coeffs(x, k):
        # batched 1-D evaluation; taylor_eval itself takes one point at a time
        return np.asarray(model(params, Tower.variable(jnp.asarray(x), k))[..., 0].coeffs)

    ad = coeffs(xs, order)
    shifted = np.concatenate([xs + s * h for h in hs for s, _ in _STENCIL])
    worst = 0.0
    for k in range(1, order + 1):
        vals = coeffs(shifted, k - 1)[k - 1].reshape(len(hs), len(_STENCIL), len(xs))
        best = math.inf
        for j, h in enumerate(hs):
            fd = sum(w * vals[j, i] for i, (_, w) in enumerate(_STENCIL)) / (12 * h)
            best = min(best, float(np.linalg.norm(fd - ad[k]) / max(np.linalg.norm(ad[k]), 1e-300)))
        worst = max(worst, best)
    return worst


def derivative_loss(model, xs):
    """Scalar loss touching every derivative order up to 4."""
    xs = jnp.asarray(xs, dtype=float)
    weights = jnp.array([1.0, 0.5, 0.25, 0.125, 0.0625])

    def loss(P):
        c = Tower.variable(xs, 4)
        out = model(P, c)[..., 0]
        return jnp.mean(jnp.sum(weights[:, None] * out.coeffs, axis=0) ** 2)
    return loss


def grad_fd_error(loss, params: ParameterVector, h: float = 1e-6, n_probe: int | None = None,
                  seed: int = 0) -> float:
    """Norm-wise relative error of :func:`grad` against central differences.

    ``n_probe`` restricts the comparison to a random subset of coordinates.
    """
    g = np.asarray(grad(loss, params).values)
    v0 = np.asarray(params.values)
    idx = np.arange(len(params))
    if n_probe is not None and n_probe < len(idx):
        idx = np.sort(np.random.default_rng(seed).choice(idx, n_probe, replace=False))
    E = np.zeros((len(idx), len(v0)))
    E[np.arange(len(idx)), idx] = h
    f = jax.jit(jax.vmap(lambda v: loss(params.replace(v))))
    vals = np.asarray(f(jnp.asarray(np.concatenate([v0 + E, v0 - E]))))
    fd = (vals[:len(idx)] - vals[len(idx):]) / (2 * h)
    return float(np.linalg.norm(fd - g[idx]) / max(np.linalg.norm(g[idx]), 1e-300))


def autodiff_suite(n_nets: int = 20, seed: int = 0, rtol: float = 1e-5, n_probe: int = 40):
    rng = np.random.default_rng(seed)
    checks = []
    for i in range(n_nets):
        model, P = random_network(seed + i)
        xs = rng.uniform(-1.0, 1.0, size=5)
        e_tower = tower_fd_error(model, P, xs)
        checks.append(Check(f"net {i}: derivatives up to order 4", e_tower, f"< {rtol:g}", e_tower < rtol))
        e_grad = grad_fd_error(derivative_loss(model, xs), P, n_probe=n_probe, seed=seed + i)
        checks.append(Check(f"net {i}: parameter gradient", e_grad, f"< {rtol:g}", e_grad < rtol))
    return checks


# ------------------------------------------------------------------- schemes

_CLOSED_FORMS = {
    "forward_euler": lambda z: 1 + z,
    "backward_euler": lambda z: 1 / (1 - z),
    "crank_nicolson": lambda z: (1 + z / 2) / (1 - z / 2),
    "trapezoidal": lambda z: (1 + z / 2) / (1 - z / 2),
    "rk2": lambda z: 1 + z + z ** 2 / 2,
    "rk4": lambda z: 1 + z + z ** 2 / 2 + z ** 3 / 6 + z ** 4 / 24,
    "gauss_legendre2": lambda z: (1 + z / 2 + z ** 2 / 12) / (1 - z / 2 + z ** 2 / 12),
}

ODE_ORDER_TOL = {1: 0.2, 2: 0.2, 4: 0.3}


def schemes_suite(tol: float = 1e-12):
    checks = []
    z = np.linspace(-3.0, 0.5, 10) + 0.3j * np.linspace(-1, 1, 10)
    for name in SCHEMES:
        tab = builtin(name)
        worst = max((abs(r) for _, r in order_conditions(tab)), default=0.0)
        checks.append(Check(f"{name}: order conditions (order {tab.classical_order})", worst,
                            f"< {tol:g}", worst < tol))
        diff = float(np.max(np.abs(stability_function(tab, z) - _CLOSED_FORMS[name](z))))
        checks.append(Check(f"{name}: stability function", diff, f"< {tol:g}", diff < tol))
        if tab.implicit:
            amp = float(np.max(np.abs(stability_function(tab, np.array([-10.0, -100.0, -1000.0])))))
            checks.append(Check(f"{name}: |R(z)| on the negative axis", amp, "<= 1", amp <= 1.0))
        order = ode_order(tab)
        band = ODE_ORDER_TOL[tab.classical_order]
        checks.append(Check(f"{name}: fitted order on u'=-u", order,
                            f"{tab.classical_order} +- {band}", abs(order - tab.classical_order) <= band))
    return checks


def theorem_suite():
    study = theorem_study()
    checks = []
    for name, order in study["orders"].items():
        expected = builtin(name).classical_order
        band = ODE_ORDER_TOL[expected]
        checks.append(Check(f"{name}: fitted order on heat_test", order,
                            f"{expected} +- {band}", abs(order - expected) <= band))
    return checks
