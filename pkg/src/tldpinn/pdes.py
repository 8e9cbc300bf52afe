"""Benchmark problems ``u_t = N(u)`` with their spatial operators.

1-D operators map a :class:`~tldpinn.autodiff.Tower` of ``u`` to a tower of
``N[u]`` (``max_derivative_order`` orders shorter).  The 2-D Navier-Stokes
problem works on :class:`FieldJet` states carrying ``(u, v, w)`` towers along
both axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import jax
import numpy as np

from tldpinn.autodiff import Tower
from tldpinn.errors import OrderError, UnknownProblem


@dataclass(frozen=True)
class PDEProblem:
    name: str
    spatial_dim: int
    domain: tuple  # ((lo, hi),) or ((xlo, xhi), (ylo, yhi))
    T: float
    boundary: str  # "periodic" | "dirichlet"
    initial_condition: Callable
    operator: Callable
    coefficients: dict = field(default_factory=dict)
    max_derivative_order: int = 2
    boundary_value: Callable | None = None
    fields: tuple = ("u",)
    constraints: Callable | None = None
    exact: Callable | None = None
    experimental: bool = False

    def __post_init__(self):
        if self.max_derivative_order > 4:
            raise ValueError("operators may use at most 4th derivatives")
        if self.boundary not in ("periodic", "dirichlet"):
            raise ValueError(f"unknown boundary type {self.boundary!r}")

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def lengths(self) -> tuple:
        return tuple(hi - lo for lo, hi in self.domain)

    def g(self, x):
        if self.boundary_value is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.boundary_value(x)

    def with_operator(self, operator, max_derivative_order=0, name=None) -> "PDEProblem":
        return replace(self, operator=operator, max_derivative_order=max_derivative_order,
                       name=name or self.name)


def apply_operator(p: PDEProblem, u):
    """``N[u]`` at the tower's base point(s)."""
    order = u.order
    if order < p.max_derivative_order:
        raise OrderError(f"{p.name} needs towers of order {p.max_derivative_order}, got {order}")
    return p.operator(u).value


# ------------------------------------------------------------------ operators

def zero_operator(u):
    return 0.0 * u


def heat_operator(u):
    return u.derivative(2)


def _rd_operator(u, d1, d2):
    return d1 * u.derivative(2) + d2 * (u * u)


def _ac_operator(u, g1, g2):
    return g1 * u.derivative(2) + g2 * (u - u * u * u)


def _ks_operator(u, alpha, beta, gamma):
    return -(alpha * (u * u.derivative(1)) + beta * u.derivative(2) + gamma * u.derivative(4))


class _Bound:
    """Picklable operator with bound coefficients."""

    def __init__(self, fn, **coef):
        self.fn = fn
        self.coef = coef

    def __call__(self, u):
        return self.fn(u, **self.coef)

    def __repr__(self):
        return f"{self.fn.__name__}({self.coef})"


# ------------------------------------------------------------- Navier-Stokes

class FieldJet:
    """Values and per-axis towers of several fields at a batch of points.

    ``jets[name]`` is a tuple of towers, one per spatial axis, all sharing the
    same value.  ``value`` is the value of the evolved field.
    """

    __slots__ = ("jets", "evolved")

    def __init__(self, jets: dict, evolved: str = "w"):
        self.jets = dict(jets)
        self.evolved = evolved

    @property
    def value(self):
        return self.jets[self.evolved][0].value

    @property
    def order(self) -> int:
        return min(t.order for ts in self.jets.values() for t in ts)

    def d(self, name: str, axis: int, k: int = 1):
        return self.jets[name][axis].nth(k)

    def val(self, name: str):
        return self.jets[name][0].value

    def _zip(self, other, op):
        if isinstance(other, FieldJet):
            return FieldJet({n: tuple(op(a, b) for a, b in zip(ts, other.jets[n]))
                             for n, ts in self.jets.items()}, self.evolved)
        raise TypeError("FieldJet arithmetic needs another FieldJet")

    def __add__(self, other):
        return self._zip(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._zip(other, lambda a, b: a - b)

    def __mul__(self, s):
        if isinstance(s, (FieldJet, Tower)):
            raise TypeError("FieldJet supports only scalar multiplication")
        return FieldJet({n: tuple(t * s for t in ts) for n, ts in self.jets.items()}, self.evolved)

    __rmul__ = __mul__


jax.tree_util.register_pytree_node(
    FieldJet,
    lambda s: (tuple(s.jets.values()), (tuple(s.jets), s.evolved)),
    lambda aux, children: FieldJet(dict(zip(aux[0], children)), aux[1]),
)


def _ns_operator(s: FieldJet, Re):
    if s.order < 2:
        raise OrderError("Navier-Stokes operator needs second derivatives")
    u, v = s.val("u"), s.val("v")
    rhs = -(u * s.d("w", 0) + v * s.d("w", 1)) + (s.d("w", 0, 2) + s.d("w", 1, 2)) / Re
    return Tower((rhs,))


def ns_constraints(s: FieldJet):
    """Divergence and vorticity-definition residuals."""
    div = s.d("u", 0) + s.d("v", 1)
    vort = s.val("w") - (s.d("v", 0) - s.d("u", 1))
    return {"divergence": div, "vorticity": vort}


def ns_initial(x, y):
    """Default initial state ``(u, v, w)`` on the last axis.

    ``w0 = sin(x)cos(y) + 0.1 cos(3x) sin(2y)``; velocities come from the
    zero-mean stream function ``psi`` with ``-lap psi = w0``, ``u = psi_y``,
    ``v = -psi_x``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.sin(x) * np.cos(y) + 0.1 * np.cos(3 * x) * np.sin(2 * y)
    # psi = sin x cos y / 2 + 0.1 cos 3x sin 2y / 13
    u = -np.sin(x) * np.sin(y) / 2 + 0.2 * np.cos(3 * x) * np.cos(2 * y) / 13
    v = -np.cos(x) * np.cos(y) / 2 + 0.3 * np.sin(3 * x) * np.sin(2 * y) / 13
    return np.stack([u, v, w], axis=-1)


def taylor_green_initial(x, y):
    """Taylor-Green vortex ``w0 = 2 cos x cos y`` with its velocity field."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u = -np.cos(x) * np.sin(y)
    v = np.sin(x) * np.cos(y)
    w = 2.0 * np.cos(x) * np.cos(y)
    return np.stack([u, v, w], axis=-1)


# ---------------------------------------------------------------- benchmarks

def _heat_exact(t, x):
    return np.exp(-math.pi**2 * t) * np.sin(math.pi * np.asarray(x, dtype=float))


def benchmark(name: str) -> PDEProblem:
    if name == "heat_test":
        return PDEProblem(
            "heat_test", 1, ((-1.0, 1.0),), 1.0, "dirichlet",
            lambda x: np.sin(math.pi * np.asarray(x, dtype=float)),
            heat_operator, {}, 2, exact=_heat_exact,
        )
    if name == "rd":
        c = {"d1": 0.01, "d2": 0.01}
        return PDEProblem(
            "rd", 1, ((-1.0, 1.0),), 1.0, "dirichlet",
            lambda x: np.sin(2 * math.pi * np.asarray(x, dtype=float))
            * (1 + np.cos(2 * math.pi * np.asarray(x, dtype=float))),
            _Bound(_rd_operator, **c), c, 2,
        )
    if name == "ac":
        c = {"gamma1": 1e-4, "gamma2": 5.0}
        return PDEProblem(
            "ac", 1, ((-1.0, 1.0),), 1.0, "periodic",
            lambda x: np.asarray(x, dtype=float) ** 2 * np.cos(math.pi * np.asarray(x, dtype=float)),
            _Bound(_ac_operator, g1=c["gamma1"], g2=c["gamma2"]), c, 2,
        )
    if name == "ks_regular":
        c = {"alpha": 5.0, "beta": 0.5, "gamma": 0.005}
        return PDEProblem(
            "ks_regular", 1, ((-1.0, 1.0),), 1.0, "periodic",
            lambda x: -np.sin(math.pi * np.asarray(x, dtype=float)),
            _Bound(_ks_operator, **c), c, 4,
        )
    if name == "ks_chaotic":
        c = {"alpha": 100 / 16, "beta": 100 / 16**2, "gamma": 100 / 16**4}
        return PDEProblem(
            "ks_chaotic", 1, ((0.0, 2 * math.pi),), 1.0, "periodic",
            lambda x: np.cos(np.asarray(x, dtype=float)) * (1 + np.sin(np.asarray(x, dtype=float))),
            _Bound(_ks_operator, **c), c, 4, experimental=True,
        )
    if name == "ns2d":
        c = {"Re": 100.0}
        return PDEProblem(
            "ns2d", 2, ((0.0, 2 * math.pi), (0.0, 2 * math.pi)), 1.0, "periodic",
            ns_initial, _Bound(_ns_operator, Re=c["Re"]), c, 2,
            fields=("u", "v", "w"), constraints=ns_constraints,
        )
    raise UnknownProblem(f"unknown problem {name!r}; choose from {', '.join(BENCHMARKS)}")


BENCHMARKS = ("heat_test", "rd", "ac", "ks_regular", "ks_chaotic", "ns2d")
