"""Derivative towers (truncated Taylor arithmetic) and parameter gradients.

Spatial derivatives are propagated forward as truncated Taylor polynomials.
A :class:`Tower` stores the normalised coefficients ``f^(k)(x) / k!`` so that
products are plain Cauchy convolutions; :attr:`Tower.coeffs` converts back to
raw derivatives.  Every coefficient is a JAX/numpy array, so one tower can
carry a whole batch of collocation points and a whole hidden layer at once.

Reverse-mode gradients with respect to network parameters come from
``jax.grad`` traced through the tower arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from tldpinn.errors import NumericalOverflow, OrderError, UnsupportedPrimitive

MAX_ORDER = 4


def _is_finite(a) -> bool:
    return bool(np.all(np.isfinite(np.asarray(a))))


class Tower:
    """Truncated Taylor expansion of a (batched) field around a point.

    Parameters
    ----------
    taylor : sequence of arrays
        ``taylor[k]`` holds ``d^k f / dx^k / k!``.  All entries must share one
        shape.
    """

    __slots__ = ("taylor",)

    def __init__(self, taylor: Sequence):
        self.taylor = tuple(taylor)

    # ---------------------------------------------------------------- builders

    @classmethod
    def variable(cls, x, order: int, direction=1.0) -> "Tower":
        """Tower of the coordinate map ``s -> x + s*direction``."""
        x = jnp.asarray(x, dtype=jnp.float64)
        if order == 0:
            return cls((x,))
        zero = jnp.zeros_like(x)
        return cls((x, zero + direction) + (zero,) * (order - 1))

    @classmethod
    def constant(cls, value, order: int) -> "Tower":
        value = jnp.asarray(value, dtype=jnp.float64)
        zero = jnp.zeros_like(value)
        return cls((value,) + (zero,) * order)

    # --------------------------------------------------------------- accessors

    @property
    def order(self) -> int:
        return len(self.taylor) - 1

    @property
    def value(self):
        return self.taylor[0]

    @property
    def shape(self):
        return jnp.shape(self.taylor[0])

    @property
    def coeffs(self):
        """Raw derivatives ``[f, f', f'', ...]`` stacked on a leading axis."""
        return jnp.stack([math.factorial(k) * c for k, c in enumerate(self.taylor)])

    def nth(self, k: int):
        """The k-th raw derivative."""
        if k > self.order:
            raise OrderError(f"derivative of order {k} requested from a tower of order {self.order}")
        return math.factorial(k) * self.taylor[k]

    def derivative(self, m: int = 1) -> "Tower":
        """Tower of ``d^m f / dx^m``, losing ``m`` orders of truncation."""
        if m > self.order:
            raise OrderError(f"cannot differentiate a tower of order {self.order} {m} times")
        return Tower(
            math.factorial(k + m) // math.factorial(k) * self.taylor[k + m]
            for k in range(self.order - m + 1)
        )

    def truncate(self, order: int) -> "Tower":
        if order > self.order:
            raise OrderError(f"cannot extend a tower of order {self.order} to {order}")
        return Tower(self.taylor[: order + 1])

    def __getitem__(self, idx) -> "Tower":
        return Tower(c[idx] for c in self.taylor)

    def __repr__(self):
        return f"Tower(order={self.order}, shape={self.shape})"

    # -------------------------------------------------------------- arithmetic

    def __add__(self, other):
        if isinstance(other, Tower):
            k = min(self.order, other.order)
            return Tower(a + b for a, b in zip(self.taylor[: k + 1], other.taylor[: k + 1]))
        return Tower((self.taylor[0] + other,) + tuple(
            c + jnp.zeros_like(other) for c in self.taylor[1:]))

    __radd__ = __add__

    def __neg__(self):
        return Tower(-c for c in self.taylor)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Tower):
            k = min(self.order, other.order)
            a, b = self.taylor, other.taylor
            return Tower(
                sum(a[j] * b[n - j] for j in range(n + 1)) for n in range(k + 1)
            )
        return Tower(c * other for c in self.taylor)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tower):
            raise UnsupportedPrimitive("division by a tower is not a supported primitive")
        return Tower(c / other for c in self.taylor)

    def __pow__(self, n):
        if not isinstance(n, int) or n < 1:
            raise UnsupportedPrimitive("only positive integer powers are supported")
        out = self
        for _ in range(n - 1):
            out = out * self
        return out

    def __matmul__(self, w):
        if isinstance(w, Tower):
            raise UnsupportedPrimitive("tower @ tower is not supported")
        return Tower(c @ w for c in self.taylor)

    def __rmatmul__(self, w):
        raise UnsupportedPrimitive("array @ tower is not supported")

    # Route numpy ufuncs through the tower primitives, reject everything else.
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            raise UnsupportedPrimitive(f"numpy {ufunc.__name__}.{method} on a tower")
        if ufunc.__name__ in _UFUNCS:
            return _UFUNCS[ufunc.__name__](*inputs)
        raise UnsupportedPrimitive(f"primitive {ufunc.__name__!r} is not supported on towers")


jax.tree_util.register_pytree_node(
    Tower, lambda t: (t.taylor, None), lambda _, children: Tower(children)
)


# ---------------------------------------------------------------- primitives

def _tanh_tower(f: Tower) -> Tower:
    # y' = (1 - y^2) f'  =>  k y_k = sum_j j f_j s_{k-j},  s = 1 - y^2
    fc = f.taylor
    y = [jnp.tanh(fc[0])]
    s = [1.0 - y[0] * y[0]]
    for k in range(1, f.order + 1):
        y.append(sum(j * fc[j] * s[k - j] for j in range(1, k + 1)) / k)
        s.append(-sum(y[i] * y[k - i] for i in range(k + 1)))
    return Tower(y)


def _sincos_tower(f: Tower):
    fc = f.taylor
    s = [jnp.sin(fc[0])]
    c = [jnp.cos(fc[0])]
    for k in range(1, f.order + 1):
        s.append(sum(j * fc[j] * c[k - j] for j in range(1, k + 1)) / k)
        c.append(-sum(j * fc[j] * s[k - j] for j in range(1, k + 1)) / k)
    return Tower(s), Tower(c)


def tanh(x):
    return _tanh_tower(x) if isinstance(x, Tower) else jnp.tanh(x)


def sin(x):
    return _sincos_tower(x)[0] if isinstance(x, Tower) else jnp.sin(x)


def cos(x):
    return _sincos_tower(x)[1] if isinstance(x, Tower) else jnp.cos(x)


def sincos(x):
    if isinstance(x, Tower):
        return _sincos_tower(x)
    return jnp.sin(x), jnp.cos(x)


PRIMITIVES: dict[str, Callable] = {"tanh": tanh, "sin": sin, "cos": cos}

_UFUNCS = {
    "tanh": tanh,
    "sin": sin,
    "cos": cos,
    "add": lambda a, b: a + b if isinstance(a, Tower) else b + a,
    "subtract": lambda a, b: a - b if isinstance(a, Tower) else -(b - a),
    "multiply": lambda a, b: a * b if isinstance(a, Tower) else b * a,
    "negative": lambda a: -a,
}


def apply_primitive(name: str, x):
    try:
        fn = PRIMITIVES[name]
    except KeyError:
        raise UnsupportedPrimitive(f"primitive {name!r} is not supported") from None
    return fn(x)


def concat(parts: Iterable, axis: int = -1):
    """Concatenate towers (or arrays) along a feature axis."""
    parts = list(parts)
    if not any(isinstance(p, Tower) for p in parts):
        return jnp.concatenate(parts, axis=axis)
    order = min(p.order for p in parts if isinstance(p, Tower))
    shape = next(p for p in parts if isinstance(p, Tower)).shape
    lifted = []
    for p in parts:
        if not isinstance(p, Tower):
            p = Tower.constant(jnp.broadcast_to(p, shape[:-1] + jnp.shape(p)[-1:]), order)
        lifted.append(p)
    return Tower(
        jnp.concatenate([p.taylor[k] for p in lifted], axis=axis) for k in range(order + 1)
    )


# ------------------------------------------------------------ parameter vector

@dataclass(frozen=True)
class Span:
    name: str
    offset: int
    shape: tuple

    @property
    def length(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def layer(self) -> str:
        return self.name.rsplit(".", 1)[0]


class ParameterVector:
    """Flat parameter array with a named layout of spans.

    ``layout`` lists ``Span(name, offset, shape)`` entries that partition the
    flat array.  Names look like ``"layer_2.W"``; the part before the last dot
    is the layer the span belongs to.
    """

    def __init__(self, values, layout: Sequence[Span], *, validate: bool = True):
        self.values = values
        self.layout = tuple(layout)
        if validate:
            self._check()

    def _check(self):
        names = [s.name for s in self.layout]
        if len(set(names)) != len(names):
            raise ValueError("duplicate span names in parameter layout")
        pos = 0
        for s in sorted(self.layout, key=lambda s: s.offset):
            if s.offset != pos:
                raise ValueError(f"span {s.name!r} leaves a gap or overlaps at offset {pos}")
            pos += s.length
        if pos != np.shape(self.values)[0]:
            raise ValueError(f"layout covers {pos} entries but vector has {np.shape(self.values)[0]}")

    @classmethod
    def from_arrays(cls, items: Iterable[tuple[str, np.ndarray]]) -> "ParameterVector":
        layout, chunks, offset = [], [], 0
        for name, arr in items:
            arr = np.asarray(arr, dtype=np.float64)
            layout.append(Span(name, offset, tuple(arr.shape)))
            chunks.append(arr.ravel())
            offset += arr.size
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, layout)

    def __len__(self):
        return int(np.shape(self.values)[0])

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.layout]

    @property
    def layers(self) -> list[str]:
        """Layer names in layout order, without duplicates."""
        return list(dict.fromkeys(s.layer for s in self.layout))

    def span(self, name: str) -> Span:
        for s in self.layout:
            if s.name == name:
                return s
        raise KeyError(name)

    def __getitem__(self, name: str):
        s = self.span(name)
        return self.values[s.offset : s.offset + s.length].reshape(s.shape)

    def replace(self, values) -> "ParameterVector":
        return ParameterVector(values, self.layout, validate=False)

    def mask(self, layers: Iterable[str]):
        """Boolean mask selecting every span that belongs to ``layers``."""
        layers = set(layers)
        m = np.zeros(len(self), dtype=bool)
        for s in self.layout:
            if s.layer in layers:
                m[s.offset : s.offset + s.length] = True
        return m

    def numpy(self) -> "ParameterVector":
        return self.replace(np.asarray(self.values, dtype=np.float64))

    def __eq__(self, other):
        if not isinstance(other, ParameterVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(
            np.asarray(self.values), np.asarray(other.values))

    def __repr__(self):
        return f"ParameterVector(n={len(self)}, spans={len(self.layout)})"


jax.tree_util.register_pytree_node(
    ParameterVector,
    lambda p: ((p.values,), p.layout),
    lambda layout, children: ParameterVector(children[0], layout, validate=False),
)


# ------------------------------------------------------------------ operations

def taylor_eval(net: Callable, params, x, order: int, direction=None) -> Tower:
    """Evaluate ``net(params, x)`` together with its spatial derivatives.

    Parameters
    ----------
    net : callable
        ``net(params, x)`` built from affine maps, sums, products and the
        primitives in :data:`PRIMITIVES`.  ``x`` is a :class:`Tower` for
        1-D inputs or a tuple of towers for 2-D inputs.
    x : float or sequence of float
        Evaluation point.
    order : int
        Highest derivative, at most :data:`MAX_ORDER`.
    direction : sequence of float, optional
        For 2-D points, the direction of differentiation (default: first axis).
    """
    if not 0 <= order <= MAX_ORDER:
        raise OrderError(f"order must lie in [0, {MAX_ORDER}], got {order}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        inp = Tower.variable(x, order)
    else:
        if direction is None:
            direction = np.eye(x.shape[-1])[0]
        inp = tuple(Tower.variable(x[..., i], order, direction[i]) for i in range(x.shape[-1]))
    try:
        out = net(params, inp)
    except TypeError as exc:
        # jax/numpy functions without a tower rule reject Tower arguments this way
        if "Tower" not in str(exc):
            raise
        raise UnsupportedPrimitive(str(exc)) from exc
    if not isinstance(out, Tower):
        out = Tower.constant(out, order)
    if not all(_is_finite(c) for c in out.taylor):
        raise NumericalOverflow("non-finite value in derivative tower", {"x": x.tolist()})
    return out


def grad(loss: Callable, params):
    """Gradient of a scalar ``loss(params)``; same layout as ``params``.

    ``params`` may be a :class:`ParameterVector` or a plain array.
    """
    if isinstance(params, ParameterVector):
        f = lambda v: loss(params.replace(v))  # noqa: E731
        v0 = jnp.asarray(params.values, dtype=jnp.float64)
    else:
        f = loss
        v0 = jnp.asarray(params, dtype=jnp.float64)
    value, g = jax.value_and_grad(f)(v0)
    if not _is_finite(value):
        raise NumericalOverflow("loss is not finite", {"loss": float(value)})
    g = np.asarray(g)
    if not _is_finite(g):
        raise NumericalOverflow("gradient is not finite")
    return params.replace(g) if isinstance(params, ParameterVector) else g
