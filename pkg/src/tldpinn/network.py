"""Fourier feature embeddings, (modified) MLPs and multi-network stage bundles.

All forward passes are written against a small set of operations (``@``,
``+``, ``*``, :func:`tanh`, :func:`sincos`) so the same code runs on plain
arrays and on :class:`~tldpinn.autodiff.Tower` inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import jax.numpy as jnp
import numpy as np

from tldpinn.autodiff import ParameterVector, Span, Tower, concat, sincos, tanh
from tldpinn.errors import ShapeError

MANIFEST_HEADER = "# tldpinn parameter manifest v1"


def _map(x, fn):
    """Apply a linear, shape-only transform to an array or to each tower coefficient."""
    if isinstance(x, Tower):
        return Tower(fn(c) for c in x.taylor)
    return fn(x)


def _reduce(x, period):
    # Shift only the value: derivatives are unaffected by a constant offset.
    if isinstance(x, Tower):
        return Tower((jnp.remainder(x.taylor[0], period),) + x.taylor[1:])
    return jnp.remainder(jnp.asarray(x, dtype=jnp.float64), period)


def _harmonics(x, M, period):
    """cos(k w x), sin(k w x) for k = 1..M, on a trailing axis of length M."""
    omega = 2.0 * math.pi / period
    ks = omega * jnp.arange(1, M + 1, dtype=jnp.float64)
    arg = _map(_reduce(x, period), lambda c: c[..., None] * ks)
    s, c = sincos(arg)
    return c, s


def _ones_like_features(x, n):
    base = x.value if isinstance(x, Tower) else jnp.asarray(x)
    return jnp.ones(jnp.shape(base) + (n,))


@dataclass(frozen=True)
class FourierEmbedding1D:
    """``[1, cos(wx), sin(wx), ..., cos(Mwx), sin(Mwx)]`` with ``w = 2*pi/L``."""

    M: int
    L: float

    @property
    def omega(self) -> float:
        return 2.0 * math.pi / self.L

    @property
    def dim(self) -> int:
        return 2 * self.M + 1

    def __call__(self, x):
        c, s = _harmonics(x, self.M, self.L)

        def interleave(a, b):
            return jnp.stack([a, b], axis=-1).reshape(a.shape[:-1] + (2 * self.M,))

        if isinstance(c, Tower):
            cs = Tower(interleave(a, b) for a, b in zip(c.taylor, s.taylor))
        else:
            cs = interleave(c, s)
        return concat([_ones_like_features(x, 1), cs])


@dataclass(frozen=True)
class FourierEmbedding2D:
    """Constant, four pure harmonic blocks and four full cross-product blocks.

    Block order: ``1``, ``cos(i wx x)``, ``cos(j wy y)``, ``sin(i wx x)``,
    ``sin(j wy y)``, then ``cos*cos``, ``cos*sin``, ``sin*cos``, ``sin*sin``
    over all ``(i, j)`` pairs in row-major order.
    """

    M: int
    Lx: float
    Ly: float

    @property
    def dim(self) -> int:
        return 1 + 4 * self.M + 4 * self.M ** 2

    def __call__(self, x, y=None):
        if y is None:
            x, y = x
        cx, sx = _harmonics(x, self.M, self.Lx)
        cy, sy = _harmonics(y, self.M, self.Ly)
        M = self.M

        def outer(a, b):
            prod = _map(a, lambda c: c[..., :, None]) * _map(b, lambda c: c[..., None, :])
            return _map(prod, lambda c: c.reshape(c.shape[:-2] + (M * M,)))

        blocks = [cx, cy, sx, sy, outer(cx, cy), outer(cx, sy), outer(sx, cy), outer(sx, sy)]
        return concat([_ones_like_features(x, 1)] + blocks)


def embed_1d(emb: FourierEmbedding1D, x):
    return emb(x)


def embed_2d(emb: FourierEmbedding2D, x, y):
    return emb(x, y)


@dataclass(frozen=True)
class MLP:
    """Fully connected tanh network, optionally the gated "modified" variant.

    With ``modified=True`` the hidden state follows
    ``H_{n+1} = (1 - Z_n) * U + Z_n * V`` where ``U`` and ``V`` are two extra
    tanh encoders of the input and ``Z_n = tanh(H_n W_n + b_n)``.
    ``depth`` counts hidden layers, so there are ``depth + 1`` affine layers
    named ``layer_0 .. layer_{depth}``.
    """

    in_dim: int
    width: int
    depth: int
    out_dim: int = 1
    modified: bool = True

    def shapes(self) -> list[tuple[str, tuple]]:
        out = []
        if self.modified:
            for enc in ("encoder_u", "encoder_v"):
                out += [(f"{enc}.W", (self.in_dim, self.width)), (f"{enc}.b", (self.width,))]
        dims = [self.in_dim] + [self.width] * self.depth + [self.out_dim]
        for n in range(self.depth + 1):
            out += [(f"layer_{n}.W", (dims[n], dims[n + 1])), (f"layer_{n}.b", (dims[n + 1],))]
        return out

    @property
    def layer_names(self) -> list[str]:
        """Affine layers from input to output (encoders excluded)."""
        return [f"layer_{n}" for n in range(self.depth + 1)]

    def init(self, seed: int) -> ParameterVector:
        """Glorot-uniform weights and zero biases."""
        rng = np.random.default_rng(seed)
        items = []
        for name, shape in self.shapes():
            if name.endswith(".W"):
                limit = math.sqrt(6.0 / (shape[0] + shape[1]))
                items.append((name, rng.uniform(-limit, limit, size=shape)))
            else:
                items.append((name, np.zeros(shape)))
        return ParameterVector.from_arrays(items)

    def apply(self, params: ParameterVector, X):
        feat = X.shape[-1] if isinstance(X, Tower) else jnp.shape(X)[-1]
        if feat != self.in_dim:
            raise ShapeError(f"expected {self.in_dim} input features, got {feat}")
        p = params
        H = tanh(X @ p["layer_0.W"] + p["layer_0.b"])
        if self.modified:
            U = tanh(X @ p["encoder_u.W"] + p["encoder_u.b"])
            V = tanh(X @ p["encoder_v.W"] + p["encoder_v.b"])
            for n in range(1, self.depth):
                Z = tanh(H @ p[f"layer_{n}.W"] + p[f"layer_{n}.b"])
                H = (1.0 - Z) * U + Z * V
        else:
            for n in range(1, self.depth):
                H = tanh(H @ p[f"layer_{n}.W"] + p[f"layer_{n}.b"])
        D = self.depth
        return H @ p[f"layer_{D}.W"] + p[f"layer_{D}.b"]


def forward(net: MLP, params: ParameterVector, features):
    return net.apply(params, features)


def init(net, seed: int) -> ParameterVector:
    return net.init(seed)


@dataclass(frozen=True)
class PINNModel:
    """Embedding followed by an MLP; input is ``x`` or ``(x, y)``."""

    embedding: FourierEmbedding1D | FourierEmbedding2D
    mlp: MLP

    def __post_init__(self):
        if self.embedding.dim != self.mlp.in_dim:
            raise ShapeError("embedding dimension does not match the network input")

    @classmethod
    def build(cls, embedding, width, depth, out_dim=1, modified=True) -> "PINNModel":
        return cls(embedding, MLP(embedding.dim, width, depth, out_dim, modified))

    @property
    def spatial_dim(self) -> int:
        return 2 if isinstance(self.embedding, FourierEmbedding2D) else 1

    @property
    def layer_names(self) -> list[str]:
        return self.mlp.layer_names

    def init(self, seed: int) -> ParameterVector:
        return self.mlp.init(seed)

    def __call__(self, params, x):
        return self.mlp.apply(params, self.embedding(x))


@dataclass(frozen=True)
class StageBundle:
    """``q + 1`` networks of identical topology: stages ``k1..kq`` then ``u``."""

    model: PINNModel
    q: int
    _layouts: dict = field(default=None, init=False, repr=False, compare=False)

    @property
    def members(self) -> list[str]:
        return [f"k{i + 1}" for i in range(self.q)] + ["u"]

    def init(self, seed: int) -> ParameterVector:
        items = []
        for i, m in enumerate(self.members):
            p = self.model.init(seed + i)
            items += [(f"{m}/{s.name}", p[s.name]) for s in p.layout]
        return ParameterVector.from_arrays(items)

    def stack(self, members: dict[str, ParameterVector]) -> ParameterVector:
        items = []
        for m in self.members:
            p = members[m]
            items += [(f"{m}/{s.name}", np.asarray(p[s.name])) for s in p.layout]
        return ParameterVector.from_arrays(items)

    def member(self, params: ParameterVector, name: str) -> ParameterVector:
        prefix = name + "/"
        spans = [s for s in params.layout if s.name.startswith(prefix)]
        start = min(s.offset for s in spans)
        stop = max(s.offset + s.length for s in spans)
        layout = [Span(s.name[len(prefix):], s.offset - start, s.shape) for s in spans]
        return ParameterVector(params.values[start:stop], layout, validate=False)

    @property
    def layer_names(self) -> list[str]:
        return [f"{m}/{n}" for m in self.members for n in self.model.layer_names]


# ------------------------------------------------------------------ checkpoints

def save_checkpoint(stem, params: ParameterVector) -> tuple[Path, Path]:
    """Write ``<stem>.txt`` (layout manifest) and ``<stem>.bin`` (little-endian f64)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    lines = [MANIFEST_HEADER, f"count {len(params)}"]
    for s in params.layout:
        shape = ",".join(str(d) for d in s.shape)
        lines.append(f"{s.name} {s.offset} {s.length} {shape}")
    txt = stem.with_suffix(".txt")
    binf = stem.with_suffix(".bin")
    txt.write_text("\n".join(lines) + "\n")
    binf.write_bytes(np.asarray(params.values, dtype="<f8").tobytes())
    return txt, binf


def load_checkpoint(stem) -> ParameterVector:
    stem = Path(stem)
    lines = stem.with_suffix(".txt").read_text().splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise ValueError(f"{stem}.txt is not a parameter manifest")
    count = int(lines[1].split()[1])
    layout = []
    for line in lines[2:]:
        name, offset, length, shape = line.split()
        dims = tuple(int(d) for d in shape.split(",") if d)
        layout.append(Span(name, int(offset), dims))
    values = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8").astype(np.float64)
    if values.size != count:
        raise ValueError(f"expected {count} values, found {values.size}")
    return ParameterVector(values, layout)
