"""Runge-Kutta tableaus and the per-point discrete residuals built from them.

Residuals are formed from derivative towers so the same code serves the
training loss (towers batched over collocation points) and direct checks on
closed-form fields.  Three residual forms are supported:

* explicit tableaus: stages are nested evaluations of ``N`` on ``u^n``;
* tableaus whose only implicit stage is the last one (backward Euler,
  Crank-Nicolson, trapezoidal): that stage is eliminated through the update
  equation, so a single network for ``u^{n+1}`` suffices;
* everything else (Gauss-Legendre): one network per stage, see
  :func:`stage_residuals`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from tldpinn.errors import UnknownScheme

SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class ButcherTableau:
    name: str
    a: np.ndarray
    b: np.ndarray
    classical_order: int

    def __post_init__(self):
        object.__setattr__(self, "a", np.atleast_2d(np.asarray(self.a, dtype=float)))
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))
        if self.a.shape != (self.q, self.q):
            raise ValueError("a must be q x q")

    @property
    def q(self) -> int:
        return len(self.b)

    @property
    def c(self) -> np.ndarray:
        return self.a.sum(axis=1)

    @property
    def implicit_stages(self) -> list[int]:
        return [i for i in range(self.q) if np.any(self.a[i, i:] != 0.0)]

    @property
    def implicit(self) -> bool:
        return bool(self.implicit_stages)

    @property
    def needs_stage_networks(self) -> bool:
        """True unless at most the last stage is implicit (and has ``b != 0``)."""
        imp = self.implicit_stages
        if not imp:
            return False
        return imp != [self.q - 1] or self.b[-1] == 0.0

    def __str__(self):
        return format_tableau(self)


_BUILTIN = {
    "forward_euler": ([[0.0]], [1.0], 1),
    "backward_euler": ([[1.0]], [1.0], 1),
    "trapezoidal": ([[0.0, 0.0], [0.5, 0.5]], [0.5, 0.5], 2),
    "crank_nicolson": ([[0.5]], [1.0], 2),
    "rk2": ([[0.0, 0.0], [0.5, 0.0]], [0.0, 1.0], 2),
    "rk4": (
        [[0, 0, 0, 0], [0.5, 0, 0, 0], [0, 0.5, 0, 0], [0, 0, 1.0, 0]],
        [1 / 6, 1 / 3, 1 / 3, 1 / 6],
        4,
    ),
    "gauss_legendre2": (
        [[0.25, 0.25 - SQRT3 / 6], [0.25 + SQRT3 / 6, 0.25]],
        [0.5, 0.5],
        4,
    ),
}

SCHEMES = tuple(_BUILTIN)


def builtin(name: str) -> ButcherTableau:
    try:
        a, b, order = _BUILTIN[name]
    except KeyError:
        raise UnknownScheme(f"unknown scheme {name!r}; choose from {', '.join(SCHEMES)}") from None
    return ButcherTableau(name, np.array(a, dtype=float), np.array(b, dtype=float), order)


def format_tableau(tab: ButcherTableau) -> str:
    rows = []
    for i in range(tab.q):
        cells = " ".join(f"{v: .6f}" for v in tab.a[i])
        rows.append(f"{tab.c[i]: .6f} | {cells}")
    rows.append("-" * len(rows[0]))
    rows.append(" " * 9 + " | " + " ".join(f"{v: .6f}" for v in tab.b))
    head = f"{tab.name} (q={tab.q}, order {tab.classical_order}, {'implicit' if tab.implicit else 'explicit'})"
    return head + "\n" + "\n".join(rows)


def order_conditions(tab: ButcherTableau, upto: int | None = None) -> list[tuple[str, float]]:
    """Residuals of the rooted-tree order conditions up to ``upto`` (max 4)."""
    upto = tab.classical_order if upto is None else upto
    a, b, c = tab.a, tab.b, tab.c
    ac = a @ c
    conds = [(1, "sum b = 1", b.sum() - 1.0)]
    conds += [(2, "b.c = 1/2", b @ c - 1 / 2)]
    conds += [(3, "b.c^2 = 1/3", b @ c**2 - 1 / 3), (3, "b.A.c = 1/6", b @ ac - 1 / 6)]
    conds += [
        (4, "b.c^3 = 1/4", b @ c**3 - 1 / 4),
        (4, "b.(c*A.c) = 1/8", b @ (c * ac) - 1 / 8),
        (4, "b.A.c^2 = 1/12", b @ (a @ c**2) - 1 / 12),
        (4, "b.A.A.c = 1/24", b @ (a @ ac) - 1 / 24),
    ]
    return [(label, float(r)) for order, label, r in conds if order <= upto]


def stability_function(tab: ButcherTableau, z):
    """``R(z) = 1 + z b^T (I - z A)^{-1} 1`` evaluated elementwise."""
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape, dtype=complex)
    eye = np.eye(tab.q)
    ones = np.ones(tab.q)
    for idx, zi in np.ndenumerate(z):
        out[idx] = 1.0 + zi * tab.b @ np.linalg.solve(eye - zi * tab.a, ones)
    return out if out.ndim else out[()]


def integrate_linear(tab: ButcherTableau, lam, u0, tau: float, n_steps: int) -> np.ndarray:
    """Step ``u' = lam * u`` (``lam`` diagonal, possibly an array) by direct stage solves.

    Returns the states at steps ``0..n_steps`` on a leading axis.
    """
    lam = np.asarray(lam, dtype=float)
    u = np.broadcast_to(np.asarray(u0, dtype=float), np.broadcast(lam, u0).shape).copy()
    q = tab.q
    lam_flat = np.atleast_1d(lam).ravel()
    # per-mode amplification: stages solve (I - tau*lam*A) k = lam * u * 1
    amp = np.empty(lam_flat.shape)
    for m, lm in enumerate(lam_flat):
        k = np.linalg.solve(np.eye(q) - tau * lm * tab.a, lm * np.ones(q))
        amp[m] = 1.0 + tau * tab.b @ k
    amp = amp.reshape(np.shape(lam)) if np.ndim(lam) else amp[0]
    out = [u.copy()]
    for _ in range(n_steps):
        u = amp * u
        out.append(u.copy())
    return np.array(out)


# ------------------------------------------------------------------ residuals

def _val(x):
    return x.value if hasattr(x, "value") else x


def cn_residual(u_next, u_prev, N, tau: float):
    """``(u^{n+1} - u^n)/tau - N[(u^{n+1} + u^n)/2]`` at the tower's base point(s)."""
    return (_val(u_next) - _val(u_prev)) / tau - _val(N(0.5 * (u_next + u_prev)))


def stage_residuals(tab: ButcherTableau, stages, u_next, u_prev, N, tau: float):
    """Stage-equation residuals ``k_i - N[u^n + tau sum_j a_ij k_j]`` followed by
    the update residual ``(u^{n+1} - u^n)/tau - sum_i b_i k_i``."""
    if len(stages) != tab.q:
        raise ValueError(f"expected {tab.q} stage towers, got {len(stages)}")
    out = []
    for i in range(tab.q):
        arg = u_prev
        for j in range(tab.q):
            if tab.a[i, j] != 0.0:
                arg = arg + (tau * tab.a[i, j]) * stages[j]
        out.append(_val(stages[i]) - _val(N(arg)))
    update = (_val(u_next) - _val(u_prev)) / tau
    for i in range(tab.q):
        if tab.b[i] != 0.0:
            update = update - tab.b[i] * _val(stages[i])
    out.append(update)
    return out


def _explicit_stages(tab, u_prev, N, tau, upto):
    ks = []
    for i in range(upto):
        arg = u_prev
        for j in range(i):
            if tab.a[i, j] != 0.0:
                arg = arg + (tau * tab.a[i, j]) * ks[j]
        ks.append(N(arg))
    return ks


def explicit_stage_values(tab: ButcherTableau, u_prev, N, tau: float):
    """Values of the explicit stages (all but an eliminated implicit last stage)."""
    n_exp = tab.q if not tab.implicit else tab.q - 1
    return [_val(k) for k in _explicit_stages(tab, u_prev, N, tau, n_exp)]


def discrete_residual(tab: ButcherTableau, u_next, u_prev, N, tau: float):
    """Single-network residual of one time step.

    Explicit stages are evaluated by nesting ``N``; an implicit last stage is
    eliminated through ``k_q = (Delta/tau - sum_{i<q} b_i k_i) / b_q`` and the
    residual is ``b_q`` times its stage equation, which reduces to the familiar
    ``Delta/tau - sum_i b_i k_i`` form (e.g. Crank-Nicolson, trapezoidal).
    """
    if tab.needs_stage_networks:
        raise ValueError(f"{tab.name} needs one network per stage; use stage_residuals")
    q = tab.q
    if not tab.implicit:
        ks = _explicit_stages(tab, u_prev, N, tau, q)
        r = (_val(u_next) - _val(u_prev)) / tau
        for i in range(q):
            if tab.b[i] != 0.0:
                r = r - tab.b[i] * _val(ks[i])
        return r
    ks = _explicit_stages(tab, u_prev, N, tau, q - 1)
    delta = u_next - u_prev
    bq = tab.b[-1]
    # k_q expressed through the update equation
    kq = delta * (1.0 / (tau * bq))
    for i in range(q - 1):
        if tab.b[i] != 0.0:
            kq = kq - (tab.b[i] / bq) * ks[i]
    arg = u_prev
    for j in range(q - 1):
        if tab.a[-1, j] != 0.0:
            arg = arg + (tau * tab.a[-1, j]) * ks[j]
    arg = arg + (tau * tab.a[-1, -1]) * kq
    r = _val(delta) / tau
    for i in range(q - 1):
        if tab.b[i] != 0.0:
            r = r - tab.b[i] * _val(ks[i])
    return r - bq * _val(N(arg))


def required_orders(tab: ButcherTableau, p: int) -> tuple[int, int]:
    """Tower orders ``(for u^n, for u^{n+1})`` needed by :func:`discrete_residual`
    for an operator of differential order ``p``.  For stage-network schemes the
    stage towers need order ``p`` and these are ``(p, 0)``."""
    if tab.needs_stage_networks:
        return p, 0
    q = tab.q
    need_k = [-1] * q
    need_prev = need_next = 0

    def want(i, order):
        need_k[i] = max(need_k[i], order)

    if tab.implicit:
        lead = [i for i in range(q - 1) if tab.b[i] != 0.0]
        for i in lead:
            want(i, p)
        for j in range(q - 1):
            if tab.a[-1, j] != 0.0:
                want(j, p)
        need_prev = p
        if tab.a[-1, -1] != 0.0:
            need_next = p
        explicit = range(q - 2, -1, -1)
    else:
        for i in range(q):
            if tab.b[i] != 0.0:
                want(i, 0)
        explicit = range(q - 1, -1, -1)
    for i in explicit:
        if need_k[i] < 0:
            continue
        level = need_k[i] + p
        need_prev = max(need_prev, level)
        for j in range(i):
            if tab.a[i, j] != 0.0:
                want(j, level)
    return need_prev, need_next
