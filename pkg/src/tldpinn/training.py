"""Sequential, warm-started training of one network per timestamp.

The engine first fits ``u_0`` (step a), then for ``n = 0 .. N_t - 1`` minimises
the discrete residual of one Runge-Kutta step starting from the frozen
network of timestamp ``n`` (step b), initialising the new parameters at the
previous optimum.
"""

from __future__ import annotations

import logging
import math
import re
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from tldpinn.autodiff import ParameterVector, Tower
from tldpinn.errors import ConfigError, NumericalOverflow
from tldpinn.network import FourierEmbedding1D, FourierEmbedding2D, PINNModel, StageBundle
from tldpinn.pdes import FieldJet, PDEProblem
from tldpinn.schemes import (
    ButcherTableau,
    builtin,
    discrete_residual,
    required_orders,
    stage_residuals,
)

log = logging.getLogger(__name__)

_LAST_K = re.compile(r"^last_?k?[_:(]?(\d+)\)?$")


@dataclass
class TrainConfig:
    N_t: int = 20
    N_r: int = 128
    N_b: int = 2
    N_u: int | None = None
    lambda_r: float = 1.0
    lambda_b: float = 100.0
    lambda_u: float = 1.0
    M0: int = 5000
    M1: int = 1000
    eps: float = 1e-9
    lr: float = 1e-3
    lr_initial: float | None = None  # step (a) base rate; None reuses lr
    decay_rate: float = 0.9
    decay_steps: int = 1000
    decay_steps_initial: int | None = None  # step (a) interval; None reuses decay_steps
    decay_scope: str = "timestamp"  # restart the schedule per timestamp, or run it across step (b)
    transfer: str = "all"
    scheme: str = "crank_nicolson"
    seed: int = 0
    width: int = 64
    depth: int = 3
    features: int = 10
    modified: bool = True
    fit_tol: float = 1e-12
    T: float | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.N_t < 1:
            raise ConfigError("N_t must be at least 1")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if self.M0 < 1 or self.M1 < 1:
            raise ConfigError("M0 and M1 must be at least 1")
        if self.N_r < 1 or self.width < 1 or self.depth < 1 or self.features < 1:
            raise ConfigError("N_r, width, depth and features must be positive")
        if self.decay_steps < 1 or (self.decay_steps_initial is not None and self.decay_steps_initial < 1):
            raise ConfigError("decay intervals must be at least 1")
        if not self.lr > 0 or (self.lr_initial is not None and not self.lr_initial > 0):
            raise ConfigError("learning rates must be positive")
        if self.decay_scope not in ("run", "timestamp"):
            raise ConfigError("decay_scope must be 'run' or 'timestamp'")
        if self.T is not None and not self.T > 0:
            raise ConfigError("T must be positive")
        self.transfer_mode()

    @property
    def tau(self) -> float:
        if self.T is None:
            raise ConfigError("end time T is unset; resolve the config against a problem first")
        return self.T / self.N_t

    def resolved(self, problem: PDEProblem) -> "TrainConfig":
        return self if self.T is not None else replace(self, T=problem.T)

    def transfer_mode(self) -> tuple[str, int]:
        """``("all", 0)``, ``("none", 0)`` or ``("last_k", k)``."""
        t = str(self.transfer).strip().lower()
        if t in ("all", "none"):
            return t, 0
        m = _LAST_K.match(t)
        if m and int(m.group(1)) >= 1:
            return "last_k", int(m.group(1))
        raise ConfigError(f"unknown transfer strategy {self.transfer!r}")

    def snapshot(self) -> dict:
        return asdict(self)


class AdamState(NamedTuple):
    m: jnp.ndarray
    v: jnp.ndarray
    t: jnp.ndarray

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(jnp.zeros(n), jnp.zeros(n), jnp.zeros((), dtype=jnp.int64))


def adam_step(state: AdamState, theta, g, lr, b1=0.9, b2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns ``(state, theta)``."""
    wrap = isinstance(theta, ParameterVector)
    th = theta.values if wrap else theta
    gv = g.values if isinstance(g, ParameterVector) else g
    t = state.t + 1
    m = b1 * state.m + (1 - b1) * gv
    v = b2 * state.v + (1 - b2) * gv * gv
    mhat = m / (1 - b1 ** t)
    vhat = v / (1 - b2 ** t)
    new = th - lr * mhat / (jnp.sqrt(vhat) + eps)
    return AdamState(m, v, t), (theta.replace(new) if wrap else new)


@dataclass
class TimestampRecord:
    n: int
    loss: float
    epochs: int
    stop_reason: str  # "threshold" | "max_iters"
    residual_loss: float
    wall_clock: float
    terms: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Collocation:
    interior: np.ndarray
    boundary: np.ndarray | None
    initial: np.ndarray


def collocation(problem: PDEProblem, cfg: TrainConfig) -> Collocation:
    """Fixed, equispaced collocation sets reused at every timestamp."""
    n_u = cfg.N_u or cfg.N_r
    if problem.spatial_dim == 1:
        (lo, hi), = problem.domain
        interior = np.linspace(lo, hi, cfg.N_r + 2)[1:-1]
        boundary = None if problem.periodic else np.linspace(lo, hi, max(cfg.N_b, 2))
        if boundary is not None and cfg.N_b == 2:
            boundary = np.array([lo, hi])
        initial = np.linspace(lo, hi, n_u)
        return Collocation(interior, boundary, initial)
    (xlo, xhi), (ylo, yhi) = problem.domain

    def lattice(count, seed):
        side = max(2, math.ceil(math.sqrt(count)))
        xs = xlo + (xhi - xlo) * np.arange(side) / side
        ys = ylo + (yhi - ylo) * np.arange(side) / side
        pts = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
        if len(pts) > count:
            keep = np.sort(np.random.default_rng(seed).choice(len(pts), count, replace=False))
            pts = pts[keep]
        return pts

    return Collocation(lattice(cfg.N_r, cfg.seed), None, lattice(n_u, cfg.seed + 1))


def build_model(problem: PDEProblem, cfg: TrainConfig) -> PINNModel:
    """Fourier-embedded (modified) MLP sized by ``cfg``.

    Periodic problems embed with the domain period; Dirichlet problems use the
    enclosing period of twice the domain length and keep a soft boundary term.
    """
    if problem.spatial_dim == 1:
        (L,) = problem.lengths
        emb = FourierEmbedding1D(cfg.features, L if problem.periodic else 2 * L)
    else:
        Lx, Ly = problem.lengths
        emb = FourierEmbedding2D(cfg.features, Lx, Ly)
    return PINNModel.build(emb, cfg.width, cfg.depth, len(problem.fields), cfg.modified)


def _as_tower(out, order):
    return out if isinstance(out, Tower) else Tower.constant(out, order)


def evaluate_state(problem: PDEProblem, model, params, x, order: int):
    """Tower (1-D) or :class:`FieldJet` (2-D) of the network at points ``x``."""
    if problem.spatial_dim == 1:
        return _as_tower(model(params, Tower.variable(x, order)), order)[..., 0]
    x = jnp.asarray(x)
    tx = _as_tower(model(params, (Tower.variable(x[:, 0], order, 1.0),
                                  Tower.variable(x[:, 1], order, 0.0))), order)
    if order == 0:
        ty = tx
    else:
        ty = _as_tower(model(params, (Tower.variable(x[:, 0], order, 0.0),
                                      Tower.variable(x[:, 1], order, 1.0))), order)
    return FieldJet({f: (tx[..., i], ty[..., i]) for i, f in enumerate(problem.fields)},
                    evolved=problem.fields[-1])


def _mean_sq(r):
    return jnp.mean(jnp.square(r))


class StageLoss:
    """Loss of one time step as a function of the new parameter values.

    ``prev`` (from :meth:`prepare`) holds the frozen towers of ``u^n``; no
    gradient flows into it.
    """

    def __init__(self, problem: PDEProblem, model, tableau: ButcherTableau,
                 cfg: TrainConfig, points: Collocation, layout):
        self.problem = problem
        self.model = model
        self.tableau = tableau
        self.cfg = cfg
        self.points = points
        self.layout = tuple(layout)
        self.tau = cfg.tau
        self.bundle = StageBundle(model, tableau.q) if tableau.needs_stage_networks else None
        p = problem.max_derivative_order
        self.order_prev, self.order_next = required_orders(tableau, p)
        if problem.constraints is not None:
            self.order_next = max(self.order_next, 1)
        if problem.spatial_dim == 2 and (tableau.q != 1 or self.bundle is not None):
            raise ConfigError("2-D problems support single-stage schemes only")
        self._g_boundary = None if points.boundary is None else jnp.asarray(problem.g(points.boundary))

    def _params(self, values) -> ParameterVector:
        return ParameterVector(values, self.layout, validate=False)

    def _u_params(self, values) -> ParameterVector:
        P = self._params(values)
        return self.bundle.member(P, "u") if self.bundle is not None else P

    def prepare(self, prev_values):
        prev_values = jax.lax.stop_gradient(prev_values)
        return evaluate_state(self.problem, self.model, self._u_params(prev_values),
                              self.points.interior, self.order_prev)

    def terms(self, values, prev) -> dict:
        pr, model = self.problem, self.model
        x = self.points.interior
        out = {}
        if self.bundle is None:
            u_next = evaluate_state(pr, model, self._u_params(values), x, self.order_next)
            r = discrete_residual(self.tableau, u_next, prev, pr.operator, self.tau)
            out["residual"] = _mean_sq(r)
        else:
            P = self._params(values)
            p = pr.max_derivative_order
            stages = [evaluate_state(pr, model, self.bundle.member(P, m), x, p)
                      for m in self.bundle.members[:-1]]
            u_next = evaluate_state(pr, model, self.bundle.member(P, "u"), x, 0)
            rs = stage_residuals(self.tableau, stages, u_next, prev, pr.operator, self.tau)
            out["residual"] = sum(_mean_sq(r) for r in rs)
        if pr.constraints is not None:
            for name, c in pr.constraints(u_next).items():
                out[name] = _mean_sq(c)
        if self.points.boundary is not None:
            ub = evaluate_state(pr, model, self._u_params(values), self.points.boundary, 0)
            out["boundary"] = _mean_sq(ub.value - self._g_boundary)
        return out

    def __call__(self, values, prev):
        t = self.terms(values, prev)
        cfg = self.cfg
        total = cfg.lambda_r * sum(v for k, v in t.items() if k != "boundary")
        if "boundary" in t:
            total = total + cfg.lambda_b * t["boundary"]
        return total, t


class InitialLoss:
    def __init__(self, problem: PDEProblem, model, cfg: TrainConfig, points: Collocation, layout):
        self.problem, self.model, self.cfg, self.points = problem, model, cfg, points
        self.layout = tuple(layout)
        if problem.spatial_dim == 1:
            self.target = jnp.asarray(problem.initial_condition(points.initial))[:, None]
        else:
            pts = points.initial
            self.target = jnp.asarray(problem.initial_condition(pts[:, 0], pts[:, 1]))
        self._g = None if points.boundary is None else jnp.asarray(problem.g(points.boundary))

    def _model_in(self, x):
        if self.problem.spatial_dim == 1:
            return x
        return (x[:, 0], x[:, 1])

    def __call__(self, values, prev=None):
        P = ParameterVector(values, self.layout, validate=False)
        pred = self.model(P, self._model_in(jnp.asarray(self.points.initial)))
        t = {"initial": _mean_sq(pred - self.target)}
        if self._g is not None:
            ub = self.model(P, self._model_in(jnp.asarray(self.points.boundary)))[..., 0]
            t["boundary"] = _mean_sq(ub - self._g)
        total = self.cfg.lambda_u * t["initial"]
        if "boundary" in t:
            total = total + self.cfg.lambda_b * t["boundary"]
        return total, t


def _make_step(loss_fn):
    def step(theta, adam, lr, mask, prev):
        (loss, terms), g = jax.value_and_grad(loss_fn, has_aux=True)(theta, prev)
        g = jnp.where(mask, g, 0.0)
        adam, new = adam_step(adam, theta, g, lr)
        new = jnp.where(mask, new, theta)
        return new, adam, loss, terms
    return jax.jit(step)


def _floats(terms) -> dict:
    return {k: float(v) for k, v in terms.items()}


@dataclass
class TrajectorySolution:
    """Per-timestamp parameters ``theta^0 .. theta^{N_t}`` and diagnostics."""

    params: list
    records: list
    config: dict
    problem: PDEProblem
    model: PINNModel
    bundle: StageBundle | None = None
    error: str | None = None
    _predict: Callable | None = field(default=None, repr=False, compare=False)

    @property
    def complete(self) -> bool:
        return self.error is None and len(self.params) == self.config["N_t"] + 1

    def u_params(self, n: int) -> ParameterVector:
        P = self.params[n]
        return self.bundle.member(P, "u") if self.bundle is not None else P

    def predict(self, n: int, x) -> np.ndarray:
        """Network values at timestamp ``n``; shape ``(N,)`` in 1-D, ``(N, fields)`` in 2-D."""
        if self._predict is None:
            layout = self.u_params(0).layout
            model, two_d = self.model, self.problem.spatial_dim == 2

            def f(values, pts):
                P = ParameterVector(values, layout, validate=False)
                return model(P, (pts[:, 0], pts[:, 1]) if two_d else pts)
            self._predict = jax.jit(f)
        x = np.asarray(x, dtype=float)
        out = np.asarray(self._predict(jnp.asarray(self.u_params(n).values), jnp.asarray(x)))
        return out[..., 0] if self.problem.spatial_dim == 1 else out

    @property
    def residual_profile(self) -> np.ndarray:
        return np.array([r.residual_loss for r in self.records[1:]])

    @property
    def epochs_profile(self) -> np.ndarray:
        return np.array([r.epochs for r in self.records[1:]])


class Trainer:
    """Holds compiled loss/step functions for one (problem, config) pair."""

    def __init__(self, problem: PDEProblem, cfg: TrainConfig, model=None,
                 tableau: ButcherTableau | None = None):
        self.problem = problem
        self.cfg = cfg.resolved(problem)
        self.model = model if model is not None else build_model(problem, self.cfg)
        self.tableau = tableau if tableau is not None else builtin(self.cfg.scheme)
        self.points = collocation(problem, self.cfg)
        self.bundle = StageBundle(self.model, self.tableau.q) if self.tableau.needs_stage_networks else None
        self._single_layout = self.model.init(self.cfg.seed).layout
        layout = self.bundle.init(self.cfg.seed).layout if self.bundle else self._single_layout
        self.stage_loss = StageLoss(problem, self.model, self.tableau, self.cfg, self.points, layout)
        self.initial_loss = InitialLoss(problem, self.model, self.cfg, self.points, self._single_layout)
        self._step = _make_step(self.stage_loss)
        self._step0 = _make_step(self.initial_loss)
        self._eval = jax.jit(self.stage_loss)
        self._eval0 = jax.jit(self.initial_loss)
        self._prepare = jax.jit(self.stage_loss.prepare)
        self.layout = layout
        self.mask = self._mask()
        self.call_log: list[int] = []
        self.steps_taken = 0  # step (b) iterations so far, drives the run-scoped schedule

    # -------------------------------------------------------------- helpers

    def _mask(self) -> np.ndarray:
        mode, k = self.cfg.transfer_mode()
        P = ParameterVector(np.zeros(sum(s.length for s in self.layout)), self.layout)
        if mode != "last_k":
            return np.ones(len(P), dtype=bool)
        layers = self.model.layer_names[-k:]
        if self.bundle is not None:
            layers = [f"{m}/{n}" for m in self.bundle.members for n in layers]
        return P.mask(layers)

    def _lr(self, i: int, initial: bool = False) -> float:
        c = self.cfg
        steps = c.decay_steps_initial if initial and c.decay_steps_initial else c.decay_steps
        lr = c.lr_initial if initial and c.lr_initial else c.lr
        return lr * c.decay_rate ** ((i - 1) / steps)

    def cold_init(self, n: int) -> ParameterVector:
        seed = self.cfg.seed + 7919 * (n + 1)
        return self.bundle.init(seed) if self.bundle else self.model.init(seed)

    def lift_initial(self, theta0: ParameterVector) -> ParameterVector:
        """Turn fitted initial parameters into the per-timestamp parameter layout."""
        if self.bundle is None:
            return theta0
        members = {m: self.model.init(self.cfg.seed + 1 + i)
                   for i, m in enumerate(self.bundle.members[:-1])}
        members["u"] = theta0
        return self.bundle.stack(members)

    # ------------------------------------------------------------ algorithm

    def fit_initial(self, theta0: ParameterVector | None = None):
        """Fit ``u_0`` for up to ``M0`` Adam steps (stops early below ``fit_tol``)."""
        cfg = self.cfg
        start = time.perf_counter()
        theta = jnp.asarray((theta0 or self.model.init(cfg.seed)).values)
        adam = AdamState.zeros(theta.shape[0])
        ones = jnp.ones(theta.shape[0], dtype=bool)
        epochs, reason = cfg.M0, "max_iters"
        for i in range(1, cfg.M0 + 1):
            new, adam, loss, terms = self._step0(theta, adam, self._lr(i, initial=True), ones, None)
            loss = float(loss)
            if not math.isfinite(loss):
                raise NumericalOverflow("initial fit diverged", {"n": 0, "iteration": i})
            if loss < cfg.fit_tol:
                epochs, reason = i - 1, "threshold"
                break
            theta = new
        loss, terms = self._eval0(theta, None)
        terms = _floats(terms)
        rec = TimestampRecord(0, float(loss), epochs, reason, terms["initial"],
                              time.perf_counter() - start, terms)
        return ParameterVector(np.asarray(theta), self._single_layout, validate=False), rec

    def advance(self, theta_n: ParameterVector, n: int):
        """Train ``theta^{n+1}`` from the converged ``theta^n``."""
        cfg = self.cfg
        self.call_log.append(n)
        start = time.perf_counter()
        prev_vals = jnp.asarray(theta_n.values)
        prev = self._prepare(prev_vals)
        mode, _ = cfg.transfer_mode()
        theta = jnp.asarray(self.cold_init(n).values) if mode == "none" else prev_vals
        adam = AdamState.zeros(theta.shape[0])
        mask = jnp.asarray(self.mask)
        last_theta = last_loss = last_terms = None
        result = None
        for i in range(1, cfg.M1 + 1):
            k = i if cfg.decay_scope == "timestamp" else self.steps_taken + i
            new, adam, loss, terms = self._step(theta, adam, self._lr(k), mask, prev)
            loss = float(loss)
            if not math.isfinite(loss):
                raise NumericalOverflow(
                    f"loss became non-finite at timestamp {n + 1}",
                    {"n": n + 1, "iteration": i, "last_loss": last_loss})
            if last_loss is not None and abs(loss - last_loss) < cfg.eps:
                result = (last_theta, last_loss, last_terms, i - 1, "threshold")
                break
            last_theta, last_loss, last_terms = theta, loss, terms
            theta = new
        if result is None:
            loss, terms = self._eval(theta, prev)
            if not math.isfinite(float(loss)):
                raise NumericalOverflow(f"loss became non-finite at timestamp {n + 1}", {"n": n + 1})
            result = (theta, float(loss), terms, cfg.M1, "max_iters")
        theta_star, loss, terms, epochs, reason = result
        self.steps_taken += epochs
        terms = _floats(terms)
        rec = TimestampRecord(n + 1, loss, epochs, reason, terms["residual"],
                              time.perf_counter() - start, terms)
        return ParameterVector(np.asarray(theta_star), self.layout, validate=False), rec

    def run(self, callback: Callable | None = None, theta0: ParameterVector | None = None):
        cfg = self.cfg
        self.steps_taken = 0
        solution = TrajectorySolution([], [], cfg.snapshot(), self.problem, self.model, self.bundle)
        try:
            fitted, rec = self.fit_initial(theta0)
        except NumericalOverflow as exc:
            solution.error = f"{exc} {exc.diagnostics}"
            return solution
        solution.params.append(self.lift_initial(fitted))
        solution.records.append(rec)
        if callback:
            callback(0, solution.params[0], rec)
        for n in range(cfg.N_t):
            try:
                theta, rec = self.advance(solution.params[n], n)
            except NumericalOverflow as exc:
                solution.error = f"{exc} {exc.diagnostics}"
                log.error("aborting at timestamp %d: %s", n + 1, exc)
                break
            solution.params.append(theta)
            solution.records.append(rec)
            log.info("t_%d: loss %.3e epochs %d (%s)", n + 1, rec.loss, rec.epochs, rec.stop_reason)
            if callback:
                callback(n + 1, theta, rec)
        return solution


# --------------------------------------------------------- functional facade

def stage_loss(theta_next, theta_prev, p: PDEProblem, tableau: ButcherTableau,
               points: Collocation, cfg: TrainConfig, model=None, return_terms=False):
    """Discrete-step loss of ``theta_next`` given the frozen ``theta_prev``."""
    cfg = cfg.resolved(p)
    model = model if model is not None else build_model(p, cfg)
    loss = StageLoss(p, model, tableau, cfg, points, theta_next.layout)
    prev = loss.prepare(jnp.asarray(theta_prev.values))
    total, terms = loss(jnp.asarray(theta_next.values), prev)
    if not math.isfinite(float(total)):
        raise NumericalOverflow("stage loss is not finite")
    return (float(total), _floats(terms)) if return_terms else float(total)


def fit_initial(p: PDEProblem, net=None, cfg: TrainConfig | None = None, theta0=None):
    cfg = cfg or TrainConfig()
    return Trainer(p, cfg, model=net).fit_initial(theta0)


def advance(theta_n: ParameterVector, p: PDEProblem, tableau: ButcherTableau,
            cfg: TrainConfig, n: int = 0, model=None):
    return Trainer(p, cfg, model=model, tableau=tableau).advance(theta_n, n)


def run(p: PDEProblem, cfg: TrainConfig, callback=None, model=None) -> TrajectorySolution:
    return Trainer(p, cfg, model=model).run(callback)
