"""Error metrics, convergence orders and the empirical error-bound study."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tldpinn.errors import DegenerateReference, DomainError
from tldpinn.oracle import ReferenceTrajectory, heat_analytic
from tldpinn.schemes import ButcherTableau, builtin, integrate_linear


def relative_l2(pred, ref) -> float:
    """``sqrt(sum (pred - ref)^2 / sum ref^2)`` over all samples.

    When ``ref`` is a :class:`ReferenceTrajectory` the sums run over
    timestamps ``1..N_t`` only; ``pred`` then has one row per timestamp
    ``0..N_t`` (row 0 is ignored) or one per ``1..N_t``.
    """
    if isinstance(ref, ReferenceTrajectory):
        r = ref.values[1:]
        p = np.asarray(pred, dtype=float)
        if p.shape[0] == ref.values.shape[0]:
            p = p[1:]
    else:
        r = np.asarray(ref, dtype=float)
        p = np.asarray(pred, dtype=float)
    p = p.reshape(r.shape)
    den = float(np.sum(r * r))
    if den == 0.0:
        raise DegenerateReference("reference field is identically zero")
    return math.sqrt(float(np.sum((p - r) ** 2)) / den)


def convergence_order(errors) -> float:
    """Least-squares slope of ``log e`` against ``log h``."""
    pts = [(float(h), float(e)) for h, e in errors]
    if len(pts) < 3:
        raise DomainError("need at least three (h, e) pairs")
    hs = np.array([h for h, _ in pts])
    es = np.array([e for _, e in pts])
    if np.any(hs <= 0) or np.any(es <= 0):
        raise DomainError("step sizes and errors must be positive")
    if np.any(np.diff(hs) >= 0):
        raise DomainError("step sizes must be strictly decreasing")
    slope, _ = np.polyfit(np.log(hs), np.log(es), 1)
    return float(slope)


def profile_ratio(profile) -> float:
    """``max / median`` of a per-timestamp profile."""
    prof = np.asarray(profile, dtype=float)
    med = float(np.median(prof))
    return float(np.max(prof)) / med if med > 0 else math.inf


def interface_count(u, threshold: float = 0.5) -> int:
    """Sign changes of a periodic profile, ignoring values with ``|u| < threshold``."""
    u = np.asarray(u, dtype=float).ravel()
    signs = np.sign(u[np.abs(u) >= threshold])
    if signs.size < 2:
        return 0
    return int(np.sum(signs != np.roll(signs, 1)))


@dataclass
class ErrorReport:
    relative_l2: float
    per_timestamp: np.ndarray  # relative L2 at t_1 .. t_{N_t}
    residual_profile: np.ndarray
    epochs_profile: np.ndarray
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def summary(self) -> dict:
        return {
            "relative_l2": self.relative_l2,
            "max_timestamp_error": float(np.max(self.per_timestamp)) if self.per_timestamp.size else 0.0,
            "residual_ratio": profile_ratio(self.residual_profile) if self.residual_profile.size else 0.0,
            "mean_epochs": float(np.mean(self.epochs_profile)) if self.epochs_profile.size else 0.0,
        }


def sample_solution(solution, ref: ReferenceTrajectory) -> np.ndarray:
    """Network values on the reference grid for every stored timestamp.

    The shape matches ``ref.values`` (the evolved field only).
    """
    pts = ref.points
    rows = []
    for n in range(len(solution.params)):
        out = solution.predict(n, pts)
        if out.ndim == 2:
            out = out[:, -1]
        rows.append(out.reshape(ref.values.shape[1:]))
    return np.array(rows)


def error_report(solution, ref: ReferenceTrajectory) -> ErrorReport:
    pred = sample_solution(solution, ref)
    n = min(len(pred), len(ref.values)) - 1
    per = np.array([relative_l2(pred[k], ref.values[k]) for k in range(1, n + 1)])
    rel = relative_l2(pred[1:n + 1], ref.values[1:n + 1])
    return ErrorReport(rel, per, solution.residual_profile[:n], solution.epochs_profile[:n],
                       ref.times[1:n + 1])


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_report_csv(path, report: ErrorReport) -> Path:
    """One row per timestamp plus a trailing ``summary`` row (no wall-clock data)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "t", "relative_l2", "residual_loss", "epochs"])
        for k in range(len(report.per_timestamp)):
            t = report.times[k] if len(report.times) else k + 1
            w.writerow([k + 1, _fmt(t), _fmt(report.per_timestamp[k]),
                        _fmt(report.residual_profile[k]), int(report.epochs_profile[k])])
        s = report.summary()
        w.writerow(["summary", "", _fmt(s["relative_l2"]), _fmt(s["residual_ratio"]),
                    _fmt(s["mean_epochs"])])
    return path


# --------------------------------------------------------------- error study

STUDY_SCHEMES = ("forward_euler", "backward_euler", "trapezoidal", "crank_nicolson",
                 "rk2", "rk4", "gauss_legendre2")
DEFAULT_TAUS = (0.02, 0.01, 0.005, 0.0025)


def scheme_error(tab: ButcherTableau, tau: float, T: float = 1.0, lam: float = -math.pi ** 2) -> float:
    """Max-over-timestamps L2 error of time stepping the single-mode heat solution.

    Space is treated exactly: ``sin(pi x)`` is an eigenfunction of ``d^2/dx^2``
    with eigenvalue ``lam`` and unit L2 norm on ``[-1, 1]``, so the field
    error equals the amplitude error.
    """
    n = int(round(T / tau))
    amps = integrate_linear(tab, lam, 1.0, tau, n)
    exact = np.exp(lam * tau * np.arange(n + 1))
    return float(np.max(np.abs(amps - exact)))


def theorem_study(p=None, cfg_base=None, taus=DEFAULT_TAUS, schemes=STUDY_SCHEMES,
                  floor: float = 1e-13) -> dict:
    """Scheme-only error table on ``heat_test`` and fitted orders.

    Returns ``{"rows": [(scheme, tau, error), ...], "orders": {scheme: order}}``.
    Errors below ``floor`` (round-off) are excluded from the fits.
    """
    if p is not None and p.name != "heat_test":
        raise DomainError("the scheme-only study needs the analytic heat_test problem")
    T = p.T if p is not None else 1.0
    taus = sorted(taus, reverse=True)
    rows, orders = [], {}
    for name in schemes:
        tab = builtin(name)
        errs = [(tau, scheme_error(tab, tau, T)) for tau in taus]
        rows += [(name, tau, e) for tau, e in errs]
        usable = [(h, e) for h, e in errs if e > floor]
        orders[name] = convergence_order(usable) if len(usable) >= 3 else math.nan
    return {"rows": rows, "orders": orders}


def ode_order(tab: ButcherTableau, taus=(0.1, 0.05, 0.025, 0.0125), T: float = 1.0) -> float:
    """Fitted order on ``u' = -u`` from the final-time error."""
    errs = []
    for tau in sorted(taus, reverse=True):
        n = int(round(T / tau))
        u = integrate_linear(tab, -1.0, 1.0, tau, n)[-1]
        errs.append((tau, abs(u - math.exp(-T))))
    return convergence_order([(h, e) for h, e in errs if e > 1e-14])


def budget_study(p, cfg_base, budgets, reference=None) -> list[tuple[int, float, float]]:
    """Final PINN error against ``max_n sqrt(L^n)`` for several ``M1`` budgets.

    Rows are ``(M1, relative_l2, max_sqrt_loss)``.
    """
    from dataclasses import replace

    from tldpinn.training import run

    rows = []
    for m1 in budgets:
        cfg = replace(cfg_base, M1=int(m1))
        sol = run(p, cfg)
        if reference is None and p.exact is not None:
            times = np.linspace(0.0, p.T, cfg.N_t + 1)
            (lo, hi), = p.domain
            x = np.linspace(lo, hi, 201)
            ref = ReferenceTrajectory(p.name, x, times, np.array([p.exact(t, x) for t in times]))
        else:
            ref = reference
        pred = sample_solution(sol, ref)
        loss = max(r.loss for r in sol.records[1:])
        rows.append((int(m1), relative_l2(pred, ref), math.sqrt(loss)))
    return rows


def analytic_reference(p, n_t: int, points: int = 201) -> ReferenceTrajectory:
    """Closed-form trajectory for problems with an exact solution (``heat_test``)."""
    if p.exact is None:
        raise DomainError(f"{p.name} has no closed-form solution")
    (lo, hi), = p.domain
    x = np.linspace(lo, hi, points)
    times = np.linspace(0.0, p.T, n_t + 1)
    return ReferenceTrajectory(p.name, x, times, np.array([p.exact(t, x) for t in times]),
                               meta={"solver": "analytic"})


__all__ = [
    "ErrorReport", "relative_l2", "convergence_order", "profile_ratio", "interface_count",
    "sample_solution", "error_report", "write_report_csv", "theorem_study", "scheme_error",
    "ode_order", "budget_study", "analytic_reference", "heat_analytic",
]
