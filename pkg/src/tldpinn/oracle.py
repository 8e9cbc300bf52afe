"""Reference solutions: closed forms and classical high-resolution solvers.

* :func:`heat_analytic` is the exact solution of ``heat_test``.
* :func:`spectral_solve_1d` is a Fourier pseudo-spectral ETDRK4 solver for
  periodic 1-D problems (and the periodic embedding of ``heat_test``).
* :func:`fd_solve_dirichlet` uses 4th-order finite differences with RK4 for
  problems with homogeneous walls.
* :func:`spectral_solve_ns2d` integrates the vorticity form of 2-D
  Navier-Stokes with RK4.

All solvers sample their state at ``t_n = n T / n_t``.  :func:`reference`
dispatches on the problem and caches trajectories on disk.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from filelock import FileLock

from tldpinn.errors import DomainError, OracleDiverged
from tldpinn.pdes import PDEProblem

log = logging.getLogger(__name__)

CACHE_HEADER = "# tldpinn reference v1"
CACHE_VERSION = 1


@dataclass
class ReferenceTrajectory:
    """Samples of a reference solution at ``times``.

    ``grid`` is a 1-D array of points (1-D problems) or a pair ``(x, y)`` of
    axis arrays (2-D problems, values indexed ``[n, i, j]``).  ``values`` holds
    the evolved field; ``extra`` holds additional fields such as velocities.
    """

    problem: str
    grid: object
    times: np.ndarray
    values: np.ndarray
    extra: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != len(self.times):
            raise ValueError("values must have one row per timestamp")

    @property
    def n_t(self) -> int:
        return len(self.times) - 1

    @property
    def points(self) -> np.ndarray:
        """Grid points as ``(N,)`` (1-D) or ``(N, 2)`` (2-D, row-major)."""
        if isinstance(self.grid, tuple):
            X, Y = np.meshgrid(*self.grid, indexing="ij")
            return np.stack([X.ravel(), Y.ravel()], axis=-1)
        return np.asarray(self.grid)

    def flat(self, n: int) -> np.ndarray:
        return self.values[n].reshape(-1)

    def at(self, n: int, name: str | None = None) -> np.ndarray:
        return self.values[n] if name is None else self.extra[name][n]


def heat_analytic(t, x):
    """``exp(-pi^2 t) sin(pi x)``."""
    return np.exp(-math.pi ** 2 * np.asarray(t, dtype=float)) * np.sin(math.pi * np.asarray(x, dtype=float))


def _times(T, n_t):
    return np.linspace(0.0, T, n_t + 1)


def _substeps(T, n_t, dt_ref):
    tau = T / n_t
    m = max(1, int(math.ceil(tau / dt_ref - 1e-9)))
    return m, tau / m


def _check(state, t, what):
    if not np.all(np.isfinite(state)):
        raise OracleDiverged(f"{what} diverged at t={t:.6g}", t)


# ------------------------------------------------------------- 1-D spectral

def _spectral_split(p: PDEProblem, k):
    """Linear symbol ``L(k)`` and nonlinear map ``u_hat -> N_hat`` (undealiased)."""
    c = p.coefficients
    if p.name == "heat_test":
        return -k ** 2, None
    if p.name == "ac":
        g1, g2 = c["gamma1"], c["gamma2"]
        return -g1 * k ** 2 + g2, lambda u: -g2 * np.fft.rfft(u ** 3)
    if p.name.startswith("ks"):
        a, b, g = c["alpha"], c["beta"], c["gamma"]
        return b * k ** 2 - g * k ** 4, lambda u: -0.5 * a * 1j * k * np.fft.rfft(u * u)
    raise DomainError(f"no spectral splitting for problem {p.name!r}")


def _etdrk4_coefficients(L, h, contour=32):
    """Kassam-Trefethen contour-integral evaluation of the ETDRK4 weights."""
    E = np.exp(h * L)
    E2 = np.exp(h * L / 2)
    r = np.exp(1j * np.pi * (np.arange(1, contour + 1) - 0.5) / contour)
    LR = h * L[:, None] + r[None, :]
    Q = h * np.real(np.mean((np.exp(LR / 2) - 1) / LR, axis=1))
    f1 = h * np.real(np.mean((-4 - LR + np.exp(LR) * (4 - 3 * LR + LR ** 2)) / LR ** 3, axis=1))
    f2 = h * np.real(np.mean((2 + LR + np.exp(LR) * (-2 + LR)) / LR ** 3, axis=1))
    f3 = h * np.real(np.mean((-4 - 3 * LR - LR ** 2 + np.exp(LR) * (4 - LR)) / LR ** 3, axis=1))
    return E, E2, Q, f1, f2, f3


def spectral_solve_1d(p: PDEProblem, modes: int = 512, dt_ref: float | None = None,
                      n_t: int = 100) -> ReferenceTrajectory:
    """Pseudo-spectral ETDRK4 solution on the periodic domain of ``p``.

    Nonlinear terms are dealiased with the 2/3 rule.  ``dt_ref`` defaults to
    ``tau / 100`` and is shrunk so that it divides ``tau``.
    """
    if modes < 8 or modes & (modes - 1):
        raise DomainError("modes must be a power of two >= 8")
    if p.spatial_dim != 1:
        raise DomainError("spectral_solve_1d handles 1-D problems")
    if not p.periodic and p.name != "heat_test":
        raise DomainError(f"{p.name} is not periodic")
    (lo, hi), = p.domain
    Lx = hi - lo
    x = lo + Lx * np.arange(modes) / modes
    k = 2 * math.pi / Lx * np.arange(modes // 2 + 1)
    dealias = np.arange(modes // 2 + 1) < modes / 3
    Lsym, nl = _spectral_split(p, k)
    dt_ref = p.T / n_t / 100 if dt_ref is None else dt_ref
    m, h = _substeps(p.T, n_t, dt_ref)
    E, E2, Q, f1, f2, f3 = _etdrk4_coefficients(Lsym, h)

    def N(vh):
        if nl is None:
            return np.zeros_like(vh)
        return dealias * nl(np.fft.irfft(vh, n=modes))

    v = np.fft.rfft(np.asarray(p.initial_condition(x), dtype=float))
    out = [np.fft.irfft(v, n=modes)]
    for n in range(n_t):
        for s in range(m):
            Nv = N(v)
            a = E2 * v + Q * Nv
            Na = N(a)
            b = E2 * v + Q * Na
            Nb = N(b)
            c = E2 * a + Q * (2 * Nb - Nv)
            Nc = N(c)
            v = E * v + Nv * f1 + 2 * (Na + Nb) * f2 + Nc * f3
        _check(v, (n + 1) * m * h, f"{p.name} spectral solve")
        out.append(np.fft.irfft(v, n=modes))
    meta = {"solver": "spectral_etdrk4", "modes": modes, "dt": h}
    return ReferenceTrajectory(p.name, x, _times(p.T, n_t), np.array(out), meta=meta)


# ---------------------------------------------------------- 1-D Dirichlet FD

def _second_difference_matrix(n_int: int, h: float) -> np.ndarray:
    """4th-order ``d^2/dx^2`` on interior nodes with zero walls.

    Rows next to a wall use the one-sided stencil ``(10, -15, -4, 14, -6, 1)``
    on nodes ``0..5`` (the wall value being zero).
    """
    D = np.zeros((n_int, n_int))
    centre = np.array([-1.0, 16.0, -30.0, 16.0, -1.0])
    for j in range(n_int):
        if j == 0 or j == n_int - 1:
            continue
        for off, w in zip(range(-2, 3), centre):
            i = j + off
            if 0 <= i < n_int:
                D[j, i] += w
    side = np.array([-15.0, -4.0, 14.0, -6.0, 1.0])  # nodes 1..5; node 0 is the wall
    D[0, :5] = side
    D[-1, -5:] = side[::-1]
    return D / (12.0 * h * h)


def _fd_rhs(p: PDEProblem):
    c = p.coefficients
    if p.name == "heat_test":
        return 1.0, None
    if p.name == "rd":
        return c["d1"], lambda u: c["d2"] * u * u
    raise DomainError(f"no finite-difference model for problem {p.name!r}")


def fd_solve_dirichlet(p: PDEProblem, grid_n: int = 512, dt_ref: float | None = None,
                       n_t: int = 100) -> ReferenceTrajectory:
    """4th-order finite differences plus classical RK4 with pinned zero walls.

    ``dt_ref`` (default ``tau / 100``) is reduced to 90% of the RK4
    stability limit of the discrete diffusion operator when necessary.
    """
    if p.boundary != "dirichlet":
        raise DomainError(f"{p.name} has no Dirichlet walls")
    if grid_n < 8:
        raise DomainError("grid_n must be at least 8")
    (lo, hi), = p.domain
    x = np.linspace(lo, hi, grid_n + 1)
    h = (hi - lo) / grid_n
    diff, reaction = _fd_rhs(p)
    D = diff * _second_difference_matrix(grid_n - 1, h)
    rho = float(np.max(np.abs(np.linalg.eigvals(D))))
    D = sp.csr_matrix(D)
    limit = 0.9 * 2.785 / rho
    dt_ref = p.T / n_t / 100 if dt_ref is None else dt_ref
    clamped = dt_ref > limit
    m, dt = _substeps(p.T, n_t, min(dt_ref, limit))
    if clamped:
        log.info("dt_ref %.3g exceeds the RK4 stability limit; using %.3g", dt_ref, dt)

    def f(u):
        r = D @ u
        return r if reaction is None else r + reaction(u)

    u = np.asarray(p.initial_condition(x[1:-1]), dtype=float)
    walls = np.zeros(1)
    out = [np.concatenate([walls, u, walls])]
    for n in range(n_t):
        for _ in range(m):
            k1 = f(u)
            k2 = f(u + 0.5 * dt * k1)
            k3 = f(u + 0.5 * dt * k2)
            k4 = f(u + dt * k3)
            u = u + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        _check(u, (n + 1) * m * dt, f"{p.name} finite-difference solve")
        out.append(np.concatenate([walls, u, walls]))
    meta = {"solver": "fd4_rk4", "grid_n": grid_n, "dt": dt, "dt_clamped": bool(clamped)}
    return ReferenceTrajectory(p.name, x, _times(p.T, n_t), np.array(out), meta=meta)


# ------------------------------------------------------------------ 2-D NS

def spectral_solve_ns2d(p: PDEProblem, modes: int = 128, dt_ref: float | None = None,
                        n_t: int = 100) -> ReferenceTrajectory:
    """Vorticity-form pseudo-spectral Navier-Stokes with RK4 and 2/3 dealiasing.

    Velocities come from the zero-mean stream function: ``-lap psi = w``,
    ``u = psi_y``, ``v = -psi_x``.  ``values`` holds ``w``; ``extra`` holds
    ``u`` and ``v``.
    """
    if p.spatial_dim != 2 or "Re" not in p.coefficients:
        raise DomainError("spectral_solve_ns2d needs the 2-D Navier-Stokes problem")
    if modes < 8 or modes & (modes - 1):
        raise DomainError("modes must be a power of two >= 8")
    (xlo, xhi), (ylo, yhi) = p.domain
    Lx, Ly = xhi - xlo, yhi - ylo
    Re = p.coefficients["Re"]
    x = xlo + Lx * np.arange(modes) / modes
    y = ylo + Ly * np.arange(modes) / modes
    X, Y = np.meshgrid(x, y, indexing="ij")
    kx = (2 * math.pi / Lx * np.fft.fftfreq(modes, 1.0 / modes))[:, None]
    ky = (2 * math.pi / Ly * np.arange(modes // 2 + 1))[None, :]
    k2 = kx ** 2 + ky ** 2
    inv_k2 = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    cut_x = np.abs(np.fft.fftfreq(modes, 1.0 / modes))[:, None] < modes / 3
    cut_y = np.arange(modes // 2 + 1)[None, :] < modes / 3
    dealias = cut_x & cut_y
    shape = (modes, modes)

    def velocity(wh):
        ph = wh * inv_k2
        return np.fft.irfft2(1j * ky * ph, s=shape), np.fft.irfft2(-1j * kx * ph, s=shape)

    def rhs(wh):
        u, v = velocity(wh)
        wx = np.fft.irfft2(1j * kx * wh, s=shape)
        wy = np.fft.irfft2(1j * ky * wh, s=shape)
        adv = np.fft.rfft2(u * wx + v * wy)
        return -(dealias * adv) - k2 * wh / Re

    w0 = np.asarray(p.initial_condition(X, Y), dtype=float)[..., -1]
    wh = np.fft.rfft2(w0)
    dt_ref = p.T / n_t / 100 if dt_ref is None else dt_ref
    m, dt = _substeps(p.T, n_t, dt_ref)

    def sample(wh):
        u, v = velocity(wh)
        return np.fft.irfft2(wh, s=shape), u, v

    ws, us, vs = [], [], []
    for arr, lst in zip(sample(wh), (ws, us, vs)):
        lst.append(arr)
    for n in range(n_t):
        for _ in range(m):
            k1 = rhs(wh)
            k2_ = rhs(wh + 0.5 * dt * k1)
            k3 = rhs(wh + 0.5 * dt * k2_)
            k4 = rhs(wh + dt * k3)
            wh = wh + dt / 6 * (k1 + 2 * k2_ + 2 * k3 + k4)
        _check(wh, (n + 1) * m * dt, "Navier-Stokes spectral solve")
        for arr, lst in zip(sample(wh), (ws, us, vs)):
            lst.append(arr)
    meta = {"solver": "spectral_rk4_vorticity", "modes": modes, "dt": dt}
    return ReferenceTrajectory(p.name, (x, y), _times(p.T, n_t), np.array(ws),
                               {"u": np.array(us), "v": np.array(vs)}, meta=meta)


def divergence(ref: ReferenceTrajectory, n: int) -> np.ndarray:
    """Spectral divergence of the stored velocity at timestamp ``n``."""
    x, y = ref.grid
    N = len(x)
    Lx = N * (x[1] - x[0])
    Ly = N * (y[1] - y[0])
    kx = (2 * math.pi / Lx * np.fft.fftfreq(N, 1.0 / N))[:, None]
    ky = (2 * math.pi / Ly * np.fft.fftfreq(N, 1.0 / N))[None, :]
    uh = np.fft.fft2(ref.extra["u"][n])
    vh = np.fft.fft2(ref.extra["v"][n])
    return np.real(np.fft.ifft2(1j * kx * uh + 1j * ky * vh))


# -------------------------------------------------------------- dispatch/cache

def default_resolution(p: PDEProblem) -> dict:
    if p.spatial_dim == 2:
        return {"modes": 128}
    if p.boundary == "dirichlet":
        return {"grid_n": 512}
    # the Allen-Cahn interfaces are a few 1e-3 wide and need more modes
    return {"modes": 2048 if p.name == "ac" else 512}


def solve(p: PDEProblem, n_t: int, resolution: int | None = None,
          dt_ref: float | None = None) -> ReferenceTrajectory:
    """Run the solver that matches ``p`` (no caching)."""
    res = resolution or next(iter(default_resolution(p).values()))
    if p.spatial_dim == 2:
        return spectral_solve_ns2d(p, res, dt_ref, n_t)
    if p.boundary == "dirichlet":
        return fd_solve_dirichlet(p, res, dt_ref, n_t)
    return spectral_solve_1d(p, res, dt_ref, n_t)


def cache_dir() -> Path:
    env = os.environ.get("TLDPINN_CACHE")
    return Path(env) if env else Path.home() / ".cache" / "tldpinn"


def cache_key(p: PDEProblem, n_t: int, resolution: int, dt_ref: float | None) -> str:
    res_key = "resolution"
    spec = {
        "version": CACHE_VERSION, "problem": p.name, "domain": p.domain, "T": p.T,
        "coefficients": p.coefficients, "n_t": n_t, res_key: resolution, "dt_ref": dt_ref,
    }
    # fingerprint the initial condition on a fixed probe set
    if p.spatial_dim == 1:
        (lo, hi), = p.domain
        probe = np.asarray(p.initial_condition(np.linspace(lo, hi, 17)), dtype="<f8")
    else:
        (xlo, xhi), (ylo, yhi) = p.domain
        g = np.linspace(0.0, 1.0, 5)
        X, Y = np.meshgrid(xlo + (xhi - xlo) * g, ylo + (yhi - ylo) * g, indexing="ij")
        probe = np.asarray(p.initial_condition(X, Y), dtype="<f8")
    h = hashlib.sha256(json.dumps(spec, sort_keys=True, default=str).encode())
    h.update(probe.tobytes())
    return h.hexdigest()[:24]


def save_reference(stem, ref: ReferenceTrajectory) -> tuple[Path, Path]:
    """``<stem>.txt`` manifest plus ``<stem>.bin`` little-endian f64 block.

    The block stores the grid axes, the times, ``values`` and each extra field
    in manifest order.
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    axes = ref.grid if isinstance(ref.grid, tuple) else (ref.grid,)
    arrays = [("axis", a) for a in axes] + [("times", ref.times), ("values", ref.values)]
    arrays += [(f"extra:{k}", v) for k, v in sorted(ref.extra.items())]
    lines = [CACHE_HEADER, f"problem {ref.problem}", f"meta {json.dumps(ref.meta, sort_keys=True)}"]
    for name, a in arrays:
        lines.append(f"{name} {','.join(str(d) for d in np.shape(a))}")
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    txt, binf = stem.with_suffix(".txt"), stem.with_suffix(".bin")
    binf.write_bytes(blob)
    txt.write_text("\n".join(lines) + "\n")
    return txt, binf


def load_reference(stem) -> ReferenceTrajectory:
    stem = Path(stem)
    lines = stem.with_suffix(".txt").read_text().splitlines()
    if not lines or lines[0] != CACHE_HEADER:
        raise ValueError(f"{stem}.txt is not a reference manifest")
    problem = lines[1].split(" ", 1)[1]
    meta = json.loads(lines[2].split(" ", 1)[1])
    data = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
    pos, axes, extra, times, values = 0, [], {}, None, None
    for line in lines[3:]:
        name, dims = line.split(" ")
        shape = tuple(int(d) for d in dims.split(",") if d)
        size = int(np.prod(shape)) if shape else 1
        arr = data[pos:pos + size].reshape(shape).copy()
        pos += size
        if name == "axis":
            axes.append(arr)
        elif name == "times":
            times = arr
        elif name == "values":
            values = arr
        else:
            extra[name.split(":", 1)[1]] = arr
    grid = tuple(axes) if len(axes) > 1 else axes[0]
    return ReferenceTrajectory(problem, grid, times, values, extra, meta)


def reference(p: PDEProblem, n_t: int, resolution: int | None = None,
              dt_ref: float | None = None, use_cache: bool = True):
    """Cached :func:`solve`; returns ``(trajectory, cache_hit)``."""
    resolution = resolution or next(iter(default_resolution(p).values()))
    if not use_cache:
        return solve(p, n_t, resolution, dt_ref), False
    directory = cache_dir()
    directory.mkdir(parents=True, exist_ok=True)
    key = cache_key(p, n_t, resolution, dt_ref)
    stem = directory / f"{p.name}-{key}"
    with FileLock(str(stem) + ".lock"):
        if stem.with_suffix(".txt").exists() and stem.with_suffix(".bin").exists():
            try:
                return load_reference(stem), True
            except (ValueError, OSError) as exc:
                log.warning("ignoring unreadable cache entry %s: %s", stem, exc)
        ref = solve(p, n_t, resolution, dt_ref)
        save_reference(stem, ref)
    return ref, False


def self_convergence(p: PDEProblem, n_t: int, resolution: int | None = None,
                     dt_ref: float | None = None) -> float:
    """Relative change of the final sample when resolution doubles and dt halves.

    Refined grids are subsampled back onto the base grid (every second node).
    """
    resolution = resolution or next(iter(default_resolution(p).values()))
    dt_ref = p.T / n_t / 100 if dt_ref is None else dt_ref
    base = solve(p, n_t, resolution, dt_ref)
    fine = solve(p, n_t, 2 * resolution, dt_ref / 2)
    a = base.values[-1]
    b = fine.values[-1][(slice(None, None, 2),) * a.ndim]
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))
