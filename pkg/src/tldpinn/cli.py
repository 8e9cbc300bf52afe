"""Command-line front end: ``solve``, ``ablate``, ``verify`` and ``oracle``.

Exit codes: 0 success, 1 failed verification, 2 configuration error,
3 numerical abort (diverged training or oracle).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import subprocess
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from tldpinn import __version__
from tldpinn import config as cfgmod
from tldpinn.errors import ConfigError, OracleDiverged, TLDPINNError, UnknownProblem, UnknownScheme
from tldpinn.metrics import analytic_reference, error_report, sample_solution, write_report_csv
from tldpinn.network import save_checkpoint
from tldpinn.oracle import ReferenceTrajectory, reference, self_convergence
from tldpinn.pdes import BENCHMARKS, benchmark
from tldpinn.schemes import SCHEMES
from tldpinn.training import Trainer

log = logging.getLogger("tldpinn")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

ABLATION_AXES = {
    "scheme": ("forward_euler", "backward_euler", "rk2", "rk4", "crank_nicolson", "gauss_legendre2"),
    "transfer": ("none", "last_k:1", "last_k:2", "last_k:3", "all"),
}

MANIFEST_HEADER = "# tldpinn run manifest v1"


def version_string() -> str:
    """``git describe``-style version, falling back to the package version."""
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict
    version: str
    seed: int
    out_dir: Path
    command: list = field(default_factory=list)
    files: dict = field(default_factory=dict)  # relative path -> sha256

    def add(self, path) -> None:
        path = Path(path)
        self.files[str(path.relative_to(self.out_dir))] = sha256_file(path)

    def write(self) -> Path:
        lines = [MANIFEST_HEADER, f"version {self.version}", f"seed {self.seed}",
                 f"command {json.dumps(self.command)}",
                 f"config {json.dumps(self.config, sort_keys=True)}"]
        lines += [f"file {digest} {name}" for name, digest in sorted(self.files.items())]
        path = self.out_dir / "manifest.txt"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, out_dir) -> "RunManifest":
        out_dir = Path(out_dir)
        lines = (out_dir / "manifest.txt").read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != MANIFEST_HEADER:
            raise ValueError("not a run manifest")
        fields_, files = {}, {}
        for line in lines[1:]:
            key, rest = line.split(" ", 1)
            if key == "file":
                digest, name = rest.split(" ", 1)
                files[name] = digest
            else:
                fields_[key] = rest
        return cls(json.loads(fields_["config"]), fields_["version"], int(fields_["seed"]),
                   out_dir, json.loads(fields_["command"]), files)

    def verify(self) -> list[str]:
        """Names of listed files that are missing or whose hash differs."""
        bad = []
        for name, digest in self.files.items():
            p = self.out_dir / name
            if not p.exists() or sha256_file(p) != digest:
                bad.append(name)
        return bad


# ------------------------------------------------------------------ outputs

def reference_for(problem, run: cfgmod.RunConfig) -> tuple[ReferenceTrajectory, bool]:
    if problem.exact is not None:
        return analytic_reference(problem, run.train.N_t), False
    o = run.oracle
    return reference(problem, run.train.N_t, o.get("resolution"), o.get("dt_ref"),
                     use_cache=o.get("cache", True))


def dump_fields(path, pred: np.ndarray, ref: ReferenceTrajectory) -> Path:
    """Gnuplot-ready blocks: ``x t pred ref`` (1-D) or ``x y pred ref`` at the final time (2-D)."""
    with open(path, "w", encoding="utf-8") as fh:
        if isinstance(ref.grid, tuple):
            fh.write(f"# x y w_pred w_ref at t={ref.times[-1]!r}\n")
            x, y = ref.grid
            for i, xi in enumerate(x):
                for j, yj in enumerate(y):
                    fh.write(f"{xi!r} {yj!r} {pred[-1, i, j]!r} {ref.values[-1, i, j]!r}\n")
                fh.write("\n")
        else:
            fh.write("# x t u_pred u_ref\n")
            for n, t in enumerate(ref.times[:len(pred)]):
                for i, xi in enumerate(ref.grid):
                    fh.write(f"{xi!r} {t!r} {pred[n, i]!r} {ref.values[n, i]!r}\n")
                fh.write("\n")
    return Path(path)


def write_profiles(path, solution) -> Path:
    """Per-timestamp training diagnostics without wall-clock data."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "loss", "residual_loss", "epochs", "stop_reason"])
        for r in solution.records:
            w.writerow([r.n, repr(float(r.loss)), repr(float(r.residual_loss)), r.epochs, r.stop_reason])
    return Path(path)


def execute(run: cfgmod.RunConfig, out_dir: Path, command: list, write_checkpoints=True) -> dict:
    """Train, evaluate and write every artefact of one run; returns a summary dict."""
    problem = benchmark(run.problem)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(run.snapshot(), version_string(), run.train.seed, out_dir, command)
    cfg_path = cfgmod.write(out_dir / "config.ini", run)
    manifest.add(cfg_path)

    diag_path = out_dir / "diagnostics.jsonl"
    ckpt_dir = out_dir / "checkpoints"
    with diag_path.open("w", encoding="utf-8") as diag:
        def callback(n, theta, rec):
            diag.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
            diag.flush()
            if write_checkpoints:
                for p in save_checkpoint(ckpt_dir / f"theta_{n:04d}", theta):
                    manifest.add(p)

        start = time.perf_counter()
        solution = Trainer(problem, run.train).run(callback)
        elapsed = time.perf_counter() - start
    manifest.add(diag_path)
    manifest.add(write_profiles(out_dir / "profiles.csv", solution))

    summary = {"problem": run.problem, "timestamps": len(solution.params) - 1,
               "wall_clock": elapsed, "error": solution.error}
    if solution.params:
        ref, hit = reference_for(problem, run)
        report = error_report(solution, ref)
        manifest.add(write_report_csv(out_dir / "errors.csv", report))
        pred = sample_solution(solution, ref)
        manifest.add(dump_fields(out_dir / "fields.dat", pred, ref))
        summary.update(report.summary())
        summary["reference_cache_hit"] = hit
    manifest.write()
    return summary


# ----------------------------------------------------------------- commands

def _load(args) -> cfgmod.RunConfig:
    return cfgmod.load(problem=args.problem, preset=args.preset, path=args.config,
                       seed=args.seed, scheme=getattr(args, "scheme", None),
                       transfer=getattr(args, "transfer", None))


def cmd_solve(args) -> int:
    run = _load(args)
    out = Path(args.out or f"runs/{run.problem}-seed{run.train.seed}")
    summary = execute(run, out, sys.argv[1:] if args.argv is None else args.argv)
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    if summary["error"]:
        print(f"numerical abort: {summary['error']} (partial outputs kept in {out})", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_ablate(args) -> int:
    axis = (args.axis or "").strip()
    if axis not in ABLATION_AXES:
        raise ConfigError(f"ablation axis must be one of {', '.join(ABLATION_AXES)}")
    values = ABLATION_AXES[axis]
    if args.values is not None:
        values = tuple(v.strip() for v in args.values.split(",") if v.strip())
        if not values:
            raise ConfigError("empty ablation value list")
    base = _load(args)
    out = Path(args.out or f"runs/ablate-{axis}-{base.problem}")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        cell_dir = out / value.replace(":", "_")
        try:
            run = cfgmod.with_overrides(base, **{axis: value})
            summary = execute(run, cell_dir, ["ablate", axis, value], write_checkpoints=False)
            status = "ok" if not summary["error"] else "diverged"
            rel = summary.get("relative_l2", float("nan"))
            epochs = summary.get("mean_epochs", float("nan"))
            total = int(round(epochs * summary["timestamps"])) if summary["timestamps"] else 0
        except (TLDPINNError, ValueError) as exc:
            log.error("cell %s=%s failed: %s", axis, value, exc)
            status, rel, epochs, total = f"failed: {exc}".replace(",", ";"), float("nan"), float("nan"), 0
        rows.append((value, rel, epochs, total, status))
        print(f"{axis}={value}: relative_l2={rel:.3e} mean_epochs={epochs:.1f} [{status}]")
    path = out / f"ablation_{axis}.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([axis, "relative_l2", "mean_epochs", "total_epochs", "status"])
        for value, rel, epochs, total, status in rows:
            w.writerow([value, repr(float(rel)), repr(float(epochs)), total, status])
    print(f"wrote {path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from tldpinn import checks

    suites = {"schemes": checks.schemes_suite, "autodiff": checks.autodiff_suite,
              "theorem": checks.theorem_suite}
    if args.suite not in suites:
        raise ConfigError(f"unknown suite {args.suite!r}")
    rows = suites[args.suite]()
    print(checks.format_table(rows))
    failed = sum(not r.passed for r in rows)
    print(f"{len(rows) - failed}/{len(rows)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def cmd_oracle(args) -> int:
    name = args.name or args.problem
    if name is None:
        raise ConfigError("oracle needs a problem name")
    problem = benchmark(name)
    n_t = args.n_t
    if n_t is None:
        run = cfgmod.load(problem=name, preset=args.preset or "desk", path=args.config)
        n_t = run.train.N_t
    ref, hit = reference(problem, n_t, args.resolution, args.dt_ref, use_cache=not args.no_cache)
    print(f"{name}: {'cache hit' if hit else 'computed'}; {ref.meta}")
    print(f"samples {ref.values.shape}, range [{ref.values.min():.6g}, {ref.values.max():.6g}]")
    if problem.exact is not None:
        exact = np.array([problem.exact(t, ref.grid) for t in ref.times])
        err = float(np.linalg.norm(ref.values - exact) / np.linalg.norm(exact))
        print(f"relative L2 against the closed form: {err:.3e}")
    if args.self_check:
        change = self_convergence(problem, n_t, args.resolution, args.dt_ref)
        print(f"self-convergence (2x resolution, dt/2): relative change {change:.3e}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        dump_fields(out / f"{name}_reference.dat", ref.values, ref)
        print(f"wrote {out / f'{name}_reference.dat'}")
    return EXIT_OK


# ------------------------------------------------------------------- parser

def _common(p: argparse.ArgumentParser, with_run_flags=True):
    p.add_argument("--problem", choices=BENCHMARKS)
    p.add_argument("--preset", choices=("paper", "desk"))
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    if with_run_flags:
        p.add_argument("--scheme", choices=SCHEMES)
        p.add_argument("--transfer", help="all | none | last_k:K")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tldpinn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-timestamp progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="train one benchmark and write all artefacts")
    _common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("ablate", help="sweep the scheme or transfer axis")
    _common(p)
    p.add_argument("--axis", required=True)
    p.add_argument("--values", help="comma-separated subset of the axis values")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("verify", help="run a property suite")
    p.add_argument("suite", choices=("schemes", "autodiff", "theorem"))
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("oracle", help="generate (or load) a reference trajectory")
    p.add_argument("name", nargs="?", choices=BENCHMARKS)
    _common(p, with_run_flags=False)
    p.add_argument("--n-t", type=int, help="number of timestamps (default: preset N_t)")
    p.add_argument("--resolution", type=int)
    p.add_argument("--dt-ref", type=float)
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--self-check", action="store_true", help="also run the refinement check")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    args.argv = list(argv) if argv is not None else None
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UnknownProblem, UnknownScheme) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OracleDiverged as exc:
        print(f"oracle diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
