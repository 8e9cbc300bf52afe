"""Run configuration: INI files with per-module sections plus named presets.

Layering, lowest to highest priority: :class:`TrainConfig` defaults, the
``--preset`` overlay, the config file, explicit command-line flags.

Example file::

    [problem]
    name = rd

    [training]
    N_t = 50
    width = 64
    transfer = last_k:2

    [oracle]
    resolution = 512
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from tldpinn.errors import ConfigError, UnknownProblem
from tldpinn.pdes import BENCHMARKS, benchmark
from tldpinn.training import TrainConfig

# Reference settings of the method at full scale.
PAPER_PRESETS = {
    "rd": dict(depth=4, width=128, features=10, N_t=200, N_r=512, M0=10000, M1=1000, eps=1e-9),
    "ac": dict(depth=4, width=128, features=10, N_t=200, N_r=512, M0=10000, M1=2000, eps=1e-10),
    "ks_regular": dict(depth=3, width=256, features=5, N_t=250, N_r=500, M0=10000, M1=3000, eps=1e-8),
    "ks_chaotic": dict(depth=8, width=128, features=5, N_t=250, N_r=500, M0=10000, M1=7000, eps=1e-10),
    "ns2d": dict(depth=4, width=128, features=5, N_t=100, N_r=100, M0=10000, M1=5000, eps=1e-5),
}

# CPU-sized settings used by the acceptance suite. The initial fit gets its own
# faster schedule; warm-started steps use a small rate so they stay in the basin.
_DESK_SCHEDULE = dict(M0=20000, lr_initial=1e-3, decay_steps_initial=500, lr=1e-4, decay_steps=100)

DESK_PRESETS = {
    "heat_test": dict(depth=3, width=64, features=5, N_t=20, N_r=128, M1=1000, eps=1e-9, **_DESK_SCHEDULE),
    "rd": dict(depth=3, width=64, features=10, N_t=50, N_r=256, M1=1000, eps=1e-8, **_DESK_SCHEDULE),
    "ac": dict(depth=3, width=64, features=20, N_t=50, N_r=256, eps=1e-10,
               **{**_DESK_SCHEDULE, "M1": 2000, "decay_steps": 200}),
    "ks_regular": dict(depth=3, width=32, features=5, N_t=10, N_r=128, M0=1000, M1=200, eps=1e-8,
                       T=0.1),
    "ks_chaotic": dict(depth=3, width=32, features=5, N_t=10, N_r=128, M0=1000, M1=200, eps=1e-10,
                       T=0.1),
    "ns2d": dict(depth=2, width=32, features=2, N_t=5, N_r=100, M0=1000, M1=200, eps=1e-8,
                 T=0.05),
}

PRESETS = {"paper": PAPER_PRESETS, "desk": DESK_PRESETS}


@dataclass
class RunConfig:
    problem: str
    train: TrainConfig
    oracle: dict = field(default_factory=dict)
    preset: str | None = None

    def snapshot(self) -> dict:
        return {"problem": self.problem, "preset": self.preset,
                "training": self.train.snapshot(), "oracle": dict(self.oracle)}


_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig)}
_OPTIONAL_INT = ("N_u", "decay_steps_initial")
_OPTIONAL_FLOAT = ("T", "lr_initial")
_ORACLE_KEYS = {"resolution": int, "dt_ref": float, "cache": bool}


def _convert(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int) or name in _OPTIONAL_INT:
            if raw.lower() in ("none", ""):
                return None
            return int(raw)
        if isinstance(default, float) or name in _OPTIONAL_FLOAT:
            if raw.lower() in ("none", ""):
                return None
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def preset_overrides(problem: str, preset: str | None) -> dict:
    if preset is None:
        return {}
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose paper or desk")
    table = PRESETS[preset]
    if problem not in table:
        raise ConfigError(f"no {preset} preset for problem {problem!r}")
    return dict(table[problem])


def parse_file(path) -> tuple[str | None, dict, dict]:
    """Read an INI file; returns ``(problem, training overrides, oracle settings)``."""
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep N_t etc. case-sensitive
    path = Path(path)
    try:
        read = cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    known = {"problem", "training", "oracle", "output"}
    for section in cp.sections():
        if section not in known:
            raise ConfigError(f"unknown config section [{section}]")
    problem = cp.get("problem", "name", fallback=None)
    train = {}
    if cp.has_section("training"):
        defaults = TrainConfig()
        for key, raw in cp.items("training"):
            if key not in _TRAIN_FIELDS:
                raise ConfigError(f"unknown training key {key!r}")
            train[key] = _convert(key, raw, getattr(defaults, key))
    oracle = {}
    if cp.has_section("oracle"):
        for key, raw in cp.items("oracle"):
            if key not in _ORACLE_KEYS:
                raise ConfigError(f"unknown oracle key {key!r}")
            kind = _ORACLE_KEYS[key]
            oracle[key] = _convert(key, raw, kind() if kind is not bool else True)
    return problem, train, oracle


def load(problem: str | None = None, preset: str | None = None, path=None,
         **overrides) -> RunConfig:
    """Assemble a validated :class:`RunConfig`; ``None`` overrides are ignored."""
    file_problem, file_train, oracle = (None, {}, {}) if path is None else parse_file(path)
    name = problem or file_problem
    if name is None:
        raise ConfigError("no problem given (use --problem or [problem] name)")
    if name not in BENCHMARKS:
        raise UnknownProblem(f"unknown problem {name!r}; choose from {', '.join(BENCHMARKS)}")
    values = preset_overrides(name, preset)
    values.update(file_train)
    values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(values) - set(_TRAIN_FIELDS)
    if unknown:
        raise ConfigError(f"unknown training keys: {', '.join(sorted(unknown))}")
    try:
        train = TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    train = train.resolved(benchmark(name))
    return RunConfig(name, train, oracle, preset)


def write(path, run: RunConfig) -> Path:
    """Write ``run`` back out in the INI format understood by :func:`load`."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["problem"] = {"name": run.problem}
    cp["training"] = {k: "none" if v is None else str(v) for k, v in run.train.snapshot().items()}
    if run.oracle:
        cp["oracle"] = {k: str(v) for k, v in run.oracle.items()}
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        cp.write(fh)
    return path


def with_overrides(run: RunConfig, **kw) -> RunConfig:
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(run, train=replace(run.train, **kw)) if kw else run
