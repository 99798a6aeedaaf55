"""Run configuration parsing and CSV formats for snapshots, reports and operators."""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SCENARIO_NAMES = (
    "vortex_sphere",
    "oscillating_ellipsoid",
    "static_sphere_decay",
    "cahn_hilliard_sphere",
    "turing_sphere",
    "coupled_torus",
    "tumor_growth",
    "cahn_hilliard_ellipsoid",
)


@dataclass
class RunConfig:
    """Resolved run configuration. ``None`` means the scenario default."""

    scenario: str = ""
    dx: float | None = None
    dt: float | None = None
    T: float | None = None
    basis: str = "polynomial"
    n_neighbors: int | None = None
    n_ghost: int = 8
    epsilon: float = 3.0
    theta_max: float = 60.0  # degrees
    tube_radius: float = 1.5
    weighted: bool = True
    seed: int = 0
    gamma: float | None = None
    output_dir: str | None = None
    cadence: int = 10
    checkpoints: tuple = ()
    threads: int = 1
    reference_mode: bool = True
    snapshots: bool = True

    def validate(self) -> "RunConfig":
        if not self.scenario:
            raise ConfigError("scenario is required")
        if self.scenario not in SCENARIO_NAMES:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        for name in ("dx", "dt", "T"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive")
        if self.basis not in ("polynomial", "rbf_gsp"):
            raise ConfigError(f"basis must be polynomial or rbf_gsp, got {self.basis!r}")
        if self.n_neighbors is not None and self.n_neighbors < 6:
            raise ConfigError("n_neighbors must be at least 6")
        if self.n_ghost < 3:
            raise ConfigError("n_ghost must be at least 3")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if not 0 < self.theta_max < 180:
            raise ConfigError("theta_max must lie in (0, 180) degrees")
        if not self.tube_radius > 0:
            raise ConfigError("tube_radius must be positive")
        if self.cadence < 1:
            raise ConfigError("cadence must be at least 1")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if any(not c >= 0 for c in self.checkpoints):
            raise ConfigError("checkpoints must be non-negative")
        return self

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                s = "default"
            elif isinstance(v, tuple):
                s = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                s = repr(v)
            else:
                s = str(v).lower() if isinstance(v, bool) else str(v)
            lines.append(f"{f.name}={s}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_BOOLS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _convert(name: str, text: str):
    ftype = _FIELDS[name].type
    if text == "default" and "None" in str(ftype):
        return None
    if "bool" in str(ftype):
        if text.lower() not in _BOOLS:
            raise ValueError(f"expected a boolean, got {text!r}")
        return _BOOLS[text.lower()]
    if name == "checkpoints":
        return tuple(sorted(float(x) for x in text.split(",") if x.strip()))
    if "int" in str(ftype) and "float" not in str(ftype):
        return int(text)
    if "float" in str(ftype):
        v = float(text)
        if not math.isfinite(v):
            raise ValueError("value must be finite")
        return v
    return text


def parse_config(text: str, **overrides) -> RunConfig:
    """Parse ``key=value`` lines with ``#`` comments into a validated config.

    Keyword overrides are applied after the file.
    """
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _convert(key, val))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    for key, val in overrides.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        setattr(cfg, key, val)
    try:
        return cfg.validate()
    except ConfigError as exc:
        bad = str(exc).split()[0]
        where = next((i for i, raw in enumerate(text.splitlines(), 1)
                      if raw.split("#", 1)[0].strip().startswith(bad + "=")), None)
        if where is not None:
            raise ConfigError(f"line {where}: {exc}") from None
        raise


def load_config(path, **overrides) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), **overrides)


def write_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

FIELD_NAMES = ("u", "w")


def write_snapshot(tube, t: float, path) -> None:
    """CSV of footpoints sorted by grid index, plus a ``.meta`` sidecar."""
    m = tube.vals.shape[1]
    header = "x,y,z,nx,ny,nz," + ",".join(FIELD_NAMES[:m])
    data = np.concatenate([tube.pos, tube.nrm, tube.vals], axis=1)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(header + "\n")
            for row in data:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        with open(str(path) + ".meta", "w", encoding="utf-8") as fh:
            fh.write(f"t={float(t)!r},n_footpoints={tube.n}\n")
    except OSError as exc:
        raise OSError(f"cannot write snapshot {path}: {exc}") from exc


def read_snapshot(path):
    """Return ``(pos, nrm, vals, t)``; ``t`` is None without a sidecar."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = None
    meta = str(path) + ".meta"
    if os.path.exists(meta):
        with open(meta, encoding="utf-8") as fh:
            kv = dict(item.split("=") for item in fh.read().strip().split(","))
        t = float(kv["t"])
    return data[:, :3], data[:, 3:6], data[:, 6:], t


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

PHASES = ("operators", "values", "move", "resample")


@dataclass
class Checkpoint:
    time: float
    n_footpoints: int
    linf_error: float = float("nan")
    l2_error: float = float("nan")
    field_min: tuple = ()
    field_max: tuple = ()
    timings: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


@dataclass
class RunReport:
    scenario: str = ""
    n_fields: int = 1
    rows: list = field(default_factory=list)

    def add(self, cp: Checkpoint) -> None:
        if self.rows and cp.time < self.rows[-1].time:
            raise ValueError("checkpoint times must be non-decreasing")
        self.rows.append(cp)

    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.rows])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def at(self, t: float) -> Checkpoint:
        ts = self.times()
        i = int(np.argmin(np.abs(ts - t)))
        if abs(ts[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"no checkpoint at t={t}")
        return self.rows[i]

    def header(self) -> list:
        cols = ["time", "n_footpoints", "linf_error", "l2_error"]
        for k in FIELD_NAMES[: self.n_fields]:
            cols += [f"min_{k}", f"max_{k}"]
        cols += [f"wall_{p}" for p in PHASES]
        return cols


def write_report(report: RunReport, path) -> None:
    """CSV with one row per checkpoint."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(report.header()) + "\n")
        for r in report.rows:
            vals = [f"{r.time:.17g}", str(r.n_footpoints), f"{r.linf_error:.17g}",
                    f"{r.l2_error:.17g}"]
            for k in range(report.n_fields):
                vals += [f"{r.field_min[k]:.17g}", f"{r.field_max[k]:.17g}"]
            vals += [f"{r.timings.get(p, 0.0):.6f}" for p in PHASES]
            fh.write(",".join(vals) + "\n")


def dump_operator_csv(op, path, ids=None) -> None:
    from .operators import dump_operator

    dump_operator(op, path, ids)
