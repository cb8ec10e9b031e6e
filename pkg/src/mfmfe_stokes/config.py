"""Run configuration: a small key=value file format plus flag overrides.

Precedence is flags > file > defaults.  Unknown keys in the file are an
error rather than a warning so typos cannot silently fall back to
defaults.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    pass


KINDS = ("convergence-space", "convergence-time", "cavity", "custom",
         "mesh-info")
MESH_FAMILIES = ("structured", "crisscross", "perturbed")


def _parse_schedule(text):
    try:
        vals = tuple(float(p) for p in str(text).split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"bad dt_schedule: {text!r}") from exc
    if not vals:
        raise ConfigError("dt_schedule is empty")
    return vals


@dataclass
class RunConfig:
    kind: str = "convergence-space"
    mesh: str = "structured:16"          # family:N or a mesh file path
    levels: int = 3
    dt: float = 1e-3
    tfinal: float = 0.5
    nu: float = 1.0
    scenario: int = 1
    seed: int = 1234
    out: str = "out"
    rel_tol: float = 1e-10               # predictor PCG
    projection_tol: float = 1e-13
    dt_schedule: tuple = (1e-1, 1e-2, 1e-3)
    wall_speed: float = 0.0              # cavity bottom wall
    steps: int = 500                     # custom decay run
    snapshot_every: int = 0              # 0 = final state only

    def mesh_source(self):
        """Split the mesh spec into ("family", n) or ("file", path)."""
        text = self.mesh
        if ":" in text:
            family, _, num = text.partition(":")
            if family in MESH_FAMILIES:
                try:
                    n = int(num)
                except ValueError:
                    raise ConfigError(f"bad mesh size in {text!r}")
                if n < 1:
                    raise ConfigError(f"mesh size must be positive: {text!r}")
                return family, n
        if text in MESH_FAMILIES:
            return text, 16
        if os.path.exists(text):
            return "file", text
        raise ConfigError(f"mesh source not resolvable: {text!r}")

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kind {self.kind!r} (one of {KINDS})")
        if self.nu <= 0.0:
            raise ConfigError("nu must be positive")
        if self.dt <= 0.0:
            raise ConfigError("dt must be positive")
        if self.tfinal < self.dt:
            raise ConfigError("tfinal must be at least dt")
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if self.scenario not in (1, 2):
            raise ConfigError("scenario must be 1 or 2")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.rel_tol <= 0.0 or self.projection_tol <= 0.0:
            raise ConfigError("solver tolerances must be positive")
        if any(dt <= 0.0 for dt in self.dt_schedule):
            raise ConfigError("dt_schedule entries must be positive")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be >= 0")
        self.mesh_source()
        return self

    def as_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


_CONVERT = {
    "kind": str, "mesh": str, "out": str,
    "levels": int, "scenario": int, "seed": int, "steps": int,
    "snapshot_every": int,
    "dt": float, "tfinal": float, "nu": float, "rel_tol": float,
    "projection_tol": float, "wall_speed": float,
    "dt_schedule": _parse_schedule,
}


def _coerce(key, value):
    conv = _CONVERT[key]
    try:
        return conv(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def parse_config(path=None, overrides=None):
    """Build a validated RunConfig from an optional file and flag overrides.

    The file holds one `key = value` pair per line; blank lines and lines
    starting with # are skipped.  ``overrides`` maps config keys to values
    (strings are fine, they are coerced); None values mean "not given".
    """
    values = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, _, val = line.partition("=")
                key = key.strip()
                if key not in _CONVERT:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = _coerce(key, val.strip())
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _CONVERT:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, val)
    return RunConfig(**values).validate()
