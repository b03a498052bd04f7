"""Run configuration files: TOML loading, command-line overrides and validation.

A run file has four tables. Only ``[model]`` and ``[run]`` are needed by
every command::

    [model]
    kind = "mips"          # mips | flock | aep
    N = 200
    dimension = 1
    D = 1.0
    lambda = 1.0
    gamma = 1.0            # mips, aep
    beta = 0.5             # flock

    [initial]
    preset = "sine"        # constant | sine | step | segregated-slab | file
    rho_plus = 0.3
    rho_minus = 0.3
    amplitude = 0.1
    species = "plus"       # which species carries the sine / step
    file = "profile.csv"   # preset = "file": columns rho_plus, rho_minus

    [run]
    T = 0.1
    snapshots = [0.05, 0.1]
    ensemble = 1
    seed = 7
    output = "runs/mips"

    [hydro]                # PDE grid for hydro / spde / compare
    M = 100

Errors carry the dotted field name and, when it can be located, the line.
"""

from __future__ import annotations

import copy
import csv
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError
from .lattice import Profile

PRESETS = ("constant", "sine", "step", "segregated-slab", "file")
MODEL_KINDS = ("mips", "flock", "aep")
NOISE_MODES = ("conservative", "additive")
SCHEMES = ("central", "upwind", "hybrid")

# field -> (type, required, default)
_SCHEMA: dict[str, dict[str, tuple]] = {
    "model": {
        "kind": (str, True, None),
        "N": (int, True, None),
        "dimension": (int, False, 1),
        "D": (float, False, 1.0),
        "lambda": (float, True, None),
        "gamma": (float, False, 0.0),
        "beta": (float, False, 0.0),
    },
    "initial": {
        "preset": (str, False, "constant"),
        "rho_plus": (float, False, 0.25),
        "rho_minus": (float, False, 0.25),
        "amplitude": (float, False, 0.0),
        "species": (str, False, "plus"),
        "file": (str, False, ""),
    },
    "run": {
        "T": (float, True, None),
        "snapshots": (list, False, []),
        "ensemble": (int, False, 1),
        "seed": (int, False, 0),
        "output": (str, False, ""),
        "ell": (int, False, 0),
    },
    "hydro": {
        "M": (int, False, 0),
        "scheme": (str, False, "hybrid"),
        "safety": (float, False, 0.5),
    },
    "spde": {
        "noise_mode": (str, False, "conservative"),
        "flip_noise": (bool, False, True),
        "safety": (float, False, 0.4),
    },
}


@dataclass
class RunConfig:
    model: dict
    initial: dict
    run: dict
    hydro: dict
    spde: dict
    source: str = ""
    _text: str = field(default="", repr=False)

    def as_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in _SCHEMA}

    @property
    def snapshot_times(self) -> list[float]:
        times = sorted(set(float(t) for t in self.run["snapshots"]) | {float(self.run["T"])})
        return times

    @property
    def hydro_M(self) -> int:
        return self.hydro["M"] or self.model["N"]

    def profile(self, base_dir: Optional[Path] = None) -> Profile:
        return build_profile(self.initial, base_dir or Path(self.source or ".").parent)


def _line_of(text: str, section: str, key: str) -> Optional[int]:
    """1-based line of ``key = ...`` inside ``[section]``, if present."""
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip()
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*=", s):
            return n
    return None


def _fail(text: str, section: str, key: str, message: str):
    name = f"{section}.{key}" if key else section
    line = _line_of(text, section, key) if key else None
    where = f" (line {line})" if line else ""
    raise ConfigError(f"{name}{where}: {message}", field=name)


def _coerce(value: Any, typ: type, text: str, section: str, key: str):
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            _fail(text, section, key, f"expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            _fail(text, section, key, "must be finite")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            _fail(text, section, key, f"expected an integer, got {value!r}")
        return value
    if typ is bool:
        if not isinstance(value, bool):
            _fail(text, section, key, f"expected true/false, got {value!r}")
        return value
    if typ is list:
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            _fail(text, section, key, "expected a list of numbers")
        return [float(v) for v in value]
    if not isinstance(value, str):
        _fail(text, section, key, f"expected a string, got {value!r}")
    return value


def set_override(raw: dict, dotted: str, value: Any):
    """Set ``section.key`` in a raw config dict (values from the command line)."""
    if "." not in dotted:
        raise ConfigError(f"override {dotted!r} must be of the form section.key", field=dotted)
    section, key = dotted.split(".", 1)
    raw.setdefault(section, {})[key] = value


def parse_value(text: str) -> Any:
    """Interpret a command-line override value with TOML scalar/array syntax."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def validate(raw: dict, text: str = "", source: str = "", require: tuple[str, ...] = ("model", "run")) -> RunConfig:
    for section in raw:
        if section not in _SCHEMA:
            _fail(text, section, "", f"unknown table [{section}]")
    out = {}
    for section, fields in _SCHEMA.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            _fail(text, section, "", "must be a table")
        if section in require and section not in raw:
            _fail(text, section, "", "missing required table")
        for key in given:
            if key not in fields:
                _fail(text, section, key, "unknown field")
        vals = {}
        for key, (typ, required, default) in fields.items():
            if key in given:
                vals[key] = _coerce(given[key], typ, text, section, key)
            elif required and section in require:
                _fail(text, section, key, "missing required field")
            else:
                vals[key] = copy.deepcopy(default)
        out[section] = vals
    _check_ranges(out, text)
    return RunConfig(**out, source=source, _text=text)


def _check_ranges(c: dict, text: str):
    m, i, r = c["model"], c["initial"], c["run"]
    if m["kind"] is not None and m["kind"] not in MODEL_KINDS:
        _fail(text, "model", "kind", f"must be one of {', '.join(MODEL_KINDS)}")
    if m["N"] is not None and m["N"] < 2:
        _fail(text, "model", "N", "must be >= 2")
    if m["dimension"] not in (1, 2):
        _fail(text, "model", "dimension", "must be 1 or 2")
    if m["kind"] == "flock" and m["dimension"] != 1:
        _fail(text, "model", "dimension", "the flocking model is one-dimensional")
    if m["kind"] == "aep" and m["dimension"] != 2:
        _fail(text, "model", "dimension", "the active exclusion process is two-dimensional")
    if m["D"] <= 0:
        _fail(text, "model", "D", "must be positive")
    for key in ("lambda", "gamma", "beta"):
        if m[key] is not None and m[key] < 0:
            _fail(text, "model", key, "must be non-negative")
    if i["preset"] not in PRESETS:
        _fail(text, "initial", "preset", f"must be one of {', '.join(PRESETS)}")
    if i["species"] not in ("plus", "minus", "both"):
        _fail(text, "initial", "species", "must be plus, minus or both")
    if i["preset"] == "file" and not i["file"]:
        _fail(text, "initial", "file", "required when preset = \"file\"")
    for key in ("rho_plus", "rho_minus"):
        if i[key] < 0:
            _fail(text, "initial", key, "must be non-negative")
    if r["T"] is not None and r["T"] < 0:
        _fail(text, "run", "T", "must be non-negative")
    if r["ensemble"] < 1:
        _fail(text, "run", "ensemble", "must be >= 1")
    if r["seed"] < 0:
        _fail(text, "run", "seed", "must be non-negative")
    if r["T"] is not None and any(t < 0 or t > r["T"] for t in r["snapshots"]):
        _fail(text, "run", "snapshots", "times must lie in [0, T]")
    if c["hydro"]["scheme"] not in SCHEMES:
        _fail(text, "hydro", "scheme", f"must be one of {', '.join(SCHEMES)}")
    if c["hydro"]["M"] and c["hydro"]["M"] < 4:
        _fail(text, "hydro", "M", "must be >= 4")
    if c["spde"]["noise_mode"] not in NOISE_MODES:
        _fail(text, "spde", "noise_mode", f"must be one of {', '.join(NOISE_MODES)}")


def load_config(path: Optional[str | Path], overrides: Optional[dict] = None, require=("model", "run")) -> RunConfig:
    """Read a TOML run file (or start empty), apply ``overrides`` and validate."""
    text, raw, source = "", {}, ""
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror}", field=None) from exc
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}", field=None) from exc
        source = str(p)
    for dotted, value in (overrides or {}).items():
        set_override(raw, dotted, value)
    return validate(raw, text, source, require)


def _bump(u, species_is, base, amp, shape):
    return base + amp * shape(u) if species_is else np.full_like(u, base)


def build_profile(initial: dict, base_dir: Path = Path(".")) -> Profile:
    """Macroscopic profile for a named preset.

    sine: rho_s(u) = rho_s + amplitude sin(2 pi u_0) on the chosen species;
    step: + amplitude on [0, 1/2), - amplitude on [1/2, 1);
    segregated-slab: rho+ = rho_plus on [0, 1/2), rho- = rho_minus on [1/2, 1).
    """
    preset = initial["preset"]
    rp, rm, amp = initial["rho_plus"], initial["rho_minus"], initial["amplitude"]
    sp = initial["species"] in ("plus", "both")
    sm = initial["species"] in ("minus", "both")
    if preset == "constant":
        return Profile(rp, rm)
    if preset == "sine":
        shape = lambda u: np.sin(2 * np.pi * u)
    elif preset == "step":
        shape = lambda u: np.where(np.mod(u, 1.0) < 0.5, 1.0, -1.0)
    elif preset == "segregated-slab":
        left = lambda u: (np.mod(u, 1.0) < 0.5).astype(float)
        return Profile(lambda *c: rp * left(c[0]), lambda *c: rm * (1 - left(c[0])))
    else:
        return Profile(*read_profile_table(base_dir / initial["file"]))
    return Profile(
        lambda *c: _bump(c[0], sp, rp, amp, shape),
        lambda *c: _bump(c[0], sm, rm, amp, shape),
    )


def read_profile_table(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """One-dimensional tabulated profile: CSV with columns rho_plus, rho_minus at u_i = i/M."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(row for row in fh if not row.startswith("#")))
    except OSError as exc:
        raise ConfigError(f"cannot read profile table {path}: {exc.strerror}", field="initial.file") from exc
    try:
        rp = np.array([float(r["rho_plus"]) for r in rows])
        rm = np.array([float(r["rho_minus"]) for r in rows])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(
            f"profile table {path} needs numeric columns rho_plus, rho_minus", field="initial.file"
        ) from exc
    if rp.size < 2:
        raise ConfigError(f"profile table {path} needs at least two rows", field="initial.file")
    return rp, rm
