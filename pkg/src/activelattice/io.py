"""Artifact files: manifests, CSV tables and JSON reports.

Everything written here is a deterministic function of its inputs (fixed
float formatting, sorted keys, no timestamps) so that a rerun with the same
manifest reproduces the files byte for byte. Column dictionaries live in
docs/formats.md.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .errors import ConfigError
from .fields import CoarseField
from .hydro import HydroState
from .kmc import CurrentLedger
from .lattice import ExclusionConfig, ZeroRangeConfig

OUTPUT_ENV = "ACTIVELATTICE_OUTPUT"
MANIFEST = "manifest.json"


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


def resolve_output(configured: str, command: str, override: Optional[str] = None) -> Path:
    """Explicit flag, then the config value, then ``$ACTIVELATTICE_OUTPUT/<command>``."""
    if override:
        return Path(override)
    if configured:
        return Path(configured)
    return output_root() / command


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.10g}"


def write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_json(path: Path):
    with open(path) as fh:
        return json.load(fh)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if hasattr(obj, "value") and not isinstance(obj, (str, int, float)):
        return obj.value
    return obj


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()) -> Path:
    """CSV with optional leading ``# key=value`` comment lines."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return path


def read_csv(path: Path) -> tuple[dict, list[dict]]:
    """Return (comment metadata, rows) for a file written by :func:`write_csv`."""
    meta, lines = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k.strip()] = v.strip()
            else:
                lines.append(line)
    return meta, list(csv.DictReader(lines))


def manifest(command: str, config: dict, seeds: dict, extra: Optional[dict] = None) -> dict:
    out = {
        "command": command,
        "code_version": __version__,
        "config": config,
        "seeds": seeds,
    }
    if extra:
        out.update(extra)
    return out


def write_manifest(directory: Path, man: dict) -> Path:
    return write_json(directory / MANIFEST, man)


def read_manifest(directory: Path) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise ConfigError(f"{directory} has no {MANIFEST}", field=None)
    return read_json(path)


# ----------------------------------------------------------------------------
# tables


def _site_index(shape):
    return list(np.ndindex(*shape))


def write_snapshots(path: Path, snapshots: Sequence, times: Sequence[float]) -> Path:
    """Long table of configurations: exclusion state per site, or (n_plus, n_minus) for zero-range."""
    first = snapshots[0]
    d = first.lattice.dimension
    coords = [f"x{k}" for k in range(d)]
    zr = isinstance(first, ZeroRangeConfig)
    header = ["t"] + coords + (["n_plus", "n_minus"] if zr else ["state"])

    def rows():
        for t, cfg in zip(times, snapshots):
            for idx in _site_index(cfg.lattice.shape):
                if zr:
                    yield (t, *idx, int(cfg.n_plus[idx]), int(cfg.n_minus[idx]))
                else:
                    yield (t, *idx, int(cfg.state[idx]))

    return write_csv(path, header, rows())


def write_ledger(path: Path, ledger: CurrentLedger) -> Path:
    d = len(ledger.shape)
    header = ["kind", "axis"] + [f"x{k}" for k in range(d)] + ["a", "b", "c", "d"]
    return write_csv(
        path, header, ((kind, axis, *idx, a, b, c, e) for kind, axis, idx, a, b, c, e in ledger.to_rows()),
        comments=["edge rows: a=plus_sym b=minus_sym c=plus_act d=minus_act",
                  "site rows: a=flips_plus_to_minus b=flips_minus_to_plus"],
    )


def write_coarse(path: Path, fields: Sequence[CoarseField], N: int) -> Path:
    d = fields[0].rho_plus.ndim
    header = ["t"] + [f"x{k}" for k in range(d)] + [f"u{k}" for k in range(d)] + ["rho_plus", "rho_minus", "rho", "m"]

    def rows():
        for cf in fields:
            for idx in _site_index(cf.rho_plus.shape):
                yield (cf.t, *idx, *(i / N for i in idx), cf.rho_plus[idx], cf.rho_minus[idx], cf.rho[idx], cf.m[idx])

    return write_csv(path, header, rows(), comments=[f"ell={fields[0].ell}", f"N={N}"])


def read_coarse(path: Path) -> list[CoarseField]:
    meta, rows = read_csv(path)
    ell, N = int(meta["ell"]), int(meta["N"])
    return _group_fields(rows, N, lambda a, b, t: CoarseField(a, b, ell, t), "rho_plus", "rho_minus", "x")


def write_hydro(path: Path, states: Sequence[HydroState], comments: Sequence[str] = ()) -> Path:
    d = states[0].dimension
    header = ["t"] + [f"i{k}" for k in range(d)] + [f"u{k}" for k in range(d)] + ["rho", "m", "rho_plus", "rho_minus"]

    def rows():
        for s in states:
            for idx in _site_index(s.rho.shape):
                yield (s.t, *idx, *(i * s.du for i in idx), s.rho[idx], s.m[idx], s.rho_plus[idx], s.rho_minus[idx])

    return write_csv(path, header, rows(), comments=[f"M={states[0].M}", f"length={states[0].length:.10g}", *comments])


def read_hydro(path: Path) -> list[HydroState]:
    meta, rows = read_csv(path)
    M, length = int(meta["M"]), float(meta["length"])
    return _group_fields(rows, M, lambda a, b, t: HydroState(a, b, t, length), "rho", "m", "i")


def _group_fields(rows, side, make, ka, kb, prefix):
    d = sum(1 for k in rows[0] if k.startswith(prefix) and k[1:].isdigit())
    out, by_t = [], {}
    for r in rows:
        by_t.setdefault(float(r["t"]), []).append(r)
    for t in sorted(by_t):
        a = np.zeros((side,) * d)
        b = np.zeros((side,) * d)
        for r in by_t[t]:
            idx = tuple(int(r[f"{prefix}{k}"]) for k in range(d))
            a[idx], b[idx] = float(r[ka]), float(r[kb])
        out.append(make(a, b, t))
    return out


def exclusion_from_rows(rows: list[dict], d: int) -> ExclusionConfig:
    side = max(int(r["x0"]) for r in rows) + 1
    state = np.zeros((side,) * d, dtype=np.int8)
    for r in rows:
        state[tuple(int(r[f"x{k}"]) for k in range(d))] = int(r["state"])
    return ExclusionConfig(state)
