"""Figures written next to the CSV outputs when a command is run with ``--plot``.

matplotlib is imported lazily with the Agg backend so that the library and
the data path never need a display.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update({"figure.dpi": 110, "font.size": 9, "axes.grid": True, "grid.alpha": 0.3})
    return plt


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    fig.clf()
    import matplotlib.pyplot as plt

    plt.close(fig)
    return path


def plot_profiles(path: Path, series: Sequence[tuple[str, np.ndarray, np.ndarray, np.ndarray]], title: str = "") -> Path:
    """rho and m against u; ``series`` holds (label, u, rho, m). 2D fields are averaged over axis 1."""
    plt = _pyplot()
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3))
    for label, u, rho, m in series:
        rho, m = np.asarray(rho), np.asarray(m)
        if rho.ndim == 2:
            rho, m = rho.mean(axis=1), m.mean(axis=1)
        a1.plot(u, rho, label=label)
        a2.plot(u, m, label=label)
    a1.set(xlabel="u", ylabel=r"$\rho$")
    a2.set(xlabel="u", ylabel="m")
    if len(series) <= 8:
        a1.legend(fontsize=7)
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_mips_phase_diagram(path: Path, rho0, pe_numeric, pe_closed, grid=None) -> Path:
    """Spinodal Pe_c(rho0) with optional unstable grid points (rho0, Pe)."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    if grid is not None and len(grid):
        g = np.asarray(grid)
        ax.scatter(g[:, 0], g[:, 1], s=6, c="tab:orange", label="unstable", zorder=1)
    ax.plot(rho0, pe_closed, "k-", lw=1, label="closed form")
    ax.plot(rho0, pe_numeric, "b.", ms=3, label="bisection")
    ax.set(xlabel=r"$\rho_0$", ylabel="Pe", xlim=(0, 1))
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_flock_spinodals(path: Path, temperature, gaseous, liquid) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot(gaseous, temperature, "b-", label="gaseous spinodal")
    ax.plot(liquid, temperature, "g-", label="liquid spinodal")
    ax.set(xlabel=r"$\rho$", ylabel="T")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_msd(path: Path, curves: Sequence[tuple[str, np.ndarray, np.ndarray]], dimension: int) -> Path:
    """MSD/(2 d t) against t on log axes; flat lines mean diffusive motion."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for label, t, msd in curves:
        ax.loglog(t, np.asarray(msd) / (2 * dimension * np.asarray(t)), label=label)
    ax.set(xlabel="t", ylabel="MSD / (2 d t)")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_relaxation(path: Path, reports: Sequence[dict]) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for r in reports:
        label = f"{r['dimension']}D {'stirring' if r['with_swap'] else 'AEP'}"
        t = [0.0] + list(r["times"])
        ax.plot(t, [r["initial_distance"]] + list(r["distances"]), "o-", label=label)
    ax.set(xlabel="T", ylabel=r"$\|\hat\rho^+ - c/2\|_1$")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_compare(path: Path, times, d_rho, d_m) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot(times, d_rho, "o-", label=r"$\rho$")
    ax.plot(times, d_m, "s-", label="m")
    ax.set(xlabel="t", ylabel="L1 distance (micro vs PDE)")
    ax.legend(fontsize=7)
    return _save(fig, path)
