"""Non-gradient diagnostics for the active exclusion process.

The symmetric part of the AEP moves a particle only onto an empty site, so
the + current across an edge is not a discrete gradient of any one-site
function, while the type-blind current is. This module exhibits the
obstruction, measures the tagged-particle self-diffusion coefficient that
replaces the missing gradient structure, and runs the mixing experiments that
separate one dimension (no passing, no mixing) from two.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import FitWindowTooShort, InsufficientSignal
from .fields import _float_block_sum, coarse_grain, default_block_radius
from .kmc import CurrentLedger, _rng_state, run_exclusion_dynamics
from .lattice import ExclusionConfig, Lattice, Profile, RngStream, init_exclusion, sigma_fields

log = logging.getLogger(__name__)

NONLINEARITY_TOL = 0.10

# ----------------------------------------------------------------------------
# local currents


def _sp(a: int) -> int:
    return int(a == 1)


def _occ(a: int) -> int:
    return int(a != 0)


def aep_edge_current(a: int, b: int) -> tuple[int, int]:
    """(j+, j_blind) across an edge whose end states are a (at x) and b (at x + e)."""
    j_plus = _sp(a) * (1 - _occ(b)) - _sp(b) * (1 - _occ(a))
    return j_plus, _occ(a) - _occ(b)


def aep_current_terms(config: ExclusionConfig, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-site symmetric currents on the edge (x, x + e_axis).

    j+ = s+_x (1 - s_{x+e}) - s+_{x+e} (1 - s_x) and the type-blind
    j = s_x - s_{x+e}.
    """
    if not 0 <= axis < config.lattice.dimension:
        raise ValueError(f"axis {axis} out of range for dimension {config.lattice.dimension}")
    sp, _, s = sigma_fields(config)
    sp_n = np.roll(sp, -1, axis=axis)
    s_n = np.roll(s, -1, axis=axis)
    return sp * (1 - s_n) - sp_n * (1 - s), s - s_n


@dataclass
class GradientTest:
    """Least-squares fit of a two-site current by g(a) - g(b) over all local states."""

    g: dict
    residual: float

    @property
    def is_gradient(self) -> bool:
        return self.residual < 1e-12


def gradient_obstruction(which: str = "plus") -> GradientTest:
    """Try to write the chosen current as g(eta_x) - g(eta_{x+e}) on the 9 pair states.

    The system has 9 equations in the 3 unknowns g(-1), g(0), g(+1). The
    blind current is solved exactly; the + current leaves a non-zero residual.
    """
    states = (-1, 0, 1)
    rows, rhs = [], []
    for a, b in itertools.product(states, states):
        row = np.zeros(3)
        row[states.index(a)] += 1
        row[states.index(b)] -= 1
        rows.append(row)
        j = aep_edge_current(a, b)
        rhs.append(j[0] if which == "plus" else j[1])
    A, y = np.array(rows), np.array(rhs, dtype=float)
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    residual = float(np.linalg.norm(A @ sol - y))
    return GradientTest(dict(zip(states, sol)), residual)


# ----------------------------------------------------------------------------
# self-diffusion


@dataclass
class TaggedTrajectory:
    times: np.ndarray
    msd: np.ndarray  # particle-averaged squared displacement at each time
    displacement: np.ndarray  # (n_particles, d) unwrapped net displacement at the last time
    start: np.ndarray  # flat start sites
    end: np.ndarray  # flat end sites
    rho: float
    dimension: int
    L: int


def tagged_trajectory(rho: float, dimension: int, L: int, times: Sequence[float], rng: RngStream) -> TaggedTrajectory:
    """Type-blind exclusion (rate 1 per direction, hop to empty sites only), every particle tagged.

    At rho = 0 a single particle is placed.
    """
    if not 0 <= rho < 1:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or (np.diff(times) < 0).any() or times[0] < 0:
        raise ValueError("times must be a non-empty sorted sequence of non-negative values")
    lat = Lattice(L, dimension)
    n_sites = lat.n_sites
    n = max(1, int(round(rho * n_sites)))
    g = rng.generator
    start = np.sort(g.choice(n_sites, n, replace=False)).astype(np.int64)
    occ = np.full(n_sites, -1, dtype=np.int64)
    occ[start] = np.arange(n)
    pos = start.copy()
    disp = np.zeros((n, dimension), dtype=np.int64)
    intervals = np.diff(np.concatenate([[0.0], times]))
    counts = g.poisson(2 * dimension * n * intervals).astype(np.int64)
    msd = np.empty(times.size)
    _kernels.run_tagged(occ, pos, disp, L, dimension, counts, _rng_state(rng), msd)
    return TaggedTrajectory(times, msd, disp, start, pos, n / n_sites, dimension, L)


@dataclass
class SelfDiffusionEstimate:
    rho: float
    d_s: float
    stderr: float
    window: tuple[float, float]
    dimension: int
    L: int
    exponent: float  # log-log MSD slope over the window
    times: np.ndarray = field(repr=False, default=None)
    msd: np.ndarray = field(repr=False, default=None)  # ensemble mean


def _slope(t: np.ndarray, y: np.ndarray) -> float:
    return float(np.polyfit(t, y, 1)[0])


def msd_exponent(times: np.ndarray, msd: np.ndarray) -> float:
    ok = (times > 0) & (msd > 0)
    return _slope(np.log(times[ok]), np.log(msd[ok]))


def estimate_self_diffusion(
    rho: float,
    dimension: int,
    L: int,
    t_budget: float,
    ensemble: int,
    rng: RngStream,
    n_samples: int = 40,
) -> SelfDiffusionEstimate:
    """d_s from the MSD slope over [t_budget/2, t_budget], in units of the free walker.

    Raises FitWindowTooShort (carrying the MSD exponent) when MSD/t changes
    by more than 10% across the window and the log-log exponent differs from
    1 by more than two standard errors across replicas.
    """
    if ensemble < 2:
        raise ValueError("need at least two replicas for a standard error")
    times = np.linspace(t_budget / n_samples, t_budget, n_samples)
    runs = [tagged_trajectory(rho, dimension, L, times, r) for r in rng.spawn(ensemble)]
    msd = np.array([r.msd for r in runs])
    mean = msd.mean(axis=0)
    win = times >= 0.5 * t_budget - 1e-12
    tw = times[win]
    if tw.size < 3:
        raise FitWindowTooShort(f"only {tw.size} samples in the fit window", float("nan"))
    # nonlinearity: relative change of MSD/t across the window implied by the log-log slope
    expo = msd_exponent(tw, mean[win])
    nonlin = 1.0 - (tw[-1] / tw[0]) ** (expo - 1.0)
    per_expo = np.array([msd_exponent(tw, m[win]) for m in msd])
    se_expo = per_expo.std(ddof=1) / math.sqrt(ensemble)
    if abs(nonlin) > NONLINEARITY_TOL and abs(expo - 1.0) > 2 * se_expo:
        raise FitWindowTooShort(
            f"MSD/t changes by {100 * nonlin:.1f}% across [{tw[0]:g}, {tw[-1]:g}] "
            f"(exponent {expo:.3f} +- {se_expo:.3f}): not diffusive",
            expo,
        )
    per_run = np.array([_slope(tw, m[win]) for m in msd]) / (2 * dimension)
    d_s = max(float(per_run.mean()), 0.0)
    se = float(per_run.std(ddof=1) / math.sqrt(ensemble))
    rho_eff = runs[0].rho
    return SelfDiffusionEstimate(rho_eff, d_s, se, (float(tw[0]), float(tw[-1])), dimension, L, expo, times, mean)


@dataclass
class DsTable:
    rho: np.ndarray
    d_s: np.ndarray
    stderr: np.ndarray
    L: int = 0
    budget: float = 0.0

    def __call__(self, rho):
        return np.interp(rho, self.rho, self.d_s)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rho", "d_s", "stderr", "L", "budget"])
            for r, d, e in zip(self.rho, self.d_s, self.stderr):
                w.writerow([f"{r:.6g}", f"{d:.6g}", f"{e:.6g}", self.L, f"{self.budget:g}"])


def self_diffusion_table(
    rhos: Sequence[float], dimension: int, L: int, t_budget: float, ensemble: int, rng: RngStream
) -> DsTable:
    ests = [estimate_self_diffusion(r, dimension, L, t_budget, ensemble, c) for r, c in zip(rhos, rng.spawn(len(rhos)))]
    return DsTable(
        np.array([e.rho for e in ests]),
        np.array([e.d_s for e in ests]),
        np.array([e.stderr for e in ests]),
        L,
        t_budget,
    )


# ----------------------------------------------------------------------------
# mixing of segregated types


@dataclass
class RelaxationReport:
    c: float
    dimension: int
    N: int
    with_swap: bool
    ell: int
    times: list
    distances: list
    initial_distance: float

    def as_dict(self) -> dict:
        return {
            "c": self.c, "dimension": self.dimension, "N": self.N, "with_swap": self.with_swap,
            "ell": self.ell, "times": list(self.times), "distances": list(self.distances),
            "initial_distance": self.initial_distance,
        }


def segregated_profile(c: float) -> Profile:
    """+ particles at density c on the left half, - particles on the right half (slab in 2D)."""
    return Profile(lambda u, *rest: np.where(u <= 0.5, c, 0.0), lambda u, *rest: np.where(u > 0.5, c, 0.0))


def _distance(config: ExclusionConfig, ell: int, c: float) -> float:
    cf = coarse_grain(config, ell)
    return float(np.mean(np.abs(cf.rho_plus - 0.5 * c)))


def segregation_relaxation_experiment(
    c: float,
    dimension: int,
    N: int,
    T: float | Sequence[float],
    with_swap: bool,
    rng: RngStream,
    D: float = 1.0,
    ell: Optional[int] = None,
) -> RelaxationReport:
    """Mean |rho_hat+ - c/2| over the torus at each time in ``T``, starting from segregated types.

    Symmetric moves only (lambda = gamma = 0) at rate D N^2: stirring when
    ``with_swap`` (a gradient model), hop-to-empty otherwise (the symmetric AEP
    rule, non-gradient; also run in one dimension here).
    """
    if not 0 < c < 1:
        raise ValueError("c must lie in (0, 1)")
    times = sorted([float(T)] if np.isscalar(T) else [float(t) for t in T])
    lat = Lattice(N, dimension)
    ell = ell or default_block_radius(N)
    config = init_exclusion(segregated_profile(c), lat, rng)
    d0 = _distance(config, ell, c)
    dists = []
    t = 0.0
    for target in times:
        config = run_exclusion_dynamics(config, target - t, r_sym=D * N**2, swap=with_swap, rng=rng)
        t = target
        dists.append(_distance(config, ell, c))
    return RelaxationReport(c, dimension, N, with_swap, ell, times, dists, d0)


# ----------------------------------------------------------------------------
# fluctuation-dissipation form of the + current


@dataclass
class CurrentWindow:
    """Coarse fields averaged over a window of length tau, with the coarse + and - currents.

    Currents are in macroscopic units (net crossings per edge per unit time
    divided by N) and live on the faces x + e_k / 2, shape (d, ...).
    """

    rho_plus: np.ndarray
    rho_minus: np.ndarray
    j_plus: np.ndarray
    j_minus: np.ndarray
    tau: float
    ell: int
    N: int


def _coarse(a: np.ndarray, ell: int) -> np.ndarray:
    return _float_block_sum(a, ell) / float((2 * ell + 1) ** a.ndim)


def collect_current_windows(
    profile: Profile,
    N: int,
    n_replicas: int,
    rng: RngStream,
    tau: float = 0.05,
    windows_per_replica: int = 1,
    D: float = 1.0,
    ell: Optional[int] = None,
    dimension: int = 2,
    n_sub: int = 8,
) -> list[CurrentWindow]:
    """Run the symmetric AEP from ``profile`` and record windowed coarse currents.

    Densities are time-averaged over ``n_sub`` sub-intervals of each window so
    that they match the time-integrated current even while the profile decays.
    """
    lat = Lattice(N, dimension)
    ell = ell or default_block_radius(N)
    out = []
    for r in rng.spawn(n_replicas):
        config = init_exclusion(profile, lat, r)
        for _ in range(windows_per_replica):
            ledger = CurrentLedger.for_lattice(lat)
            # trapezoid time average of the coarse fields over the window
            cg = coarse_grain(config, ell)
            acc_p, acc_m = 0.5 * cg.rho_plus, 0.5 * cg.rho_minus
            for i in range(n_sub):
                config = run_exclusion_dynamics(
                    config, tau / n_sub, r_sym=D * N**2, swap=False, rng=r, ledger=ledger
                )
                cg = coarse_grain(config, ell)
                wgt = 0.5 if i == n_sub - 1 else 1.0
                acc_p = acc_p + wgt * cg.rho_plus
                acc_m = acc_m + wgt * cg.rho_minus
            jp = np.stack([_coarse(ledger.sym_plus[k].astype(float), ell) for k in range(dimension)])
            jm = np.stack([_coarse(ledger.sym_minus[k].astype(float), ell) for k in range(dimension)])
            out.append(CurrentWindow(acc_p / n_sub, acc_m / n_sub, jp / (tau * N), jm / (tau * N), tau, ell, N))
    return out


@dataclass
class FDReport:
    species: int
    coef_ds: float  # multiplies -D d_s(rho) grad rho_species
    coef_ds_stderr: float
    coef_grad_rho: float  # multiplies -D grad rho
    coef_grad_rho_stderr: float
    residual_rms: float
    signal_rms: float
    n_points: int
    fitted: np.ndarray = field(repr=False, default=None)

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "fitted"}


def _face_grad(a: np.ndarray, N: int) -> np.ndarray:
    return np.stack([(np.roll(a, -1, axis=k) - a) * N for k in range(a.ndim)])


def _face_avg(a: np.ndarray) -> np.ndarray:
    return np.stack([0.5 * (a + np.roll(a, -1, axis=k)) for k in range(a.ndim)])


def _design(w: CurrentWindow, ds: Callable, D: float, species: int):
    rho_s = w.rho_plus if species == 1 else w.rho_minus
    rho = w.rho_plus + w.rho_minus
    X1 = -D * ds(_face_avg(rho)) * _face_grad(rho_s, w.N)
    X2 = -D * _face_grad(rho, w.N)
    y = w.j_plus if species == 1 else w.j_minus
    return X1.ravel(), X2.ravel(), y.ravel()


def fd_form_check(
    windows: Sequence[CurrentWindow],
    ds_table: Callable,
    D: float = 1.0,
    species: int = 1,
) -> FDReport:
    """Regress the coarse symmetric current on -D d_s(rho) grad rho_s and -D grad rho.

    Windows share one initial profile, so predictors and currents are first
    averaged over windows; regressing on the averages keeps the noise in the
    predictors from attenuating the coefficients. Standard errors come from a
    jackknife over windows. Raises InsufficientSignal when both averaged
    gradients are below three times their sampling-noise floor.
    """
    n = len(windows)
    if n < 2:
        raise ValueError("need at least two windows")
    w0 = windows[0]
    if any(w.rho_plus.shape != w0.rho_plus.shape or w.N != w0.N for w in windows):
        raise ValueError("windows must share one grid")
    parts = np.array([_design(w, ds_table, D, species) for w in windows])  # (n, 3, points)
    d = w0.rho_plus.ndim
    rho_bar = float(np.mean([w.rho_plus.mean() + w.rho_minus.mean() for w in windows]))
    # std of the difference of two adjacent overlapping blocks, times N
    floor = w0.N * math.sqrt(2 * rho_bar * (1 - rho_bar) / (2 * w0.ell + 1) ** (d + 1)) / math.sqrt(n)
    g_s = np.mean([_face_grad(w.rho_plus if species == 1 else w.rho_minus, w.N) for w in windows], axis=0)
    g = np.mean([_face_grad(w.rho_plus + w.rho_minus, w.N) for w in windows], axis=0)
    rms_s, rms = float(np.sqrt(np.mean(g_s**2))), float(np.sqrt(np.mean(g**2)))
    if max(rms_s, rms) < 3 * floor:
        raise InsufficientSignal(
            f"mean gradients (rms {rms_s:.3g}, {rms:.3g}) below 3x noise floor {floor:.3g}"
        )

    def fit(sub):
        X1, X2, y = sub.mean(axis=0)
        return np.linalg.lstsq(np.column_stack([X1, X2]), y, rcond=1e-8)[0], X1, X2, y

    coef, X1, X2, y = fit(parts)
    jack = np.array([fit(np.delete(parts, i, axis=0))[0] for i in range(n)])
    se = np.sqrt((n - 1) / n * np.sum((jack - jack.mean(axis=0)) ** 2, axis=0))
    fitted = coef[0] * X1 + coef[1] * X2
    return FDReport(
        species, float(coef[0]), float(se[0]), float(coef[1]), float(se[1]),
        float(np.sqrt(np.mean((y - fitted) ** 2))), float(np.sqrt(np.mean(y**2))), int(y.size), fitted,
    )
