"""Finite-volume integration of the hydrodynamic limits.

Three systems on a periodic box of length ``length`` (unit torus by default):

* MIPS:     d_t rho = D Lap rho - lam d_1[m (1 - rho)]
            d_t m   = D Lap m   - lam d_1[rho (1 - rho)] - 2 gamma m
* MIPS_PECLET: the same with D = gamma = 1 and lam = Pe (1D or 2D).
* FLOCK:    d_t rho = D rho'' - lam m'
            d_t m   = D m''   - lam rho' - 2 F(rho, m)

Advection is written as the flux of the two species, so the update is in
conservative form and total mass telescopes exactly.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import _pde_kernels as _pk
from .errors import StepRejected

log = logging.getLogger(__name__)

_BOUND_TOL = 1e-12


def _exponents(rho, m, beta):
    s = np.sinh(beta)
    c = -beta + rho * (np.cosh(beta) - 1.0)
    return m * s + c, -m * s + c


def _signed_exp(coef, a):
    """coef * exp(a) computed as sign(coef) * exp(log|coef| + a)."""
    with np.errstate(divide="ignore"):
        return np.sign(coef) * np.exp(np.log(np.abs(coef)) + a)


def _scalar(out):
    return out[()] if np.ndim(out) == 0 else out


def evaluate_F(rho, m, beta):
    """F = (m cosh(m sinh b) - rho sinh(m sinh b)) exp(-b + rho cosh b - rho).

    Evaluated as 0.5 [(m - rho) e^{a1} + (m + rho) e^{a2}] with every
    prefactor folded into its exponent, so it only overflows when F does.
    """
    rho = np.asarray(rho, dtype=float)
    m = np.asarray(m, dtype=float)
    a1, a2 = _exponents(rho, m, beta)
    return _scalar(0.5 * (_signed_exp(m - rho, a1) + _signed_exp(m + rho, a2)))


def dF_dm(rho, m, beta):
    rho = np.asarray(rho, dtype=float)
    m = np.asarray(m, dtype=float)
    s = np.sinh(beta)
    a1, a2 = _exponents(rho, m, beta)
    return _scalar(
        0.5 * (_signed_exp(1.0 + s * (m - rho), a1) + _signed_exp(1.0 - s * (m + rho), a2))
    )


def dF_drho(rho, m, beta):
    rho = np.asarray(rho, dtype=float)
    m = np.asarray(m, dtype=float)
    a1, a2 = _exponents(rho, m, beta)
    out = 0.5 * (np.exp(a2) - np.exp(a1)) + evaluate_F(rho, m, beta) * (np.cosh(beta) - 1.0)
    return _scalar(out)


class HydroModel(str, enum.Enum):
    MIPS = "mips"
    MIPS_PECLET = "mips_peclet"
    FLOCK = "flock"


class Scheme(str, enum.Enum):
    CENTRAL = "central"
    UPWIND_ADVECTION = "upwind"
    HYBRID = "hybrid"


@dataclass
class HydroState:
    """Fields rho and m on an M (or M x M) periodic grid at time t.

    Cell i is centred at u_i = i * length / M; axis 0 is the drift direction.
    """

    rho: np.ndarray
    m: np.ndarray
    t: float = 0.0
    length: float = 1.0

    def __post_init__(self):
        self.rho = np.array(self.rho, dtype=float)
        self.m = np.array(self.m, dtype=float)
        if self.rho.shape != self.m.shape:
            raise ValueError("rho and m must share a grid")

    @classmethod
    def from_species(cls, rho_plus, rho_minus, t=0.0, length=1.0) -> "HydroState":
        rp, rm = np.asarray(rho_plus, float), np.asarray(rho_minus, float)
        return cls(rp + rm, rp - rm, t, length)

    @classmethod
    def uniform(cls, M, rho0, m0=0.0, dimension=1, length=1.0) -> "HydroState":
        shape = (M,) * dimension
        return cls(np.full(shape, float(rho0)), np.full(shape, float(m0)), 0.0, length)

    @property
    def rho_plus(self) -> np.ndarray:
        return 0.5 * (self.rho + self.m)

    @property
    def rho_minus(self) -> np.ndarray:
        return 0.5 * (self.rho - self.m)

    @property
    def M(self) -> int:
        return self.rho.shape[0]

    @property
    def dimension(self) -> int:
        return self.rho.ndim

    @property
    def du(self) -> float:
        return self.length / self.M

    def coordinates(self) -> tuple[np.ndarray, ...]:
        u = np.arange(self.M) * self.du
        if self.dimension == 1:
            return (u,)
        return tuple(np.meshgrid(u, u, indexing="ij"))

    def integral(self, field: np.ndarray) -> float:
        return float(field.sum() * self.du**self.dimension)

    def mass(self) -> float:
        return self.integral(self.rho)

    def total_magnetization(self) -> float:
        return self.integral(self.m)

    def copy(self) -> "HydroState":
        return HydroState(self.rho.copy(), self.m.copy(), self.t, self.length)


@dataclass
class PDEConfig:
    """Discretisation and model parameters for :func:`solve`.

    ``dt=None`` picks a step from the diffusive, advective and reaction
    limits scaled by ``safety``. For MIPS_PECLET only ``Pe`` is read.
    """

    model: HydroModel
    M: int
    D: float = 1.0
    lam: float = 0.0
    gamma: float = 0.0
    beta: float = 0.0
    Pe: float = 0.0
    dimension: int = 1
    length: float = 1.0
    dt: Optional[float] = None
    scheme: Scheme = Scheme.HYBRID
    safety: float = 0.5
    check_bounds: bool = True

    def __post_init__(self):
        self.model = HydroModel(self.model)
        self.scheme = Scheme(self.scheme)
        if self.M < 4:
            raise ValueError(f"grid needs at least 4 cells, got M={self.M}")
        if not 0 < self.safety <= 0.9:
            raise ValueError("safety factor must lie in (0, 0.9]")
        if self.dimension not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if self.model is HydroModel.FLOCK and self.dimension != 1:
            raise ValueError("the flocking system is one-dimensional")
        if self.model is HydroModel.MIPS_PECLET:
            self.D, self.gamma, self.lam = 1.0, 1.0, float(self.Pe)
        if self.D <= 0:
            raise ValueError("D must be positive")
        if self.dt is None:
            self.dt = self.suggest_dt()

    @property
    def du(self) -> float:
        return self.length / self.M

    @property
    def diffusive_limit(self) -> float:
        return self.du**2 / (2 * self.dimension * self.D)

    def reaction_rate(self, rho_max: float = 1.0) -> float:
        if self.model is HydroModel.FLOCK:
            # |dF/dm| is largest at |m| = rho; bound it on [0, rho_max]
            r = np.linspace(0.0, rho_max, 33)
            vals = np.abs(np.concatenate([dF_dm(r, r, self.beta), dF_dm(r, -r, self.beta),
                                          dF_dm(r, 0 * r, self.beta)]))
            return 2.0 * float(vals.max())
        return 2.0 * self.gamma

    def suggest_dt(self, rho_max: float = 1.0) -> float:
        rate = (
            2 * self.dimension * self.D / self.du**2
            + 2 * abs(self.lam) / self.du
            + self.reaction_rate(rho_max)
        )
        return self.safety / rate

    def with_dt_for(self, state: HydroState) -> "PDEConfig":
        """Copy whose time step also covers the reaction stiffness at ``state``."""
        return replace(self, dt=self.suggest_dt(max(1.0, float(state.rho.max()) * 1.5)))


def _check_cfl(cfg: PDEConfig):
    if cfg.dt > cfg.diffusive_limit * (1 + 1e-12):
        raise StepRejected(
            f"dt={cfg.dt:.3g} exceeds the explicit diffusion limit {cfg.diffusive_limit:.3g}"
        )


def _check_bounds(rho, m, upper: Optional[float], t: float):
    bad = (rho < -_BOUND_TOL) | (np.abs(m) > rho + _BOUND_TOL)
    if upper is not None:
        bad |= rho > upper + _BOUND_TOL
    if bad.any():
        i = np.unravel_index(np.argmax(bad), bad.shape)
        raise StepRejected(
            f"state left the admissible set at t={t:.6g}, cell {i}: rho={rho[i]:.6g}, m={m[i]:.6g}"
        )


_SCHEME_CODE = {Scheme.CENTRAL: _pk.CENTRAL, Scheme.UPWIND_ADVECTION: _pk.UPWIND, Scheme.HYBRID: _pk.HYBRID}


def _advance(state: HydroState, cfg: PDEConfig, n_steps: int, dt: float) -> HydroState:
    """``n_steps`` explicit Euler steps of size ``dt`` on a copy of ``state``."""
    mips = cfg.model is not HydroModel.FLOCK
    upper = 1.0 if mips else -1.0
    if cfg.check_bounds:
        _check_bounds(state.rho, state.m, upper if mips else None, state.t)
    shape = state.rho.shape
    rho = np.ascontiguousarray(state.rho, dtype=float).reshape(shape[0], -1).copy()
    m = np.ascontiguousarray(state.m, dtype=float).reshape(shape[0], -1).copy()
    done, bad = _pk.advance(
        rho, m, int(n_steps), float(dt), cfg.du, float(cfg.D), float(cfg.lam),
        float(cfg.gamma), float(cfg.beta), _SCHEME_CODE[cfg.scheme],
        _pk.MIPS if mips else _pk.FLOCK, upper if cfg.check_bounds else 0.0,
    )
    t = state.t + done * dt
    rho, m = rho.reshape(shape), m.reshape(shape)
    if bad >= 0:
        _check_bounds(rho, m, upper if mips else None, t)
        raise StepRejected(f"non-finite state at t={t:.6g}")
    return HydroState(rho, m, t, state.length)


def step_mips(state: HydroState, cfg: PDEConfig) -> HydroState:
    """One explicit Euler step of the MIPS system (also used for the Peclet form)."""
    if cfg.model is HydroModel.FLOCK:
        raise ValueError("step_mips needs a MIPS configuration")
    _check_cfl(cfg)
    return _advance(state, cfg, 1, cfg.dt)


def step_peclet_2d(state: HydroState, cfg: PDEConfig) -> HydroState:
    if state.dimension != 2 or cfg.model is not HydroModel.MIPS_PECLET:
        raise ValueError("step_peclet_2d needs a 2D state and a MIPS_PECLET configuration")
    return step_mips(state, cfg)


def step_flock(state: HydroState, cfg: PDEConfig) -> HydroState:
    if cfg.model is not HydroModel.FLOCK:
        raise ValueError("step_flock needs a FLOCK configuration")
    _check_cfl(cfg)
    return _advance(state, cfg, 1, cfg.dt)


def step(state: HydroState, cfg: PDEConfig) -> HydroState:
    if cfg.model is HydroModel.FLOCK:
        return step_flock(state, cfg)
    return step_mips(state, cfg)


def solve(
    initial: HydroState,
    cfg: PDEConfig,
    T: float,
    snapshot_times: Optional[Sequence[float]] = None,
) -> list[HydroState]:
    """Integrate to time ``T`` (measured from ``initial.t``), returning snapshots.

    Steps are shortened so that every snapshot time is hit exactly. With no
    schedule the single state at ``T`` is returned.
    """
    if initial.M != cfg.M or initial.dimension != cfg.dimension:
        raise ValueError(
            f"state grid {initial.rho.shape} does not match M={cfg.M}, dimension={cfg.dimension}"
        )
    times = sorted(float(s) for s in (snapshot_times if snapshot_times is not None else [T]))
    if times and (times[0] < 0 or times[-1] > T + 1e-12):
        raise ValueError("snapshot times must lie in [0, T]")
    t0 = initial.t
    state = initial.copy()
    out = []
    elapsed = 0.0
    n_steps = 0
    _check_cfl(cfg)
    for target in times:
        remaining = target - elapsed
        if remaining > 1e-12 * max(1.0, target):
            n_full = int(math.floor(remaining / cfg.dt * (1 + 1e-12)))
            if n_full:
                state = _advance(state, cfg, n_full, cfg.dt)
            rest = remaining - n_full * cfg.dt
            if rest > 1e-12 * max(1.0, target):
                state = _advance(state, cfg, 1, rest)
                n_full += 1
            n_steps += n_full
        state.t = t0 + target
        elapsed = target
        out.append(state.copy())
    log.debug("solve: %d steps of dt=%.3g to T=%.4g", n_steps, cfg.dt, T)
    return out
