"""Fluctuating hydrodynamics of the one-dimensional MIPS system.

Two integrators share one noise model:

* the linear fluctuation equations for (R, M) around a hydrodynamic
  background (rho, m),
* the nonlinear "finite N" system: the hydrodynamic step plus noise of size
  N^{-1/2}, with clamping to the admissible set.

Transport noise is injected in divergence form by default so that the
integral of R is conserved; the flip noise sqrt(2 gamma) B is additive and
spatially white.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import AmplitudeDomain, StepRejected
from .hydro import HydroModel, HydroState, PDEConfig, _advance
from .lattice import RngStream

log = logging.getLogger(__name__)

UNRELIABLE_FRACTION = 1e-3


class NoiseMode(str, enum.Enum):
    CONSERVATIVE = "conservative"
    ADDITIVE = "additive"


def _amplitude(rho_s: np.ndarray, D: float) -> np.ndarray:
    return np.sqrt(2.0 * D * rho_s * (1.0 - rho_s))


def _check_domain(rho_plus, rho_minus, tol=1e-12):
    for name, r in (("rho_plus", rho_plus), ("rho_minus", rho_minus)):
        r = np.asarray(r)
        if (r < -tol).any() or (r > 1 + tol).any():
            raise AmplitudeDomain(f"{name} outside [0, 1]: range [{r.min():.4g}, {r.max():.4g}]")


@dataclass
class NoiseField:
    """One step's worth of noise on a grid of M cells.

    ``w_plus``, ``w_minus`` and ``b`` are independent Gaussian arrays with
    per-cell variance 1/(du dt); the amplitude arrays turn them into the
    combined drives of R and M.
    """

    w_plus: np.ndarray
    w_minus: np.ndarray
    b: np.ndarray
    amp_plus: np.ndarray
    amp_minus: np.ndarray
    gamma: float
    du: float
    dt: float

    @property
    def w_R(self) -> np.ndarray:
        return self.amp_plus * self.w_plus + self.amp_minus * self.w_minus

    @property
    def w_M(self) -> np.ndarray:
        return self.amp_plus * self.w_plus - self.amp_minus * self.w_minus

    @property
    def flip(self) -> np.ndarray:
        return math.sqrt(2.0 * self.gamma) * self.b


def sample_noise(
    M: int,
    du: float,
    dt: float,
    rng: RngStream,
    rho_plus,
    rho_minus,
    D: float,
    gamma: float,
    batch: tuple[int, ...] = (),
    at_faces: bool = False,
) -> NoiseField:
    """Draw the three noises for one Euler-Maruyama step.

    With ``at_faces`` the amplitudes are evaluated at the face between cell
    i and i + 1 (for divergence-form injection); otherwise at cell centres.
    """
    rho_plus = np.broadcast_to(np.asarray(rho_plus, dtype=float), (M,))
    rho_minus = np.broadcast_to(np.asarray(rho_minus, dtype=float), (M,))
    _check_domain(rho_plus, rho_minus)
    if gamma < 0 or D <= 0:
        raise ValueError("need D > 0 and gamma >= 0")
    rp = np.clip(rho_plus, 0.0, 1.0)
    rm = np.clip(rho_minus, 0.0, 1.0)
    if at_faces:
        rp = 0.5 * (rp + np.roll(rp, -1))
        rm = 0.5 * (rm + np.roll(rm, -1))
    scale = 1.0 / math.sqrt(du * dt)
    g = rng.generator
    shape = tuple(batch) + (M,)
    return NoiseField(
        w_plus=scale * g.standard_normal(shape),
        w_minus=scale * g.standard_normal(shape),
        b=scale * g.standard_normal(shape),
        amp_plus=_amplitude(rp, D),
        amp_minus=_amplitude(rm, D),
        gamma=float(gamma),
        du=du,
        dt=dt,
    )


# ----------------------------------------------------------------------------
# linear fluctuation equations


@dataclass
class SPDEConfig:
    """Parameters of the linear fluctuation equations on [0, length) with M cells."""

    M: int
    D: float = 1.0
    lam: float = 0.0
    gamma: float = 0.0
    length: float = 1.0
    dt: Optional[float] = None
    noise_mode: NoiseMode = NoiseMode.CONSERVATIVE
    safety: float = 0.4

    def __post_init__(self):
        self.noise_mode = NoiseMode(self.noise_mode)
        if self.M < 4:
            raise ValueError("need at least 4 cells")
        if self.D <= 0 or self.gamma < 0:
            raise ValueError("need D > 0 and gamma >= 0")
        if self.dt is None:
            rate = 4 * self.D / self.du**2 + 2 * abs(self.lam) / self.du + 2 * self.gamma
            self.dt = self.safety / rate

    @property
    def du(self) -> float:
        return self.length / self.M


@dataclass
class FluctState:
    R: np.ndarray
    M: np.ndarray
    rho: np.ndarray
    m: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float)
        self.M = np.asarray(self.M, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        self.m = np.asarray(self.m, dtype=float)
        if self.R.shape != self.M.shape or self.rho.shape != self.m.shape:
            raise ValueError("R/M and rho/m must have matching shapes")
        if self.R.shape[-1] != self.rho.shape[-1]:
            raise ValueError("fluctuation and background grids differ")

    @classmethod
    def zeros(cls, background: HydroState, batch: tuple[int, ...] = ()) -> "FluctState":
        if background.dimension != 1:
            raise ValueError("the fluctuation equations are implemented in one dimension")
        shape = tuple(batch) + background.rho.shape
        return cls(np.zeros(shape), np.zeros(shape), background.rho.copy(), background.m.copy(), background.t)

    @property
    def rho_plus(self):
        return 0.5 * (self.rho + self.m)

    @property
    def rho_minus(self):
        return 0.5 * (self.rho - self.m)


def _ddx(a: np.ndarray, du: float) -> np.ndarray:
    return (np.roll(a, -1, axis=-1) - np.roll(a, 1, axis=-1)) / (2 * du)


def _lap(a: np.ndarray, du: float) -> np.ndarray:
    return (np.roll(a, -1, axis=-1) - 2 * a + np.roll(a, 1, axis=-1)) / du**2


def _backward_div(flux: np.ndarray, du: float) -> np.ndarray:
    # flux[i] lives on the face i + 1/2
    return (flux - np.roll(flux, 1, axis=-1)) / du


def step_fluct(
    state: FluctState,
    cfg: SPDEConfig,
    rng: Optional[RngStream] = None,
    noise: Optional[NoiseField] = None,
) -> FluctState:
    """One Euler-Maruyama step of the linearised MIPS fluctuation equations.

        dR/dt = D R'' - lam [(1 - rho) M - m R]' + noise_R
        dM/dt = D M'' - lam [(1 - 2 rho) R]' - 2 gamma M + noise_M

    Pass ``noise`` to reuse a realisation; with neither
    ``noise`` nor ``rng`` the step is deterministic.
    """
    du, dt = cfg.du, cfg.dt
    if dt > du**2 / (2 * cfg.D) * (1 + 1e-12):
        raise StepRejected(f"dt={dt:.3g} exceeds the diffusion limit {du**2 / (2 * cfg.D):.3g}")
    R, M, rho, m = state.R, state.M, state.rho, state.m
    dR = cfg.D * _lap(R, du) - cfg.lam * _ddx((1 - rho) * M - m * R, du)
    dM = cfg.D * _lap(M, du) - cfg.lam * _ddx((1 - 2 * rho) * R, du) - 2 * cfg.gamma * M
    R_new = R + dt * dR
    M_new = M + dt * dM
    if noise is None and rng is not None:
        noise = sample_noise(
            cfg.M, du, dt, rng, state.rho_plus, state.rho_minus, cfg.D, cfg.gamma,
            batch=R.shape[:-1], at_faces=cfg.noise_mode is NoiseMode.CONSERVATIVE,
        )
    if noise is not None:
        if cfg.noise_mode is NoiseMode.CONSERVATIVE:
            R_new = R_new - dt * _backward_div(noise.w_R, du)
            M_new = M_new - dt * _backward_div(noise.w_M, du)
        else:
            R_new = R_new + dt * noise.w_R
            M_new = M_new + dt * noise.w_M
        M_new = M_new + dt * noise.flip
    return FluctState(R_new, M_new, rho, m, state.t + dt)


def evolve_fluct(
    state: FluctState,
    cfg: SPDEConfig,
    T: float,
    rng: RngStream,
    background_cfg: Optional[PDEConfig] = None,
    record_every: int = 0,
) -> tuple[FluctState, list[FluctState]]:
    """Integrate to time T. With ``background_cfg`` the background (rho, m)
    is advanced by the hydrodynamic step alongside; otherwise it is frozen.
    """
    n = int(math.ceil(T / cfg.dt - 1e-9))
    records = []
    if background_cfg is not None:
        background_cfg = replace(background_cfg, dt=cfg.dt)
    for i in range(n):
        state = step_fluct(state, cfg, rng)
        if background_cfg is not None:
            bg = _advance(HydroState(state.rho, state.m, state.t, cfg.length), background_cfg, 1, cfg.dt)
            state = FluctState(state.R, state.M, bg.rho, bg.m, state.t)
        if record_every and (i + 1) % record_every == 0:
            records.append(state)
    return state, records


def _mode_operators(cfg: SPDEConfig, rho: float, m: float, k: int):
    """Per-step propagator A and noise covariance Q of Fourier mode k on a flat background."""
    du, dt = cfg.du, cfg.dt
    theta = 2 * math.pi * k / cfg.M
    lap = -4 * cfg.D * math.sin(theta / 2) ** 2 / du**2
    ddx = 1j * math.sin(theta) / du
    L = np.array(
        [
            [lap + cfg.lam * ddx * m, -cfg.lam * ddx * (1 - rho)],
            [-cfg.lam * ddx * (1 - 2 * rho), lap - 2 * cfg.gamma],
        ],
        dtype=complex,
    )
    A = np.eye(2) + dt * L
    rp, rm = 0.5 * (rho + m), 0.5 * (rho - m)
    ap2, am2 = 2 * cfg.D * rp * (1 - rp), 2 * cfg.D * rm * (1 - rm)
    if cfg.noise_mode is NoiseMode.CONSERVATIVE:
        c2 = abs((1 - np.exp(-1j * theta)) / du) ** 2
    else:
        c2 = 1.0
    # E|w_k|^2 = M / (du dt) for each unit white noise
    s = cfg.M * dt / du
    Q = s * np.array(
        [[c2 * (ap2 + am2), c2 * (ap2 - am2)], [c2 * (ap2 - am2), c2 * (ap2 + am2) + 2 * cfg.gamma]],
        dtype=complex,
    )
    return A, Q


def mode_covariance(cfg: SPDEConfig, rho: float, m: float, k: int) -> np.ndarray:
    """Stationary E[X_k X_k^*] of the Fourier coefficients X_k = (R_k, M_k) of the discrete scheme.

    Entries that grow without bound (the mean of R under additive noise) are inf;
    the conserved mean of R under divergence-form noise keeps its initial value 0.
    """
    A, Q = _mode_operators(cfg, rho, m, k)
    if k % cfg.M == 0:
        out = np.zeros((2, 2), dtype=complex)
        a = A[1, 1].real
        out[1, 1] = Q[1, 1].real / (1 - a * a) if abs(a) < 1 else np.inf
        out[0, 0] = 0.0 if cfg.noise_mode is NoiseMode.CONSERVATIVE else np.inf
        return out
    if np.max(np.abs(np.linalg.eigvals(A))) >= 1:
        raise StepRejected(f"mode {k} is not damped by the scheme (flat state unstable or dt too large)")
    return linalg.solve_discrete_lyapunov(A, Q)


def stationary_spatial_variance(cfg: SPDEConfig, rho: float, m: float = 0.0) -> tuple[float, float]:
    """Predicted du * mean_i R_i^2 and du * mean_i M_i^2 at stationarity."""
    tot_R = tot_M = 0.0
    for k in range(cfg.M):
        C = mode_covariance(cfg, rho, m, k)
        tot_R += C[0, 0].real
        tot_M += C[1, 1].real
    norm = cfg.du / cfg.M**2
    return norm * tot_R, norm * tot_M


def sine_mode_variance(cfg: SPDEConfig, rho: float, m: float = 0.0, k: int = 1) -> float:
    """Predicted Var(int R(u) sin(2 pi k u / L) du) at stationarity."""
    C = mode_covariance(cfg, rho, m, k)
    return 0.5 * cfg.du**2 * C[0, 0].real


def flat_equilibrium_variance(rho_plus: float, rho_minus: float) -> float:
    """Continuum value of the R structure factor for divergence-form noise."""
    return rho_plus * (1 - rho_plus) + rho_minus * (1 - rho_minus)


# ----------------------------------------------------------------------------
# nonlinear fluctuating hydrodynamics


@dataclass
class ViolationCounter:
    clamped: int = 0
    cell_steps: int = 0

    @property
    def fraction(self) -> float:
        return self.clamped / self.cell_steps if self.cell_steps else 0.0

    @property
    def unreliable(self) -> bool:
        return self.fraction > UNRELIABLE_FRACTION


def _clamp(rho_plus: np.ndarray, rho_minus: np.ndarray):
    """Project onto rho+- >= 0, rho+ + rho- <= 1; returns the number of touched cells."""
    bad = (rho_plus < 0) | (rho_minus < 0)
    rp = np.maximum(rho_plus, 0.0)
    rm = np.maximum(rho_minus, 0.0)
    tot = rp + rm
    over = tot > 1.0
    shrink = 1.0 / np.maximum(tot, 1.0)
    rp, rm = rp * shrink, rm * shrink
    return rp, rm, int(np.count_nonzero(bad | over))


def step_fluctuating_hydro(
    state: HydroState,
    N: int,
    cfg: PDEConfig,
    rng: RngStream,
    noise_mode: NoiseMode = NoiseMode.CONSERVATIVE,
    counter: Optional[ViolationCounter] = None,
    flip_noise: bool = True,
) -> HydroState:
    """One step of the MIPS hydrodynamics plus N^{-1/2} noise, clamped to the admissible set.

    ``flip_noise=False`` drops the sqrt(2 gamma) B term, leaving only the
    transport noise (useful to isolate the damping of M by flips).
    """
    if cfg.model is HydroModel.FLOCK:
        raise ValueError("fluctuating hydrodynamics is implemented for the MIPS system only")
    if state.dimension != 1:
        raise ValueError("fluctuating hydrodynamics is implemented in one dimension")
    if N < 1:
        raise ValueError("N must be positive")
    noise_mode = NoiseMode(noise_mode)
    du, dt = cfg.du, cfg.dt
    det = _advance(state, replace(cfg, check_bounds=False), 1, dt)
    noise = sample_noise(
        cfg.M, du, dt, rng, state.rho_plus, state.rho_minus, cfg.D, cfg.gamma,
        at_faces=noise_mode is NoiseMode.CONSERVATIVE,
    )
    eps = 1.0 / math.sqrt(N)
    if noise_mode is NoiseMode.CONSERVATIVE:
        d_rho = -dt * _backward_div(noise.w_R, du)
        d_m = -dt * _backward_div(noise.w_M, du)
    else:
        d_rho, d_m = dt * noise.w_R, dt * noise.w_M
    if flip_noise:
        d_m = d_m + dt * noise.flip
    rho = det.rho + eps * d_rho
    m = det.m + eps * d_m
    rp, rm, n_bad = _clamp(0.5 * (rho + m), 0.5 * (rho - m))
    if counter is not None:
        counter.clamped += n_bad
        counter.cell_steps += cfg.M
    return HydroState(rp + rm, rp - rm, det.t, state.length)


def solve_fluctuating(
    initial: HydroState,
    cfg: PDEConfig,
    N: int,
    T: float,
    rng: RngStream,
    noise_mode: NoiseMode = NoiseMode.CONSERVATIVE,
    flip_noise: bool = True,
) -> tuple[HydroState, ViolationCounter]:
    """Integrate the nonlinear fluctuating system to time T (last step shortened)."""
    counter = ViolationCounter()
    state = initial.copy()
    t_end = initial.t + T
    while state.t < t_end - 1e-12:
        c = cfg if state.t + cfg.dt <= t_end else replace(cfg, dt=t_end - state.t)
        state = step_fluctuating_hydro(state, N, c, rng, noise_mode, counter, flip_noise)
    if counter.unreliable:
        log.warning("clamped %.2g of cell updates: run marked unreliable", counter.fraction)
    return state, counter
