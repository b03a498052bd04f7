"""Linear stability, spinodals, magnetised branches and binodals from PDE steady states.

Perturbations are taken proportional to exp(i q u_1 + s t), with q the
angular wavenumber along the drift axis.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from .errors import NoPhaseSeparation, NotConverged, SearchWindowExceeded
from .hydro import HydroState, PDEConfig, dF_dm, dF_drho, evaluate_F, solve

log = logging.getLogger(__name__)

GROWTH_TOL = 1e-8
# tighter threshold used only inside bisection: near onset the growth rate is
# quadratic in the distance to threshold, so 1e-8 would bias Pe_c by ~1e-4
BISECTION_TOL = 1e-12
Q_MAX = 20.0
Q_GRID = np.logspace(-4, math.log10(Q_MAX), 400)


class Verdict(str, enum.Enum):
    STABLE = "STABLE"
    UNSTABLE = "UNSTABLE"


@dataclass
class DispersionResult:
    q: float
    s: np.ndarray  # two complex growth rates, largest real part first
    matrix: np.ndarray
    params: dict

    @property
    def max_real(self) -> float:
        return float(self.s.real.max())


def _eig2(A: np.ndarray) -> np.ndarray:
    """Eigenvalues of a 2x2 complex matrix; the small root is computed without cancellation."""
    tr = A[0, 0] + A[1, 1]
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    root = np.sqrt(tr * tr - 4 * det + 0j)
    # pick the sign that avoids cancellation in tr + sign*root
    big = 0.5 * (tr - root) if (tr.real * root.real + tr.imag * root.imag) < 0 else 0.5 * (tr + root)
    small = det / big if big != 0 else 0.5 * (tr - root)
    s = np.array([big, small], dtype=complex)
    return s[np.argsort(-s.real, kind="stable")]


def mips_matrix(rho0: float, Pe: float, q: float) -> np.ndarray:
    return np.array(
        [
            [-q * q, -1j * q * Pe * (1 - rho0)],
            [-1j * q * Pe * (1 - 2 * rho0), -q * q - 2.0],
        ],
        dtype=complex,
    )


def dispersion_mips(rho0: float, Pe: float, q: float) -> DispersionResult:
    if not 0 < rho0 < 1:
        raise ValueError(f"rho0 must lie in (0, 1), got {rho0}")
    A = mips_matrix(rho0, Pe, q)
    return DispersionResult(q, _eig2(A), A, {"rho0": rho0, "Pe": Pe})


def _golden_max(f: Callable[[float], float], a: float, b: float, iters: int = 60) -> tuple[float, float]:
    res = optimize.minimize_scalar(
        lambda x: -f(x), bounds=(a, b), method="bounded", options={"xatol": 1e-12 * max(b, 1e-12), "maxiter": iters * 3}
    )
    return float(res.x), float(-res.fun)


def max_growth(growth: Callable[[float], float], include_zero: bool = False) -> tuple[float, float]:
    """sup_q Re s(q) over (0, Q_MAX] (or [0, Q_MAX]) by log scan plus bounded refinement.

    Returns (q*, Re s(q*)). Raises SearchWindowExceeded when the growth rate is
    still increasing at the upper edge of the window.
    """
    vals = np.array([growth(q) for q in Q_GRID])
    i = int(np.argmax(vals))
    if i == len(Q_GRID) - 1 and vals[-1] > GROWTH_TOL:
        raise SearchWindowExceeded("growth rate still increasing at q = %g" % Q_MAX)
    lo = Q_GRID[max(i - 1, 0)] if i > 0 else 0.0
    hi = Q_GRID[min(i + 1, len(Q_GRID) - 1)]
    q_best, s_best = _golden_max(growth, lo, hi)
    if vals[i] > s_best:
        q_best, s_best = float(Q_GRID[i]), float(vals[i])
    if include_zero:
        s0 = growth(0.0)
        if s0 > s_best:
            q_best, s_best = 0.0, s0
    return q_best, s_best


def mips_growth(rho0: float, Pe: float) -> tuple[float, float]:
    return max_growth(lambda q: dispersion_mips(rho0, Pe, q).max_real)


def mips_verdict(rho0: float, Pe: float, tol: float = GROWTH_TOL) -> Verdict:
    return Verdict.UNSTABLE if mips_growth(rho0, Pe)[1] > tol else Verdict.STABLE


def spinodal_mips_closed_form(rho0: float) -> Optional[float]:
    """Pe with Pe^2 (1 - rho0)(2 rho0 - 1) = 2, or None for rho0 <= 1/2."""
    a = (1 - rho0) * (2 * rho0 - 1)
    return math.sqrt(2.0 / a) if a > 0 else None


def _long_wave_diffusivity(rho0: float, Pe: float) -> float:
    q = 1e-3
    return -dispersion_mips(rho0, Pe, q).max_real / q**2


def spinodal_mips(rho0: float, pe_max: float = 100.0, rtol: float = 1e-9) -> Optional[float]:
    """Smallest Pe at which the uniform state (rho0, 0) becomes linearly unstable.

    Bisection over Pe with the numerical q-scan as the oracle. Returns None
    when the state is stable throughout [0, pe_max] and the long-wave
    diffusivity is not decreasing towards zero; raises SearchWindowExceeded
    when it is, i.e. when a threshold plausibly lies beyond the window.
    """
    if not 0 < rho0 < 1:
        raise ValueError(f"rho0 must lie in (0, 1), got {rho0}")
    unstable = lambda pe: mips_growth(rho0, pe)[1] > BISECTION_TOL
    if unstable(0.0):
        return 0.0
    if not unstable(pe_max):
        grid = np.linspace(0.0, pe_max, 21)[1:]
        if any(unstable(p) for p in grid):
            hi = next(p for p in grid if unstable(p))
            return _bisect(unstable, hi - grid[0], hi, rtol)
        if _long_wave_diffusivity(rho0, pe_max) < _long_wave_diffusivity(rho0, 0.5 * pe_max):
            raise SearchWindowExceeded(
                f"no instability up to Pe={pe_max} at rho0={rho0}, but long waves are destabilising"
            )
        return None
    return _bisect(unstable, 0.0, pe_max, rtol)


def _bisect(unstable: Callable[[float], bool], lo: float, hi: float, rtol: float) -> float:
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if unstable(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def spinodal_densities_mips(Pe: float) -> Optional[tuple[float, float]]:
    """Densities where Pe^2 (1 - rho)(2 rho - 1) = 2 (None below Pe = 4)."""
    # (1 - r)(2 r - 1) = 2 / Pe^2  <=>  2 r^2 - 3 r + 1 + 2/Pe^2 = 0
    disc = 9 - 8 * (1 + 2 / Pe**2)
    if disc < 0:
        return None
    r = math.sqrt(disc)
    return (3 - r) / 4, (3 + r) / 4


def self_consistent_m(rho: float, beta: float) -> float:
    """Largest root m0 in [0, rho] of F(rho, m0) = 0, i.e. m = rho tanh(m sinh beta)."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    s = math.sinh(beta)
    if rho * s <= 1.0:
        return 0.0
    g = lambda m: rho * math.tanh(m * s) - m
    if g(rho) >= 0.0:  # tanh saturated to 1 in floating point
        return rho
    lo = 0.5 * rho
    for _ in range(200):
        if g(lo) > 0:
            break
        lo *= 0.5
    else:
        return 0.0
    return optimize.brentq(g, lo, rho, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def flock_matrix(rho0, m0, beta, q, D=1.0, lam=1.0) -> np.ndarray:
    Fr = float(dF_drho(rho0, m0, beta))
    Fm = float(dF_dm(rho0, m0, beta))
    return np.array(
        [
            [-D * q * q, -1j * q * lam],
            [-1j * q * lam - 2 * Fr, -D * q * q - 2 * Fm],
        ],
        dtype=complex,
    )


def dispersion_flock(rho0, m0, beta, q, D=1.0, lam=1.0) -> DispersionResult:
    f = evaluate_F(rho0, m0, beta)
    # compare with the size of the two cancelling terms of F
    scale = (abs(m0) + rho0) * math.exp(min(abs(m0) * math.sinh(beta) - beta + rho0 * (math.cosh(beta) - 1), 700.0))
    if abs(f) > 1e-8 * max(1.0, scale):
        raise ValueError(f"(rho0, m0) = ({rho0}, {m0}) is not a uniform fixed point: F = {f:.3g}")
    A = flock_matrix(rho0, m0, beta, q, D, lam)
    return DispersionResult(q, _eig2(A), A, {"rho0": rho0, "m0": m0, "beta": beta, "D": D, "lam": lam})


def flock_growth(rho0, m0, beta, D=1.0, lam=1.0) -> tuple[float, float]:
    # the conserved zero mode sits at Re s = 0 exactly; only GROWTH_TOL separates it
    return max_growth(
        lambda q: dispersion_flock(rho0, m0, beta, q, D, lam).max_real, include_zero=True
    )


def flock_verdict(rho0, m0, beta, D=1.0, lam=1.0, tol=GROWTH_TOL) -> Verdict:
    return Verdict.UNSTABLE if flock_growth(rho0, m0, beta, D, lam)[1] > tol else Verdict.STABLE


def _boundary(unstable: Callable[[float], bool], lo: float, hi: float, xtol: float) -> float:
    """Bisection for a verdict change between lo and hi (verdicts must differ)."""
    u_lo = unstable(lo)
    if u_lo == unstable(hi):
        raise ValueError("no verdict change in bracket")
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if unstable(mid) == u_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _finite_rho(beta: float) -> float:
    # keeps the flip-rate factors exp(rho (cosh beta - 1)) representable
    return 300.0 / max(math.cosh(beta) - 1.0, 1e-300)


def gaseous_spinodal(beta: float, D=1.0, lam=1.0, rho_max: float = 20.0, xtol=1e-12) -> Optional[float]:
    """Density at which the disordered state (rho, 0) loses stability, by bisection on the q-scan."""
    if beta <= 0:
        return None
    unstable = lambda r: flock_growth(r, 0.0, beta, D, lam)[1] > GROWTH_TOL
    rho_max = min(rho_max, _finite_rho(beta))
    if not unstable(rho_max):
        return None
    return _boundary(unstable, 1e-9, rho_max, xtol)


def liquid_spinodal(beta: float, D=1.0, lam=1.0, rho_max: float = 20.0, n_scan: int = 60, xtol=1e-10) -> Optional[float]:
    """Density above which the magnetised branch (rho, m0(rho)) is linearly stable.

    The branch exists only above the gaseous threshold rho sinh(beta) = 1; the
    scan covers (rho_g, min(rho_max, 10 rho_g)].
    """
    rho_g = 1.0 / math.sinh(beta) if beta > 0 else None
    if rho_g is None or rho_g >= rho_max:
        return None
    rho_max = min(rho_max, 10 * rho_g, _finite_rho(beta))

    def unstable(r):
        return flock_growth(r, self_consistent_m(r, beta), beta, D, lam)[1] > GROWTH_TOL

    grid = rho_g * (1 + np.geomspace(1e-6, rho_max / rho_g - 1, n_scan))
    verdicts = [unstable(r) for r in grid]
    if not any(verdicts):
        return float(rho_g)
    last = max(i for i, v in enumerate(verdicts) if v)
    if last == len(grid) - 1:
        return None
    return _boundary(unstable, grid[last], grid[last + 1], xtol)


@dataclass
class FlockSpinodals:
    temperature: np.ndarray
    gaseous: np.ndarray  # nan where absent
    liquid: np.ndarray


def spinodal_flock(betas: Sequence[float], D=1.0, lam=1.0, rho_max: float = 20.0) -> FlockSpinodals:
    """Gaseous and liquid spinodal densities per beta, tabulated against T = 1/beta."""
    betas = np.asarray(betas, dtype=float)
    if (betas < 0).any():
        raise ValueError("beta must be non-negative")
    gas, liq = [], []
    for b in betas:
        g = gaseous_spinodal(b, D, lam, rho_max)
        l = liquid_spinodal(b, D, lam, rho_max) if g is not None else None
        gas.append(np.nan if g is None else g)
        liq.append(np.nan if l is None else l)
    with np.errstate(divide="ignore"):
        temps = np.where(betas > 0, 1.0 / np.where(betas > 0, betas, 1.0), np.inf)
    return FlockSpinodals(temps, np.array(gas), np.array(liq))


# ----------------------------------------------------------------------------
# binodals from PDE steady states


@dataclass
class BinodalResult:
    rho_gas: float
    rho_liq: float
    m_gas: float
    m_liq: float
    band_speed: Optional[float]
    t_final: float
    final_state: HydroState = field(repr=False)


def interface_width(rho: np.ndarray, du: float) -> float:
    """Width of a tanh-like interface: density jump over the steepest gradient."""
    grad = np.abs(np.roll(rho, -1) - np.roll(rho, 1)) / (2 * du)
    g = grad.max()
    return float(np.ptp(rho) / g) if g > 0 else float("inf")


def _distance_to_interfaces(rho: np.ndarray, du: float, level: float) -> np.ndarray:
    M = rho.shape[0]
    cross = np.flatnonzero((rho - level) * (np.roll(rho, -1) - level) < 0)
    if cross.size == 0:
        return np.full(M, np.inf)
    x = np.arange(M)
    d = np.abs((x[:, None] - cross[None, :] + M // 2) % M - M // 2).min(axis=1)
    return d * du


def plateau_densities(
    rho: np.ndarray, m: np.ndarray, du: float, band: float = 5.0
) -> tuple[float, float, float, float]:
    """Plateau values (rho_gas, rho_liq, m_gas, m_liq) away from interfaces.

    Cells inside a band of ``band`` interface widths centred on each interface
    are discarded; the rest split into a low and a high cluster and each
    cluster is summarised by its median. If one phase has no cell left, the
    band is narrowed step by step.
    """
    level = 0.5 * (rho.max() + rho.min())
    w = interface_width(rho, du)
    dist = _distance_to_interfaces(rho, du, level)
    for b in (band, 0.8 * band, 0.6 * band, 0.4 * band, 0.2 * band):
        keep = dist > 0.5 * b * w
        low = keep & (rho < level)
        high = keep & (rho > level)
        if low.any() and high.any():
            if b != band:
                log.info("plateau band narrowed to %.2g interface widths", b)
            return (
                float(np.median(rho[low])),
                float(np.median(rho[high])),
                float(np.mean(m[low])),
                float(np.mean(m[high])),
            )
    raise NoPhaseSeparation("no plateau cells on one side of the interfaces")


def _center_of_mass(rho: np.ndarray, length: float) -> float:
    """Circular centre of mass of the density excess."""
    M = rho.shape[0]
    theta = 2 * np.pi * np.arange(M) / M
    w = rho - rho.mean()
    z = np.sum(w * np.exp(1j * theta))
    return float(np.angle(z) / (2 * np.pi) * length) % length


@dataclass
class BinodalParams:
    """Solver settings for :func:`binodal_from_pde`.

    ``Pe`` selects the MIPS Peclet system; ``beta`` (with D, lam) the flocking one.
    """

    Pe: float = 8.0
    beta: float = 1.0
    D: float = 1.0
    lam: float = 1.0
    length: float = 40.0
    M: int = 400
    noise: float = 0.01
    chunk: float = 50.0
    t_max: float = 4000.0
    tol: float = 1e-4
    min_split: float = 0.05
    seed: int = 0


def binodal_from_pde(params: BinodalParams, model: str, rho_bar: float) -> BinodalResult:
    """Relax uniform-plus-noise data to a separated state and read off the plateaus.

    Integration proceeds in chunks of ``params.chunk`` time units until the
    plateau values move by less than ``params.tol`` between chunks. For the
    flocking system the band speed is the drift of the circular centre of mass
    and the plateaus are read in the co-moving frame.
    """
    model = model.upper()
    rng = np.random.default_rng(params.seed)
    M, L = params.M, params.length
    if model == "MIPS_PECLET":
        cfg = PDEConfig("mips_peclet", M=M, Pe=params.Pe, length=L)
    elif model == "FLOCK":
        cfg = PDEConfig("flock", M=M, D=params.D, lam=params.lam, beta=params.beta, length=L)
    else:
        raise ValueError(f"unknown binodal model {model!r}")
    state = HydroState.uniform(M, rho_bar, 0.0, 1, L)
    pert = params.noise * rho_bar * (rng.random(M) - 0.5) * 2
    state.rho = state.rho + pert - pert.mean()
    if model == "FLOCK":
        # a small magnetised seed lets the ordered band pick a direction
        state.m = state.m + 0.5 * params.noise * rho_bar * (rng.random(M) - 0.5)
        cfg = cfg.with_dt_for(state)
    prev = None
    t = 0.0
    speed = None
    com = _center_of_mass(state.rho, L)
    # sample the centre of mass often enough that the band moves < L/4 between samples
    n_sub = 1
    if model == "FLOCK" and params.lam > 0:
        n_sub = max(1, int(math.ceil(params.chunk * abs(params.lam) / (0.25 * L))))
    while t < params.t_max:
        travelled = 0.0
        for _ in range(n_sub):
            state = solve(state, cfg, params.chunk / n_sub)[-1]
            new_com = _center_of_mass(state.rho, L)
            travelled += (new_com - com + 0.5 * L) % L - 0.5 * L
            com = new_com
        t += params.chunk
        if np.ptp(state.rho) < params.min_split * rho_bar:
            if t >= min(params.t_max, 10 * params.chunk):
                raise NoPhaseSeparation(
                    f"density spread {np.ptp(state.rho):.3g} after t={t:g}: relaxed to uniform"
                )
            continue
        if model == "FLOCK":
            speed = travelled / params.chunk
            # co-moving frame: centre the band before reading plateaus
            k = int(round(com / cfg.du))
            rho_v = np.roll(state.rho, M // 2 - k)
            m_v = np.roll(state.m, M // 2 - k)
        else:
            rho_v, m_v = state.rho, state.m
        cur = plateau_densities(rho_v, m_v, cfg.du)
        if prev is not None and max(abs(cur[0] - prev[0]), abs(cur[1] - prev[1])) < params.tol:
            log.info("binodal converged at t=%g: %s", t, cur)
            return BinodalResult(*cur, band_speed=speed, t_final=t, final_state=state)
        prev = cur
    if prev is None:
        raise NoPhaseSeparation(f"no phase separation by t={params.t_max}")
    raise NotConverged(f"plateaus still drifting at t={params.t_max}: {prev}")


# ----------------------------------------------------------------------------
# sweeps


@dataclass
class PhasePoint:
    model: str
    params: dict
    verdict: Optional[Verdict] = None
    growth_rate: float = float("nan")
    q_star: float = float("nan")
    on_spinodal: bool = False
    rho_gas: float = float("nan")
    rho_liq: float = float("nan")
    band_speed: float = float("nan")
    error: Optional[str] = None

    def row(self) -> dict:
        out = {"model": self.model}
        out.update(self.params)
        out.update(
            verdict=self.verdict.value if self.verdict else "",
            growth_rate=self.growth_rate,
            q_star=self.q_star,
            on_spinodal=int(self.on_spinodal),
            rho_gas=self.rho_gas,
            rho_liq=self.rho_liq,
            band_speed=self.band_speed,
            error=self.error or "",
        )
        return out


def _on_spinodal(model: str, params: dict, rtol: float = 1e-6) -> bool:
    # the q -> 0 mode has zero growth everywhere, so test distance to the located boundary
    if model == "MIPS_PECLET":
        pe_c = spinodal_mips(params["rho0"])
        return pe_c is not None and abs(params["Pe"] - pe_c) <= rtol * pe_c
    D, lam = params.get("D", 1.0), params.get("lam", 1.0)
    if params.get("branch") == "ordered":
        r = liquid_spinodal(params["beta"], D, lam)
    else:
        r = gaseous_spinodal(params["beta"], D, lam)
    return r is not None and abs(params["rho0"] - r) <= rtol * r


def _sweep_point(args) -> PhasePoint:
    model, params, binodal, bparams = args
    pt = PhasePoint(model, dict(params))
    try:
        if model == "MIPS_PECLET":
            q, s = mips_growth(params["rho0"], params["Pe"])
        else:
            beta = params["beta"]
            m0 = self_consistent_m(params["rho0"], beta) if params.get("branch") == "ordered" else 0.0
            q, s = flock_growth(params["rho0"], m0, beta, params.get("D", 1.0), params.get("lam", 1.0))
        pt.q_star, pt.growth_rate = q, s
        pt.verdict = Verdict.UNSTABLE if s > GROWTH_TOL else Verdict.STABLE
        pt.on_spinodal = _on_spinodal(model, params)
        if binodal and pt.verdict is Verdict.UNSTABLE:
            bp = bparams or BinodalParams()
            if model == "MIPS_PECLET":
                bp = BinodalParams(**{**bp.__dict__, "Pe": params["Pe"]})
            else:
                bp = BinodalParams(**{**bp.__dict__, "beta": params["beta"]})
            res = binodal_from_pde(bp, model, params["rho0"])
            pt.rho_gas, pt.rho_liq = res.rho_gas, res.rho_liq
            if res.band_speed is not None:
                pt.band_speed = res.band_speed
    except Exception as exc:  # recorded per point, the sweep carries on
        pt.error = f"{type(exc).__name__}: {exc}"
    return pt


def phase_diagram_sweep(
    model: str,
    grid: Sequence[dict],
    binodal: bool = False,
    binodal_params: Optional[BinodalParams] = None,
    workers: int = 1,
) -> list[PhasePoint]:
    """Stability verdict (and optionally plateaus) for every parameter point of ``grid``.

    MIPS_PECLET points need keys rho0, Pe; FLOCK points need rho0, beta and
    optionally branch ("disordered" / "ordered"), D, lam.
    """
    model = model.upper()
    if model not in ("MIPS_PECLET", "FLOCK"):
        raise ValueError(f"unknown sweep model {model!r}")
    jobs = [(model, p, binodal, binodal_params) for p in grid]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_sweep_point, jobs))
    return [_sweep_point(j) for j in jobs]
