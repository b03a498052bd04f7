"""Coarse-grained fields, equilibrium oracles and local-equilibrium diagnostics."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import ndimage, stats

from .errors import BlockTooLarge, GridMismatch, UnknownClosedForm
from .hydro import HydroState, evaluate_F
from .lattice import ExclusionConfig, RngStream, ZeroRangeConfig, sigma_fields


def default_block_radius(N: int) -> int:
    return int(math.ceil(N**0.6))


@dataclass
class CoarseField:
    rho_plus: np.ndarray
    rho_minus: np.ndarray
    ell: int
    t: float = 0.0

    @property
    def rho(self) -> np.ndarray:
        return self.rho_plus + self.rho_minus

    @property
    def m(self) -> np.ndarray:
        return self.rho_plus - self.rho_minus


def _block_sum(a: np.ndarray, ell: int) -> np.ndarray:
    """Exact integer sum over the periodic cube of radius ``ell`` around every site."""
    out = a.astype(np.int64)
    w = np.ones(2 * ell + 1, dtype=np.int64)
    for axis in range(a.ndim):
        out = ndimage.convolve1d(out, w, axis=axis, mode="wrap")
    return out


def _block_mean(a: np.ndarray, ell: int) -> np.ndarray:
    return _block_sum(a, ell) / float((2 * ell + 1) ** a.ndim)


def coarse_grain(config, ell: Optional[int] = None, t: float = 0.0, stride: int = 1) -> CoarseField:
    """Block averages of sigma+ and sigma- over (2 ell + 1)^d sites centred at each site.

    ``stride`` > 1 keeps every stride-th centre along each axis.
    """
    N = config.lattice.side
    if ell is None:
        ell = default_block_radius(N)
    if not 1 <= ell <= N / 4:
        raise BlockTooLarge(f"block radius {ell} outside [1, N/4] for N={N}")
    sp, sm, _ = sigma_fields(config)
    rp, rm = _block_mean(sp, ell), _block_mean(sm, ell)
    if stride > 1:
        sl = tuple(slice(None, None, stride) for _ in range(sp.ndim))
        rp, rm = rp[sl], rm[sl]
    return CoarseField(rp, rm, ell, t)


# ----------------------------------------------------------------------------
# local functions and equilibrium measures


class MeasureFamily(str, enum.Enum):
    EXCLUSION_PRODUCT = "exclusion"
    POISSON_PRODUCT = "poisson"


@dataclass(frozen=True)
class EquilibriumMeasureSpec:
    family: MeasureFamily
    rho_plus: float
    rho_minus: float
    beta: float = 0.0  # zero-range flip interaction
    gamma: float = 1.0  # exclusion flip rate

    def __post_init__(self):
        object.__setattr__(self, "family", MeasureFamily(self.family))
        if self.rho_plus < 0 or self.rho_minus < 0:
            raise ValueError("densities must be non-negative")
        if self.family is MeasureFamily.EXCLUSION_PRODUCT and self.rho_plus + self.rho_minus > 1 + 1e-12:
            raise ValueError("exclusion product measure needs rho_plus + rho_minus <= 1")


@dataclass(frozen=True)
class LocalFunction:
    """A function of the configuration near the origin.

    ``support`` lists site offsets along axis 0. ``func(sp, sm, spec)``
    receives arrays of shape (len(support), ...) holding sigma+ and sigma-
    at those offsets and returns g evaluated there.
    """

    name: str
    support: tuple[int, ...]
    func: Callable

    def __call__(self, sp: np.ndarray, sm: np.ndarray, spec: EquilibriumMeasureSpec):
        return self.func(sp, sm, spec)

    def on_config(self, config, spec: EquilibriumMeasureSpec) -> np.ndarray:
        """tau_x g for every site x of ``config``."""
        sp, sm, _ = sigma_fields(config)
        stack_p = np.stack([np.roll(sp, -k, axis=0) for k in self.support])
        stack_m = np.stack([np.roll(sm, -k, axis=0) for k in self.support])
        return np.asarray(self(stack_p, stack_m, spec), dtype=float)


def _zr_flip_rates(n_plus, n_minus, beta):
    d = n_plus - n_minus
    return np.exp(-beta * d), np.exp(beta * d)


def _h_plus(sp, sm, spec: EquilibriumMeasureSpec):
    if spec.family is MeasureFamily.EXCLUSION_PRODUCT:
        return spec.gamma * (sm[0] - sp[0])
    c_plus, c_minus = _zr_flip_rates(sp[0].astype(float), sm[0].astype(float), spec.beta)
    return sm[0] * c_minus - sp[0] * c_plus


def _j_plus_a(sp, sm, spec):
    if spec.family is MeasureFamily.EXCLUSION_PRODUCT:
        return sp[0] * (1 - (sp[1] + sm[1]))
    return sp[0] * np.ones_like(sp[1])


def _j_minus_a(sp, sm, spec):
    # - particles move from x + 1 to x
    if spec.family is MeasureFamily.EXCLUSION_PRODUCT:
        return sm[1] * (1 - (sp[0] + sm[0]))
    return sm[1] * np.ones_like(sm[0])


SIGMA_PLUS = LocalFunction("sigma_plus", (0,), lambda sp, sm, s: sp[0])
SIGMA_MINUS = LocalFunction("sigma_minus", (0,), lambda sp, sm, s: sm[0])
SIGMA = LocalFunction("sigma", (0,), lambda sp, sm, s: sp[0] + sm[0])
H_PLUS = LocalFunction("h_plus", (0,), _h_plus)
J_PLUS_A = LocalFunction("j_plus_a", (0, 1), _j_plus_a)
J_MINUS_A = LocalFunction("j_minus_a", (0, 1), _j_minus_a)


def _cf_h_plus(rp, rm, spec):
    if spec.family is MeasureFamily.EXCLUSION_PRODUCT:
        return spec.gamma * (rm - rp)
    # E_nu[sigma- c- - sigma+ c+] = -F(rho, m)
    return -evaluate_F(rp + rm, rp - rm, spec.beta)


def _cf_j_plus_a(rp, rm, spec):
    if spec.family is MeasureFamily.EXCLUSION_PRODUCT:
        return rp * (1 - rp - rm)
    return rp


def _cf_j_minus_a(rp, rm, spec):
    if spec.family is MeasureFamily.EXCLUSION_PRODUCT:
        return rm * (1 - rp - rm)
    return rm


# closed forms take (rho_plus, rho_minus, spec) and broadcast over arrays
CLOSED_FORMS: dict[str, Callable] = {
    "sigma_plus": lambda rp, rm, s: rp,
    "sigma_minus": lambda rp, rm, s: rm,
    "sigma": lambda rp, rm, s: rp + rm,
    "h_plus": _cf_h_plus,
    "j_plus_a": _cf_j_plus_a,
    "j_minus_a": _cf_j_minus_a,
}

_PRODUCT_KINDS = {"+", "-", "occ", "empty"}


def site_product(terms: Sequence[tuple[int, str]]) -> LocalFunction:
    """Product over distinct sites of sigma+ ('+'), sigma- ('-'), sigma ('occ') or 1 - sigma ('empty').

    Its closed form (product of one-site means) is registered automatically.
    """
    offsets = [o for o, _ in terms]
    if len(set(offsets)) != len(offsets):
        raise ValueError("site_product needs distinct sites")
    for _, kind in terms:
        if kind not in _PRODUCT_KINDS:
            raise ValueError(f"unknown factor kind {kind!r}")
    name = "prod[" + ",".join(f"{o}{k}" for o, k in terms) + "]"

    def factor(kind, p, m):
        return {"+": p, "-": m, "occ": p + m, "empty": 1 - (p + m)}[kind]

    def func(sp, sm, spec):
        out = 1
        for i, (_, kind) in enumerate(terms):
            out = out * factor(kind, sp[i], sm[i])
        return out

    def closed(rp, rm, spec):
        out = 1.0
        for _, kind in terms:
            out = out * factor(kind, rp, rm)
        return out

    CLOSED_FORMS[name] = closed
    return LocalFunction(name, tuple(offsets), func)


class Mode(str, enum.Enum):
    CLOSED_FORM = "closed_form"
    MONTE_CARLO = "monte_carlo"


@dataclass
class Expectation:
    value: float
    stderr: float = 0.0


def sample_local_patches(spec: EquilibriumMeasureSpec, n_sites: int, n_samples: int, rng: RngStream):
    """i.i.d. draws of (sigma+, sigma-) on ``n_sites`` sites, shape (n_sites, n_samples)."""
    g = rng.generator
    shape = (n_sites, n_samples)
    if spec.family is MeasureFamily.EXCLUSION_PRODUCT:
        u = g.random(shape)
        sp = (u < spec.rho_plus).astype(np.int64)
        sm = ((u >= spec.rho_plus) & (u < spec.rho_plus + spec.rho_minus)).astype(np.int64)
    else:
        sp = g.poisson(spec.rho_plus, shape)
        sm = g.poisson(spec.rho_minus, shape)
    return sp, sm


def equilibrium_expectation(
    g: Union[LocalFunction, str],
    spec: EquilibriumMeasureSpec,
    mode: Mode = Mode.CLOSED_FORM,
    n_samples: int = 100_000,
    rng: Optional[RngStream] = None,
    chunk: int = 250_000,
) -> Expectation:
    """E_mu(g) or E_nu(g) in closed form, or by Monte Carlo with its standard error."""
    mode = Mode(mode)
    name = g if isinstance(g, str) else g.name
    if mode is Mode.CLOSED_FORM:
        if name not in CLOSED_FORMS:
            raise UnknownClosedForm(name)
        return Expectation(float(CLOSED_FORMS[name](spec.rho_plus, spec.rho_minus, spec)))
    if isinstance(g, str):
        g = REGISTRY[g]
    rng = rng or RngStream(0)
    span = max(g.support) - min(g.support) + 1
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        k = min(chunk, n_samples - done)
        sp, sm = sample_local_patches(spec, span, k, rng)
        idx = [o - min(g.support) for o in g.support]
        vals = np.asarray(g(sp[idx], sm[idx], spec), dtype=float)
        total += vals.sum()
        total_sq += np.dot(vals, vals)
        done += k
    mean = total / n_samples
    var = max(total_sq / n_samples - mean**2, 0.0) * n_samples / max(n_samples - 1, 1)
    return Expectation(mean, math.sqrt(var / n_samples))


REGISTRY: dict[str, LocalFunction] = {
    f.name: f for f in (SIGMA_PLUS, SIGMA_MINUS, SIGMA, H_PLUS, J_PLUS_A, J_MINUS_A)
}


def _family_for(config) -> MeasureFamily:
    if isinstance(config, ExclusionConfig):
        return MeasureFamily.EXCLUSION_PRODUCT
    if isinstance(config, ZeroRangeConfig):
        return MeasureFamily.POISSON_PRODUCT
    raise TypeError(f"unsupported configuration type {type(config).__name__}")


def one_block_residual(config, g: LocalFunction, ell: int, beta: float = 0.0, gamma: float = 1.0) -> float:
    """Mean over centres of |block average of tau_x g - E_{rho_hat}(g)|.

    The expectation uses the closed form of ``g`` at the empirical block
    densities of the centre's own block.
    """
    N = config.lattice.side
    if not 1 <= ell <= N / 4:
        raise BlockTooLarge(f"block radius {ell} outside [1, N/4] for N={N}")
    if g.name not in CLOSED_FORMS:
        raise UnknownClosedForm(g.name)
    family = _family_for(config)
    spec = EquilibriumMeasureSpec(family, 0.0, 0.0, beta=beta, gamma=gamma)
    local = g.on_config(config, spec)
    n_block = float((2 * ell + 1) ** local.ndim)
    avg = _float_block_sum(local, ell) / n_block
    sp, sm, _ = sigma_fields(config)
    rp = _block_sum(sp, ell) / n_block
    rm = _block_sum(sm, ell) / n_block
    expected = CLOSED_FORMS[g.name](rp, rm, spec)
    return float(np.mean(np.abs(avg - expected)))


def _float_block_sum(a: np.ndarray, ell: int) -> np.ndarray:
    out = a.astype(float)
    w = np.ones(2 * ell + 1)
    for axis in range(a.ndim):
        out = ndimage.convolve1d(out, w, axis=axis, mode="wrap")
    return out


def two_blocks_residual(config, ell: int, eps: float, pointwise: bool = False):
    """Average over x of sup_{|y - x| <= eps N} |rho_hat_x - rho_hat_y|, per species.

    The distance is the sup-norm in 2D. Returns (plus, minus) residuals, or
    the per-site arrays when ``pointwise`` is set.
    """
    N = config.lattice.side
    reach = int(math.floor(eps * N))
    if not (ell < eps * N < N / 4):
        raise BlockTooLarge(f"need ell < eps N < N/4, got ell={ell}, eps N={eps * N:g}")
    cf = coarse_grain(config, ell)
    out = []
    for field in (cf.rho_plus, cf.rho_minus):
        size = 2 * reach + 1
        hi = ndimage.maximum_filter(field, size=size, mode="wrap")
        lo = ndimage.minimum_filter(field, size=size, mode="wrap")
        dev = np.maximum(hi - field, field - lo)
        out.append(dev if pointwise else float(dev.mean()))
    return tuple(out)


# ----------------------------------------------------------------------------
# fluctuation fields


@dataclass
class FluctuationSample:
    H: np.ndarray  # test function on the lattice
    R: float
    M: float
    t: float


def _on_lattice(values: np.ndarray, N: int) -> np.ndarray:
    """Periodic linear interpolation of a grid field (cell i at u = i/M) onto u = x/N."""
    M = values.shape[0]
    if M == N:
        return values
    if N % M:
        raise GridMismatch(f"hydro grid M={M} does not divide lattice size N={N}")
    out = values
    k = N // M
    frac = (np.arange(N) % k) / k
    for axis in range(values.ndim):
        lo = np.repeat(out, k, axis=axis)
        hi = np.repeat(np.roll(out, -1, axis=axis), k, axis=axis)
        shape = [1] * values.ndim
        shape[axis] = N
        f = frac.reshape(shape)
        out = (1 - f) * lo + f * hi
    return out


def fluctuation_sample(config, H, hydro: HydroState) -> FluctuationSample:
    """R = N^{-d/2} sum_x H(x/N)(sigma_x - rho(x/N)), M likewise with eta and m."""
    lat = config.lattice
    N = lat.side
    if hydro.dimension != lat.dimension:
        raise GridMismatch("hydro state and configuration differ in dimension")
    if callable(H):
        h = np.broadcast_to(np.asarray(H(*lat.coordinates()), dtype=float), lat.shape)
    else:
        h = _on_lattice(np.asarray(H, dtype=float), N)
    rho = _on_lattice(hydro.rho, N)
    m = _on_lattice(hydro.m, N)
    sp, sm, s = sigma_fields(config)
    norm = N ** (-lat.dimension / 2)
    R = norm * float(np.sum(h * (s - rho)))
    M = norm * float(np.sum(h * ((sp - sm) - m)))
    return FluctuationSample(np.array(h), R, M, hydro.t)


def l1_distance(coarse: CoarseField, hydro: HydroState) -> tuple[float, float]:
    """L1 distances on the unit torus between coarse micro fields and a PDE state, for rho and m.

    The PDE grid is interpolated onto the lattice (M must divide N).
    """
    N = coarse.rho_plus.shape[0]
    if coarse.rho_plus.ndim != hydro.dimension:
        raise GridMismatch("coarse field and hydro state differ in dimension")
    rho = _on_lattice(hydro.rho, N)
    m = _on_lattice(hydro.m, N)
    return float(np.mean(np.abs(coarse.rho - rho))), float(np.mean(np.abs(coarse.m - m)))


BIMODAL_THRESHOLD = 5.0 / 9.0  # value of the coefficient for a uniform distribution


def bimodality_coefficient(samples) -> float:
    """Sample bimodality coefficient (skew^2 + 1) / (excess kurtosis + 3 (n-1)^2 / ((n-2)(n-3))).

    Uses bias-corrected skewness and kurtosis. Values above 5/9 indicate a
    bimodal (or flat) histogram; a Gaussian gives 1/3.
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 4:
        raise ValueError("need at least four samples")
    if np.ptp(x) == 0:
        return float("nan")
    g = stats.skew(x, bias=False)
    k = stats.kurtosis(x, fisher=True, bias=False)
    return float((g * g + 1.0) / (k + 3.0 * (n - 1) ** 2 / ((n - 2) * (n - 3))))
