"""Periodic lattices, particle configurations and their random initial states."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import OverflowGuard, ProfileInvalid

# Zero-range occupations are stored unsigned; anything above this is treated as a blow-up.
ZR_OCCUPANCY_BOUND = np.iinfo(np.uint16).max

DensitySpec = Union[float, np.ndarray, Callable[..., np.ndarray]]


@dataclass(frozen=True)
class Lattice:
    """Discrete torus with ``side`` sites per axis.

    Sites are 0-based; site ``x`` sits at macroscopic coordinate ``u = x / side``.
    Axis 0 is the drift direction ``e_1``.
    """

    side: int
    dimension: int = 1

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        if self.side < 2:
            raise ValueError(f"side length must be >= 2, got {self.side}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.dimension

    @property
    def n_sites(self) -> int:
        return self.side**self.dimension

    def neighbor(self, site: Sequence[int] | int, axis: int = 0, step: int = 1):
        """Return the site ``site + step * e_axis`` with periodic wrap."""
        if self.dimension == 1:
            x = site if np.isscalar(site) else site[0]
            return int((x + step) % self.side)
        coords = list(site)
        coords[axis] = (coords[axis] + step) % self.side
        return tuple(int(c) for c in coords)

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Macroscopic coordinates of every site, as ``dimension`` broadcast arrays."""
        u = np.arange(self.side) / self.side
        if self.dimension == 1:
            return (u,)
        return tuple(np.meshgrid(u, u, indexing="ij"))


def _periodic_interp(table: np.ndarray, coords: tuple[np.ndarray, ...]) -> np.ndarray:
    """Linear (bilinear in 2D) interpolation of a table sampled at u_i = i / M."""
    table = np.asarray(table, dtype=float)
    if table.ndim != len(coords):
        raise ProfileInvalid(
            f"tabulated profile has {table.ndim} axes, lattice has {len(coords)}"
        )
    idx, frac = [], []
    for axis, u in enumerate(coords):
        m = table.shape[axis]
        pos = np.mod(u, 1.0) * m
        i0 = np.floor(pos).astype(np.int64) % m
        idx.append((i0, (i0 + 1) % m))
        frac.append(pos - np.floor(pos))
    if len(coords) == 1:
        (i0, i1), f = idx[0], frac[0]
        return (1 - f) * table[i0] + f * table[i1]
    (a0, a1), (b0, b1) = idx
    fa, fb = frac
    return (
        (1 - fa) * (1 - fb) * table[a0, b0]
        + fa * (1 - fb) * table[a1, b0]
        + (1 - fa) * fb * table[a0, b1]
        + fa * fb * table[a1, b1]
    )


def _evaluate_density(spec: DensitySpec, coords: tuple[np.ndarray, ...]) -> np.ndarray:
    shape = np.broadcast(*coords).shape
    if callable(spec):
        values = np.asarray(spec(*coords), dtype=float)
    elif np.isscalar(spec):
        values = np.full(shape, float(spec))
    else:
        values = _periodic_interp(np.asarray(spec), coords)
    return np.broadcast_to(values, shape).astype(float)


@dataclass
class Profile:
    """Pair of macroscopic densities (rho_plus, rho_minus) on the unit torus.

    Each component may be a constant, a callable of the macroscopic
    coordinates (one array per axis), or a periodic table sampled at
    ``u_i = i / M`` that is linearly interpolated.
    """

    rho_plus: DensitySpec = 0.0
    rho_minus: DensitySpec = 0.0

    def evaluate(self, coords: tuple[np.ndarray, ...]) -> tuple[np.ndarray, np.ndarray]:
        return _evaluate_density(self.rho_plus, coords), _evaluate_density(
            self.rho_minus, coords
        )

    def on_lattice(self, lattice: Lattice) -> tuple[np.ndarray, np.ndarray]:
        return self.evaluate(lattice.coordinates())


class RngStream:
    """Reproducible random stream that can be split into independent children.

    Backed by numpy's ``SeedSequence``; children derived with :meth:`spawn`
    are statistically independent and depend only on the parent seed.
    """

    def __init__(self, seed: int | np.random.SeedSequence):
        if isinstance(seed, np.random.SeedSequence):
            self._ss = seed
            self.seed = int(seed.generate_state(1, np.uint64)[0])
        else:
            self.seed = int(seed)
            self._ss = np.random.SeedSequence(self.seed)
        self.generator = np.random.Generator(np.random.PCG64(self._ss))

    def spawn(self, n: int) -> list["RngStream"]:
        return [RngStream(child) for child in self._ss.spawn(n)]

    def kernel_seed(self) -> int:
        """Draw a 32-bit seed for one call of a compiled kernel."""
        return int(self.generator.integers(0, 2**32 - 1))

    def __repr__(self):
        return f"RngStream(seed={self.seed})"


@dataclass
class ExclusionConfig:
    """Exclusion configuration: one value in {0, +1, -1} per site."""

    state: np.ndarray
    lattice: Lattice = field(default=None)

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=np.int8)
        if self.lattice is None:
            self.lattice = Lattice(self.state.shape[0], self.state.ndim)
        if self.state.shape != self.lattice.shape:
            raise ValueError(
                f"state shape {self.state.shape} does not match lattice {self.lattice.shape}"
            )
        if not np.isin(self.state, (-1, 0, 1)).all():
            raise ValueError("exclusion states must lie in {0, +1, -1}")

    def copy(self) -> "ExclusionConfig":
        return ExclusionConfig(self.state.copy(), self.lattice)

    @property
    def n_particles(self) -> int:
        return int(np.count_nonzero(self.state))

    @property
    def magnetization(self) -> int:
        return int(self.state.sum(dtype=np.int64))


@dataclass
class ZeroRangeConfig:
    """Zero-range configuration: counts (n_plus, n_minus) per site."""

    n_plus: np.ndarray
    n_minus: np.ndarray
    lattice: Lattice = field(default=None)

    def __post_init__(self):
        for name in ("n_plus", "n_minus"):
            arr = np.asarray(getattr(self, name))
            if arr.size and (arr.min() < 0):
                raise ValueError(f"{name} must be non-negative")
            if arr.size and arr.max() > ZR_OCCUPANCY_BOUND:
                raise OverflowGuard(
                    f"{name} occupancy {int(arr.max())} exceeds bound {ZR_OCCUPANCY_BOUND}"
                )
            setattr(self, name, arr.astype(np.uint32))
        if self.n_plus.shape != self.n_minus.shape:
            raise ValueError("n_plus and n_minus must have the same shape")
        if self.lattice is None:
            self.lattice = Lattice(self.n_plus.shape[0], self.n_plus.ndim)

    def copy(self) -> "ZeroRangeConfig":
        return ZeroRangeConfig(self.n_plus.copy(), self.n_minus.copy(), self.lattice)

    @property
    def n_particles(self) -> int:
        return int(self.n_plus.sum(dtype=np.int64) + self.n_minus.sum(dtype=np.int64))

    @property
    def magnetization(self) -> int:
        return int(self.n_plus.sum(dtype=np.int64) - self.n_minus.sum(dtype=np.int64))


def init_exclusion(profile: Profile, lattice: Lattice, rng: RngStream) -> ExclusionConfig:
    """Independent sites: +1 w.p. rho_plus(x/N), -1 w.p. rho_minus(x/N), else empty."""
    rp, rm = profile.on_lattice(lattice)
    if (rp < 0).any() or (rm < 0).any():
        raise ProfileInvalid("densities must be non-negative")
    excess = rp + rm - 1.0
    if (excess > 1e-12).any():
        worst = np.unravel_index(np.argmax(excess), excess.shape)
        raise ProfileInvalid(
            f"rho_plus + rho_minus = {1 + excess[worst]:.6g} > 1 at site {worst}"
        )
    u = rng.generator.random(lattice.shape)
    state = np.zeros(lattice.shape, dtype=np.int8)
    state[u < rp] = 1
    state[(u >= rp) & (u < rp + rm)] = -1
    return ExclusionConfig(state, lattice)


def init_zero_range_poisson(
    profile: Profile, lattice: Lattice, rng: RngStream
) -> ZeroRangeConfig:
    """Independent Poisson(rho_plus(x/N)), Poisson(rho_minus(x/N)) occupations."""
    rp, rm = profile.on_lattice(lattice)
    if (rp < 0).any() or (rm < 0).any():
        raise ProfileInvalid("zero-range densities must be non-negative")
    n_plus = rng.generator.poisson(rp)
    n_minus = rng.generator.poisson(rm)
    return ZeroRangeConfig(n_plus, n_minus, lattice)


def sigma_fields(config) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (sigma_plus, sigma_minus, sigma) as integer arrays.

    For exclusion these are occupation indicators; for zero-range they are the
    occupation numbers themselves.
    """
    if isinstance(config, ExclusionConfig):
        sp = (config.state == 1).astype(np.int64)
        sm = (config.state == -1).astype(np.int64)
    elif isinstance(config, ZeroRangeConfig):
        sp = config.n_plus.astype(np.int64)
        sm = config.n_minus.astype(np.int64)
    else:
        raise TypeError(f"unsupported configuration type {type(config).__name__}")
    return sp, sm, sp + sm


def eta_field(config) -> np.ndarray:
    """Signed particle field: state for exclusion, n_plus - n_minus for zero-range."""
    sp, sm, _ = sigma_fields(config)
    return sp - sm
