"""Exact continuous-time simulation of the three active lattice gases.

Rates follow the diffusive scaling: symmetric moves at ``D N^2``, active
moves at ``lambda N``, flips at O(1). Time is macroscopic throughout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import OverflowGuard
from .lattice import (
    ZR_OCCUPANCY_BOUND,
    ExclusionConfig,
    Lattice,
    RngStream,
    ZeroRangeConfig,
    sigma_fields,
)


class ModelKind(str, enum.Enum):
    MIPS_EXCLUSION = "mips"
    ZR_FLOCK = "flock"
    AEP = "aep"


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    N: int
    D: float = 1.0
    lam: float = 0.0
    gamma: float = 0.0
    beta: float = 0.0
    dimension: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.D <= 0:
            raise ValueError(f"D must be positive, got {self.D}")
        if self.lam < 0 or self.gamma < 0 or self.beta < 0:
            raise ValueError("lambda, gamma and beta must be non-negative")
        if self.N < 2:
            raise ValueError(f"N must be >= 2, got {self.N}")
        if self.kind is ModelKind.ZR_FLOCK and self.dimension != 1:
            raise ValueError("the zero-range flocking model is one-dimensional")
        if self.kind is ModelKind.AEP and self.dimension != 2:
            raise ValueError("the active exclusion process requires dimension 2")
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")

    @property
    def lattice(self) -> Lattice:
        return Lattice(self.N, self.dimension)

    @property
    def r_sym(self) -> float:
        return self.D * self.N**2

    @property
    def r_act(self) -> float:
        return self.lam * self.N

    @property
    def r_flip(self) -> float:
        return self.gamma

    def as_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "N": self.N,
            "D": self.D,
            "lambda": self.lam,
            "gamma": self.gamma,
            "beta": self.beta,
            "dimension": self.dimension,
        }


@dataclass
class RateTable:
    """Effective rate of every transition available from one configuration.

    ``events`` maps an event class to an array of per-location rates;
    blocked transitions have rate zero.
    """

    events: dict[str, np.ndarray]

    def class_total(self, name: str) -> float:
        return float(self.events[name].sum())

    @property
    def total(self) -> float:
        return float(sum(a.sum() for a in self.events.values()))


def _forward(arr: np.ndarray, axis: int) -> np.ndarray:
    """Values at x + e_axis, indexed by x."""
    return np.roll(arr, -1, axis=axis)


def rates_mips(config: ExclusionConfig, spec: ModelSpec) -> RateTable:
    if spec.kind is not ModelKind.MIPS_EXCLUSION:
        raise ValueError("rates_mips requires a MIPS_EXCLUSION spec")
    return _exclusion_rates(config, spec, swap=True)


def rates_aep(config: ExclusionConfig, spec: ModelSpec) -> RateTable:
    if spec.kind is not ModelKind.AEP:
        raise ValueError("rates_aep requires an AEP spec")
    return _exclusion_rates(config, spec, swap=False)


def _exclusion_rates(config: ExclusionConfig, spec: ModelSpec, swap: bool) -> RateTable:
    state = config.state
    d = state.ndim
    occ = state != 0
    exchange = np.zeros((d,) + state.shape)
    for k in range(d):
        nxt = _forward(state, k)
        moves = state != nxt
        if not swap:
            moves &= ~(occ & (nxt != 0))
        exchange[k] = spec.r_sym * moves
    empty_right = _forward(state, 0) == 0
    empty_left = np.roll(state, 1, axis=0) == 0
    active = spec.r_act * (((state == 1) & empty_right) | ((state == -1) & empty_left))
    flip = spec.r_flip * occ
    return RateTable({"exchange": exchange, "active": active, "flip": flip.astype(float)})


def zr_particle_flip_rates(n_plus, n_minus, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-particle flip rates exp(-/+ beta (n+ - n-)) for +/- particles."""
    diff = np.asarray(n_plus, dtype=float) - np.asarray(n_minus, dtype=float)
    return np.exp(-beta * diff), np.exp(beta * diff)


def rates_zr(config: ZeroRangeConfig, spec: ModelSpec) -> RateTable:
    if spec.kind is not ModelKind.ZR_FLOCK:
        raise ValueError("rates_zr requires a ZR_FLOCK spec")
    npl = config.n_plus.astype(float)
    nmi = config.n_minus.astype(float)
    c_plus, c_minus = zr_particle_flip_rates(npl, nmi, spec.beta)
    total = npl + nmi
    return RateTable(
        {
            "hop_right": spec.r_sym * total,
            "hop_left": spec.r_sym * total,
            "active_plus": spec.r_act * npl,
            "active_minus": spec.r_act * nmi,
            "flip_plus": npl * c_plus,
            "flip_minus": nmi * c_minus,
        }
    )


@dataclass
class CurrentLedger:
    """Signed integer particle crossings per edge and flip counts per site.

    ``sym_plus[k][x]`` counts net + crossings of edge (x, x + e_k) due to
    symmetric moves (positive = towards x + e_k); the ``act_*`` arrays count
    active moves, which only happen along axis 0.
    """

    shape: tuple[int, ...]
    sym_plus: np.ndarray = None
    sym_minus: np.ndarray = None
    act_plus: np.ndarray = None
    act_minus: np.ndarray = None
    flips_pm: np.ndarray = None
    flips_mp: np.ndarray = None
    accepted: np.ndarray = None

    def __post_init__(self):
        self.shape = tuple(self.shape)
        d = len(self.shape)
        for name, shp in (
            ("sym_plus", (d,) + self.shape),
            ("sym_minus", (d,) + self.shape),
            ("act_plus", self.shape),
            ("act_minus", self.shape),
            ("flips_pm", self.shape),
            ("flips_mp", self.shape),
            ("accepted", (3,)),
        ):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(shp, dtype=np.int64))

    @classmethod
    def for_lattice(cls, lattice: Lattice) -> "CurrentLedger":
        return cls(lattice.shape)

    def reset(self):
        for arr in self._arrays():
            arr[...] = 0

    def _arrays(self):
        return (
            self.sym_plus, self.sym_minus, self.act_plus, self.act_minus,
            self.flips_pm, self.flips_mp, self.accepted,
        )

    def current(self, species: int) -> np.ndarray:
        """Total signed crossings (symmetric + active) per edge, shape (d, ...)."""
        if species == 1:
            total = self.sym_plus.copy()
            total[0] += self.act_plus
        else:
            total = self.sym_minus.copy()
            total[0] += self.act_minus
        return total

    def divergence(self, species: int) -> np.ndarray:
        """Net inflow of a species into every site from the edge crossings."""
        j = self.current(species)
        inflow = np.zeros(self.shape, dtype=np.int64)
        for k in range(len(self.shape)):
            inflow += np.roll(j[k], 1, axis=k) - j[k]
        return inflow

    def continuity_residual(self, initial, final) -> int:
        """Max |Delta sigma^+/- - (inflow + flip gain - flip loss)| over sites and species."""
        sp0, sm0, _ = sigma_fields(initial)
        sp1, sm1, _ = sigma_fields(final)
        res_p = (sp1 - sp0) - (self.divergence(1) + self.flips_mp - self.flips_pm)
        res_m = (sm1 - sm0) - (self.divergence(-1) + self.flips_pm - self.flips_mp)
        return int(max(np.abs(res_p).max(), np.abs(res_m).max()))

    def to_rows(self):
        """Yield CSV rows (kind, axis, site, plus_sym, minus_sym, plus_act, minus_act)."""
        d = len(self.shape)
        for k in range(d):
            for idx in np.ndindex(*self.shape):
                act_p = self.act_plus[idx] if k == 0 else 0
                act_m = self.act_minus[idx] if k == 0 else 0
                yield (
                    "edge", k, idx, int(self.sym_plus[(k,) + idx]),
                    int(self.sym_minus[(k,) + idx]), int(act_p), int(act_m),
                )
        for idx in np.ndindex(*self.shape):
            yield ("site", -1, idx, int(self.flips_pm[idx]), int(self.flips_mp[idx]), 0, 0)


@dataclass
class TrajectoryRecorder:
    """Stores configuration snapshots at a sorted list of macroscopic times."""

    times: Sequence[float]
    snapshots: list = field(default_factory=list)

    def __post_init__(self):
        self.times = [float(t) for t in self.times]
        if any(b < a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("snapshot times must be sorted")
        if self.times and self.times[0] < 0:
            raise ValueError("snapshot times must be non-negative")


def _rng_state(rng: RngStream) -> np.ndarray:
    state = rng.generator.integers(1, 2**64 - 1, size=4, dtype=np.uint64, endpoint=True)
    return state


def _exclusion_segment(state_flat, side, dim, swap, r_sym, r_act, r_flip, duration, rng, ledger):
    n = state_flat.shape[0]
    total = dim * n * r_sym + n * r_act + n * r_flip
    k = int(rng.generator.poisson(total * duration)) if total * duration > 0 else 0
    _kernels.run_exclusion(
        state_flat, side, dim, swap, float(r_sym), float(r_act), float(r_flip),
        float(duration), _rng_state(rng), k,
        ledger.sym_plus.reshape(dim, n), ledger.sym_minus.reshape(dim, n),
        ledger.act_plus.reshape(n), ledger.act_minus.reshape(n),
        ledger.flips_pm.reshape(n), ledger.flips_mp.reshape(n),
        ledger.accepted, np.zeros(0),
    )


def run_exclusion_dynamics(
    config: ExclusionConfig,
    T: float,
    *,
    r_sym: float,
    r_act: float = 0.0,
    r_flip: float = 0.0,
    swap: bool = True,
    rng: RngStream,
    recorder: Optional[TrajectoryRecorder] = None,
    ledger: Optional[CurrentLedger] = None,
) -> ExclusionConfig:
    """Lower-level driver used by :func:`simulate` with explicit rates.

    ``swap`` selects stirring (contents of an edge are exchanged) versus
    hop-to-empty-only symmetric moves.
    """
    work = config.copy()
    lattice = work.lattice
    if ledger is None:
        ledger = CurrentLedger.for_lattice(lattice)
    flat = work.state.reshape(-1)
    t = 0.0
    stops = [s for s in (recorder.times if recorder else []) if s <= T]
    for stop in stops + [T]:
        if stop > t:
            _exclusion_segment(
                flat, lattice.side, lattice.dimension, swap, r_sym, r_act, r_flip,
                stop - t, rng, ledger,
            )
            t = stop
        if recorder is not None and len(recorder.snapshots) < len(stops):
            recorder.snapshots.append(work.copy())
    return work


def _zr_particles(config: ZeroRangeConfig):
    sites = np.arange(config.lattice.n_sites)
    npl = config.n_plus.reshape(-1).astype(np.int64)
    nmi = config.n_minus.reshape(-1).astype(np.int64)
    pos = np.concatenate([np.repeat(sites, npl), np.repeat(sites, nmi)]).astype(np.int64)
    typ = np.concatenate(
        [np.ones(npl.sum(), dtype=np.int8), -np.ones(nmi.sum(), dtype=np.int8)]
    )
    return pos, typ, npl, nmi


def _simulate_zero_range(config, spec, T, recorder, ledger, rng):
    pos, typ, npl, nmi = _zr_particles(config)
    side = spec.N
    t = 0.0
    stops = [s for s in (recorder.times if recorder else []) if s <= T]

    def snapshot():
        return ZeroRangeConfig(npl.copy(), nmi.copy(), config.lattice)

    for stop in stops + [T]:
        if stop > t:
            _, status = _kernels.run_zero_range(
                pos, typ, npl, nmi, side, float(spec.r_sym), float(spec.r_act),
                float(spec.beta), float(stop - t), _rng_state(rng), ZR_OCCUPANCY_BOUND,
                ledger.sym_plus[0], ledger.sym_minus[0], ledger.act_plus, ledger.act_minus,
                ledger.flips_pm, ledger.flips_mp, ledger.accepted,
            )
            if status == _kernels.STATUS_OVERFLOW:
                raise OverflowGuard(
                    f"zero-range occupancy exceeded {ZR_OCCUPANCY_BOUND} before t={stop}"
                )
            if status != _kernels.STATUS_OK:
                raise OverflowGuard("non-finite flip rate encountered")
            t = stop
        if recorder is not None and len(recorder.snapshots) < len(stops):
            recorder.snapshots.append(snapshot())
    return snapshot()


def simulate(
    config,
    spec: ModelSpec,
    T: float,
    recorder: Optional[TrajectoryRecorder] = None,
    ledger: Optional[CurrentLedger] = None,
    rng: Optional[RngStream] = None,
):
    """Run the exact Markov dynamics of ``spec`` for macroscopic time ``T``.

    Returns the final configuration; the input is not modified. Snapshots
    scheduled in ``recorder`` and all crossings/flips in ``ledger`` are
    filled in place.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    if rng is None:
        rng = RngStream(0)
    if ledger is None:
        ledger = CurrentLedger.for_lattice(spec.lattice)
    if spec.kind is ModelKind.ZR_FLOCK:
        if not isinstance(config, ZeroRangeConfig):
            raise TypeError("ZR_FLOCK needs a ZeroRangeConfig")
        return _simulate_zero_range(config, spec, T, recorder, ledger, rng)
    if not isinstance(config, ExclusionConfig):
        raise TypeError(f"{spec.kind.name} needs an ExclusionConfig")
    if config.lattice.shape != spec.lattice.shape:
        raise ValueError("configuration lattice does not match the model spec")
    return run_exclusion_dynamics(
        config, T,
        r_sym=spec.r_sym, r_act=spec.r_act, r_flip=spec.r_flip,
        swap=spec.kind is ModelKind.MIPS_EXCLUSION,
        rng=rng, recorder=recorder, ledger=ledger,
    )


@dataclass
class MartingaleEstimate:
    values: np.ndarray  # one M_T^H per trajectory

    @property
    def second_moment(self) -> float:
        return float(np.mean(self.values**2))

    @property
    def stderr(self) -> float:
        return float(np.std(self.values**2, ddof=1) / np.sqrt(len(self.values)))


def martingale_sample(
    config: ExclusionConfig, spec: ModelSpec, H: Callable, T: float, rng: RngStream
) -> float:
    """One realisation of M_T^H for X_t = N^-1 sum_x H(x/N) sigma^+_x(t).

    M = X_T - X_0 - int_0^T (L X)(eta_s) ds, with the generator drift
    integrated exactly along the piecewise-constant path.
    """
    if spec.dimension != 1 or spec.kind is ModelKind.ZR_FLOCK:
        raise ValueError("martingale tracking is implemented for 1D exclusion models")
    N = spec.N
    h = np.asarray(H(np.arange(N) / N), dtype=float) * np.ones(N)
    work = config.copy()
    x0 = float(np.dot(h, work.state == 1)) / N
    ledger = CurrentLedger.for_lattice(spec.lattice)
    _, integral = _kernels.run_exclusion(
        work.state, N, 1, spec.kind is ModelKind.MIPS_EXCLUSION,
        float(spec.r_sym), float(spec.r_act), float(spec.r_flip), float(T),
        _rng_state(rng), -1,
        ledger.sym_plus, ledger.sym_minus, ledger.act_plus, ledger.act_minus,
        ledger.flips_pm, ledger.flips_mp, ledger.accepted, h,
    )
    x1 = float(np.dot(h, work.state == 1)) / N
    return x1 - x0 - integral


def martingale_variance_check(
    spec: ModelSpec,
    H: Callable,
    ensemble: int,
    T: float,
    initial: Callable[[RngStream], ExclusionConfig],
    rng: RngStream,
) -> MartingaleEstimate:
    """Empirical E[(M_T^H)^2] over ``ensemble`` independent trajectories.

    ``initial`` draws a starting configuration from a child stream.
    """
    if ensemble < 50:
        raise ValueError("martingale_variance_check needs an ensemble of at least 50")
    values = np.empty(ensemble)
    for i, child in enumerate(rng.spawn(ensemble)):
        values[i] = martingale_sample(initial(child), spec, H, T, child)
    return MartingaleEstimate(values)
