"""End-to-end acceptance checks, one test per criterion.

Sizes and tolerances are the published ones. Several tests run for minutes;
select them with ``pytest tests/test_acceptance.py -v``.
"""

import math

import numpy as np
import pytest

from activelattice.errors import FitWindowTooShort
from activelattice.fields import (
    BIMODAL_THRESHOLD,
    CoarseField,
    H_PLUS,
    EquilibriumMeasureSpec,
    MeasureFamily,
    Mode,
    bimodality_coefficient,
    coarse_grain,
    equilibrium_expectation,
    fluctuation_sample,
    l1_distance,
)
from activelattice.hydro import HydroModel, HydroState, PDEConfig, evaluate_F, solve
from activelattice.kmc import CurrentLedger, ModelSpec, martingale_variance_check, simulate
from activelattice.lattice import (
    Profile,
    RngStream,
    init_exclusion,
    init_zero_range_poisson,
)
from activelattice.nongradient import estimate_self_diffusion, segregation_relaxation_experiment
from activelattice.spde import FluctState, SPDEConfig, evolve_fluct, sine_mode_variance, stationary_spatial_variance
from activelattice.stability import (
    BinodalParams,
    Verdict,
    binodal_from_pde,
    flock_verdict,
    gaseous_spinodal,
    liquid_spinodal,
    self_consistent_m,
    spinodal_densities_mips,
    spinodal_mips,
)

pytestmark = pytest.mark.slow

SEEDS = 20
TWO_PI = 2 * np.pi


def _ensemble_l1(spec, profile, init, pde_cfg, T, master):
    """L1 of the ensemble-averaged coarse field against the PDE, plus every member's continuity residual."""
    ell = math.ceil(spec.N**0.6)
    rp_sum = rm_sum = 0.0
    residuals = []
    for child in RngStream(master).spawn(SEEDS):
        start = init(profile, spec.lattice, child)
        ledger = CurrentLedger.for_lattice(spec.lattice)
        final = simulate(start, spec, T, ledger=ledger, rng=child)
        residuals.append(ledger.continuity_residual(start, final))
        cf = coarse_grain(final, ell, t=T)
        rp_sum = rp_sum + cf.rho_plus
        rm_sum = rm_sum + cf.rho_minus
    mean_field = CoarseField(rp_sum / SEEDS, rm_sum / SEEDS, ell, T)
    grid = HydroState.uniform(pde_cfg.M, 0.0)
    initial = HydroState.from_species(*profile.evaluate(grid.coordinates()))
    if pde_cfg.model is HydroModel.FLOCK:
        pde_cfg = pde_cfg.with_dt_for(initial)
    hydro = solve(initial, pde_cfg, T)[-1]
    return l1_distance(mean_field, hydro), residuals


def test_01_mips_micro_macro_convergence():
    spec = ModelSpec("mips", N=2000, D=1.0, lam=1.0, gamma=1.0)
    profile = Profile(lambda u: 0.3 + 0.1 * np.sin(TWO_PI * u), 0.3)
    cfg = PDEConfig(HydroModel.MIPS, 500, D=1.0, lam=1.0, gamma=1.0)
    (d_rho, d_m), residuals = _ensemble_l1(spec, profile, init_exclusion, cfg, 0.1, 101)
    print(f"L1 rho={d_rho:.4f} m={d_m:.4f}")
    assert residuals == [0] * SEEDS
    assert d_rho <= 0.05
    assert d_m <= 0.05


def test_02_flocking_micro_macro_convergence():
    spec = ModelSpec("flock", N=1000, D=1.0, lam=1.0, beta=0.5)
    profile = Profile(lambda u: 0.5 + 0.1 * np.sin(TWO_PI * u), 0.5)
    cfg = PDEConfig(HydroModel.FLOCK, 500, D=1.0, lam=1.0, beta=0.5, check_bounds=False)
    (d_rho, d_m), residuals = _ensemble_l1(spec, profile, init_zero_range_poisson, cfg, 0.1, 202)
    print(f"L1 rho={d_rho:.4f} m={d_m:.4f}")
    assert residuals == [0] * SEEDS
    assert d_rho <= 0.07
    assert d_m <= 0.07


def test_03_flip_function_matches_twice_equilibrium_h_plus():
    # literal reading: F = 2 E_nu(h+); see the decisions ledger for the expected outcome
    rng = RngStream(303)
    failures = []
    for rho in (0.5, 1.0, 2.0):
        for m in (-0.5, 0.0, 0.5):
            for beta in (0.5, 1.0):
                spec = EquilibriumMeasureSpec(MeasureFamily.POISSON_PRODUCT, (rho + m) / 2, (rho - m) / 2, beta=beta)
                mc = equilibrium_expectation(H_PLUS, spec, Mode.MONTE_CARLO, n_samples=1_000_000, rng=rng)
                F = float(evaluate_F(rho, m, beta))
                if abs(F - 2 * mc.value) > 3 * 2 * mc.stderr:
                    failures.append((rho, m, beta, F, 2 * mc.value))
    assert not failures, f"{len(failures)} of 18 grid points disagree: {failures}"


def test_04_mips_spinodal_closed_form():
    for rho0 in (0.6, 0.7, 0.75, 0.8, 0.9):
        closed = math.sqrt(2.0 / ((1 - rho0) * (2 * rho0 - 1)))
        assert spinodal_mips(rho0) == pytest.approx(closed, rel=1e-4)
    rhos = np.linspace(0.55, 0.95, 401)
    pes = np.array([spinodal_mips(r) for r in rhos])
    i = int(np.argmin(pes))
    assert pes[i] == pytest.approx(4.0, abs=0.01)
    assert rhos[i] == pytest.approx(0.75, abs=0.01)


def test_05_flocking_gaseous_spinodal():
    for T in (0.3, 0.5, 1.0, 2.0, 4.0):
        beta = 1.0 / T
        rho_g = gaseous_spinodal(beta)
        assert abs(rho_g * math.sinh(beta) - 1.0) <= 1e-6
        for rho in rho_g * np.array([0.5, 0.9, 0.999, 1.001, 1.1, 1.5]):
            m0 = self_consistent_m(rho, beta)
            unstable = flock_verdict(rho, 0.0, beta) is Verdict.UNSTABLE
            assert (m0 > 0) == unstable == (rho > rho_g)


def test_06_binodal_structure():
    mips = [binodal_from_pde(BinodalParams(Pe=8.0, length=80.0, M=800, chunk=100.0), "MIPS_PECLET", r)
            for r in (0.6, 0.7, 0.8)]
    gas = np.array([r.rho_gas for r in mips])
    liq = np.array([r.rho_liq for r in mips])
    assert np.ptp(gas) <= 0.02 * gas.mean()
    assert np.ptp(liq) <= 0.02 * liq.mean()
    lo, hi = spinodal_densities_mips(8.0)
    assert np.all(gas < lo) and np.all(liq > hi)

    params = BinodalParams(beta=1.0, length=200.0, M=1000, chunk=100.0, t_max=3000.0)
    bands = [binodal_from_pde(params, "FLOCK", r) for r in (0.9, 1.0, 1.1)]
    gas = np.array([r.rho_gas for r in bands])
    liq = np.array([r.rho_liq for r in bands])
    assert np.ptp(gas) <= 0.02 * gas.mean()
    assert np.ptp(liq) <= 0.02 * liq.mean()
    assert np.all(gas < gaseous_spinodal(1.0)) and np.all(liq > liquid_spinodal(1.0))
    for r in bands:
        assert r.band_speed is not None and abs(r.band_speed) > 0.1
        assert abs(r.m_liq) > 0.5


def _block_bc(Pe, seeds, master):
    gamma = 100.0
    spec = ModelSpec("mips", N=64, D=1.0, lam=Pe * math.sqrt(gamma), gamma=gamma, dimension=2)
    out = []
    for child in RngStream(master).spawn(seeds):
        start = init_exclusion(Profile(0.375, 0.375), spec.lattice, child)
        final = simulate(start, spec, 5.0, rng=child)
        out.append(bimodality_coefficient(coarse_grain(final, 3).rho))
    return np.array(out)


def test_07_microscopic_phase_behaviour():
    # rho0 = 0.75 with Pe = lambda / sqrt(D gamma): Pe_c = 4, so Pe = 8 is deep inside, Pe = 2 far below
    assert spinodal_mips(0.75) == pytest.approx(4.0)
    unstable = _block_bc(8.0, 10, 707)
    stable = _block_bc(2.0, 10, 708)
    print("BC unstable", np.round(unstable, 3), "stable", np.round(stable, 3))
    assert np.all(unstable > BIMODAL_THRESHOLD)
    assert np.all(stable < BIMODAL_THRESHOLD)


def test_08_self_diffusion():
    free = estimate_self_diffusion(0.0, 2, 64, 20.0, 10000, RngStream(11))
    assert free.d_s == pytest.approx(1.0, abs=0.05)
    ests = [estimate_self_diffusion(r, 2, 64, 100.0, 10, c) for r, c in zip((0.2, 0.5, 0.8), RngStream(5).spawn(3))]
    for a, b in zip(ests, ests[1:]):
        assert a.d_s - b.d_s > 2 * np.hypot(a.stderr, b.stderr)
    with pytest.raises(FitWindowTooShort) as exc:
        estimate_self_diffusion(0.5, 1, 2000, 200.0, 100, RngStream(2))
    assert 0.4 <= exc.value.exponent <= 0.6


def test_09_gradient_vs_nongradient_mixing():
    c = 0.5
    stir = segregation_relaxation_experiment(c, 1, 512, 1.0, True, RngStream(3))
    assert stir.distances[-1] < 0.1 * c
    aep1 = segregation_relaxation_experiment(c, 1, 512, 1.0, False, RngStream(3))
    assert aep1.distances[-1] > 0.5 * aep1.initial_distance
    aep2 = segregation_relaxation_experiment(c, 2, 64, [0.01, 0.03, 0.09], False, RngStream(3))
    d = [aep2.initial_distance] + list(aep2.distances)
    assert all(x > y for x, y in zip(d, d[1:]))


def test_10_martingale_scaling():
    T, rp = 0.025, 0.2
    moments = []
    for N, seed in ((200, 1001), (800, 1002)):
        spec = ModelSpec("mips", N=N, lam=1.0, gamma=1.0)
        est = martingale_variance_check(
            spec, lambda u: np.sin(TWO_PI * u), 200, T,
            lambda r, spec=spec: init_exclusion(Profile(rp, rp), spec.lattice, r), RngStream(seed),
        )
        moments.append(est.second_moment)
    ratio = moments[0] / moments[1]
    print(f"E[M^2] N=200 {moments[0]:.3e} N=800 {moments[1]:.3e} ratio {ratio:.2f}")
    assert 2.5 <= ratio <= 6.0


def test_11_spde_consistency():
    # linear conservative-noise SPDE around a flat stable MIPS background
    cfg = SPDEConfig(M=64, lam=1.0, gamma=1.0)
    bg = HydroState.uniform(64, 0.2)
    st = FluctState.zeros(bg, batch=(32,))
    rng = RngStream(1101)
    st, _ = evolve_fluct(st, cfg, 0.3, rng)
    vals = []
    for _ in range(40):
        st, _ = evolve_fluct(st, cfg, 0.02, rng)
        vals.append(cfg.du * np.mean(st.R**2))
    predicted = stationary_spatial_variance(cfg, 0.2)[0]
    assert np.mean(vals) == pytest.approx(predicted, rel=0.10)

    # microscopic equilibrium at lambda = 0 is the Bernoulli product measure
    N, rp = 10_000, 0.1
    spec = ModelSpec("mips", N=N, lam=0.0, gamma=1.0)
    flat = HydroState.uniform(N, 2 * rp)
    H = lambda u: np.sin(TWO_PI * u)  # noqa: E731
    R = [fluctuation_sample(init_exclusion(Profile(rp, rp), spec.lattice, c), H, flat).R
         for c in RngStream(1102).spawn(2000)]
    spde_pred = sine_mode_variance(SPDEConfig(M=64, lam=0.0, gamma=1.0), 2 * rp)
    assert np.var(R, ddof=1) == pytest.approx(spde_pred, rel=0.25)


def test_12_exact_invariants():
    rng = RngStream(1201)
    cases = [
        (ModelSpec("mips", N=200, lam=3.0, gamma=2.0), init_exclusion, Profile(0.3, 0.2)),
        (ModelSpec("mips", N=32, lam=5.0, gamma=1.0, dimension=2), init_exclusion, Profile(0.35, 0.35)),
        (ModelSpec("aep", N=32, lam=5.0, gamma=1.0, dimension=2), init_exclusion, Profile(0.3, 0.3)),
        (ModelSpec("flock", N=200, lam=1.0, beta=1.0), init_zero_range_poisson, Profile(0.6, 0.4)),
    ]
    for spec, init, prof in cases:
        child = rng.spawn(1)[0]
        start = init(prof, spec.lattice, child)
        ledger = CurrentLedger.for_lattice(spec.lattice)
        final = simulate(start, spec, 0.05, ledger=ledger, rng=child)
        assert ledger.continuity_residual(start, final) == 0
        assert ledger.accepted.sum() > 0

    u = np.arange(128) / 128
    rp = 0.3 + 0.1 * np.sin(TWO_PI * u)
    rm = 0.25 + 0.1 * np.cos(2 * TWO_PI * u)
    runs = [
        (PDEConfig(HydroModel.MIPS, 128, lam=2.0, gamma=1.5), HydroState.from_species(rp, rm)),
        (PDEConfig(HydroModel.MIPS, 32, lam=2.0, gamma=1.5, dimension=2),
         HydroState.from_species(*np.meshgrid(rp[::4], rm[::4], indexing="ij"))),
        (PDEConfig(HydroModel.FLOCK, 128, lam=1.0, beta=1.0, check_bounds=False),
         HydroState.from_species(2 * rp, 2 * rm)),
    ]
    T = 0.2
    for cfg, init in runs:
        final = solve(init, cfg, T)[-1]
        assert abs(final.mass() - init.mass()) <= 1e-10 * init.mass()
        if cfg.model is HydroModel.MIPS:
            bound = abs(init.total_magnetization()) * math.exp(-2 * cfg.gamma * T) + 1e-10
            assert abs(final.total_magnetization()) <= bound
