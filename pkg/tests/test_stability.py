import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from activelattice.errors import NoPhaseSeparation, SearchWindowExceeded
from activelattice.hydro import HydroState, PDEConfig, Scheme, dF_dm, dF_drho, evaluate_F, solve
from activelattice.stability import (
    GROWTH_TOL,
    BinodalParams,
    Verdict,
    binodal_from_pde,
    dispersion_flock,
    dispersion_mips,
    flock_verdict,
    gaseous_spinodal,
    liquid_spinodal,
    max_growth,
    mips_growth,
    mips_verdict,
    phase_diagram_sweep,
    plateau_densities,
    self_consistent_m,
    spinodal_densities_mips,
    spinodal_flock,
    spinodal_mips,
    spinodal_mips_closed_form,
)


# ---------------------------------------------------------------- dispersion


def _check_char_poly(A, s):
    tr = A[0, 0] + A[1, 1]
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    scale = max(1.0, abs(tr), abs(det))
    assert abs(s.sum() - tr) <= 1e-10 * scale
    assert abs(s[0] * s[1] - det) <= 1e-10 * scale**2


@given(st.floats(0.01, 0.99), st.floats(0.0, 20.0), st.floats(0.0, 20.0))
def test_mips_eigenvalues_reproduce_trace_and_determinant(rho0, pe, q):
    r = dispersion_mips(rho0, pe, q)
    _check_char_poly(r.matrix, r.s)


@given(st.floats(0.05, 4.0), st.floats(0.05, 3.0), st.floats(0.0, 20.0))
@settings(max_examples=50)
def test_flock_eigenvalues_reproduce_trace_and_determinant(rho0, beta, q):
    m0 = self_consistent_m(rho0, beta)
    r = dispersion_flock(rho0, m0, beta, q)
    _check_char_poly(r.matrix, r.s)


def test_mips_matrix_entries():
    A = dispersion_mips(0.7, 5.0, 2.0).matrix
    expected = np.array([[-4, -2j * 5 * 0.3], [-2j * 5 * (1 - 1.4), -4 - 2]])
    np.testing.assert_allclose(A, expected, atol=1e-14)


def test_zero_peclet_decouples():
    for q in (0.0, 0.3, 7.0):
        s = np.sort(dispersion_mips(0.6, 0.0, q).s.real)
        np.testing.assert_allclose(s, [-q * q - 2, -q * q], atol=1e-12)


def test_zero_wavenumber_modes():
    s = np.sort(dispersion_mips(0.8, 6.0, 0.0).s.real)
    np.testing.assert_allclose(s, [-2.0, 0.0], atol=1e-14)


def test_mips_verdicts_inside_and_outside():
    assert mips_verdict(0.75, 6.0) is Verdict.UNSTABLE
    assert mips_verdict(0.75, 3.0) is Verdict.STABLE
    assert mips_growth(0.75, 3.0)[1] <= GROWTH_TOL


def test_max_growth_rejects_window_edge():
    with pytest.raises(SearchWindowExceeded):
        max_growth(lambda q: q)


def test_linearisation_matches_pde_mode_growth():
    # grow a single Fourier mode with the nonlinear solver and compare with the eigenvalue
    rho0, pe, L, M = 0.75, 6.0, 2 * np.pi, 256
    st0 = HydroState.uniform(M, rho0, 0.0, 1, L)
    u = st0.coordinates()[0]
    st0.rho = st0.rho + 1e-7 * np.cos(u)
    cfg = PDEConfig("mips_peclet", M=M, Pe=pe, length=L, scheme=Scheme.CENTRAL, safety=0.25)
    snaps = solve(st0, cfg, 6.0, [5.0, 6.0])
    amp = [abs(np.fft.rfft(s.rho)[1]) for s in snaps]
    measured = math.log(amp[1] / amp[0])
    predicted = dispersion_mips(rho0, pe, 1.0).max_real
    assert measured == pytest.approx(predicted, rel=2e-3)


# ---------------------------------------------------------------- MIPS spinodal


@pytest.mark.parametrize("rho0", [0.6, 0.7, 0.75, 0.8, 0.9])
def test_spinodal_bisection_matches_closed_form(rho0):
    pe = spinodal_mips(rho0)
    assert pe == pytest.approx(spinodal_mips_closed_form(rho0), rel=1e-4)


def test_spinodal_at_three_quarters():
    assert spinodal_mips(0.75) == pytest.approx(4.0, abs=0.01)


def test_minimum_threshold_location():
    grid = np.linspace(0.52, 0.98, 47)
    pes = [spinodal_mips_closed_form(r) for r in grid]
    assert grid[int(np.argmin(pes))] == pytest.approx(0.75, abs=0.01)


@pytest.mark.parametrize("rho0", [0.1, 0.3, 0.5])
def test_no_threshold_below_half(rho0):
    assert spinodal_mips(rho0) is None
    for pe in (1.0, 10.0, 50.0):
        assert mips_verdict(rho0, pe) is Verdict.STABLE


def test_spinodal_densities_at_pe8():
    lo, hi = spinodal_densities_mips(8.0)
    assert (lo, hi) == pytest.approx((0.53349, 0.96651), abs=1e-5)
    assert spinodal_densities_mips(3.9) is None


# ---------------------------------------------------------------- flocking


def test_F_derivatives_match_finite_differences():
    h = 1e-5
    for rho, m, beta in [(1.0, 0.3, 1.0), (2.5, -1.2, 0.7), (0.4, 0.1, 2.0), (3.0, 2.9, 0.3)]:
        fd_m = (evaluate_F(rho, m + h, beta) - evaluate_F(rho, m - h, beta)) / (2 * h)
        fd_r = (evaluate_F(rho + h, m, beta) - evaluate_F(rho - h, m, beta)) / (2 * h)
        assert float(dF_dm(rho, m, beta)) == pytest.approx(fd_m, rel=1e-6)
        assert float(dF_drho(rho, m, beta)) == pytest.approx(fd_r, rel=1e-6)


@given(st.floats(0.01, 5.0), st.floats(0.01, 3.0))
def test_self_consistent_m_root(rho, beta):
    m0 = self_consistent_m(rho, beta)
    assert 0.0 <= m0 <= rho
    if rho * math.sinh(beta) <= 1.0:
        assert m0 == 0.0
    else:
        assert m0 > 0.0
        assert abs(m0 - rho * math.tanh(m0 * math.sinh(beta))) <= 1e-10
        # F itself carries a large exponential prefactor; compare with its term scale
        scale = rho * math.cosh(m0 * math.sinh(beta)) * math.exp(-beta + rho * (math.cosh(beta) - 1))
        assert abs(evaluate_F(rho, m0, beta)) <= 1e-10 * scale


def test_self_consistent_m_saturates():
    assert self_consistent_m(1.5, 30.0) == pytest.approx(1.5, rel=1e-12)


def test_zero_beta_always_stable():
    for rho in (0.1, 1.0, 5.0):
        assert flock_verdict(rho, 0.0, 0.0) is Verdict.STABLE
    assert np.isnan(spinodal_flock([0.0]).gaseous[0])


def test_zero_mode_structure_of_disordered_branch():
    rho, beta = 0.5, 1.0
    s = np.sort(dispersion_flock(rho, 0.0, beta, 0.0).s.real)
    fm = float(dF_dm(rho, 0.0, beta))
    assert fm > 0
    np.testing.assert_allclose(s, [-2 * fm, 0.0], atol=1e-14)


def test_dispersion_flock_requires_fixed_point():
    with pytest.raises(ValueError):
        dispersion_flock(1.0, 0.5, 1.0, 0.1)


@pytest.mark.parametrize("T", [0.4, 0.7, 1.0, 1.5, 2.5])
def test_gaseous_spinodal_closed_form(T):
    beta = 1.0 / T
    assert gaseous_spinodal(beta) == pytest.approx(1.0 / math.sinh(beta), abs=1e-6)


def test_liquid_spinodal_above_gaseous():
    curves = spinodal_flock([0.5, 1.0, 2.0, 3.0])
    np.testing.assert_allclose(curves.gaseous, 1 / np.sinh([0.5, 1.0, 2.0, 3.0]), atol=1e-6)
    np.testing.assert_allclose(curves.liquid, [2.6493, 1.2001, 0.4139, 0.1636], atol=2e-4)
    assert np.all(curves.liquid > curves.gaseous)
    # magnetised branch between the curves is unstable, above the liquid one stable
    beta = 1.0
    mid = 0.5 * (curves.gaseous[1] + curves.liquid[1])
    above = 1.1 * curves.liquid[1]
    assert flock_verdict(mid, self_consistent_m(mid, beta), beta) is Verdict.UNSTABLE
    assert flock_verdict(above, self_consistent_m(above, beta), beta) is Verdict.STABLE


def test_liquid_spinodal_invariant_under_wavenumber_rescaling():
    # q -> q / lam maps (D, lam) = (lam^2, lam) onto (1, 1)
    a = liquid_spinodal(1.0, D=1.0, lam=1.0)
    b = liquid_spinodal(1.0, D=4.0, lam=2.0)
    assert a == pytest.approx(b, rel=1e-8)


# ---------------------------------------------------------------- plateaus / binodals


def test_plateau_densities_of_tanh_profile():
    M, L = 2000, 100.0
    u = (np.arange(M) + 0.5) * L / M
    rho = 0.2 + 0.35 * (np.tanh(u - 25) - np.tanh(u - 75))
    lo, hi, mlo, mhi = plateau_densities(rho, np.zeros(M), L / M)
    assert lo == pytest.approx(0.2, abs=1e-6)
    assert hi == pytest.approx(0.9, abs=1e-6)


def test_plateau_densities_uniform_raises():
    with pytest.raises(NoPhaseSeparation):
        plateau_densities(np.full(50, 0.4), np.zeros(50), 0.1)


def test_mips_binodal_lever_rule_and_enclosure():
    params = BinodalParams(Pe=8.0, length=80.0, M=800, chunk=100.0)
    res = [binodal_from_pde(params, "MIPS_PECLET", r) for r in (0.6, 0.7, 0.8)]
    gas = np.array([r.rho_gas for r in res])
    liq = np.array([r.rho_liq for r in res])
    assert np.ptp(gas) <= 0.02 * gas.mean()
    assert np.ptp(liq) <= 0.02 * liq.mean()
    lo, hi = spinodal_densities_mips(8.0)
    assert np.all(gas < lo) and np.all(liq > hi)
    assert all(r.band_speed is None for r in res)


def test_mips_binodal_outside_spinodal_relaxes():
    params = BinodalParams(Pe=3.0, length=20.0, M=200, chunk=10.0, t_max=200.0)
    with pytest.raises(NoPhaseSeparation):
        binodal_from_pde(params, "MIPS_PECLET", 0.75)


@pytest.mark.slow
def test_flock_band_travels():
    params = BinodalParams(beta=1.0, length=200.0, M=1000, chunk=100.0, t_max=3000.0)
    r = binodal_from_pde(params, "FLOCK", 1.0)
    assert r.band_speed is not None and abs(r.band_speed) > 0.1
    assert abs(r.m_gas) < 0.02
    assert abs(r.m_liq) > 0.5
    assert r.rho_gas < gaseous_spinodal(1.0) < liquid_spinodal(1.0) < r.rho_liq
    # flux balance across a rigidly translating band: v (rho_l - rho_g) = lam (m_l - m_g)
    v = (r.m_liq - r.m_gas) / (r.rho_liq - r.rho_gas)
    assert r.band_speed == pytest.approx(v, rel=0.02)


# ---------------------------------------------------------------- sweeps


def test_mips_sweep_region():
    rhos = np.linspace(0.55, 0.95, 9)
    pes = np.linspace(2.0, 10.0, 9)
    grid = [{"rho0": float(r), "Pe": float(p)} for p in pes for r in rhos]
    pts = phase_diagram_sweep("MIPS_PECLET", grid)
    assert all(p.error is None for p in pts)
    unstable = np.array([p.verdict is Verdict.UNSTABLE for p in pts]).reshape(len(pes), len(rhos))
    assert not unstable[pes < 4].any()
    # agreement with the closed form away from the boundary
    for p in pts:
        pc = spinodal_mips_closed_form(p.params["rho0"])
        if pc is not None and abs(p.params["Pe"] - pc) > 1e-3:
            assert (p.verdict is Verdict.UNSTABLE) == (p.params["Pe"] > pc)
    # simply connected: flood fill from (0.75, 6) reaches every unstable cell
    start = (int(np.argmin(abs(pes - 6))), int(np.argmin(abs(rhos - 0.75))))
    assert unstable[start]
    seen, todo = {start}, [start]
    while todo:
        i, j = todo.pop()
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            n = (i + di, j + dj)
            if 0 <= n[0] < len(pes) and 0 <= n[1] < len(rhos) and unstable[n] and n not in seen:
                seen.add(n)
                todo.append(n)
    assert len(seen) == unstable.sum()


def test_flock_sweep_monotone_along_gaseous_branch():
    for beta in (0.5, 1.0, 2.0):
        grid = [{"rho0": float(r), "beta": beta} for r in np.linspace(0.05, 4.0, 40)]
        v = [p.verdict is Verdict.UNSTABLE for p in phase_diagram_sweep("FLOCK", grid)]
        assert v == sorted(v)


def test_sweep_records_point_errors():
    pts = phase_diagram_sweep("MIPS_PECLET", [{"rho0": 1.5, "Pe": 5.0}, {"rho0": 0.7, "Pe": 5.0}])
    assert pts[0].error is not None and pts[1].error is None
    assert pts[0].row()["error"]
