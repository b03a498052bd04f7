import math

import numpy as np
import pytest

from activelattice.errors import AmplitudeDomain, StepRejected
from activelattice.hydro import HydroState, PDEConfig, solve
from activelattice.lattice import RngStream
from activelattice.spde import (
    FluctState,
    NoiseMode,
    SPDEConfig,
    ViolationCounter,
    evolve_fluct,
    flat_equilibrium_variance,
    mode_covariance,
    sample_noise,
    sine_mode_variance,
    solve_fluctuating,
    stationary_spatial_variance,
    step_fluct,
    step_fluctuating_hydro,
)

# ---------------------------------------------------------------- noise


def test_noise_vanishes_at_empty_and_packed(rng):
    for r in (0.0, 1.0):
        nz = sample_noise(16, 0.1, 1e-3, rng, r, r, 1.0, 1.0)
        assert np.all(nz.w_R == 0) and np.all(nz.w_M == 0)


def test_noise_domain(rng):
    with pytest.raises(AmplitudeDomain):
        sample_noise(8, 0.1, 1e-3, rng, 1.2, 0.0, 1.0, 1.0)
    with pytest.raises(AmplitudeDomain):
        sample_noise(8, 0.1, 1e-3, rng, 0.2, -0.1, 1.0, 1.0)


def test_noise_variance_and_covariance(rng):
    du, dt, D = 0.05, 1e-4, 1.3
    n = 100_000
    rp = rm = 0.2
    nz = sample_noise(1, du, dt, rng, rp, rm, D, 2.0, batch=(n,))
    wr, wm, b = nz.w_R[:, 0], nz.w_M[:, 0], nz.b[:, 0]
    expected = (2 * D * rp * (1 - rp) + 2 * D * rm * (1 - rm)) / (du * dt)
    # variance of a Gaussian sample variance: 2 sigma^4 / (n - 1)
    assert abs(wr.var() - expected) <= 3 * expected * math.sqrt(2 / (n - 1))
    # equal amplitudes: R and M drives are uncorrelated
    se = expected / math.sqrt(n)
    assert abs(np.mean(wr * wm)) <= 3 * se
    # the three unit noises are independent
    s2 = 1 / (du * dt)
    for x, y in ((nz.w_plus, nz.w_minus), (nz.w_plus, nz.b), (nz.w_minus, nz.b)):
        assert abs(np.mean(x * y)) <= 3 * s2 / math.sqrt(n)
    assert abs(b.var() - s2) <= 3 * s2 * math.sqrt(2 / (n - 1))


# ---------------------------------------------------------------- linear equations


def _flat(M, rho=0.2, m=0.0):
    return HydroState.uniform(M, rho, m)


def test_zero_stays_zero():
    cfg = SPDEConfig(M=32, lam=1.0, gamma=1.0)
    st = FluctState.zeros(_flat(32))
    for _ in range(10):
        st = step_fluct(st, cfg)
    assert not st.R.any() and not st.M.any()


def test_linearity_with_shared_noise(rng):
    cfg = SPDEConfig(M=32, lam=1.5, gamma=0.7)
    bg = _flat(32, 0.3, 0.1)
    g = np.random.default_rng(3)
    X = FluctState(g.standard_normal(32), g.standard_normal(32), bg.rho, bg.m)
    aX = FluctState(2.5 * X.R, 2.5 * X.M, bg.rho, bg.m)
    nz = sample_noise(32, cfg.du, cfg.dt, rng, X.rho_plus, X.rho_minus, cfg.D, cfg.gamma, at_faces=True)
    zero = FluctState.zeros(bg)
    a, b, c = step_fluct(X, cfg, noise=nz), step_fluct(aX, cfg, noise=nz), step_fluct(zero, cfg, noise=nz)
    np.testing.assert_allclose(b.R - c.R, 2.5 * (a.R - c.R), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(b.M - c.M, 2.5 * (a.M - c.M), rtol=1e-12, atol=1e-12)
    # without noise the step is exactly linear
    np.testing.assert_allclose(step_fluct(aX, cfg).R, 2.5 * step_fluct(X, cfg).R, rtol=1e-12, atol=1e-12)


def test_conservative_mode_conserves_integral(rng):
    cfg = SPDEConfig(M=40, lam=1.0, gamma=1.0)
    bg = HydroState(0.3 + 0.1 * np.sin(2 * np.pi * np.arange(40) / 40), np.zeros(40))
    st = FluctState.zeros(bg)
    st.R[:] = np.random.default_rng(0).standard_normal(40)
    total = st.R.sum()
    for _ in range(200):
        st = step_fluct(st, cfg, rng)
        assert abs(st.R.sum() - total) <= 1e-9 * max(1.0, np.abs(st.R).sum())


def test_mean_mode_discriminates_noise_readings(rng):
    # lam = gamma = 0, flat background: Var(int R) grows like t only for additive noise
    bg = _flat(16, 0.4)
    out = {}
    for mode in NoiseMode:
        cfg = SPDEConfig(M=16, lam=0.0, gamma=0.0, noise_mode=mode)
        st = FluctState.zeros(bg, batch=(400,))
        vals = []
        for T in (0.05, 0.1):
            st, _ = evolve_fluct(st, cfg, 0.05, rng)
            vals.append(np.var(st.R.sum(axis=-1) * cfg.du))
        out[mode] = (vals, st.t)
    cons, _ = out[NoiseMode.CONSERVATIVE]
    add, t = out[NoiseMode.ADDITIVE]
    assert max(cons) < 1e-20
    chi = 2 * 2 * 0.2 * 0.8  # two species, amplitude 2 D rho(1 - rho) each
    assert add[1] / add[0] == pytest.approx(2.0, rel=0.3)
    assert add[1] == pytest.approx(chi * t, rel=0.2)


def test_discrete_prediction_approaches_continuum():
    # explicit Euler inflates the stationary variance of stiff modes; a small step removes the bias
    cfg = SPDEConfig(M=128, lam=0.0, gamma=1.0, safety=0.02)
    vR, _ = stationary_spatial_variance(cfg, 0.2)
    assert vR == pytest.approx(flat_equilibrium_variance(0.1, 0.1), rel=0.1)
    assert sine_mode_variance(cfg, 0.2) == pytest.approx(0.09, rel=0.01)


def test_unstable_background_rejected():
    cfg = SPDEConfig(M=64, lam=30.0, gamma=1.0)
    with pytest.raises(StepRejected):
        stationary_spatial_variance(cfg, 0.75)


def test_stationary_variance_lambda_zero(rng):
    cfg = SPDEConfig(M=32, lam=0.0, gamma=1.0)
    bg = _flat(32, 0.2)
    st = FluctState.zeros(bg, batch=(64,))
    st, _ = evolve_fluct(st, cfg, 0.3, rng)
    vals = []
    for _ in range(60):
        st, _ = evolve_fluct(st, cfg, 0.01, rng)
        vals.append(cfg.du * np.mean(st.R**2))
    predicted = stationary_spatial_variance(cfg, 0.2)[0]
    assert np.mean(vals) == pytest.approx(predicted, rel=0.05)
    assert predicted == pytest.approx(flat_equilibrium_variance(0.1, 0.1), rel=0.1)


def test_mode_covariance_zero_mode():
    c = mode_covariance(SPDEConfig(M=16, gamma=1.0), 0.2, 0.0, 0)
    assert c[0, 0] == 0
    a = mode_covariance(SPDEConfig(M=16, gamma=1.0, noise_mode="additive"), 0.2, 0.0, 0)
    assert np.isinf(a[0, 0].real)


def test_cfl_breach():
    cfg = SPDEConfig(M=32, dt=1.0)
    with pytest.raises(StepRejected):
        step_fluct(FluctState.zeros(_flat(32)), cfg)


def test_moving_background_follows_hydro(rng):
    M = 32
    u = np.arange(M) / M
    bg = HydroState(0.3 + 0.05 * np.sin(2 * np.pi * u), np.zeros(M))
    cfg = SPDEConfig(M=M, lam=1.0, gamma=1.0)
    hcfg = PDEConfig("mips", M=M, lam=1.0, gamma=1.0)
    st, _ = evolve_fluct(FluctState.zeros(bg), cfg, 0.01, rng, background_cfg=hcfg)
    ref = solve(bg, PDEConfig("mips", M=M, lam=1.0, gamma=1.0, dt=cfg.dt), st.t)[-1]
    np.testing.assert_allclose(st.rho, ref.rho, atol=1e-12)


# ---------------------------------------------------------------- nonlinear fluctuating hydrodynamics


def _mips_cfg(M=50, lam=1.0, gamma=1.0):
    return PDEConfig("mips", M=M, D=1.0, lam=lam, gamma=gamma)


def test_large_N_converges_to_hydro():
    M = 50
    u = np.arange(M) / M
    init = HydroState(0.5 + 0.1 * np.sin(2 * np.pi * u), 0.1 * np.cos(2 * np.pi * u))
    cfg = _mips_cfg(M)
    ref = solve(init, cfg, 0.5)[-1]
    dist = []
    for i, N in enumerate((10**3, 10**4, 10**5)):
        st, counter = solve_fluctuating(init, cfg, N, 0.5, RngStream(100 + i))
        dist.append(np.mean(np.abs(st.rho - ref.rho)) + np.mean(np.abs(st.m - ref.m)))
        assert N < 10**4 or not counter.unreliable
    assert dist[0] > dist[1] > dist[2]


def test_clt_scaling_of_fluctuations():
    M = 50
    init = HydroState.uniform(M, 0.3, 0.0)
    cfg = _mips_cfg(M)
    sd = []
    for i, N in enumerate((10**4, 10**5)):
        st, _ = solve_fluctuating(init, cfg, N, 0.2, RngStream(7 + i))
        sd.append(np.std(st.rho))
    ratio = sd[0] / sd[1]
    assert math.sqrt(10) / 2 <= ratio <= 2 * math.sqrt(10)


def _m_mode_variance(gamma, flip_noise, seeds=20):
    """Var of the projection of m on sin(2 pi u), sampled every 0.1 over t in (0.2, 2]."""
    M = 20
    u = np.arange(M) / M
    H = np.sin(2 * np.pi * u)
    cfg = _mips_cfg(M, lam=0.0, gamma=gamma)
    proj = []
    for s in range(seeds):
        st, r = HydroState.uniform(M, 0.4, 0.0), RngStream(s)
        st, _ = solve_fluctuating(st, cfg, 10**4, 0.2, r, flip_noise=flip_noise)
        for _ in range(18):
            st, _ = solve_fluctuating(st, cfg, 10**4, 0.1, r, flip_noise=flip_noise)
            proj.append(np.mean(H * st.m))
    return np.var(proj)


def test_flips_damp_transport_noise_in_m():
    # linear theory for the first mode: variance ratio q^2 / (q^2 + 2 gamma) = 0.66
    ratio = _m_mode_variance(10.0, False) / _m_mode_variance(0.1, False)
    assert ratio < 0.9


def test_flip_noise_balances_flip_damping():
    # additive sqrt(2 gamma) B against -2 gamma M saturates at a gamma-independent
    # level above the transport one, so strong flips raise the total m variance
    assert _m_mode_variance(10.0, True) > _m_mode_variance(0.1, True)


def test_clamping_counts_violations():
    M = 20
    init = HydroState.uniform(M, 0.02, 0.0)
    counter = ViolationCounter()
    st = init
    cfg = _mips_cfg(M)
    r = RngStream(5)
    for _ in range(50):
        st = step_fluctuating_hydro(st, 1, cfg, r, counter=counter)
    assert counter.clamped > 0 and counter.unreliable
    assert (st.rho_plus >= 0).all() and (st.rho_minus >= 0).all() and (st.rho <= 1 + 1e-12).all()
