"""Compiled explicit-Euler stepping for the hydrodynamic systems.

Fields are stored as (M0, M1) arrays, M1 = 1 in one dimension; axis 0 is
the drift direction. Face i carries the flux between cells i and i + 1.
"""

import math

import numpy as np
from numba import njit

CENTRAL, UPWIND, HYBRID = 0, 1, 2
MIPS, FLOCK = 0, 1
BOUND_TOL = 1e-12


@njit(cache=True, inline="always")
def _signed_exp(c, a):
    if c == 0.0:
        return 0.0
    return math.copysign(math.exp(math.log(abs(c)) + a), c)


@njit(cache=True)
def flock_F(rho, m, beta):
    s = math.sinh(beta)
    c = -beta + rho * (math.cosh(beta) - 1.0)
    return 0.5 * (_signed_exp(m - rho, m * s + c) + _signed_exp(m + rho, -m * s + c))


@njit(cache=True)
def advance(rho, m, n_steps, dt, du, D, lam, gamma, beta, scheme, model, upper):
    """Run ``n_steps`` explicit steps in place.

    Returns (steps_done, bad_flat_index); bad index -1 means every state
    stayed in the admissible set (rho >= 0, |m| <= rho, rho <= upper if upper > 0).
    """
    M0, M1 = rho.shape
    fr = np.empty((M0, M1))
    fm = np.empty((M0, M1))
    gr = np.empty((M0, M1))
    gm = np.empty((M0, M1))
    inv = 1.0 / du
    for n in range(n_steps):
        for i in range(M0):
            ip = i + 1 if i + 1 < M0 else 0
            for j in range(M1):
                r0 = rho[i, j]
                r1 = rho[ip, j]
                p0 = 0.5 * (r0 + m[i, j])
                p1 = 0.5 * (r1 + m[ip, j])
                q0 = 0.5 * (r0 - m[i, j])
                q1 = 0.5 * (r1 - m[ip, j])
                if model == MIPS:
                    up_p = lam * p0 * (1.0 - r1)
                    up_m = -lam * q1 * (1.0 - r0)
                    c_p = 0.5 * lam * (p0 * (1.0 - r0) + p1 * (1.0 - r1))
                    c_m = -0.5 * lam * (q0 * (1.0 - r0) + q1 * (1.0 - r1))
                    speed = abs(lam * (1.0 - 0.5 * (r0 + r1)))
                else:
                    up_p = lam * p0
                    up_m = -lam * q1
                    c_p = 0.5 * lam * (p0 + p1)
                    c_m = -0.5 * lam * (q0 + q1)
                    speed = abs(lam)
                use_up = scheme == UPWIND or (scheme == HYBRID and speed * du / D > 2.0)
                if use_up:
                    jp = up_p
                    jm = up_m
                else:
                    jp = c_p
                    jm = c_m
                fr[i, j] = jp + jm - D * (r1 - r0) * inv
                fm[i, j] = jp - jm - D * (m[ip, j] - m[i, j]) * inv
                if M1 > 1:
                    jq = j + 1 if j + 1 < M1 else 0
                    gr[i, j] = -D * (rho[i, jq] - r0) * inv
                    gm[i, j] = -D * (m[i, jq] - m[i, j]) * inv
        for i in range(M0):
            im = i - 1 if i > 0 else M0 - 1
            for j in range(M1):
                dr = fr[i, j] - fr[im, j]
                dm = fm[i, j] - fm[im, j]
                if M1 > 1:
                    jm_ = j - 1 if j > 0 else M1 - 1
                    dr += gr[i, j] - gr[i, jm_]
                    dm += gm[i, j] - gm[i, jm_]
                if model == MIPS:
                    react = 2.0 * gamma * m[i, j]
                else:
                    react = 2.0 * flock_F(rho[i, j], m[i, j], beta)
                # fluxes already hold the old state, so in-place update is safe
                rho[i, j] -= dt * inv * dr
                m[i, j] -= dt * inv * dm + dt * react
        for i in range(M0):
            for j in range(M1):
                r = rho[i, j]
                if r < -BOUND_TOL or abs(m[i, j]) > r + BOUND_TOL or (upper > 0.0 and r > upper + BOUND_TOL):
                    return n + 1, i * M1 + j
                if not (r == r):
                    return n + 1, i * M1 + j
    return n_steps, -1
