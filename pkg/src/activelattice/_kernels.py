"""Compiled event loops for the lattice dynamics.

Every kernel draws from an explicit xoshiro256+ state (four uint64 words,
updated in place), so a run is a pure function of its inputs and that state.

Site indexing is flat C-order over a (side,)*dim array; axis 0 is the drift
axis and has stride side**(dim-1).
"""

import math

import numpy as np
from numba import njit

RECOMPUTE_EVERY = 1 << 20

STATUS_OK = 0
STATUS_OVERFLOW = 1
STATUS_BAD_RATE = 2


_U53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def _next_u64(st):
    s0 = st[0]
    s1 = st[1]
    s2 = st[2]
    s3 = st[3]
    result = s0 + s3
    t = s1 << np.uint64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = (s3 << np.uint64(45)) | (s3 >> np.uint64(19))
    st[0] = s0
    st[1] = s1
    st[2] = s2
    st[3] = s3
    return result


@njit(cache=True, inline="always")
def _uniform(st):
    """Uniform double in [0, 1)."""
    return np.float64(_next_u64(st) >> np.uint64(11)) * _U53


@njit(cache=True, inline="always")
def _exponential(st, scale):
    return -math.log(1.0 - _uniform(st)) * scale


@njit(cache=True, inline="always")
def _nb(s, k, step, side, dim):
    """Neighbour of flat site s along axis k (dim <= 2), step = +/-1."""
    if dim == 1 or k == 1:
        c = s % side if dim == 2 else s
        if step == 1:
            return s + 1 if c != side - 1 else s + 1 - side
        return s - 1 if c != 0 else s - 1 + side
    n = side * side
    t = s + step * side
    if t >= n:
        return t - n
    if t < 0:
        return t + n
    return t


@njit(cache=True, inline="always")
def _edge_drift(x, state, side, swap, r_sym, r_act, H, inv_n):
    y = x + 1
    if y == side:
        y = 0
    a = state[x]
    b = state[y]
    px = 1.0 if a == 1 else 0.0
    py = 1.0 if b == 1 else 0.0
    ox = 1.0 if a != 0 else 0.0
    oy = 1.0 if b != 0 else 0.0
    if swap:
        sym = px - py
    else:
        sym = px * (1.0 - oy) - py * (1.0 - ox)
    act = px * (1.0 - oy)
    return (r_sym * sym + r_act * act) * (H[y] - H[x]) * inv_n


@njit(cache=True, inline="always")
def _site_drift(x, state, r_flip, H, inv_n):
    a = state[x]
    if a == 1:
        return -r_flip * H[x] * inv_n
    if a == -1:
        return r_flip * H[x] * inv_n
    return 0.0


@njit(cache=True)
def _full_drift(state, side, swap, r_sym, r_act, r_flip, H, inv_n, ce, cs):
    total = 0.0
    for x in range(side):
        ce[x] = _edge_drift(x, state, side, swap, r_sym, r_act, H, inv_n)
        cs[x] = _site_drift(x, state, r_flip, H, inv_n)
        total += ce[x] + cs[x]
    return total


@njit(cache=True)
def run_exclusion(
    state, side, dim, swap, r_sym, r_act, r_flip, duration, rng, n_proposals,
    js_plus, js_minus, ja_plus, ja_minus, flip_pm, flip_mp, accepted, H,
):
    """Advance an exclusion configuration by ``duration`` macroscopic time.

    Three constant-rate proposal classes: edge exchanges (r_sym per edge),
    active hops (r_act per site) and flips (r_flip per site). Proposals that
    are blocked or act on empty sites are rejected, which leaves the total
    proposal rate constant. Without a martingale tracker (``H`` empty) the
    caller supplies ``n_proposals``, a Poisson(total_rate * duration) draw,
    and the embedded jump chain is run for exactly that many steps.

    With ``H`` (1D only) the generator drift of X = N^-1 sum_x H(x/N) sigma^+_x
    is integrated along the path. ``accepted`` counts realised events per
    class (exchange, active hop, flip). Returns (n_proposals, drift_integral).
    """
    n = state.shape[0]
    r_s_tot = dim * n * r_sym
    r_a_tot = n * r_act
    total = r_s_tot + r_a_tot + n * r_flip
    if total <= 0.0 or duration <= 0.0:
        return 0, 0.0
    inv_sym = 1.0 / r_sym if r_sym > 0.0 else 0.0
    inv_act = 1.0 / r_act if r_act > 0.0 else 0.0
    inv_flip = 1.0 / r_flip if r_flip > 0.0 else 0.0
    n_edges = dim * n

    track = H.shape[0] > 0
    inv_n = 1.0 / side
    ce = np.zeros(side if track else 0)
    cs = np.zeros(side if track else 0)
    drift = 0.0
    if track:
        drift = _full_drift(state, side, swap, r_sym, r_act, r_flip, H, inv_n, ce, cs)
        k_events = np.int64(-1)
    else:
        k_events = np.int64(n_proposals)
    scale = 1.0 / total
    t = 0.0
    integral = 0.0
    count = np.int64(0)
    while True:
        if track:
            dt = _exponential(rng, scale)
            if t + dt > duration:
                integral += drift * (duration - t)
                break
            t += dt
            integral += drift * dt
        elif count >= k_events:
            break
        count += 1
        v = _uniform(rng) * total
        s1 = -1
        s2 = -1
        if v < r_s_tot:
            e = int(v * inv_sym)
            if e >= n_edges:
                e = n_edges - 1
            k = 0
            x = e
            if e >= n:
                k = 1
                x = e - n
            y = _nb(x, k, 1, side, dim)
            a = state[x]
            b = state[y]
            if a != b and (swap or a == 0 or b == 0):
                state[x] = b
                state[y] = a
                if a == 1:
                    js_plus[k, x] += 1
                elif a == -1:
                    js_minus[k, x] += 1
                if b == 1:
                    js_plus[k, x] -= 1
                elif b == -1:
                    js_minus[k, x] -= 1
                accepted[0] += 1
                s1 = x
                s2 = y
        elif v < r_s_tot + r_a_tot:
            x = int((v - r_s_tot) * inv_act)
            if x >= n:
                x = n - 1
            a = state[x]
            if a == 1:
                y = _nb(x, 0, 1, side, dim)
                if state[y] == 0:
                    state[y] = 1
                    state[x] = 0
                    ja_plus[x] += 1
                    accepted[1] += 1
                    s1 = x
                    s2 = y
            elif a == -1:
                y = _nb(x, 0, -1, side, dim)
                if state[y] == 0:
                    state[y] = -1
                    state[x] = 0
                    ja_minus[y] -= 1
                    accepted[1] += 1
                    s1 = x
                    s2 = y
        else:
            x = int((v - r_s_tot - r_a_tot) * inv_flip)
            if x >= n:
                x = n - 1
            a = state[x]
            if a != 0:
                state[x] = -a
                if a == 1:
                    flip_pm[x] += 1
                else:
                    flip_mp[x] += 1
                accepted[2] += 1
                s1 = x
        if track:
            if s1 >= 0:
                for site in (s1, s2):
                    if site < 0:
                        continue
                    for z in (site - 1 if site > 0 else side - 1, site):
                        new = _edge_drift(z, state, side, swap, r_sym, r_act, H, inv_n)
                        drift += new - ce[z]
                        ce[z] = new
                    new = _site_drift(site, state, r_flip, H, inv_n)
                    drift += new - cs[site]
                    cs[site] = new
            if count % RECOMPUTE_EVERY == 0:
                drift = _full_drift(state, side, swap, r_sym, r_act, r_flip, H, inv_n, ce, cs)
    return count, integral


@njit(cache=True, inline="always")
def _zr_site_rate(npl, nmi, beta, etab, kmax):
    d = npl - nmi
    if -kmax <= d <= kmax:
        return npl * etab[kmax - d] + nmi * etab[kmax + d]
    return npl * math.exp(-beta * d) + nmi * math.exp(beta * d)


@njit(cache=True)
def run_zero_range(
    pos, typ, n_plus, n_minus, side, r_sym, r_act, beta, duration, rng, bound,
    js_plus, js_minus, ja_plus, ja_minus, flip_pm, flip_mp, accepted,
):
    """Gillespie loop for the 1D active zero-range process.

    Every particle hops to each neighbour at r_sym and, in its own direction,
    at an extra r_act; a +/- particle flips at exp(-/+ beta (n+ - n-)) of its
    site. Particles are tracked individually so hops are selected in O(1);
    flips are selected from site-aggregated rates. Returns (n_events, status).
    """
    n_part = pos.shape[0]
    kmax = max(n_part, 1)
    etab = np.empty(2 * kmax + 1)
    for i in range(2 * kmax + 1):
        etab[i] = math.exp(beta * (i - kmax))
    fr = np.empty(side)
    r_flip_tot = 0.0
    for x in range(side):
        fr[x] = _zr_site_rate(np.int64(n_plus[x]), np.int64(n_minus[x]), beta, etab, kmax)
        r_flip_tot += fr[x]
    r_sym_tot = 2.0 * n_part * r_sym
    r_hop_tot = r_sym_tot + n_part * r_act
    t = 0.0
    count = 0
    while True:
        total = r_hop_tot + r_flip_tot
        if total <= 0.0 or duration <= 0.0:
            break
        if not np.isfinite(total):
            return count, STATUS_BAD_RATE
        t += _exponential(rng, 1.0 / total)
        if t > duration:
            break
        v = _uniform(rng) * total
        count += 1
        if v < r_hop_tot:
            if v < r_sym_tot:
                idx = int(v / r_sym)
                if idx >= 2 * n_part:
                    idx = 2 * n_part - 1
                p = idx >> 1
                step = 1 if (idx & 1) else -1
                sym = True
                accepted[0] += 1
            else:
                p = int((v - r_sym_tot) / r_act)
                if p >= n_part:
                    p = n_part - 1
                step = int(typ[p])
                sym = False
                accepted[1] += 1
            x = pos[p]
            y = x + step
            if y == side:
                y = 0
            elif y < 0:
                y = side - 1
            e = x if step == 1 else y
            if typ[p] == 1:
                n_plus[x] -= 1
                n_plus[y] += 1
                if n_plus[y] > bound:
                    return count, STATUS_OVERFLOW
                if sym:
                    js_plus[e] += step
                else:
                    ja_plus[e] += step
            else:
                n_minus[x] -= 1
                n_minus[y] += 1
                if n_minus[y] > bound:
                    return count, STATUS_OVERFLOW
                if sym:
                    js_minus[e] += step
                else:
                    ja_minus[e] += step
            pos[p] = y
            for z in (x, y):
                new = _zr_site_rate(np.int64(n_plus[z]), np.int64(n_minus[z]), beta, etab, kmax)
                r_flip_tot += new - fr[z]
                fr[z] = new
        else:
            w = v - r_hop_tot
            acc = 0.0
            x = -1
            for i in range(side):
                if fr[i] > 0.0:
                    x = i
                    acc += fr[i]
                    if acc > w:
                        break
            if x < 0:
                continue
            d = np.int64(n_plus[x]) - np.int64(n_minus[x])
            rate_plus = n_plus[x] * math.exp(-beta * d)
            flip_type = 1 if _uniform(rng) * fr[x] < rate_plus else -1
            if flip_type == 1 and n_plus[x] == 0:
                flip_type = -1
            elif flip_type == -1 and n_minus[x] == 0:
                flip_type = 1
            accepted[2] += 1
            for p in range(n_part):
                if pos[p] == x and typ[p] == flip_type:
                    typ[p] = -flip_type
                    break
            if flip_type == 1:
                n_plus[x] -= 1
                n_minus[x] += 1
                flip_pm[x] += 1
                if n_minus[x] > bound:
                    return count, STATUS_OVERFLOW
            else:
                n_minus[x] -= 1
                n_plus[x] += 1
                flip_mp[x] += 1
                if n_plus[x] > bound:
                    return count, STATUS_OVERFLOW
            r_flip_tot = 0.0
            for i in range(side):
                if i == x:
                    fr[i] = _zr_site_rate(
                        np.int64(n_plus[i]), np.int64(n_minus[i]), beta, etab, kmax
                    )
                r_flip_tot += fr[i]
        if count % RECOMPUTE_EVERY == 0:
            r_flip_tot = 0.0
            for i in range(side):
                r_flip_tot += fr[i]
    return count, STATUS_OK


@njit(cache=True)
def run_tagged(occ, pos, disp, side, dim, counts, rng, msd_out):
    """Type-blind exclusion at unit rate per direction, tracking every particle.

    ``counts[j]`` is the number of proposals (Poisson with mean
    2 * dim * n_particles * interval) before sample j; ``disp`` accumulates
    unwrapped displacements and ``msd_out[j]`` receives the particle-averaged
    squared displacement at sample j.
    """
    n_part = pos.shape[0]
    n_dir = 2 * dim
    total = float(n_dir * n_part)
    for j in range(counts.shape[0]):
        if n_part > 0:
            for _ in range(counts[j]):
                idx = int(_uniform(rng) * total)
                if idx >= n_dir * n_part:
                    idx = n_dir * n_part - 1
                p = idx // n_dir
                r = idx - p * n_dir
                k = r >> 1
                step = 1 if (r & 1) else -1
                s = pos[p]
                t = _nb(s, k, step, side, dim)
                if occ[t] < 0:
                    occ[t] = p
                    occ[s] = -1
                    pos[p] = t
                    disp[p, k] += step
        acc = 0.0
        for p in range(n_part):
            for k in range(dim):
                acc += disp[p, k] * disp[p, k]
        msd_out[j] = acc / n_part if n_part > 0 else 0.0
