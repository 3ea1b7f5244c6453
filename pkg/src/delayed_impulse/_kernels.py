"""Compiled inner loops for the pseudo-time iterations.

These mirror the vectorized single-step implementations in :mod:`hjbe` and
:mod:`fpe` exactly (same formulas, same evaluation order up to rounding) and
exist only because the stationary solves need up to millions of steps.
"""

from __future__ import annotations

import numpy as np
from numba import njit

WENO_EPS = 1e-6


@njit(cache=True)
def _interp_row(f, j, s, edge):
    if edge:
        return (1.0 - s) * f[j] + s * f[j + 1]
    fm = f[j - 1]
    f0 = f[j]
    f1 = f[j + 1]
    f2 = f[j + 2]
    bl = 0.5 * (f1 - 2.0 * f0 + fm)
    al = 0.5 * (f1 - fm)
    br = 0.5 * (f2 - 2.0 * f1 + f0)
    ar = (f1 - f0) - br
    isl = al * al + 2.0 * al * bl + (16.0 / 3.0) * bl * bl
    isr = ar * ar + 2.0 * ar * br + (16.0 / 3.0) * br * br
    wl = ((2.0 - s) / 3.0) / (WENO_EPS + isl) ** 2
    wr = ((1.0 + s) / 3.0) / (WENO_EPS + isr) ** 2
    pl = f0 + al * s + bl * s * s
    pr = f0 + ar * s + br * s * s
    return (wl * pl + wr * pr) / (wl + wr)


@njit(cache=True)
def hjbe_iterate(phi, hat, j, s, edge, nu, exit_rates, cost, delta, lam, mu, dt, tol, max_iter, record_every):
    """Iterate the explicit semi-Lagrangian step until the change is <= tol.

    Returns ``(phi, hat, iterations, history, converged)``.
    """
    R, N = phi.shape
    new_phi = np.empty_like(phi)
    new_hat = np.empty_like(hat)
    n_hist = max_iter // record_every + 1
    history = np.empty(min(n_hist, 1_000_000))
    h = 0
    switching = False
    for a in range(R):
        for b in range(R):
            if nu[a, b] > 0.0:
                switching = True
    it = 0
    change = np.inf
    while it < max_iter:
        it += 1
        change = 0.0
        for i in range(R):
            end_phi = phi[i, N - 1]
            for l in range(N):
                p = phi[i, l]
                q = hat[i, l]
                cp = 0.0
                cq = 0.0
                if switching:
                    cp = exit_rates[i] * p
                    cq = exit_rates[i] * q
                    for k in range(R):
                        if nu[i, k] != 0.0:
                            cp -= nu[i, k] * phi[k, l]
                            cq -= nu[i, k] * hat[k, l]
                src = 1.0 if l == 0 else 0.0
                low = p if p < q else q
                fp = _interp_row(phi[i], j[i, l], s[i, l], edge[i, l])
                fq = _interp_row(hat[i], j[i, l], s[i, l], edge[i, l])
                np_ = fp - dt * (delta * p + cp + lam * (p - low) - src)
                nq = fq - dt * ((mu + delta) * q + cq - src - cost[l] - mu * end_phi)
                new_phi[i, l] = np_
                new_hat[i, l] = nq
                d1 = abs(np_ - p)
                d2 = abs(nq - q)
                if d1 > change:
                    change = d1
                if d2 > change:
                    change = d2
                if not (d1 == d1 and d2 == d2):
                    change = np.nan
        phi, new_phi = new_phi, phi
        hat, new_hat = new_hat, hat
        if it % record_every == 0 and h < history.size:
            history[h] = change
            h += 1
        if not (change == change) or change == np.inf:
            return phi, hat, it, history[:h], False
        if change <= tol:
            return phi, hat, it, history[:h], True
    return phi, hat, it, history[:h], False


@njit(cache=True)
def _interface_value(p, l, L, weno):
    # value carried through interface l (between cells l and l+1), flow to the left
    if weno and 1 <= l <= L - 2:
        pl = p[l]
        pc = p[l + 1]
        pr = p[l + 2]
        qc = 0.5 * (pl + pc)
        qu = 1.5 * pc - 0.5 * pr
        wc = (2.0 / 3.0) / (WENO_EPS + (pc - pl) ** 2) ** 2
        wu = (1.0 / 3.0) / (WENO_EPS + (pr - pc) ** 2) ** 2
        v = (wc * qc + wu * qu) / (wc + wu)
        # positivity cap: never carry more than twice the upwind cell value
        if v < 0.0:
            return 0.0
        if v > 2.0 * pc:
            return 2.0 * pc
        return v
    return p[l + 1]


@njit(cache=True)
def fpe_step_into(pn, pw, out_n, out_w, active, speed_face, sizes, nu, exit_rates, lam, mu, dt, weno):
    """One conservative explicit step; writes into ``out_n``/``out_w``."""
    R, N = pn.shape
    L = N - 1
    for i in range(R):
        cw = 0.0
        for l in range(N):
            cw += sizes[l] * pw[i, l]
        flux_prev_n = 0.0
        flux_prev_w = 0.0
        for l in range(N):
            if l < L:
                fn = -speed_face[i, l] * _interface_value(pn[i], l, L, weno)
                fw = -speed_face[i, l] * _interface_value(pw[i], l, L, weno)
            else:
                fn = 0.0
                fw = 0.0
            a = active[i, l]
            inflow_n = 0.0
            inflow_w = 0.0
            for k in range(R):
                if nu[k, i] != 0.0:
                    inflow_n += nu[k, i] * pn[k, l]
                    inflow_w += nu[k, i] * pw[k, l]
            rn = (fn - flux_prev_n) / sizes[l] + exit_rates[i] * pn[i, l] - inflow_n
            rw = (fw - flux_prev_w) / sizes[l] + (mu + exit_rates[i]) * pw[i, l] - inflow_w
            if a:
                rn += lam * pn[i, l]
                rw -= lam * pn[i, l]
            if l == L:
                rn -= mu * cw / sizes[L]
            out_n[i, l] = pn[i, l] - dt * rn
            out_w[i, l] = pw[i, l] - dt * rw
            flux_prev_n = fn
            flux_prev_w = fw


@njit(cache=True)
def _mass(pn, pw, sizes):
    # Neumaier summation keeps the audit below the 1e-14 conservation tolerance
    R, N = pn.shape
    total = 0.0
    comp = 0.0
    for i in range(R):
        for l in range(N):
            for v in (sizes[l] * pn[i, l], sizes[l] * pw[i, l]):
                t = total + v
                if abs(total) >= abs(v):
                    comp += (total - t) + v
                else:
                    comp += (v - t) + total
                total = t
    return total + comp


@njit(cache=True)
def fpe_iterate(pn, pw, active, speed_face, sizes, nu, exit_rates, lam, mu, dt, weno, tol, max_iter, record_every):
    """Iterate :func:`fpe_step_into` until the max-norm change is <= tol.

    Returns ``(pn, pw, iterations, history, status, worst_step_drift, min_value)``
    where ``status`` is 0 converged, 1 cap reached, 2 non-finite, and
    ``worst_step_drift`` is the largest change of total mass over one step.
    """
    R, N = pn.shape
    on = np.empty_like(pn)
    ow = np.empty_like(pw)
    n_hist = max_iter // record_every + 1
    history = np.empty(min(n_hist, 1_000_000))
    h = 0
    mass0 = _mass(pn, pw, sizes)
    drift = 0.0
    min_value = np.inf
    it = 0
    while it < max_iter:
        it += 1
        fpe_step_into(pn, pw, on, ow, active, speed_face, sizes, nu, exit_rates, lam, mu, dt, weno)
        change = 0.0
        for i in range(R):
            for l in range(N):
                d1 = abs(on[i, l] - pn[i, l])
                d2 = abs(ow[i, l] - pw[i, l])
                if d1 > change:
                    change = d1
                if d2 > change:
                    change = d2
                if on[i, l] < min_value:
                    min_value = on[i, l]
                if ow[i, l] < min_value:
                    min_value = ow[i, l]
        mass = _mass(on, ow, sizes)
        d = abs(mass - mass0)
        if d > drift:
            drift = d
        mass0 = mass
        pn, on = on, pn
        pw, ow = ow, pw
        if it % record_every == 0 and h < history.size:
            history[h] = change
            h += 1
        if not (change == change) or change == np.inf:
            return pn, pw, it, history[:h], 2, drift, min_value
        if change <= tol:
            return pn, pw, it, history[:h], 0, drift, min_value
    return pn, pw, it, history[:h], 1, drift, min_value


# --- Monte-Carlo paths -------------------------------------------------------
#
# Paths are advanced from event to event.  Event times (observations, delays,
# regime jumps, inspections) are drawn exactly; the drift between events is
# exact for constant speeds and forward Euler with step ``dt`` otherwise.


@njit(cache=True)
def _speed_at(i, x, speeds, table_x, table_s, use_table):
    if x <= 0.0:
        return 0.0
    if not use_table:
        return speeds[i]
    return np.interp(x, table_x, table_s[i])


@njit(cache=True)
def _drift(x, i, tau, speeds, table_x, table_s, use_table, dt, delta):
    """Advance ``x`` over ``tau``; also return the discounted time spent at 0.

    The discount integral is relative to the start of the interval; callers
    multiply by ``exp(-delta t0)``.
    """
    zero_time = 0.0
    if tau <= 0.0:
        return x, zero_time
    if not use_table:
        s = speeds[i]
        if x <= 0.0:
            hit = 0.0
        elif s > 0.0:
            hit = x / s
        else:
            hit = np.inf
        if hit < tau:
            zero_time = (np.exp(-delta * hit) - np.exp(-delta * tau)) / delta if delta > 0 else tau - hit
            return 0.0, zero_time
        return x - s * tau, zero_time
    elapsed = 0.0
    while elapsed < tau:
        h = min(dt, tau - elapsed)
        if x <= 0.0:
            zero_time += (np.exp(-delta * elapsed) - np.exp(-delta * (elapsed + h))) / delta if delta > 0 else h
        else:
            x = max(0.0, x - _speed_at(i, x, speeds, table_x, table_s, use_table) * h)
        elapsed += h
    return x, zero_time


@njit(cache=True)
def _decide(i, x, thresholds, prefix, activation):
    if prefix[i]:
        return x <= thresholds[i]
    La = activation.shape[1] - 1
    k = int(np.rint(x * La))
    k = min(max(k, 0), La)
    return activation[i, k]


@njit(cache=True)
def _exp(rate):
    if rate <= 0.0:
        return np.inf
    return np.random.exponential(1.0 / rate)


@njit(cache=True)
def _jump(i, nu, exit_rates):
    u = np.random.random() * exit_rates[i]
    acc = 0.0
    R = nu.shape[0]
    last = i
    for k in range(R):
        if k == i or nu[i, k] <= 0.0:
            continue
        acc += nu[i, k]
        last = k
        if u < acc:
            return k
    return last


@njit(cache=True)
def _pick(cdf):
    u = np.random.random()
    for k in range(cdf.size):
        if u < cdf[k]:
            return k
    return cdf.size - 1


@njit(cache=True)
def mc_stationary_chunk(
    n_paths, seed, start_cdf, speeds, table_x, table_s, use_table, dt, nu, exit_rates, lam, mu,
    thresholds, prefix, activation, horizon, burn_in, inspection_rate, n_bins,
):
    """Inspect ``n_paths`` paths at Poisson times in ``[burn_in, horizon]``.

    Returns ``(hist, atom0, atom1, n_inspections)`` where ``hist`` has shape
    ``(R, 2, n_bins)`` for the continuous part in ``(0, 1)`` and the atoms
    have shape ``(R, 2)``; the middle axis is the phase (0 non-waiting, 1 waiting).
    """
    np.random.seed(seed)
    R = nu.shape[0]
    hist = np.zeros((R, 2, n_bins), dtype=np.int64)
    atom0 = np.zeros((R, 2), dtype=np.int64)
    atom1 = np.zeros((R, 2), dtype=np.int64)
    count = 0
    for _ in range(n_paths):
        i = _pick(start_cdf)
        x = 1.0
        waiting = False
        t = 0.0
        t_clock = _exp(lam)
        t_jump = _exp(exit_rates[i])
        t_insp = burn_in + _exp(inspection_rate)
        while True:
            te = min(t_clock, t_jump, t_insp, horizon)
            x, _z = _drift(x, i, te - t, speeds, table_x, table_s, use_table, dt, 0.0)
            t = te
            if te == t_insp:
                ph = 1 if waiting else 0
                if x <= 0.0:
                    atom0[i, ph] += 1
                elif x >= 1.0:
                    atom1[i, ph] += 1
                else:
                    b = min(int(x * n_bins), n_bins - 1)
                    hist[i, ph, b] += 1
                count += 1
                t_insp = te + _exp(inspection_rate)
            elif te == t_jump:
                i = _jump(i, nu, exit_rates)
                t_jump = te + _exp(exit_rates[i])
            elif te == t_clock:
                if waiting:
                    x = 1.0
                    waiting = False
                    t_clock = te + _exp(lam)
                elif _decide(i, x, thresholds, prefix, activation):
                    waiting = True
                    t_clock = te + _exp(mu)
                else:
                    t_clock = te + _exp(lam)
            else:
                break
    return hist, atom0, atom1, count


@njit(cache=True)
def mc_cost_chunk(
    n_paths, seed, regime0, x0, speeds, table_x, table_s, use_table, dt, nu, exit_rates, lam, mu,
    delta, c, d, thresholds, prefix, activation, horizon,
):
    """Discounted cost of ``n_paths`` paths started non-waiting at ``(regime0, x0)``."""
    np.random.seed(seed)
    out = np.empty(n_paths)
    for p in range(n_paths):
        i = regime0
        x = x0
        waiting = False
        t = 0.0
        total = 0.0
        t_clock = _exp(lam)
        t_jump = _exp(exit_rates[i])
        while True:
            te = min(t_clock, t_jump, horizon)
            x, z = _drift(x, i, te - t, speeds, table_x, table_s, use_table, dt, delta)
            total += np.exp(-delta * t) * z
            t = te
            if te == t_jump:
                i = _jump(i, nu, exit_rates)
                t_jump = te + _exp(exit_rates[i])
            elif te == t_clock:
                if waiting:
                    eta = 1.0 - x
                    if eta > 0.0:
                        total += np.exp(-delta * te) * (c * eta + d)
                    x = 1.0
                    waiting = False
                    t_clock = te + _exp(lam)
                elif _decide(i, x, thresholds, prefix, activation):
                    waiting = True
                    t_clock = te + _exp(mu)
                else:
                    t_clock = te + _exp(lam)
            else:
                break
        out[p] = total
    return out
