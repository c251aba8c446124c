"""Compiled simulation loops.

All loops share one time grid rule: a path stops at every multiple of
``dt`` (computed as ``k * dt``), at each of its jump times, at each
observation time and at the horizon. Between stops the effective drift is
integrated with one Runge-Kutta step. At a jump time the step lands exactly
on the jump, then ``x <- x + c(x, u)`` is applied.

Jump ``k`` of a path uses stream slots ``k * S .. k * S + S - 1`` with
``S = draws_per_jump(d)``: slot 0 is the exponential spacing before the
jump, slot 1 picks atom versus diffuse part, slot 2 the radius, slot 3 a
listed direction and the remaining slots feed Box-Muller normals.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import jit
from .models import eff_drift_jac_into, eff_drift_into, jump_into, jump_jac_into, rk4_step
from .rng import uniform_at


@jit(no_alloc=True)
def draw_mark(key, k, slots, rate, atom_marks, atom_cum, atom_total, diff, dir_vecs, dir_cum, u_out):
    d = u_out.shape[0]
    base = np.uint64(k) * np.uint64(slots)
    w = uniform_at(key, base + np.uint64(1)) * rate
    n_atoms = atom_cum.shape[0]
    if w < atom_total and n_atoms > 0:
        j = 0
        while j < n_atoms - 1 and atom_cum[j] <= w:
            j += 1
        for i in range(d):
            u_out[i] = atom_marks[j, i]
        return
    v = uniform_at(key, base + np.uint64(2))
    e = diff[2]
    a = diff[3]
    b = diff[4]
    if abs(e - 1.0) < 1e-12:
        rho = a * (b / a) ** v
    else:
        lo = a ** (1.0 - e)
        hi = 0.0 if math.isinf(b) else b ** (1.0 - e)
        rho = (lo + v * (hi - lo)) ** (1.0 / (1.0 - e))
    if diff[5] == 0.0:
        nrm = 0.0
        for j in range((d + 1) // 2):
            u0 = uniform_at(key, base + np.uint64(4 + 2 * j))
            u1 = uniform_at(key, base + np.uint64(5 + 2 * j))
            r = math.sqrt(-2.0 * math.log(u0))
            ang = 2.0 * math.pi * u1
            u_out[2 * j] = r * math.cos(ang)
            if 2 * j + 1 < d:
                u_out[2 * j + 1] = r * math.sin(ang)
        for i in range(d):
            nrm += u_out[i] * u_out[i]
        nrm = math.sqrt(nrm)
        for i in range(d):
            u_out[i] = rho * (u_out[i] / nrm)
    else:
        v3 = uniform_at(key, base + np.uint64(3))
        n_dir = dir_cum.shape[0]
        j = 0
        while j < n_dir - 1 and dir_cum[j] <= v3:
            j += 1
        for i in range(d):
            u_out[i] = rho * dir_vecs[j, i]


@jit(no_alloc=True)
def next_gap(key, k, slots, rate):
    if rate <= 0.0:
        return np.inf
    return -math.log(uniform_at(key, np.uint64(k) * np.uint64(slots))) / rate


@jit(no_alloc=True)
def _norm(x):
    s = 0.0
    for i in range(x.shape[0]):
        s += x[i] * x[i]
    return math.sqrt(s)


@jit(no_alloc=True)
def _finite_and_bounded(x, bound):
    s = 0.0
    for i in range(x.shape[0]):
        if not math.isfinite(x[i]):
            return False
        s += x[i] * x[i]
    return s <= bound * bound


# ---------------------------------------------------------------------------
# single path with explicit events


@jit
def integrate_path(p, ip, kappa, x0, dt, horizon, jump_times, jump_marks, extra_stops, bound):
    """Integrate one path through given events.

    Returns skeleton times/states, the skeleton index of each jump, pre- and
    post-jump states and the explosion time (``inf`` if none).
    """
    m = ip[1]
    n_j = jump_times.shape[0]
    n_grid = int(math.ceil(horizon / dt)) + 1
    n_extra = extra_stops.shape[0]
    cap = n_grid + n_j + n_extra + 2
    skel_t = np.empty(cap)
    skel_x = np.empty((cap, m))
    jump_idx = np.full(n_j, -1, dtype=np.int64)
    pre = np.full((n_j, m), np.nan)
    post = np.full((n_j, m), np.nan)
    ws = np.empty((6, m))
    cbuf = np.empty(m)
    x = x0.copy()
    t = 0.0
    kg = 0
    jn = 0
    je = 0
    while je < n_extra and extra_stops[je] <= 0.0:
        je += 1
    skel_t[0] = 0.0
    skel_x[0] = x
    ns = 1
    explosion = np.inf
    while t < horizon:
        next_grid = (kg + 1) * dt
        stop = min(next_grid, horizon)
        if jn < n_j and jump_times[jn] < stop:
            stop = jump_times[jn]
        if je < n_extra and extra_stops[je] < stop:
            stop = extra_stops[je]
        h = stop - t
        if h > 0.0:
            rk4_step(p, ip, kappa, x, h, ws)
        t = stop
        if next_grid <= stop:
            kg += 1
        while je < n_extra and extra_stops[je] <= t:
            je += 1
        while jn < n_j and jump_times[jn] <= t:
            pre[jn] = x
            jump_into(p, ip, x, jump_marks[jn], cbuf)
            for i in range(m):
                x[i] = x[i] + cbuf[i]
            post[jn] = x
            jump_idx[jn] = ns
            jn += 1
        skel_t[ns] = t
        skel_x[ns] = x
        ns += 1
        if not _finite_and_bounded(x, bound):
            explosion = t
            break
    return skel_t[:ns], skel_x[:ns], jump_idx[:jn], pre[:jn], post[:jn], explosion


@jit(no_alloc=True)
def _exp_rhs(p, ip, kappa, x, e, dx, de, jac, tmp_m, tmp_mm):
    m = ip[1]
    eff_drift_into(p, ip, kappa, x, dx, tmp_m)
    eff_drift_jac_into(p, ip, kappa, x, jac, tmp_mm)
    for i in range(m):
        for j in range(m):
            acc = 0.0
            for k in range(m):
                acc += jac[i, k] * e[k, j]
            de[i, j] = acc


@jit
def propagate_exponent_kernel(p, ip, kappa, skel_t, skel_x, jump_idx, jump_marks, jump_pre, start):
    """Matrix exponent along a recorded skeleton, starting from identity at ``skel_t[start]``.

    The state is re-integrated together with the exponent from each
    skeleton point so that the linearisation sees the same RK4 stages as
    the path. Returns E at every skeleton index >= start (earlier entries
    are NaN) and per-jump E before and after the multiplicative update.
    """
    m = ip[1]
    n = skel_t.shape[0]
    n_j = jump_idx.shape[0]
    out = np.full((n, m, m), np.nan)
    e_pre = np.full((n_j, m, m), np.nan)
    e_post = np.full((n_j, m, m), np.nan)
    e = np.eye(m)
    out[start] = e
    x = np.empty(m)
    y = np.empty(m)
    ey = np.empty((m, m))
    kx = np.empty((4, m))
    ke = np.empty((4, m, m))
    jac = np.empty((m, m))
    tmp_m = np.empty(m)
    tmp_mm = np.empty((m, m))
    jn = 0
    while jn < n_j and jump_idx[jn] <= start:
        jn += 1
    for s in range(start, n - 1):
        h = skel_t[s + 1] - skel_t[s]
        x[:] = skel_x[s]
        if h > 0.0:
            _exp_rhs(p, ip, kappa, x, e, kx[0], ke[0], jac, tmp_m, tmp_mm)
            for st in range(1, 4):
                c = 0.5 * h if st < 3 else h
                for i in range(m):
                    y[i] = x[i] + c * kx[st - 1, i]
                    for j in range(m):
                        ey[i, j] = e[i, j] + c * ke[st - 1, i, j]
                _exp_rhs(p, ip, kappa, y, ey, kx[st], ke[st], jac, tmp_m, tmp_mm)
            for i in range(m):
                for j in range(m):
                    e[i, j] = e[i, j] + h * (ke[0, i, j] + 2.0 * ke[1, i, j] + 2.0 * ke[2, i, j] + ke[3, i, j]) / 6.0
        while jn < n_j and jump_idx[jn] == s + 1:
            e_pre[jn] = e
            jump_jac_into(p, ip, jump_pre[jn], jump_marks[jn], jac)
            for i in range(m):
                jac[i, i] += 1.0
            for i in range(m):
                for j in range(m):
                    acc = 0.0
                    for k in range(m):
                        acc += jac[i, k] * e[k, j]
                    tmp_mm[i, j] = acc
            e[:, :] = tmp_mm
            e_post[jn] = e
            jn += 1
        out[s + 1] = e
    return out, e_pre, e_post


# ---------------------------------------------------------------------------
# batch of paths with in-kernel jump generation


@jit(no_alloc=True)
def _cell_index(x, occ_lo, occ_width, occ_n):
    m = x.shape[0]
    idx = 0
    for i in range(m):
        c = math.floor((x[i] - occ_lo[i]) / occ_width[i])
        if not (c >= 0 and c < occ_n[i]):
            total = 1
            for k in range(m):
                total *= occ_n[k]
            return total
        idx = idx * occ_n[i] + int(c)
    return idx


@jit
def simulate_batch_kernel(p, ip, kappa, x0s, keys, dt, horizon, obs_times,
                          rate, slots, atom_marks, atom_cum, atom_total, diff, dir_vecs, dir_cum,
                          bound, target, occ_lo, occ_width, occ_n, burn_in, track_occ,
                          out_obs, out_jsum, out_min, out_max, out_mind, out_expl, out_njumps,
                          out_occ, out_mom):
    """Simulate ``len(keys)`` independent paths; accumulates occupancy into ``out_occ``.

    Occupation time uses the trapezoid rule on each smooth segment.
    ``out_mom`` accumulates ``[sum h, sum h x_i ..., sum h x_i^2 ...]`` over
    the post-burn-in part of every path.
    """
    n = keys.shape[0]
    m = ip[1]
    d = ip[2]
    n_obs = obs_times.shape[0]
    ws = np.empty((6, m))
    cbuf = np.empty(m)
    u = np.empty(d)
    jsum = np.empty(d)
    x = np.empty(m)
    xs = np.empty(m)
    for path in range(n):
        key = keys[path]
        for i in range(m):
            x[i] = x0s[path, i]
            out_min[path, i] = x[i]
            out_max[path, i] = x[i]
        for i in range(d):
            jsum[i] = 0.0
        dist = 0.0
        for i in range(m):
            dist += (x[i] - target[i]) ** 2
        out_mind[path] = math.sqrt(dist)
        out_expl[path] = np.inf
        t = 0.0
        kg = 0
        kj = 0
        next_jump = next_gap(key, 0, slots, rate)
        io = 0
        while io < n_obs and obs_times[io] <= 0.0:
            for i in range(m):
                out_obs[path, io, i] = x[i]
            for i in range(d):
                out_jsum[path, io, i] = 0.0
            io += 1
        exploded = False
        while t < horizon:
            next_grid = (kg + 1) * dt
            stop = min(next_grid, horizon)
            if next_jump < stop:
                stop = next_jump
            if io < n_obs and obs_times[io] < stop:
                stop = obs_times[io]
            h = stop - t
            for i in range(m):
                xs[i] = x[i]
            if h > 0.0:
                rk4_step(p, ip, kappa, x, h, ws)
            if track_occ and stop > burn_in:
                # trapezoid over the smooth segment, before any jump at its end
                hw = 0.5 * (stop - max(t, burn_in))
                out_occ[_cell_index(xs, occ_lo, occ_width, occ_n)] += hw
                out_occ[_cell_index(x, occ_lo, occ_width, occ_n)] += hw
                out_mom[0] += 2.0 * hw
                for i in range(m):
                    out_mom[1 + i] += hw * (xs[i] + x[i])
                    out_mom[1 + m + i] += hw * (xs[i] * xs[i] + x[i] * x[i])
            t = stop
            if next_grid <= stop:
                kg += 1
            if next_jump <= t:
                draw_mark(key, kj, slots, rate, atom_marks, atom_cum, atom_total, diff, dir_vecs, dir_cum, u)
                jump_into(p, ip, x, u, cbuf)
                for i in range(m):
                    x[i] += cbuf[i]
                for i in range(d):
                    jsum[i] += u[i]
                kj += 1
                next_jump = t + next_gap(key, kj, slots, rate)
            while io < n_obs and obs_times[io] <= t:
                for i in range(m):
                    out_obs[path, io, i] = x[i]
                for i in range(d):
                    out_jsum[path, io, i] = jsum[i]
                io += 1
            if not _finite_and_bounded(x, bound):
                out_expl[path] = t
                exploded = True
                break
            dist = 0.0
            for i in range(m):
                if x[i] < out_min[path, i]:
                    out_min[path, i] = x[i]
                if x[i] > out_max[path, i]:
                    out_max[path, i] = x[i]
                dist += (x[i] - target[i]) ** 2
            dist = math.sqrt(dist)
            if dist < out_mind[path]:
                out_mind[path] = dist
        if exploded:
            while io < n_obs:
                for i in range(m):
                    out_obs[path, io, i] = np.nan
                for i in range(d):
                    out_jsum[path, io, i] = np.nan
                io += 1
        out_njumps[path] = kj


# ---------------------------------------------------------------------------
# two coordinates until both enter a ball


@jit
def pair_until_ball_kernel(p, ip, kappa, x1, x2, key1, key2, t0, dt, t_max, radius, obs_times,
                           rate, slots, atom_marks, atom_cum, atom_total, diff, dir_vecs, dir_cum,
                           bound, out_obs1, out_obs2):
    """Run two coordinates in lockstep from absolute time ``t0``.

    Stops at the first stop point where both states lie in the closed ball of
    ``radius`` (checked at ``t0`` too), or at ``t_max``. Observation times in
    ``(t0, stop]`` are recorded. Returns ``(stop_time, hit, x1, x2, n_obs_written)``.
    Each coordinate draws jumps from its own key; equal keys and equal starts
    give identical evolution.
    """
    m = ip[1]
    d = ip[2]
    n_obs = obs_times.shape[0]
    ws = np.empty((6, m))
    cbuf = np.empty(m)
    u = np.empty(d)
    y1 = x1.copy()
    y2 = x2.copy()
    io = 0
    while io < n_obs and obs_times[io] <= t0:
        io += 1
    first_obs = io
    if _norm(y1) <= radius and _norm(y2) <= radius:
        return t0, True, y1, y2, 0
    t = t0
    kg = 0
    k1 = 0
    k2 = 0
    nj1 = t0 + next_gap(key1, 0, slots, rate)
    nj2 = t0 + next_gap(key2, 0, slots, rate)
    while t < t_max:
        next_grid = t0 + (kg + 1) * dt
        stop = min(next_grid, t_max)
        if nj1 < stop:
            stop = nj1
        if nj2 < stop:
            stop = nj2
        if io < n_obs and obs_times[io] < stop:
            stop = obs_times[io]
        h = stop - t
        if h > 0.0:
            rk4_step(p, ip, kappa, y1, h, ws)
            rk4_step(p, ip, kappa, y2, h, ws)
        t = stop
        if next_grid <= stop:
            kg += 1
        if nj1 <= t:
            draw_mark(key1, k1, slots, rate, atom_marks, atom_cum, atom_total, diff, dir_vecs, dir_cum, u)
            jump_into(p, ip, y1, u, cbuf)
            for i in range(m):
                y1[i] += cbuf[i]
            k1 += 1
            nj1 = t + next_gap(key1, k1, slots, rate)
        if nj2 <= t:
            draw_mark(key2, k2, slots, rate, atom_marks, atom_cum, atom_total, diff, dir_vecs, dir_cum, u)
            jump_into(p, ip, y2, u, cbuf)
            for i in range(m):
                y2[i] += cbuf[i]
            k2 += 1
            nj2 = t + next_gap(key2, k2, slots, rate)
        while io < n_obs and obs_times[io] <= t:
            out_obs1[io] = y1
            out_obs2[io] = y2
            io += 1
        if not (_finite_and_bounded(y1, bound) and _finite_and_bounded(y2, bound)):
            return t, False, y1, y2, io - first_obs
        if _norm(y1) <= radius and _norm(y2) <= radius:
            return t, True, y1, y2, io - first_obs
    return t, False, y1, y2, io - first_obs

