"""Vectorised numpy implementation of the batch simulation loop.

Used when numba is disabled. Paths advance in lockstep iterations, each
taking one stop of its own grid, so the per-path arithmetic matches the
compiled kernel step for step.
"""
from __future__ import annotations

import numpy as np

from . import models as M
from .levy_noise import _marks_from_uniforms
from .rng import uniforms


def _poly(coef, x):
    acc = np.zeros_like(x)
    for c in coef[::-1]:
        acc = acc * x + c
    return acc


def drift(model, X):
    p, ip = model.p, model.ip
    kind, m = int(ip[0]), int(ip[1])
    if kind in (M.POLY1D, M.MULT_1D):
        return _poly(p[: ip[3]], X[:, 0])[:, None]
    if kind in (M.LINEAR_ND, M.LINEAR_MULT_ND):
        mat = p[: m * m].reshape(m, m)
        # explicit sum in kernel order: offset first, then columns
        out = np.broadcast_to(p[m * m: m * m + m], X.shape).copy()
        for j in range(m):
            out += mat[:, j][None, :] * X[:, j:j + 1]
        return out
    if kind == M.EXAMPLE_5_1:
        x = X[:, 0]
        ax = np.abs(x)
        h = np.where(ax >= 1.0, 1.0, x * x * (3.0 - 2.0 * ax))
        return (-p[0] * h)[:, None]
    if kind == M.EXAMPLE_5_2:
        x = X[:, 0]
        ax = np.abs(x)
        s = ax - 1.0
        f = s * s * (3.0 * s - 5.0)
        mid = np.where(x > 0, f, -f)
        return np.where(ax <= 1.0, 0.0, np.where(ax >= 2.0, -x, mid))[:, None]
    raise ValueError(f"unknown model kind {kind}")


def jump(model, X, U):
    p, ip = model.p, model.ip
    kind, m, d = int(ip[0]), int(ip[1]), int(ip[2])
    if kind in (M.POLY1D, M.LINEAR_ND, M.EXAMPLE_5_1):
        return U.copy()
    if kind == M.MULT_1D:
        chi = _poly(p[ip[3]: ip[3] + ip[4]], X[:, 0])
        return (chi * U[:, 0])[:, None]
    if kind == M.EXAMPLE_5_2:
        x = X[:, 0]
        ax = np.abs(x)
        t = 0.5 * ax
        mag = np.where(ax >= 2.0, 1.0, t * t * (3.0 - 2.0 * t))
        return (np.where(x >= 0, mag, -mag) * U[:, 0])[:, None]
    if kind == M.LINEAR_MULT_ND:
        out = np.zeros_like(X)
        base = stride = m * m + m
        for k in range(d):
            off = base + k * stride
            b = p[off: off + m * m].reshape(m, m)
            acc = np.broadcast_to(p[off + m * m: off + m * m + m], X.shape).copy()
            for j in range(m):
                acc += b[:, j][None, :] * X[:, j:j + 1]
            out += np.where(U[:, k:k + 1] == 0.0, 0.0, U[:, k:k + 1] * acc)
        return out
    raise ValueError(f"unknown model kind {kind}")


def eff_drift(model, kappa, X):
    K = np.broadcast_to(kappa, (X.shape[0], len(kappa)))
    return drift(model, X) - jump(model, X, K)


def rk4(model, kappa, X, h):
    hc = h[:, None]
    k1 = eff_drift(model, kappa, X)
    k2 = eff_drift(model, kappa, X + 0.5 * hc * k1)
    k3 = eff_drift(model, kappa, X + 0.5 * hc * k2)
    k4 = eff_drift(model, kappa, X + hc * k3)
    return X + hc * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def _draw_marks(table, d, keys, ks, slots):
    base = ks.astype(np.uint64) * np.uint64(slots)
    width = 2 * ((d + 1) // 2)
    u_norm = np.column_stack([uniforms(keys, base + np.uint64(4 + j)) for j in range(width)])
    return _marks_from_uniforms(table, d,
                                uniforms(keys, base + np.uint64(1)),
                                uniforms(keys, base + np.uint64(2)),
                                uniforms(keys, base + np.uint64(3)), u_norm)


def _gaps(keys, ks, slots, rate):
    if rate <= 0:
        return np.full(len(keys), np.inf)
    return -np.log(uniforms(keys, ks.astype(np.uint64) * np.uint64(slots))) / rate


def _cell_index(X, lo, width, counts):
    c = np.floor((X - lo) / width)
    inside = np.all((c >= 0) & (c < counts), axis=1)
    flat = np.zeros(len(X), dtype=np.int64)
    for i in range(X.shape[1]):
        flat = flat * int(counts[i]) + np.where(inside, c[:, i], 0).astype(np.int64)
    return np.where(inside, flat, int(np.prod(counts)))


def simulate_batch(model, kappa, x0s, keys, dt, horizon, obs_times, rate, slots, table,
                   bound, target, occ_lo, occ_width, occ_n, burn_in, track_occ,
                   out_obs, out_jsum, out_min, out_max, out_mind, out_expl, out_njumps,
                   out_occ, out_mom):
    """Same contract as the compiled batch kernel."""
    n = len(keys)
    m, d = model.m, model.d
    X = np.array(x0s, dtype=float, copy=True)
    out_min[:] = X
    out_max[:] = X
    out_mind[:] = np.linalg.norm(X - target, axis=1)
    out_expl[:] = np.inf
    jsum = np.zeros((n, d))
    t = np.zeros(n)
    kg = np.zeros(n, dtype=np.int64)
    kj = np.zeros(n, dtype=np.int64)
    next_jump = _gaps(keys, kj, slots, rate)
    io = np.zeros(n, dtype=np.int64)
    for j, ot in enumerate(obs_times):
        if ot <= 0.0:
            out_obs[:, j] = X
            out_jsum[:, j] = 0.0
            io[:] = j + 1
    obs_pad = np.append(np.asarray(obs_times, dtype=float), np.inf)
    alive = np.ones(n, dtype=bool) if horizon > 0 else np.zeros(n, dtype=bool)
    while alive.any():
        a = np.flatnonzero(alive)
        Xa = X[a]
        ta = t[a]
        next_grid = (kg[a] + 1) * dt
        stop = np.minimum(next_grid, horizon)
        stop = np.where(next_jump[a] < stop, next_jump[a], stop)
        nobs = obs_pad[io[a]]
        stop = np.where(nobs < stop, nobs, stop)
        h = stop - ta
        X_start = Xa.copy()
        pos = h > 0
        if pos.any():
            Xa[pos] = rk4(model, kappa, Xa[pos], h[pos])
        if track_occ:
            sel = stop > burn_in
            if sel.any():
                hw = 0.5 * (stop - np.maximum(ta, burn_in))[sel]
                ends = (X_start[sel], Xa[sel])
                for xe in ends:
                    np.add.at(out_occ, _cell_index(xe, occ_lo, occ_width, occ_n), hw)
                out_mom[0] += 2.0 * hw.sum()
                for xe in ends:
                    out_mom[1:1 + m] += (hw[:, None] * xe).sum(axis=0)
                    out_mom[1 + m:] += (hw[:, None] * xe ** 2).sum(axis=0)
        t[a] = stop
        kg[a] += (next_grid <= stop)
        jumping = next_jump[a] <= stop
        if jumping.any():
            ja = a[jumping]
            U = _draw_marks(table, d, keys[ja], kj[ja], slots)
            Xa[jumping] = Xa[jumping] + jump(model, Xa[jumping], U)
            jsum[ja] += U
            kj[ja] += 1
            next_jump[ja] = stop[jumping] + _gaps(keys[ja], kj[ja], slots, rate)
        X[a] = Xa
        rec = obs_pad[io[a]] <= stop
        while rec.any():
            ra = a[rec]
            out_obs[ra, io[ra]] = X[ra]
            out_jsum[ra, io[ra]] = jsum[ra]
            io[ra] += 1
            rec = rec & (obs_pad[io[a]] <= stop)
        bad = ~np.isfinite(Xa).all(axis=1) | (np.sqrt((Xa ** 2).sum(axis=1)) > bound)
        if bad.any():
            ba = a[bad]
            out_expl[ba] = stop[bad]
            for b in ba:
                out_obs[b, io[b]:] = np.nan
                out_jsum[b, io[b]:] = np.nan
            alive[ba] = False
        good = a[~bad]
        Xg = X[good]
        out_min[good] = np.minimum(out_min[good], Xg)
        out_max[good] = np.maximum(out_max[good], Xg)
        out_mind[good] = np.minimum(out_mind[good], np.linalg.norm(Xg - target, axis=1))
        alive[a] &= stop < horizon
        alive[a[bad]] = False
    out_njumps[:] = kj
    return None
