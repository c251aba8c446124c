"""Couplings, total-variation decay, mixing tails and the explicit rate constants.

The gluing step couples *binned* transition laws maximally: both coordinates
run ``n_aux`` auxiliary paths over the window, the cellwise minimum of the
two histograms is the glueable mass, and a glued pair lands on a common
point drawn uniformly from a cell of the minimum measure. Without gluing,
each coordinate ends at an auxiliary sample from its residual law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import _kernels
from .binning import Binning, BinningMismatch, EmpiricalLaw, overlap, tv_distance
from .levy_noise import draws_per_jump
from .models import Model
from .rng import derive_key, generator
from .sde_core import (
    SimParams,
    Trajectory,
    _kernel_tables,
    simulate_batch,
    simulate_path,
)

__all__ = [
    "Binning", "BinningMismatch", "EmpiricalLaw", "tv_distance", "overlap",
    "estimate_law", "sample_states", "MaximalCoupling", "maximal_coupling",
    "FixedHorizon", "BallEntry", "SimpleCouplingResult", "simple_coupling_run",
    "GluingResult", "gluing_attempt", "CouplingRecord", "switching_coupling",
    "switching_coupling_runs", "TVCurve", "tv_decay_curve", "DecayFit", "fit_exponential_decay",
    "OccupationLaw", "khasminskii_average", "RateBound", "theoretical_rate_bound",
    "BetaTail", "beta_mixing_tail", "doeblin_overlap",
]


def _start_states(start, n: int, m: int, key: int) -> np.ndarray:
    if isinstance(start, EmpiricalLaw):
        if start.binning.dim != m:
            raise BinningMismatch("start law has the wrong dimension")
        return start.sample(generator(key), n)
    x = np.asarray(start, dtype=float).reshape(-1, m)
    return np.broadcast_to(x, (n, m)) if len(x) == 1 else x


def sample_states(model: Model, start, t: float, params: SimParams, stream: Sequence[int] = (3,),
                  backend: str | None = None, workers: int = 1) -> np.ndarray:
    """``params.n_paths`` independent draws of ``X(t)``; exploded paths are NaN."""
    x0 = _start_states(start, params.n_paths, model.m, derive_key(params.seed, *stream, 0xA11))
    if t == 0:
        return np.array(x0, dtype=float)
    res = simulate_batch(model, x0, params.replace(horizon=t), [t], stream=stream,
                         backend=backend, workers=workers)
    return res.states[:, 0]


def estimate_law(model: Model, start, t: float, params: SimParams, binning: Binning,
                 stream: Sequence[int] = (3,), backend: str | None = None, workers: int = 1) -> EmpiricalLaw:
    """Histogram of ``X(t)`` over ``params.n_paths`` paths started at ``start``."""
    if isinstance(start, EmpiricalLaw) and t == 0 and start.binning == binning:
        return EmpiricalLaw(binning, np.array(start.masses), start.sample_count, start.overflow_points)
    return EmpiricalLaw.from_samples(binning, sample_states(model, start, t, params, stream, backend, workers))


# ---------------------------------------------------------------------------
# maximal coupling of binned laws


@dataclass(frozen=True)
class MaximalCoupling:
    overlap: float
    common: np.ndarray       # cellwise minimum (unnormalised)
    residual1: np.ndarray    # p1 - common (unnormalised)
    residual2: np.ndarray


def maximal_coupling(a: EmpiricalLaw, b: EmpiricalLaw) -> MaximalCoupling:
    if a.binning != b.binning:
        raise BinningMismatch("laws are binned differently")
    common = np.minimum(a.masses, b.masses)
    return MaximalCoupling(float(common.sum()), common, a.masses - common, b.masses - common)


# ---------------------------------------------------------------------------
# simple coupling


@dataclass(frozen=True)
class FixedHorizon:
    horizon: float


@dataclass(frozen=True)
class BallEntry:
    radius: float
    max_horizon: float


@dataclass(frozen=True)
class SimpleCouplingResult:
    first: Trajectory | None
    second: Trajectory | None
    entry_time: float | None
    entered: bool
    terminal: tuple


def _coupling_keys(params: SimParams, y1, y2, stream) -> tuple[int, int]:
    if np.array_equal(np.asarray(y1, dtype=float), np.asarray(y2, dtype=float)):
        k = derive_key(params.seed, *stream, 0)
        return k, k
    return derive_key(params.seed, *stream, 1), derive_key(params.seed, *stream, 2)


def _pair_until_ball(model, z1, z2, key1, key2, t0, dt, t_max, radius, truncation, bound, obs_times):
    rate, table = _kernel_tables(model, truncation)
    marks, atom_cum, atom_total, diff, dir_vecs, dir_cum = table
    kappa = model.compensator(truncation)
    obs = np.ascontiguousarray(obs_times, dtype=float)
    o1 = np.full((len(obs), model.m), np.nan)
    o2 = np.full((len(obs), model.m), np.nan)
    t, hit, y1, y2, _ = _kernels.pair_until_ball_kernel(
        model.p, model.ip, kappa, np.ascontiguousarray(z1, dtype=float), np.ascontiguousarray(z2, dtype=float),
        np.uint64(key1), np.uint64(key2), float(t0), float(dt), float(t_max), float(radius), obs,
        float(rate), draws_per_jump(model.d), marks, atom_cum, float(atom_total), diff, dir_vecs, dir_cum,
        float(bound), o1, o2)
    return float(t), bool(hit), y1, y2, o1, o2


def simple_coupling_run(model: Model, y1, y2, until, params: SimParams, run_index: int = 0,
                        stream: Sequence[int] = (5,)) -> SimpleCouplingResult:
    """Two coordinates driven independently, or by one realisation when ``y1 == y2``.

    ``until`` is a :class:`FixedHorizon` (full trajectories are returned) or a
    :class:`BallEntry` (the first time both coordinates lie in the ball).
    """
    y1 = np.asarray(y1, dtype=float).reshape(model.m)
    y2 = np.asarray(y2, dtype=float).reshape(model.m)
    k1, k2 = _coupling_keys(params, y1, y2, (*stream, run_index))
    if isinstance(until, FixedHorizon):
        run = params.replace(horizon=until.horizon)
        tr1 = _path_from_key(model, y1, run, k1)
        tr2 = tr1 if k1 == k2 else _path_from_key(model, y2, run, k2)
        return SimpleCouplingResult(tr1, tr2, None, False, (tr1.terminal, tr2.terminal))
    if isinstance(until, BallEntry):
        t, hit, z1, z2, _, _ = _pair_until_ball(model, y1, y2, k1, k2, 0.0, params.dt, until.max_horizon,
                                                until.radius, params.truncation, params.overflow_bound, [])
        return SimpleCouplingResult(None, None, t if hit else None, hit, (z1, z2))
    raise TypeError("until must be FixedHorizon or BallEntry")


def _path_from_key(model: Model, x0, params: SimParams, key: int) -> Trajectory:
    from .levy_noise import realization_from_key

    real = realization_from_key(model.measure, params.horizon, params.truncation, key)
    return simulate_path(model, x0, params, realization=real)


# ---------------------------------------------------------------------------
# gluing


@dataclass(frozen=True)
class GluingResult:
    glued: bool
    terminal1: np.ndarray
    terminal2: np.ndarray
    overlap: float
    window_states1: np.ndarray   # states at the requested in-window times
    window_states2: np.ndarray


def gluing_attempt(model: Model, y1, y2, T: float, n_aux: int, binning: Binning, params: SimParams,
                   key: int, window_times: Sequence[float] = ()) -> GluingResult:
    """One maximal-coupling attempt of the laws at time ``T`` from ``y1`` and ``y2``.

    ``window_times`` are offsets in ``(0, T)`` at which the coordinates'
    states are also reported, read off the auxiliary path each terminal
    was taken from.
    """
    if not T > 0:
        raise ValueError("window length T must be positive")
    if n_aux < 1:
        raise ValueError("gluing needs at least one auxiliary path")
    y1 = np.asarray(y1, dtype=float).reshape(model.m)
    y2 = np.asarray(y2, dtype=float).reshape(model.m)
    wt = np.asarray(sorted(window_times), dtype=float)
    obs = np.append(wt, T)
    run = params.replace(horizon=T, n_paths=n_aux)
    base_seed = key & 0xFFFFFFFFFFFFFFFF
    aux1 = simulate_batch(model, y1, run.replace(seed=base_seed), obs, stream=(1,))
    gen = generator(derive_key(base_seed, 7))
    if np.array_equal(y1, y2):
        z = aux1.states[0, -1]
        path = aux1.states[0, :-1]
        return GluingResult(True, z.copy(), z.copy(), 1.0, path.copy(), path.copy())
    aux2 = simulate_batch(model, y2, run.replace(seed=base_seed), obs, stream=(2,))
    s1, s2 = aux1.states[:, -1], aux2.states[:, -1]
    law1 = EmpiricalLaw.from_samples(binning, s1)
    law2 = EmpiricalLaw.from_samples(binning, s2)
    mc = maximal_coupling(law1, law2)
    cells1 = binning.cell_index(s1)
    cells2 = binning.cell_index(s2)

    def pick(cells, cell):
        return int(gen.choice(np.flatnonzero(cells == cell)))

    if gen.random() < mc.overlap:
        cell = int(gen.choice(len(mc.common), p=mc.common / mc.overlap))
        i1, i2 = pick(cells1, cell), pick(cells2, cell)
        if cell < binning.n_cells:
            z = binning.cell_lower_corner([cell])[0] + gen.random(model.m) * np.array(binning.width)
        else:
            z = s1[i1].copy()
        return GluingResult(True, z, z.copy(), mc.overlap, aux1.states[i1, :-1], aux2.states[i2, :-1])
    rest = 1.0 - mc.overlap
    c1 = int(gen.choice(len(mc.residual1), p=np.clip(mc.residual1, 0, None) / rest))
    c2 = int(gen.choice(len(mc.residual2), p=np.clip(mc.residual2, 0, None) / rest))
    i1, i2 = pick(cells1, c1), pick(cells2, c2)
    return GluingResult(False, s1[i1].copy(), s2[i2].copy(), mc.overlap, aux1.states[i1, :-1], aux2.states[i2, :-1])


# ---------------------------------------------------------------------------
# switching coupling


@dataclass
class CouplingRecord:
    Q_times: list = field(default_factory=list)
    phases: list = field(default_factory=list)
    glued: bool = False
    Q_star: float | None = None
    k_star: int | None = None
    overlaps: list = field(default_factory=list)
    record_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    positions1: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    positions2: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    censored_at: float | None = None

    def mark_glued(self, time: float, cycle: int):
        self.glued = True
        self.Q_star = time
        self.k_star = cycle
        self.phases.append("glued")

    def check(self):
        """Phase sequence sanity: free/gluing alternate, glued is terminal."""
        seq = self.phases
        if "glued" in seq:
            assert seq.index("glued") == len(seq) - 1, "glued phase must be final"
            assert self.glued
        body = [p for p in seq if p != "glued"]
        for i, p in enumerate(body):
            assert p == ("free" if i % 2 == 0 else "gluing"), "phases must alternate free/gluing"
        if self.glued:
            after = self.record_times >= self.Q_star
            assert np.array_equal(self.positions1[after], self.positions2[after]), "glued coordinates diverged"

    def summary(self) -> dict:
        return {"glued": self.glued, "Q_star": self.Q_star, "k_star": self.k_star,
                "Q_times": list(self.Q_times), "phases": list(self.phases),
                "censored_at": self.censored_at}


def switching_coupling(model: Model, mu1, mu2, R: float, T: float, max_cycles: int, params: SimParams,
                       binning: Binning, n_aux: int = 400, run_index: int = 0,
                       record_times: Sequence[float] = (), stream: Sequence[int] = (6,)) -> CouplingRecord:
    """Alternate free motion until both coordinates enter the ball of radius ``R``
    with gluing attempts over windows of length ``T``.

    The run stops when glued, after ``max_cycles`` attempts, or at
    ``params.horizon`` (censoring). Positions of both coordinates are stored
    at ``record_times``: from the free phase, from the chosen auxiliary paths
    inside a window, and from one shared path after gluing.
    """
    if not (R > 0 and T > 0):
        raise ValueError("R and T must be positive")
    m = model.m
    rt = np.asarray(sorted(record_times), dtype=float)
    pos1 = np.full((len(rt), m), np.nan)
    pos2 = np.full((len(rt), m), np.nan)
    rec = CouplingRecord(record_times=rt, positions1=pos1, positions2=pos2)
    horizon = params.horizon
    run_key = derive_key(params.seed, *stream, run_index)
    z1 = _start_states(mu1, 1, m, derive_key(run_key, 1))[0].astype(float)
    z2 = _start_states(mu2, 1, m, derive_key(run_key, 2))[0].astype(float)
    t = 0.0
    at_zero = rt <= 0
    pos1[at_zero] = z1
    pos2[at_zero] = z2

    def finish_glued(z, t0):
        rest = rt > t0
        if rest.any():
            span = horizon - t0
            run = params.replace(horizon=span, n_paths=1)
            res = simulate_batch(model, z, run.replace(seed=derive_key(run_key, 4)), rt[rest] - t0, stream=(0,))
            pos1[rest] = res.states[0]
            pos2[rest] = res.states[0]

    if np.array_equal(z1, z2):
        rec.mark_glued(0.0, 0)
        finish_glued(z1, 0.0)
        rec.check()
        return rec

    for cycle in range(1, max_cycles + 1):
        rec.phases.append("free")
        k1 = derive_key(run_key, cycle, 1)
        k2 = derive_key(run_key, cycle, 2)
        free_obs = rt[rt > t]
        t_hit, hit, z1, z2, o1, o2 = _pair_until_ball(model, z1, z2, k1, k2, t, params.dt, horizon, R,
                                                      params.truncation, params.overflow_bound, free_obs)
        sel = (rt > t) & (rt <= t_hit)
        idx = np.flatnonzero(rt > t)
        written = idx[: int(sel.sum())]
        pos1[written] = o1[: len(written)]
        pos2[written] = o2[: len(written)]
        if not hit:
            rec.censored_at = t_hit
            break
        rec.Q_times.append(t_hit)
        t = t_hit
        rec.phases.append("gluing")
        inside = (rt > t) & (rt < t + T)
        g = gluing_attempt(model, z1, z2, T, n_aux, binning, params, derive_key(run_key, cycle, 3),
                           window_times=rt[inside] - t)
        pos1[inside] = g.window_states1
        pos2[inside] = g.window_states2
        t = t + T
        rec.Q_times.append(t)
        rec.overlaps.append(g.overlap)
        z1, z2 = g.terminal1, g.terminal2
        at_end = np.isclose(rt, t, rtol=0, atol=1e-12)
        pos1[at_end] = z1
        pos2[at_end] = z2
        if g.glued:
            rec.mark_glued(t, cycle)
            finish_glued(z1, t)
            break
        if t >= horizon:
            rec.censored_at = t
            break
    rec.check()
    return rec


def switching_coupling_runs(model: Model, mu1, mu2, R: float, T: float, n_runs: int, params: SimParams,
                            binning: Binning, n_aux: int = 400, max_cycles: int = 50,
                            record_times: Sequence[float] = (), stream: Sequence[int] = (6,)) -> list:
    return [switching_coupling(model, mu1, mu2, R, T, max_cycles, params, binning, n_aux, i,
                               record_times, stream) for i in range(n_runs)]


# ---------------------------------------------------------------------------
# total variation decay


@dataclass(frozen=True)
class DecayFit:
    C1: float | None
    C2: float | None
    slope_pvalue: float | None
    n_points: int
    status: str


def fit_exponential_decay(t, tv, floor=None, floor_factor: float = 3.0) -> DecayFit:
    """Least squares of ``log tv`` on ``t`` over points above ``floor_factor * floor``.

    The p-value is one-sided for a negative slope.
    """
    t = np.asarray(t, dtype=float)
    tv = np.asarray(tv, dtype=float)
    mask = tv > 0
    if floor is not None:
        mask &= tv > floor_factor * np.asarray(floor, dtype=float)
    if mask.sum() < 2:
        return DecayFit(None, None, None, int(mask.sum()), "faster than resolvable")
    tt, yy = t[mask], np.log(tv[mask])
    if mask.sum() == 2:
        slope = (yy[1] - yy[0]) / (tt[1] - tt[0])
        return DecayFit(float(math.exp(yy[0] - slope * tt[0])), float(-slope), None, 2, "fitted")
    fit = stats.linregress(tt, yy)
    if np.isnan(fit.pvalue):
        p_one = 0.0 if fit.slope < 0 else 1.0
    else:
        p_one = fit.pvalue / 2 if fit.slope < 0 else 1 - fit.pvalue / 2
    return DecayFit(float(math.exp(fit.intercept)), float(-fit.slope), float(p_one), int(mask.sum()), "fitted")


@dataclass(frozen=True)
class TVCurve:
    t: np.ndarray
    tv: np.ndarray
    stderr: np.ndarray
    noise_floor: np.ndarray
    fit: DecayFit
    n_paths: int

    @property
    def C1_emp(self):
        return self.fit.C1

    @property
    def C2_emp(self):
        return self.fit.C2


def _bootstrap_tv(ca: np.ndarray, cb: np.ndarray, gen: np.random.Generator, n_boot: int):
    """Bootstrap std of the TV estimate and a noise floor.

    The floor is the 99% quantile of the TV between two resamples of the
    pooled counts, i.e. what identical laws would show at this sample size.
    """
    na, nb = int(ca.sum()), int(cb.sum())
    pa, pb = ca / na, cb / nb
    ra = gen.multinomial(na, pa, size=n_boot) / na
    rb = gen.multinomial(nb, pb, size=n_boot) / nb
    tv_b = 0.5 * np.abs(ra - rb).sum(axis=1)
    pooled = (ca + cb) / (na + nb)
    qa = gen.multinomial(na, pooled, size=n_boot) / na
    qb = gen.multinomial(nb, pooled, size=n_boot) / nb
    floor = 0.5 * np.abs(qa - qb).sum(axis=1)
    return float(tv_b.std(ddof=1)), float(np.quantile(floor, 0.99))


def tv_decay_curve(model: Model, x, y, t_grid: Sequence[float], params: SimParams, binning: Binning,
                   n_boot: int = 200, backend: str | None = None, workers: int = 1,
                   stream: Sequence[int] = (4,)) -> TVCurve:
    """``d_TV`` between the laws from ``x`` and from ``y`` along ``t_grid``, with an exponential fit."""
    tg = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(tg) <= 0):
        raise ValueError("t_grid must be increasing")
    run = params.replace(horizon=float(tg[-1]))
    bx = simulate_batch(model, x, run, tg, stream=(*stream, 0), backend=backend, workers=workers)
    by = simulate_batch(model, y, run, tg, stream=(*stream, 1), backend=backend, workers=workers)
    gen = generator(derive_key(params.seed, *stream, 2))
    tv, se, floor = [], [], []
    for j in range(len(tg)):
        ca = np.bincount(binning.cell_index(bx.states[:, j]), minlength=binning.n_cells + 1).astype(float)
        cb = np.bincount(binning.cell_index(by.states[:, j]), minlength=binning.n_cells + 1).astype(float)
        tv.append(0.5 * np.abs(ca / ca.sum() - cb / cb.sum()).sum())
        s, f = _bootstrap_tv(ca, cb, gen, n_boot)
        se.append(s)
        floor.append(f)
    tv, se, floor = np.array(tv), np.array(se), np.array(floor)
    return TVCurve(tg, tv, se, floor, fit_exponential_decay(tg, tv, floor), params.n_paths)


# ---------------------------------------------------------------------------
# Khasminskii averages


@dataclass(frozen=True)
class OccupationLaw(EmpiricalLaw):
    """Time-averaged occupation law, with moments of the exact time integrals."""

    time_mean: np.ndarray = None
    time_variance: np.ndarray = None
    horizon: float = 0.0
    burn_in: float = 0.0


def khasminskii_average(model: Model, mu0, horizon: float, params: SimParams, binning: Binning,
                        burn_in: float = 0.0, stream: Sequence[int] = (7,), backend: str | None = None,
                        workers: int = 1) -> OccupationLaw:
    """Occupation histogram ``(1/t) int_0^t P(X(s) in .) ds`` pooled over paths.

    Each path contributes the time it spends in every cell of ``binning``
    over ``[burn_in, horizon]``, integrated with the trapezoid rule on each
    smooth segment between jumps.
    """
    if not horizon > burn_in:
        raise ValueError("horizon must exceed the burn-in")
    x0 = _start_states(mu0, params.n_paths, model.m, derive_key(params.seed, *stream, 0xA11))
    run = params.replace(horizon=horizon)
    res = simulate_batch(model, x0, run, [horizon], stream=stream, binning=binning, burn_in=burn_in,
                         backend=backend, workers=workers)
    occ = res.occupancy
    mom = res.occupancy_moments
    m = model.m
    mean = mom[1:1 + m] / mom[0]
    var = mom[1 + m:] / mom[0] - mean ** 2
    return OccupationLaw(binning, occ / occ.sum(), params.n_paths, None, mean, var, float(horizon), float(burn_in))


# ---------------------------------------------------------------------------
# explicit constants


@dataclass(frozen=True)
class RateBound:
    D: float
    p: float
    C2: float
    C1_tilde: float
    C1: float
    bracket_exponent: float
    note: str

    def bound(self, t, phi_mu: float = 0.0):
        return self.C1 * (phi_mu + 1.0) * np.exp(-self.C2 * np.asarray(t, dtype=float))

    def to_dict(self) -> dict:
        return dict(self.__dict__)


BRACKET_NOTE = ("the coupling-time tail uses [1-(1-delta)^(1/4)]^-1 while the prefactor definition "
                "shows exponent 1/2; the larger 1/4 version is used")


def theoretical_rate_bound(alpha: float, gamma: float, c: float, T: float, delta: float, sup_phi: float,
                           bracket_exponent: float = 0.25) -> RateBound:
    """Explicit ergodic-rate constants from the drift constants and the local overlap ``delta``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if not 0 < c < 1:
        raise ValueError("c must lie in (0, 1)")
    if not (alpha > 0 and gamma > 0 and T > 0 and sup_phi > 0):
        raise ValueError("alpha, gamma, T and sup_phi must be positive")
    D = (1 - c) / 2 * T + math.log(4 * gamma / alpha + 4 * sup_phi)
    p = max(1.0, -2 * D / math.log(1 - delta))
    C2 = (1 - c) / (4 * p)
    C1_tilde = max(gamma / alpha, 1.0) * 2 * math.exp((1 - c) / 2 * T) / (1 - (1 - delta) ** bracket_exponent)
    return RateBound(D, p, C2, C1_tilde, 2 * C1_tilde, bracket_exponent, BRACKET_NOTE)


def doeblin_overlap(model: Model, points, T: float, params: SimParams, binning: Binning,
                    stream: Sequence[int] = (8,)) -> float:
    """Smallest pairwise binned overlap of the laws at time ``T`` from the given points."""
    pts = np.asarray(points, dtype=float).reshape(-1, model.m)
    laws = [estimate_law(model, x, T, params, binning, stream=(*stream, i)) for i, x in enumerate(pts)]
    worst = 1.0
    for i in range(len(laws)):
        for j in range(i + 1, len(laws)):
            worst = min(worst, overlap(laws[i], laws[j]))
    return worst


# ---------------------------------------------------------------------------
# beta-mixing tail


@dataclass(frozen=True)
class BetaTail:
    t: np.ndarray
    tail: np.ndarray
    n: int
    stderr: np.ndarray


def beta_mixing_tail(records: Sequence[CouplingRecord], t_grid: Sequence[float]) -> BetaTail:
    """Empirical ``P(Q* > t)``; runs never glued count as ``Q* = inf``."""
    tg = np.asarray(t_grid, dtype=float)
    q = np.array([r.Q_star if r.glued else math.inf for r in records], dtype=float)
    n = len(q)
    if n == 0:
        raise ValueError("no coupling records")
    tail = (q[None, :] > tg[:, None]).mean(axis=1)
    return BetaTail(tg, tail, n, np.sqrt(tail * (1 - tail) / n))
