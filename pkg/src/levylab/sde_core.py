"""Path simulation, the extended generator, jump responses and the stochastic exponent."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels, _numpy_backend
from ._accel import resolve_backend
from .binning import Binning
from .levy_noise import (
    InfiniteMassError,
    LevyMeasure,
    PointMeasureRealization,
    _mark_table,
    draws_per_jump,
    radial_integral,
    realization_from_key,
    total_rate,
)
from .models import Model
from .rng import derive_key, derive_keys

NUMERIC_ZERO = 1e-12
CONDITION_CUTOFF = 1e12
CHUNK = 512


class ExplosionError(RuntimeError):
    def __init__(self, time: float):
        super().__init__(f"state left the overflow bound at t = {time:.6g}")
        self.time = time


class DivergenceError(ArithmeticError):
    """A Lévy integral needed by the generator diverged."""


@dataclass(frozen=True)
class SimParams:
    dt: float
    horizon: float
    truncation: float = 0.0
    seed: int = 0
    n_paths: int = 1
    overflow_bound: float = 1e15

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if self.truncation < 0:
            raise ValueError("truncation must be nonnegative")

    def replace(self, **changes) -> "SimParams":
        cfg = {f: getattr(self, f) for f in self.__dataclass_fields__}
        cfg.update(changes)
        return SimParams(**cfg)


@dataclass(frozen=True)
class Trajectory:
    x0: np.ndarray
    times: np.ndarray
    states: np.ndarray
    jump_times: np.ndarray
    jump_marks: np.ndarray
    pre_states: np.ndarray
    post_states: np.ndarray
    jump_index: np.ndarray = field(repr=False)
    explosion_time: float = math.inf

    @property
    def exploded(self) -> bool:
        return math.isfinite(self.explosion_time)

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]

    def state_at(self, t: float) -> np.ndarray:
        """State at a skeleton time (right-continuous)."""
        i = _skeleton_index(self.times, t)
        return self.states[i]


@dataclass(frozen=True)
class ExponentLog:
    times: np.ndarray
    E: np.ndarray
    jump_pre: np.ndarray
    jump_post: np.ndarray
    start_time: float = 0.0

    def at(self, t: float) -> np.ndarray:
        return self.E[_skeleton_index(self.times, t)]


@dataclass(frozen=True)
class NotInvertible:
    """``I + grad_x c(x, u)`` is numerically singular."""

    condition_number: float


@dataclass(frozen=True)
class InfluenceVectors:
    times: np.ndarray
    vectors: np.ndarray
    excluded: int


@dataclass(frozen=True)
class TestFunction:
    """A scalar test function with gradient and optional Hessian."""

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "f"

    __test__ = False  # keep pytest from collecting this class

    def __call__(self, x):
        return self.value(np.asarray(x, dtype=float))


def square_norm() -> TestFunction:
    return TestFunction(lambda x: float(x @ x), lambda x: 2.0 * x,
                        lambda x: 2.0 * np.eye(len(x)), "square_norm")


def power_norm(q: float) -> TestFunction:
    """``(1 + |x|^2)^(q/2)``: smooth, grows like ``|x|^q``."""

    def val(x):
        return float((1.0 + x @ x) ** (q / 2))

    def grad(x):
        return q * (1.0 + x @ x) ** (q / 2 - 1) * x

    def hess(x):
        s = 1.0 + x @ x
        return q * s ** (q / 2 - 1) * np.eye(len(x)) + q * (q - 2) * s ** (q / 2 - 2) * np.outer(x, x)

    return TestFunction(val, grad, hess, f"power_norm({q:g})")


def constant(c: float = 1.0) -> TestFunction:
    return TestFunction(lambda x: float(c), lambda x: np.zeros(len(x)),
                        lambda x: np.zeros((len(x), len(x))), "constant")


TEST_FUNCTIONS = {"square_norm": square_norm, "power_norm": power_norm, "constant": constant}


def _skeleton_index(times: np.ndarray, t: float) -> int:
    i = int(np.searchsorted(times, t, side="right")) - 1
    if i < 0 or abs(times[i] - t) > 1e-12 * max(1.0, abs(t)):
        raise ValueError(f"t = {t} is not a skeleton time; pass it in `stops` when simulating")
    return i


def _vec(x, n):
    arr = np.ascontiguousarray(np.asarray(x, dtype=float).reshape(-1))
    if arr.size != n:
        raise ValueError(f"expected a vector of length {n}")
    return arr


# ---------------------------------------------------------------------------
# drift pieces


def effective_drift(model: Model, x, truncation: float = 0.0) -> np.ndarray:
    """Drift followed between simulated jumps: ``a(x) - c(x, kappa)`` (``a`` itself for raw models)."""
    x = _vec(x, model.m)
    kappa = model.compensator(truncation)
    return model.drift(x) - model.jump(x, kappa)


def compensated_drift(model: Model, x) -> np.ndarray:
    """The drift with the whole small-jump compensator removed (truncation 0)."""
    return effective_drift(model, x, 0.0)


def delta(model: Model, x, u) -> np.ndarray:
    """Jump response: drift after the jump minus drift before, corrected by the jump Jacobian."""
    x = _vec(x, model.m)
    u = _vec(u, model.d)
    if model.case == "B":
        return model.drift(x + u) - model.drift(x)
    post = x + model.jump(x, u)
    return (compensated_drift(model, post) - compensated_drift(model, x)
            - model.jump_jacobian(x, u) @ compensated_drift(model, x))


def hat_delta(model: Model, x, u):
    """``(I + grad_x c)^{-1} delta``, or :class:`NotInvertible` when the factor is singular."""
    x = _vec(x, model.m)
    u = _vec(u, model.d)
    factor = np.eye(model.m) + model.jump_jacobian(x, u)
    cond = np.linalg.cond(factor)
    if not cond < CONDITION_CUTOFF:
        return NotInvertible(float(cond))
    return np.linalg.solve(factor, delta(model, x, u))


# ---------------------------------------------------------------------------
# generator


def generator_apply(model: Model, f: TestFunction, x, bound: float = 1e12) -> float:
    """Extended generator ``(grad f, a) + int [f(x+c) - f(x) - (grad f, c) 1{|u|<=1}] Pi(du)``.

    For raw-convention models ``a`` is the drift between jumps and the
    integrand carries no compensation term.
    """
    x = _vec(x, model.m)
    g = np.asarray(f.gradient(x), dtype=float)
    fx = f.value(x)
    compensate = model.convention == "ito"
    value = float(g @ model.drift(x))
    meas = model.measure
    for mark, w in zip(meas.atom_marks, meas.atom_weights):
        c = model.jump(x, mark)
        term = f.value(x + c) - fx
        if compensate and np.linalg.norm(mark) <= 1.0:
            term -= float(g @ c)
        value += float(w) * term
    part = meas.diffuse
    if part is not None:
        hess = f.hessian(x) if f.hessian is not None else _fd_hessian(f, x)
        dirs, weights = part.direction_table(model.d)
        r = part.radial
        for theta, wt in zip(dirs, weights):
            v = model.jump(x, theta)  # c is linear in u: c(x, rho theta) = rho v
            quad_coef = 0.5 * float(v @ hess @ v)

            def integrand(rho, v=v, quad_coef=quad_coef):
                if rho < 1e-4:
                    # second-order Taylor remainder avoids cancellation near 0
                    base = quad_coef * rho * rho
                    return base if (compensate and rho <= 1.0) else base + rho * float(g @ v)
                term = f.value(x + rho * v) - fx
                if compensate and rho <= 1.0:
                    term -= rho * float(g @ v)
                return term

            lo = r.lower
            pieces = [(lo, min(1.0, r.upper)), (max(1.0, lo), r.upper)]
            for a, b in pieces:
                if b <= a:
                    continue
                val = radial_integral(lambda rho: integrand(rho) * float(r.density(rho)), a, b, bound)
                if not math.isfinite(val):
                    raise DivergenceError(f"generator jump integral diverges at x = {x.tolist()}")
                value += wt * val
    return value


def _fd_hessian(f: TestFunction, x, step: float = 1e-5) -> np.ndarray:
    m = len(x)
    out = np.empty((m, m))
    for j in range(m):
        e = np.zeros(m)
        e[j] = step
        out[:, j] = (np.asarray(f.gradient(x + e)) - np.asarray(f.gradient(x - e))) / (2 * step)
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# simulation


def _kernel_tables(model: Model, truncation: float):
    rate = total_rate(model.measure, truncation)
    table = _mark_table(model.measure, truncation)
    return rate, table


def path_key(params: SimParams, path_index: int = 0, stream: Sequence[int] = ()) -> int:
    return derive_key(params.seed, *stream, path_index)


def simulate_path(model: Model, x0, params: SimParams, path_index: int = 0, *,
                  stream: Sequence[int] = (), realization: PointMeasureRealization | None = None,
                  stops: Sequence[float] = (), strict: bool = False) -> Trajectory:
    """One jump-adapted path.

    Without an explicit ``realization`` the events are those drawn for
    stream ``(seed, *stream, path_index)``, identical to the draws
    :func:`simulate_batch` makes for the same path. ``stops`` adds extra
    skeleton times (e.g. a time where the exponent is needed).
    """
    x0 = _vec(x0, model.m)
    if realization is None:
        key = path_key(params, path_index, stream)
        realization = realization_from_key(model.measure, params.horizon, params.truncation, key)
    elif realization.marks.shape[1:] != (model.d,) and len(realization):
        raise ValueError("realization marks have the wrong dimension")
    kappa = model.compensator(params.truncation)
    marks = np.ascontiguousarray(realization.marks, dtype=float).reshape(-1, model.d)
    stops_arr = np.sort(np.asarray(stops, dtype=float).reshape(-1))
    skel_t, skel_x, jidx, pre, post, expl = _kernels.integrate_path(
        model.p, model.ip, kappa, x0, float(params.dt), float(params.horizon),
        np.ascontiguousarray(realization.times, dtype=float), marks, stops_arr, float(params.overflow_bound))
    n_done = len(jidx)
    traj = Trajectory(x0, skel_t, skel_x, realization.times[:n_done].copy(), marks[:n_done].copy(),
                      pre, post, jidx, float(expl))
    if strict and traj.exploded:
        raise ExplosionError(traj.explosion_time)
    return traj


@dataclass(frozen=True)
class BatchResult:
    obs_times: np.ndarray
    states: np.ndarray          # (n_paths, n_obs, m)
    jump_sums: np.ndarray       # (n_paths, n_obs, d), cumulative sum of marks
    path_min: np.ndarray
    path_max: np.ndarray
    min_distance: np.ndarray
    explosion_times: np.ndarray
    n_jumps: np.ndarray
    occupancy: np.ndarray | None
    occupancy_moments: np.ndarray | None
    binning: Binning | None

    @property
    def n_paths(self) -> int:
        return len(self.n_jumps)

    @property
    def n_exploded(self) -> int:
        return int(np.isfinite(self.explosion_times).sum())

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.obs_times - t)))
        if abs(self.obs_times[i] - t) > 1e-12 * max(1.0, abs(t)):
            raise ValueError(f"{t} is not an observation time")
        return self.states[:, i]


def simulate_batch(model: Model, x0, params: SimParams, obs_times: Sequence[float] | None = None, *,
                   stream: Sequence[int] = (), target=None, binning: Binning | None = None,
                   burn_in: float = 0.0, backend: str | None = None, workers: int = 1) -> BatchResult:
    """Simulate ``params.n_paths`` paths and collect path statistics.

    ``x0`` is one start for all paths or an ``(n_paths, m)`` array. Path
    ``i`` uses stream ``(seed, *stream, i)``. Work is split into fixed
    chunks of paths, so results do not depend on ``workers``.
    """
    backend = resolve_backend(backend)
    n, m, d = params.n_paths, model.m, model.d
    x0s = np.asarray(x0, dtype=float)
    x0s = np.ascontiguousarray(np.broadcast_to(x0s.reshape(-1, m) if x0s.ndim == 2 else x0s.reshape(1, m), (n, m)))
    obs = np.asarray([params.horizon] if obs_times is None else obs_times, dtype=float)
    if obs.ndim != 1 or np.any(np.diff(obs) < 0) or (len(obs) and (obs[0] < 0 or obs[-1] > params.horizon)):
        raise ValueError("observation times must be sorted within [0, horizon]")
    rate, table = _kernel_tables(model, params.truncation)
    marks, atom_cum, atom_total, diff, dir_vecs, dir_cum = table
    kappa = model.compensator(params.truncation)
    slots = draws_per_jump(d)
    tgt = np.zeros(m) if target is None else _vec(target, m)
    track = binning is not None
    if track:
        if binning.dim != m:
            raise ValueError("binning dimension differs from the state dimension")
        occ_lo, occ_w, occ_n = binning.arrays
        n_cells = binning.n_cells + 1
    else:
        occ_lo, occ_w, occ_n = np.zeros(m), np.ones(m), np.ones(m, dtype=np.int64)
        n_cells = 2
    keys = derive_keys(derive_key(params.seed, *stream), np.arange(n))

    states = np.empty((n, len(obs), m))
    jsums = np.empty((n, len(obs), d))
    pmin = np.empty((n, m))
    pmax = np.empty((n, m))
    mind = np.empty(n)
    expl = np.empty(n)
    njumps = np.empty(n, dtype=np.int64)
    bounds = [(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]
    occ_parts = np.zeros((len(bounds), n_cells))
    mom_parts = np.zeros((len(bounds), 1 + 2 * m))

    def run(ci):
        a, b = bounds[ci]
        args_out = (states[a:b], jsums[a:b], pmin[a:b], pmax[a:b], mind[a:b], expl[a:b], njumps[a:b],
                    occ_parts[ci], mom_parts[ci])
        if backend == "numba":
            _kernels.simulate_batch_kernel(
                model.p, model.ip, kappa, x0s[a:b], keys[a:b], float(params.dt), float(params.horizon), obs,
                float(rate), slots, marks, atom_cum, float(atom_total), diff, dir_vecs, dir_cum,
                float(params.overflow_bound), tgt, occ_lo, occ_w, occ_n, float(burn_in), track, *args_out)
        else:
            _numpy_backend.simulate_batch(
                model, kappa, x0s[a:b], keys[a:b], float(params.dt), float(params.horizon), obs,
                float(rate), slots, table, float(params.overflow_bound), tgt, occ_lo, occ_w, occ_n,
                float(burn_in), track, *args_out)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(len(bounds))))
    else:
        for ci in range(len(bounds)):
            run(ci)
    occupancy = occ_parts.sum(axis=0) if track else None
    moments = mom_parts.sum(axis=0) if track else None
    return BatchResult(obs, states, jsums, pmin, pmax, mind, expl, njumps, occupancy, moments, binning)


# ---------------------------------------------------------------------------
# stochastic exponent


def propagate_exponent(model: Model, traj: Trajectory, start_time: float = 0.0,
                       truncation: float = 0.0) -> ExponentLog:
    """Exponent matrices along ``traj``, equal to the identity at ``start_time``.

    Between jumps the matrix follows the Jacobian of the effective drift;
    at each jump it is left-multiplied by ``I + grad_x c(X(tau-), u)``.
    ``truncation`` must match the one used to simulate ``traj``.
    """
    start = _skeleton_index(traj.times, start_time)
    kappa = model.compensator(truncation)
    E, pre, post = _kernels.propagate_exponent_kernel(
        model.p, model.ip, kappa, traj.times, np.ascontiguousarray(traj.states), traj.jump_index,
        np.ascontiguousarray(traj.jump_marks), np.ascontiguousarray(traj.pre_states), start)
    return ExponentLog(traj.times, E, pre, post, float(start_time))


def jump_influence_vectors(model: Model, traj: Trajectory, log: ExponentLog, t: float) -> InfluenceVectors:
    """``E_0^t (E_0^tau)^{-1} delta(X(tau-), u)`` for every jump before ``t``.

    Jumps whose post-jump exponent is ill-conditioned are skipped and counted.
    """
    e_t = log.at(t)
    times, vecs = [], []
    excluded = 0
    for k, tau in enumerate(traj.jump_times):
        if tau >= t:
            break
        e_tau = log.jump_post[k]
        if not np.all(np.isfinite(e_tau)) or not np.linalg.cond(e_tau) < CONDITION_CUTOFF:
            excluded += 1
            continue
        dv = delta(model, traj.pre_states[k], traj.jump_marks[k])
        vecs.append(e_t @ np.linalg.solve(e_tau, dv))
        times.append(tau)
    return InfluenceVectors(np.array(times), np.array(vecs).reshape(-1, model.m), excluded)


__all__ = [
    "NUMERIC_ZERO", "CONDITION_CUTOFF", "ExplosionError", "DivergenceError", "SimParams", "Trajectory",
    "ExponentLog", "NotInvertible", "InfluenceVectors", "TestFunction", "square_norm", "power_norm",
    "constant", "TEST_FUNCTIONS", "effective_drift", "compensated_drift", "delta", "hat_delta",
    "generator_apply", "path_key", "simulate_path", "BatchResult", "simulate_batch",
    "propagate_exponent", "jump_influence_vectors", "InfiniteMassError", "LevyMeasure",
]
