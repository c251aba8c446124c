"""Numerical checks of recurrence (R), non-degeneracy (N) and irreducibility (S)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .levy_noise import region_mass, sphere_covering
from .models import Model, numerical_jump_direction
from .sde_core import (
    NUMERIC_ZERO,
    NotInvertible,
    SimParams,
    TestFunction,
    compensated_drift,
    generator_apply,
    hat_delta,
    jump_influence_vectors,
    propagate_exponent,
    simulate_batch,
    simulate_path,
)
from .stats import wilson_interval

RING_FRACTION = 0.9


# ---------------------------------------------------------------------------
# condition R


@dataclass(frozen=True)
class RReport:
    alpha_hat: float | None
    gamma_hat: float | None
    margin: float | None
    violations: list
    phi_name: str
    phi_unbounded: bool
    gamma_by_alpha: dict
    verdict: str

    def to_dict(self) -> dict:
        return {
            "alpha_hat": self.alpha_hat, "gamma_hat": self.gamma_hat, "margin": self.margin,
            "violations": [list(map(float, v)) for v in self.violations], "phi_name": self.phi_name,
            "phi_unbounded": self.phi_unbounded,
            "gamma_by_alpha": {str(k): v for k, v in self.gamma_by_alpha.items()},
            "verdict": self.verdict,
        }


def _as_grid(grid, m: int) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    return g.reshape(-1, m)


def check_R(model: Model, phi: TestFunction, grid, alpha_grid: Sequence[float],
            gamma: float | None = None) -> RReport:
    """Lyapunov drift check ``A phi <= -alpha phi + gamma`` on a finite grid.

    For each alpha the smallest admissible gamma is the grid maximum of
    ``A phi + alpha phi``. It is declared finite when the maximum over the
    outer ring of the grid (norm at least 90% of the largest) does not
    exceed the maximum over the interior, i.e. the function does not keep
    growing toward the edge. The largest alpha with finite gamma is reported.
    Passing ``gamma`` fixes the constant and lists the grid points violating it.
    """
    if any(a <= 0 for a in alpha_grid):
        raise ValueError("alpha values must be positive")
    pts = _as_grid(grid, model.m)
    phis = np.array([phi.value(x) for x in pts])
    if np.any(phis < 0):
        raise ValueError("the test function must be nonnegative on the grid")
    gen = np.array([generator_apply(model, phi, x) for x in pts])
    norms = np.linalg.norm(pts, axis=1)
    ring = norms >= RING_FRACTION * norms.max()
    interior = ~ring
    if not interior.any():
        raise ValueError("grid too small to separate an interior from its boundary ring")

    gamma_by_alpha = {}
    for a in sorted(alpha_grid):
        vals = gen + a * phis
        inner_max = vals[interior].max()
        ring_max = vals[ring].max()
        finite = ring_max <= inner_max + 1e-9 * (1 + abs(inner_max))
        gamma_by_alpha[float(a)] = float(vals.max()) if finite else math.inf

    finite_alphas = [a for a, g in gamma_by_alpha.items() if math.isfinite(g)]
    phi_unbounded = bool(phis[ring].min() > np.quantile(phis[interior], 0.9))
    if not finite_alphas:
        return RReport(None, None, None, [], phi.name, phi_unbounded, gamma_by_alpha, "fail")
    alpha_hat = max(finite_alphas)
    gamma_hat = gamma_by_alpha[alpha_hat] if gamma is None else float(gamma)
    slack = -gen - alpha_hat * phis + gamma_hat
    tol = 1e-12 * (1 + np.abs(gen) + alpha_hat * phis)
    violations = [pts[i] for i in np.flatnonzero(slack < -tol)]
    verdict = "pass" if (not violations and phi_unbounded) else "fail"
    return RReport(float(alpha_hat), float(gamma_hat), float(slack.min()), violations, phi.name,
                   phi_unbounded, gamma_by_alpha, verdict)


# ---------------------------------------------------------------------------
# condition N: Monte Carlo rank counting


@dataclass(frozen=True)
class NReport:
    p_hat: float
    wilson_ci: tuple
    n_paths: int
    n_full_rank: int
    svd_tolerance: float
    excluded_jump_count: int
    t_star: float
    truncation: float
    verdict: str

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def numerical_rank(vectors: np.ndarray, rel_tol: float) -> int:
    if len(vectors) == 0:
        return 0
    s = np.linalg.svd(np.atleast_2d(vectors), compute_uv=False)
    if not s[0] > 0:
        return 0
    return int((s >= rel_tol * s[0]).sum())


def check_N_mc(model: Model, x_star, t_star: float, params: SimParams, svd_tol: float = 1e-9,
               stream: Sequence[int] = (1,)) -> NReport:
    """Fraction of paths from ``x_star`` whose jump-influence vectors span R^m at ``t_star``."""
    if t_star > params.horizon:
        raise ValueError("t_star must not exceed the simulation horizon")
    run = params.replace(horizon=t_star)
    full = 0
    excluded = 0
    for i in range(params.n_paths):
        traj = simulate_path(model, x_star, run, i, stream=stream, stops=[t_star])
        if traj.exploded:
            continue
        log = propagate_exponent(model, traj, truncation=params.truncation)
        infl = jump_influence_vectors(model, traj, log, t_star)
        excluded += infl.excluded
        if numerical_rank(infl.vectors, svd_tol) == model.m:
            full += 1
    n = params.n_paths
    ci = wilson_interval(full, n)
    verdict = "evidence for N" if ci[0] > 0 else "no evidence for N"
    return NReport(full / n, ci, n, full, svd_tol, excluded, float(t_star), params.truncation, verdict)


# ---------------------------------------------------------------------------
# condition N: static (Lévy-mass) route


@dataclass(frozen=True)
class StaticNReport:
    route: str
    epsilons: list
    min_mass: list          # per epsilon (single entry for the 1-d route)
    error_bound: list
    smallest_passing_epsilon: float | None
    verdict: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_N_static(model: Model, x_star, epsilon=None, n_directions: int = 64,
                   route: str = "auto") -> StaticNReport:
    """Lévy mass of marks whose corrected jump response is nonzero.

    The one-dimensional route measures ``{u : hat_delta(x*, u) != 0}``. The
    general route takes, over a deterministic covering of unit directions
    ``v``, the smallest mass of ``{u : (hat_delta, v) != 0, |c(x*, u)| < eps}``
    and does so for each ``eps`` in the given grid.
    """
    if route == "auto":
        route = "1d" if model.m == 1 else "nd"
    if route not in ("1d", "nd"):
        raise ValueError("route must be 'auto', '1d' or 'nd'")
    x_star = np.asarray(x_star, dtype=float).reshape(model.m)
    cache: dict = {}

    def response(u):
        key = tuple(np.round(np.asarray(u, dtype=float), 15))
        if key not in cache:
            cache[key] = hat_delta(model, x_star, u)
        return cache[key]

    if route == "1d":
        def pred(u):
            r = response(u)
            return not isinstance(r, NotInvertible) and bool(np.any(np.abs(r) > NUMERIC_ZERO))

        rm = region_mass(model.measure, pred)
        verdict = "pass" if rm.value > 0 else "fail"
        return StaticNReport("1d", [], [rm.value], [rm.error_bound], None, verdict)

    eps_grid = [math.inf] if epsilon is None else sorted(np.atleast_1d(epsilon).astype(float).tolist())
    directions = sphere_covering(model.m, n_directions)
    masses, errors = [], []
    for eps in eps_grid:
        worst, worst_err = math.inf, 0.0
        for v in directions:
            def pred(u, v=v, eps=eps):
                r = response(u)
                if isinstance(r, NotInvertible):
                    return False
                if not np.linalg.norm(model.jump(x_star, u)) < eps:
                    return False
                return abs(float(r @ v)) > NUMERIC_ZERO

            rm = region_mass(model.measure, pred)
            if rm.value < worst:
                worst, worst_err = rm.value, rm.error_bound
        masses.append(float(worst))
        errors.append(float(worst_err))
    passing = [e for e, mass in zip(eps_grid, masses) if mass > 0]
    smallest = min(passing) if passing else None
    verdict = "pass" if passing else "fail"
    return StaticNReport("nd", eps_grid, masses, errors, smallest, verdict)


# ---------------------------------------------------------------------------
# condition N: rank route


@dataclass(frozen=True)
class RankNReport:
    case: str
    determinant: float | None
    bracket: list | None
    singular_values: list
    rank: int
    cone_masses: dict
    verdict: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _fd_jacobian(fun, x, step):
    cols = []
    for e in np.eye(len(x)):
        cols.append((fun(x + step * e) - fun(x - step * e)) / (2 * step))
    return np.column_stack(cols)


def check_N_rank(model: Model, x_star, fd_step: float = 1e-5, cone_direction=None,
                 cone_aperture: float = 0.5, deltas: Sequence[float] = (1.0, 0.5, 0.1, 0.01)) -> RankNReport:
    """Local rank condition at ``x_star``.

    Additive noise: ``det grad a(x*) != 0``. State-dependent jumps: with
    ``chi(x) = d/du c(x, u)|_{u=0}`` the bracket ``grad a~ chi - (grad chi) a~``
    must have full row rank, where ``a~`` is the compensated drift. The
    cone probe reports the Lévy mass of ``{u : |(u, w)| >= aperture |u|, |u| <= delta}``.
    """
    if not fd_step > 0:
        raise ValueError("fd_step must be positive")
    x_star = np.asarray(x_star, dtype=float).reshape(model.m)
    w = np.eye(model.d)[0] if cone_direction is None else np.asarray(cone_direction, dtype=float).reshape(model.d)
    w = w / np.linalg.norm(w)
    cone = {}
    for dl in deltas:
        rm = region_mass(model.measure,
                         lambda u, dl=dl: (np.linalg.norm(u) <= dl
                                           and abs(float(np.dot(u, w))) >= cone_aperture * np.linalg.norm(u)))
        cone[float(dl)] = rm.value
    if model.case == "B":
        jac = model.drift_jacobian(x_star)
        det = float(np.linalg.det(jac))
        sv = np.linalg.svd(jac, compute_uv=False)
        ok = abs(det) > NUMERIC_ZERO
        return RankNReport("B", det, None, sv.tolist(), int((sv > NUMERIC_ZERO).sum()), cone,
                           "pass" if ok else "fail")
    atilde = compensated_drift(model, x_star)
    grad_atilde = _fd_jacobian(lambda y: compensated_drift(model, y), x_star, fd_step)
    chi = numerical_jump_direction(model, x_star, fd_step)
    chi_along = (numerical_jump_direction(model, x_star + fd_step * atilde, fd_step)
                 - numerical_jump_direction(model, x_star - fd_step * atilde, fd_step)) / (2 * fd_step)
    bracket = grad_atilde @ chi - chi_along
    sv = np.linalg.svd(bracket, compute_uv=False)
    scale = max(1.0, float(sv[0])) if len(sv) else 1.0
    rank = int((sv > 1e-6 * scale).sum())
    return RankNReport("A", None, bracket.tolist(), sv.tolist(), rank, cone,
                       "pass" if rank == model.m else "fail")


# ---------------------------------------------------------------------------
# condition S


@dataclass(frozen=True)
class SRow:
    radius: float
    start: list
    freq_at_t: float
    freq_path: float
    n_paths: int


@dataclass(frozen=True)
class SReport:
    x_star: list
    t: float
    epsilon: float
    rows: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"x_star": self.x_star, "t": self.t, "epsilon": self.epsilon,
                "rows": [r.__dict__ for r in self.rows],
                "verdicts": {str(k): v for k, v in self.verdicts.items()}}


def starting_points(m: int, radius: float, n_points: int = 8) -> np.ndarray:
    """Deterministic covering of the sphere of ``radius`` plus the origin."""
    sphere = radius * sphere_covering(m, n_points) if radius > 0 else np.zeros((0, m))
    return np.vstack([np.zeros((1, m)), sphere])


def check_S(model: Model, x_star, radius_list: Sequence[float], t: float, epsilon: float,
            params: SimParams, n_points: int = 8, backend: str | None = None,
            workers: int = 1) -> SReport:
    """Hit frequencies of the ``epsilon``-ball around ``x_star``.

    For every start, ``freq_at_t`` counts paths with ``|X(t) - x*| < eps`` and
    ``freq_path`` those whose path came that close at some stop in
    ``[0, t]``. The verdict per radius uses ``freq_path``: evidence for S
    iff every start has a positive frequency.
    """
    x_star = np.asarray(x_star, dtype=float).reshape(model.m)
    run = params.replace(horizon=t)
    rows, verdicts = [], {}
    for ri, radius in enumerate(radius_list):
        ok = True
        for si, start in enumerate(starting_points(model.m, float(radius), n_points)):
            res = simulate_batch(model, start, run, [t], stream=(2, ri, si), target=x_star,
                                 backend=backend, workers=workers)
            alive = ~np.isfinite(res.explosion_times)
            at_t = np.linalg.norm(res.states[:, 0] - x_star, axis=1) < epsilon
            f_t = float(np.mean(at_t & alive))
            f_path = float(np.mean(res.min_distance < epsilon))
            rows.append(SRow(float(radius), start.tolist(), f_t, f_path, run.n_paths))
            ok &= f_path > 0
        verdicts[float(radius)] = "evidence for S" if ok else "no evidence for S"
    return SReport(x_star.tolist(), float(t), float(epsilon), rows, verdicts)
