"""Self-checking experiments for the counterexample models and the one-dimensional ergodicity scenario."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import stats

from .binning import Binning, tv_distance
from .coupling import DecayFit, khasminskii_average, tv_decay_curve
from .levy_noise import LevyMeasure, tail_moment, total_rate
from .models import build_model, example_5_1, example_5_2
from .rng import derive_key, generator
from .sde_core import SimParams, simulate_batch
from .stats import wilson_interval


class PreconditionError(ValueError):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Fraction):
        return str(obj)
    return obj


class _Report:
    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


# ---------------------------------------------------------------------------
# rotation chain on the circle with exact arithmetic


@dataclass(frozen=True)
class CircleState:
    """A point ``numerator / denominator`` of the circle ``[0, 1)``, kept in lowest terms."""

    numerator: int
    denominator: int

    def __post_init__(self):
        if self.denominator <= 0 or not 0 <= self.numerator < self.denominator:
            raise ValueError("circle states need 0 <= numerator < denominator")
        if math.gcd(self.numerator, self.denominator) != 1:
            raise ValueError("circle states must be in lowest terms")

    @classmethod
    def of(cls, value) -> "CircleState":
        z = Fraction(value) % 1
        return cls(z.numerator, z.denominator)

    @property
    def value(self) -> Fraction:
        return Fraction(self.numerator, self.denominator)


def _check_p(p: float):
    if not 0 < p < 1 / 6:
        raise PreconditionError(f"p must satisfy 0 < p < 1/6 (got {p})")


def circle_kernel(z: CircleState, p) -> dict:
    """Exact transition law from ``z``; coinciding branches have their masses merged."""
    _check_p(float(p))
    p = Fraction(p)
    v = z.value
    law: dict = {}
    for target, w in (((3 * v) % 1, 1 - 3 * p), (v / 3, p), ((v + 1) / 3, p), ((v + 2) / 3, p)):
        s = CircleState.of(target)
        law[s] = law.get(s, Fraction(0)) + w
    return law


def circle_step(z: CircleState, p: float, gen: np.random.Generator) -> CircleState:
    _check_p(p)
    u = gen.random()
    v = z.value
    if u < 1 - 3 * p:
        return CircleState.of(3 * v)
    branch = min(int((u - (1 - 3 * p)) / p), 2)
    return CircleState.of((v + branch) / 3)


def _is_power_of_3(n: int) -> bool:
    while n % 3 == 0:
        n //= 3
    return n == 1


def denominator_class(z: CircleState) -> str:
    """``"3^k"`` or ``"2*3^k"`` when the denominator has that form, else ``"other"``."""
    if _is_power_of_3(z.denominator):
        return "3^k"
    if z.denominator % 2 == 0 and _is_power_of_3(z.denominator // 2):
        return "2*3^k"
    return "other"


def circle_occupation(start, p: float, n_steps: int, n_paths: int, gen: np.random.Generator,
                      expected_class: str | None = None) -> Counter:
    """Visit counts of the states along ``n_paths`` chains of ``n_steps`` steps (start excluded)."""
    counts: Counter = Counter()
    z0 = CircleState.of(start)
    for _ in range(n_paths):
        z = z0
        for _ in range(n_steps):
            z = circle_step(z, p, gen)
            if expected_class is not None and denominator_class(z) != expected_class:
                raise AssertionError(f"state {z.value} left the {expected_class} class")
            counts[z] += 1
    return counts


def exact_tv(a: Counter, b: Counter) -> Fraction:
    na, nb = sum(a.values()), sum(b.values())
    keys = set(a) | set(b)
    return sum((abs(Fraction(a.get(k, 0), na) - Fraction(b.get(k, 0), nb)) for k in keys), Fraction(0)) / 2


# ---------------------------------------------------------------------------
# birth-death companion


@dataclass(frozen=True)
class BirthDeathState:
    level: int

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("level must be nonnegative")


def birth_death_path(p: float, n_steps: int, gen: np.random.Generator, start: int = 0) -> np.ndarray:
    """Levels of the chain that moves up with probability ``3p`` and otherwise down, floored at 0."""
    _check_p(p)
    up = gen.random(n_steps) < 3 * p
    out = np.empty(n_steps + 1, dtype=np.int64)
    level = BirthDeathState(start).level
    out[0] = level
    for i in range(n_steps):
        level = level + 1 if up[i] else max(level - 1, 0)
        out[i + 1] = level
    return out


def geometric_fit(samples: np.ndarray, r: float, min_expected: float = 5.0) -> tuple[float, float, int]:
    """Chi-square goodness of fit of integer samples to ``(1 - r) r^k``; the tail is pooled."""
    n = len(samples)
    k_max = 0
    while n * (1 - r) * r ** (k_max + 1) >= min_expected:
        k_max += 1
    probs = (1 - r) * r ** np.arange(k_max + 1)
    probs = np.append(probs, r ** (k_max + 1))
    observed = np.bincount(np.minimum(samples, k_max + 1), minlength=k_max + 2)
    chi2, pval = stats.chisquare(observed, n * probs)
    return float(chi2), float(pval), k_max + 2


@dataclass
class Example53Report(_Report):
    p: float
    n_steps: int
    n_paths: int
    tv_occupation: Fraction
    classes_from_zero: list
    classes_from_half: list
    birth_rate: float
    death_rate: float
    geometric_ratio: float
    up_frequency: float
    up_frequency_stderr: float
    chain_steps: int
    thinning_lag: int
    chi2: float
    chi2_pvalue: float
    chi2_cells: int
    stationary_zero_mass: float
    verdict: str


def run_example_5_3(p: float = 0.1, n_steps: int = 200, n_paths: int = 1000, chain_steps: int = 10**6,
                    thinning_lag: int = 50, seed: int = 0) -> Example53Report:
    """Two disjoint invariant supports on the circle, plus the birth-death companion chain."""
    _check_p(p)
    occ0 = circle_occupation(0, p, n_steps, n_paths, generator(derive_key(seed, 53, 0)), "3^k")
    occ_half = circle_occupation(Fraction(1, 2), p, n_steps, n_paths, generator(derive_key(seed, 53, 1)), "2*3^k")
    tv = exact_tv(occ0, occ_half)
    b, d = 3 * p, 1 - 3 * p
    r = b / d
    levels = birth_death_path(p, chain_steps, generator(derive_key(seed, 53, 2)))
    steps_up = np.diff(levels) > 0
    up_freq = float(steps_up.mean())
    thinned = levels[thinning_lag::thinning_lag]
    chi2, pval, cells = geometric_fit(thinned, r)
    ok = tv == 1 and pval > 0.01 and abs(up_freq - b) <= 3 * math.sqrt(b * (1 - b) / chain_steps)
    return Example53Report(
        p, n_steps, n_paths, tv,
        sorted({denominator_class(z) for z in occ0}), sorted({denominator_class(z) for z in occ_half}),
        b, d, r, up_freq, math.sqrt(b * (1 - b) / chain_steps), chain_steps, thinning_lag,
        chi2, pval, cells, float((thinned == 0).mean()), "pass" if ok else "fail")


# ---------------------------------------------------------------------------
# transient example: drift -c against a positive mean jump flux


@dataclass
class Example51Report(_Report):
    c: float
    horizon: float
    n_paths: int
    x0: float
    slope_oracle: float
    slope: float
    slope_plain: float
    slope_stderr: float
    slope_plain_stderr: float
    relative_error: float
    escape_count: int
    escape_fraction: float
    escape_wilson: tuple
    n_exploded: int
    verdict: str
    trace_t: list = field(default_factory=list)
    trace_mean: list = field(default_factory=list)


def _ols_slope(t, y):
    fit = stats.linregress(t, y)
    return float(fit.slope), float(fit.stderr)


def run_example_5_1(c: float = 0.5, horizon: float = 200.0, n_paths: int = 1000, x0: float = 5.0,
                    dt: float = 0.1, seed: int = 0, n_obs: int = 91, workers: int = 1) -> Example51Report:
    """Mean growth rate and the fraction of paths that never return below 1.

    The jump part has known mean ``t`` (unit jumps up at rate 2, down at
    rate 1), so the slope is estimated with that compensated sum as a control
    variate; the plain estimate is reported alongside.
    """
    if not 0 < c < 1:
        raise PreconditionError("c must satisfy 0 < c < 1")
    model = example_5_1(c)
    params = SimParams(dt=dt, horizon=horizon, n_paths=n_paths, seed=seed)
    obs = np.linspace(horizon / 10, horizon, n_obs)
    res = simulate_batch(model, [x0], params, obs, stream=(51,), workers=workers)
    x = res.states[:, :, 0]
    jumps = res.jump_sums[:, :, 0]
    jump_mean_rate = float(model.measure.atom_weights @ model.measure.atom_marks[:, 0])
    centred = x - (jumps - jump_mean_rate * obs)
    slope_cv = _ols_slope(obs, centred.mean(axis=0))[0]
    slope_plain = _ols_slope(obs, x.mean(axis=0))[0]

    def path_slopes(y):
        dy = y[:, -1] - y[:, 0]
        return dy / (obs[-1] - obs[0])

    se_cv = float(path_slopes(centred).std(ddof=1) / math.sqrt(n_paths))
    se_plain = float(path_slopes(x).std(ddof=1) / math.sqrt(n_paths))
    oracle = 1 - c
    escaped = int(np.sum(res.path_min[:, 0] > 1.0)) if x0 > 1 else 0
    lo, hi = wilson_interval(escaped, n_paths)
    rel = abs(slope_cv - oracle) / oracle
    ok = rel <= 0.05 and lo > 0
    return Example51Report(c, horizon, n_paths, x0, oracle, slope_cv, slope_plain, se_cv, se_plain, rel,
                           escaped, escaped / n_paths, (float(lo), float(hi)), res.n_exploded,
                           "pass" if ok else "fail", obs.tolist(), x.mean(axis=0).tolist())


# ---------------------------------------------------------------------------
# two invariant half-lines


@dataclass
class Example52Report(_Report):
    horizon: float
    n_paths: int
    exits_plus: int
    exits_minus: int
    min_from_plus: float
    max_from_minus: float
    tv_khasminskii: float
    overflow_plus: float
    overflow_minus: float
    verdict: str


EXAMPLE_5_2_BINNING = Binning.regular([-20.0], [20.0], [80])


def run_example_5_2(horizon: float = 100.0, n_paths: int = 1000, dt: float = 0.01, seed: int = 0,
                    binning: Binning = EXAMPLE_5_2_BINNING, workers: int = 1) -> Example52Report:
    """Paths from 2 stay in ``[1, inf)``, paths from -2 in ``(-inf, -1]``.

    The default binning has an edge at 0, so cells never straddle the two
    half-lines and the occupation laws are compared without overlap artefacts.
    """
    model = example_5_2()
    params = SimParams(dt=dt, horizon=horizon, n_paths=n_paths, seed=seed)
    plus = simulate_batch(model, [2.0], params, [horizon], stream=(52, 0), workers=workers)
    minus = simulate_batch(model, [-2.0], params, [horizon], stream=(52, 1), workers=workers)
    exits_plus = int(np.sum(plus.path_min[:, 0] < 1.0))
    exits_minus = int(np.sum(minus.path_max[:, 0] > -1.0))
    avg_plus = khasminskii_average(model, [2.0], horizon, params, binning, stream=(52, 2), workers=workers)
    avg_minus = khasminskii_average(model, [-2.0], horizon, params, binning, stream=(52, 3), workers=workers)
    tv = tv_distance(avg_plus, avg_minus)
    ok = exits_plus == 0 and exits_minus == 0 and tv == 1.0
    return Example52Report(horizon, n_paths, exits_plus, exits_minus, float(plus.path_min[:, 0].min()),
                           float(minus.path_max[:, 0].max()), tv, avg_plus.overflow_mass,
                           avg_minus.overflow_mass, "pass" if ok else "fail")


# ---------------------------------------------------------------------------
# one-dimensional exponential ergodicity scenario


@dataclass
class Prop01Report(_Report):
    model: dict
    q: float
    tail_moment: float
    total_rate: float
    drift_ratio_max: float
    violations: list
    t: list = field(default_factory=list)
    tv: list = field(default_factory=list)
    stderr: list = field(default_factory=list)
    noise_floor: list = field(default_factory=list)
    fit: dict | None = None
    tv_strictly_decreasing: bool | None = None
    invariant_mean: list | None = None
    invariant_variance: list | None = None
    verdict: str = "fail"


PROP01_BINNING = Binning.regular([-2.0], [8.0], [200])


def run_prop_0_1(drift_spec: dict | None = None, measure_spec: dict | LevyMeasure | None = None,
                 params: SimParams | None = None, q: float = 1.0, starts=(0.0, 5.0),
                 t_grid: Sequence[float] = tuple(range(1, 11)), binning: Binning = PROP01_BINNING,
                 invariant_horizon: float = 200.0, invariant_paths: int = 1000, ring: float = 50.0,
                 workers: int = 1) -> Prop01Report:
    """Check the two noise conditions and the dissipativity of the drift, then measure the decay.

    ``drift_spec`` is ``{"name": ..., "params": {...}, "convention": ...}``
    for a one-dimensional registered model; the default is the unit
    Ornstein-Uhlenbeck drift with jump measure ``delta_1``.
    """
    drift_spec = dict(drift_spec or {"name": "ou_jump", "params": {"theta": 1.0}, "convention": "raw"})
    if measure_spec is None:
        measure_spec = {"atoms": [{"mark": 1.0, "weight": 1.0}]}
    model = build_model(drift_spec["name"], drift_spec.get("params", {}), measure_spec,
                        drift_spec.get("convention", "raw"))
    if model.m != 1:
        raise PreconditionError("the scenario is one-dimensional")
    params = params or SimParams(dt=0.05, horizon=float(t_grid[-1]), n_paths=100_000, seed=0)

    violations = []
    tm = tail_moment(model.measure, q)
    if not math.isfinite(tm):
        violations.append(f"tail moment of order {q} beyond the unit ball is infinite")
    rate = total_rate(model.measure, 0.0)
    if rate == 0:
        violations.append("the jump measure is zero")
    xs = np.concatenate([np.linspace(-ring, -0.9 * ring, 50), np.linspace(0.9 * ring, ring, 50)])
    ratio = max(float(model.drift([x])[0] / x) for x in xs)
    if not ratio < 0:
        violations.append("drift is not dissipative on the outer ring")
    report = Prop01Report(model.to_config(), q, tm, rate, ratio, violations)
    if violations:
        report.verdict = "condition violated"
        return report

    curve = tv_decay_curve(model, [starts[0]], [starts[1]], t_grid, params, binning, workers=workers)
    resolved = curve.tv > 3 * curve.noise_floor
    tv_res = curve.tv[resolved]
    avg = khasminskii_average(model, [starts[0]], invariant_horizon,
                              params.replace(n_paths=invariant_paths), binning, workers=workers)
    report.t, report.tv = curve.t.tolist(), curve.tv.tolist()
    report.stderr, report.noise_floor = curve.stderr.tolist(), curve.noise_floor.tolist()
    report.fit = _fit_dict(curve.fit)
    report.tv_strictly_decreasing = bool(np.all(np.diff(tv_res) < 0))
    report.invariant_mean, report.invariant_variance = avg.time_mean.tolist(), avg.time_variance.tolist()
    ok = curve.fit.C2 is not None and curve.fit.C2 > 0 and report.tv_strictly_decreasing
    report.verdict = "pass" if ok else "fail"
    return report


def _fit_dict(fit: DecayFit) -> dict:
    return {"C1_emp": fit.C1, "C2_emp": fit.C2, "slope_pvalue": fit.slope_pvalue,
            "n_points": fit.n_points, "status": fit.status}


__all__ = [
    "PreconditionError", "CircleState", "circle_kernel", "circle_step", "denominator_class",
    "circle_occupation", "exact_tv", "BirthDeathState", "birth_death_path", "geometric_fit",
    "run_example_5_3", "run_example_5_1", "run_example_5_2", "run_prop_0_1",
    "Example51Report", "Example52Report", "Example53Report", "Prop01Report",
]
