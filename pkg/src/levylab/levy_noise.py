"""Lévy measures and realisations of the driving Poisson point measure.

A measure is a finite list of atoms plus an optional diffuse part given in
polar form: a radial power-law density ``g(rho) = scale * rho**-exponent`` on
``(lower, upper]`` times a direction law. For the uniform direction law the
angular part is the (unnormalised) surface measure of the unit sphere, so in
one dimension ``g`` is the density on each half-line. For an explicit
direction list the angular part is a probability vector.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from . import rng as _rng


class InfiniteMassError(ValueError):
    """Raised when a required Lévy mass diverges."""


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d (2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


@dataclass(frozen=True)
class PowerLawRadial:
    scale: float
    exponent: float
    lower: float = 0.0
    upper: float = math.inf

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("radial scale must be positive")
        if not (0.0 <= self.lower < self.upper):
            raise ValueError("radial support must satisfy 0 <= lower < upper")

    def density(self, rho):
        rho = np.asarray(rho, dtype=float)
        inside = (rho > self.lower) & (rho <= self.upper) & (rho > 0)
        with np.errstate(divide="ignore"):
            val = self.scale * np.where(inside, rho, 1.0) ** (-self.exponent)
        return np.where(inside, val, 0.0)

    def mass(self, a: float, b: float) -> float:
        """Closed-form radial mass of ``[a, b]`` (``inf`` when divergent)."""
        a, b = max(a, self.lower), min(b, self.upper)
        if b <= a:
            return 0.0
        e = self.exponent
        if abs(e - 1.0) < 1e-12:
            if a == 0.0 or math.isinf(b):
                return math.inf
            return self.scale * math.log(b / a)
        if e > 1.0 and a == 0.0:
            return math.inf
        if e < 1.0 and math.isinf(b):
            return math.inf
        top = 0.0 if math.isinf(b) else b ** (1.0 - e)
        return self.scale * (top - a ** (1.0 - e)) / (1.0 - e)

    def moment(self, q: float, a: float, b: float) -> float:
        """``int_a^b rho**q g(rho) drho`` in closed form."""
        return PowerLawRadial(self.scale, self.exponent - q, self.lower, self.upper).mass(a, b)

    def inverse_cdf(self, v, a: float, b: float):
        """Radius with normalised mass fraction ``v`` on ``[a, b]``."""
        a, b = max(a, self.lower), min(b, self.upper)
        e = self.exponent
        v = np.asarray(v, dtype=float)
        if abs(e - 1.0) < 1e-12:
            return a * (b / a) ** v
        lo = a ** (1.0 - e)
        hi = 0.0 if math.isinf(b) else b ** (1.0 - e)
        return (lo + v * (hi - lo)) ** (1.0 / (1.0 - e))


@dataclass(frozen=True)
class DiffusePart:
    radial: PowerLawRadial
    directions: str | Sequence = "uniform"
    # explicit direction list: sequence of (unit vector, probability)

    def direction_table(self, d: int):
        """(directions (k, d), weights) with weights summing to the angular mass."""
        if isinstance(self.directions, str):
            if self.directions != "uniform":
                raise ValueError(f"unknown direction law {self.directions!r}")
            if d == 1:
                return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
            dirs = sphere_covering(d, 64)
            return dirs, np.full(len(dirs), sphere_area(d) / len(dirs))
        vecs = np.array([np.asarray(v, dtype=float).reshape(d) for v, _ in self.directions])
        probs = np.array([float(p) for _, p in self.directions])
        return vecs, probs

    def angular_mass(self, d: int) -> float:
        if isinstance(self.directions, str):
            return sphere_area(d)
        return 1.0


@dataclass(frozen=True)
class LevyMeasure:
    """Atomic plus optional diffuse jump intensity on R^d."""

    dim: int
    atom_marks: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    atom_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    diffuse: DiffusePart | None = None

    def __post_init__(self):
        marks = np.asarray(self.atom_marks, dtype=float).reshape(-1, self.dim)
        weights = np.asarray(self.atom_weights, dtype=float).reshape(-1)
        if len(marks) != len(weights):
            raise ValueError("atom marks and weights differ in length")
        if np.any(~np.isfinite(marks)) or np.any(~np.isfinite(weights)):
            raise ValueError("atoms must be finite")
        if np.any(weights <= 0):
            raise ValueError("atom weights must be positive")
        if np.any(np.linalg.norm(marks, axis=1) == 0):
            raise ValueError("an atom at the zero mark is not allowed")
        if len(np.unique(marks, axis=0)) != len(marks):
            raise ValueError("atom marks must be pairwise distinct; merge equal marks first")
        if self.diffuse is not None and not isinstance(self.diffuse.directions, str):
            vecs, probs = self.diffuse.direction_table(self.dim)
            if np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-12:
                raise ValueError("direction probabilities must be positive and sum to 1")
            if np.any(np.abs(np.linalg.norm(vecs, axis=1) - 1.0) > 1e-12):
                raise ValueError("direction vectors must have unit norm")
        marks.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atom_marks", marks)
        object.__setattr__(self, "atom_weights", weights)

    @classmethod
    def from_atoms(cls, atoms, dim: int | None = None, diffuse: DiffusePart | None = None):
        """``atoms`` is a sequence of ``(mark, weight)``; scalar marks mean d = 1."""
        atoms = list(atoms)
        if dim is None:
            dim = np.atleast_1d(np.asarray(atoms[0][0], dtype=float)).size if atoms else 1
        marks = np.array([np.atleast_1d(np.asarray(u, dtype=float)) for u, _ in atoms]).reshape(-1, dim)
        weights = np.array([w for _, w in atoms], dtype=float)
        return cls(dim=dim, atom_marks=marks, atom_weights=weights, diffuse=diffuse)

    @classmethod
    def zero(cls, dim: int = 1):
        return cls(dim=dim, atom_marks=np.zeros((0, dim)), atom_weights=np.zeros(0))

    @property
    def is_zero(self) -> bool:
        return len(self.atom_weights) == 0 and self.diffuse is None

    def atom_norms(self) -> np.ndarray:
        return np.linalg.norm(self.atom_marks, axis=1)

    def to_config(self) -> dict:
        cfg = {"atoms": [{"mark": m.tolist(), "weight": float(w)}
                         for m, w in zip(self.atom_marks, self.atom_weights)]}
        if self.diffuse is not None:
            r = self.diffuse.radial
            cfg["diffuse"] = {
                "radial": "power",
                "scale": r.scale,
                "exponent": r.exponent,
                "lower": r.lower,
                "upper": None if math.isinf(r.upper) else r.upper,
                "directions": self.diffuse.directions if isinstance(self.diffuse.directions, str)
                else [{"vector": list(map(float, v)), "prob": float(p)} for v, p in self.diffuse.directions],
            }
        return cfg

    @classmethod
    def from_config(cls, cfg: dict, dim: int | None = None) -> "LevyMeasure":
        atoms = [(a["mark"], a["weight"]) for a in cfg.get("atoms", [])]
        if dim is None:
            dim = len(np.atleast_1d(atoms[0][0])) if atoms else 1
        diffuse = None
        dcfg = cfg.get("diffuse")
        if dcfg:
            kind = dcfg.get("radial", "power")
            upper = dcfg.get("upper", dcfg.get("cutoff"))
            upper = math.inf if upper is None else float(upper)
            if kind == "pareto":
                exponent = 1.0 + float(dcfg["alpha"])
            elif kind == "power":
                exponent = float(dcfg["exponent"])
            else:
                raise ValueError(f"unknown radial law {kind!r}")
            radial = PowerLawRadial(float(dcfg.get("scale", 1.0)), exponent,
                                    float(dcfg.get("lower", 0.0)), upper)
            dirs = dcfg.get("directions", "uniform")
            if not isinstance(dirs, str):
                dirs = tuple((tuple(e["vector"]), float(e["prob"])) for e in dirs)
            diffuse = DiffusePart(radial, dirs)
        return cls.from_atoms(atoms, dim=dim, diffuse=diffuse)


@dataclass(frozen=True)
class PointMeasureRealization:
    horizon: float
    truncation: float
    times: np.ndarray
    marks: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("event times must be strictly increasing")
        if len(times) and (times[0] <= 0 or times[-1] > self.horizon):
            raise ValueError("event times must lie in (0, horizon]")
        if len(times) and np.any(np.linalg.norm(self.marks, axis=1) < self.truncation):
            raise ValueError("event marks must have norm >= truncation")

    def __len__(self):
        return len(self.times)


def sphere_covering(d: int, n: int) -> np.ndarray:
    """Deterministic, roughly uniform unit vectors in R^d."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        ang = 2 * math.pi * (np.arange(n) + 0.5) / n
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if d == 3:
        k = np.arange(n) + 0.5
        z = 1 - 2 * k / n
        phi = math.pi * (1 + 5 ** 0.5) * k
        r = np.sqrt(1 - z * z)
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    # Halton points pushed through the inverse normal CDF, then normalised
    from scipy.stats import norm, qmc

    pts = qmc.Halton(d, scramble=False).random(n + 1)[1:]
    g = norm.ppf(np.clip(pts, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# radial quadrature with divergence detection

def radial_integral(fun: Callable[[float], float], a: float, b: float, bound: float = 1e12) -> float:
    """``int_a^b fun`` by adaptive quadrature; ``inf`` if it diverges.

    Divergence at an endpoint (``a == 0`` or ``b == inf``) is detected by
    integrating over a growing sequence of truncated ranges and checking that
    the increments die out.
    """
    if b <= a:
        return 0.0

    def quad(lo, hi):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            # split at decades so the power-law shape stays well resolved
            edges = _log_edges(lo, hi)
            return sum(integrate.quad(fun, e0, e1, limit=200)[0] for e0, e1 in zip(edges[:-1], edges[1:]))

    lo_seq = [a] if a > 0 else [10.0 ** -k for k in (4, 8, 12, 16)]
    hi_seq = [b] if math.isfinite(b) else [10.0 ** k for k in (4, 8, 12, 16)]
    lo_seq = [lo for lo in lo_seq if lo < b] or [a]
    hi_seq = [hi for hi in hi_seq if hi > a] or [b]
    values = []
    for lo, hi in zip(lo_seq + [lo_seq[-1]] * (len(hi_seq) - len(lo_seq)),
                      hi_seq + [hi_seq[-1]] * (len(lo_seq) - len(hi_seq))):
        values.append(quad(lo, hi))
    total = values[-1]
    if not math.isfinite(total) or abs(total) > bound:
        return math.inf
    if len(values) >= 2:
        last_inc = abs(values[-1] - values[-2])
        if last_inc > 1e-6 * max(1.0, abs(values[-1])):
            return math.inf
    return total


def _log_edges(lo: float, hi: float) -> list[float]:
    if lo <= 0 or hi / lo < 10:
        return [lo, hi]
    n = int(math.ceil(math.log10(hi / lo)))
    return list(np.geomspace(lo, hi, n + 1))


def _diffuse_radial_integral(part: DiffusePart, fun, a, b, bound=1e12) -> float:
    r = part.radial
    a, b = max(a, r.lower), min(b, r.upper)
    if b <= a:
        return 0.0
    return radial_integral(lambda rho: fun(rho) * float(r.density(rho)), a, b, bound)


# ---------------------------------------------------------------------------
# operations

def total_rate(measure: LevyMeasure, truncation: float) -> float:
    """Mass of ``{||u|| >= truncation}``."""
    if truncation < 0:
        raise ValueError("truncation must be nonnegative")
    rate = float(measure.atom_weights[measure.atom_norms() >= truncation].sum())
    if measure.diffuse is not None:
        part = measure.diffuse
        mass = part.radial.mass(truncation, math.inf)
        if math.isinf(mass):
            raise InfiniteMassError(
                f"diffuse Lévy mass above truncation {truncation} diverges; use a positive truncation")
        rate += part.angular_mass(measure.dim) * mass
    return rate


def compensator_moment(measure: LevyMeasure, truncation: float, outer: float = 1.0) -> np.ndarray:
    """First moment ``int_{truncation <= ||u|| <= outer} u Pi(du)``."""
    norms = measure.atom_norms()
    sel = (norms >= truncation) & (norms <= outer)
    kappa = (measure.atom_weights[sel, None] * measure.atom_marks[sel]).sum(axis=0)
    kappa = np.asarray(kappa, dtype=float).reshape(measure.dim)
    part = measure.diffuse
    if part is not None and not isinstance(part.directions, str):
        vecs, probs = part.direction_table(measure.dim)
        mean_dir = (probs[:, None] * vecs).sum(axis=0)
        if np.any(mean_dir != 0):
            radial = part.radial.moment(1.0, truncation, outer)
            if math.isinf(radial):
                raise InfiniteMassError("compensator integral diverges for the diffuse part")
            kappa = kappa + radial * mean_dir
    # uniform direction law is symmetric: its first moment vanishes on every shell
    return kappa


def tail_moment(measure: LevyMeasure, q: float, bound: float = 1e12) -> float:
    """``int_{||u|| > 1} ||u||**q Pi(du)``, or ``inf`` when divergent."""
    if not q > 0:
        raise ValueError("q must be positive")
    norms = measure.atom_norms()
    sel = norms > 1.0
    value = float((measure.atom_weights[sel] * norms[sel] ** q).sum())
    if measure.diffuse is not None:
        part = measure.diffuse
        radial = part.radial.moment(q, 1.0, math.inf)
        if math.isinf(radial) or radial > bound:
            return math.inf
        value += part.angular_mass(measure.dim) * radial
    return value if value <= bound else math.inf


@dataclass(frozen=True)
class RegionMass:
    value: float
    error_bound: float

    def __float__(self):
        return self.value


def region_mass(measure: LevyMeasure, predicate: Callable[[np.ndarray], bool],
                truncation: float = 0.0, n_shells: int = 400,
                rho_range: tuple[float, float] = (1e-8, 1e8)) -> RegionMass:
    """Pi-mass of ``{u : predicate(u)}``.

    Atoms are enumerated exactly. The diffuse part is resolved on log-spaced
    radial shells along each direction of the angular table; shells whose
    endpoints and midpoint disagree on the predicate contribute their mass to
    the error bound. Below/above ``rho_range`` the predicate is assumed
    constant and evaluated at the range ends.
    """
    value = 0.0
    for mark, w in zip(measure.atom_marks, measure.atom_weights):
        if np.linalg.norm(mark) >= truncation and predicate(mark):
            value += float(w)
    error = 0.0
    part = measure.diffuse
    if part is not None:
        r = part.radial
        lo = max(r.lower, truncation)
        hi = r.upper
        dirs, weights = part.direction_table(measure.dim)
        inner = max(lo, rho_range[0])
        outer = min(hi, rho_range[1])
        edges = np.geomspace(inner, outer, n_shells + 1) if outer > inner else np.array([])
        shell_mass = np.array([r.mass(a, b) for a, b in zip(edges[:-1], edges[1:])])
        mids = np.sqrt(edges[:-1] * edges[1:]) if len(edges) else edges
        for theta, wt in zip(dirs, weights):
            at = [bool(predicate(rho * theta)) for rho in edges]
            mid = [bool(predicate(rho * theta)) for rho in mids]
            for i, m in enumerate(mid):
                if m:
                    value += wt * shell_mass[i]
                if not (at[i] == m == at[i + 1]):
                    error += wt * shell_mass[i]
            if len(edges):
                if lo < inner and at[0]:
                    value += wt * r.mass(lo, inner)
                if hi > outer and at[-1]:
                    value += wt * r.mass(outer, hi)
    return RegionMass(value, error)


# ---------------------------------------------------------------------------
# sampling

def _mark_table(measure: LevyMeasure, truncation: float):
    """Arrays describing the normalised truncated measure for the samplers."""
    d = measure.dim
    norms = measure.atom_norms()
    sel = norms >= truncation
    marks = np.ascontiguousarray(measure.atom_marks[sel], dtype=float).reshape(-1, d)
    weights = measure.atom_weights[sel]
    atom_cum = np.cumsum(weights) if len(weights) else np.zeros(0)
    atom_total = float(weights.sum())
    diff = np.zeros(8)
    dir_vecs = np.zeros((1, d))
    dir_cum = np.ones(1)
    part = measure.diffuse
    if part is not None:
        r = part.radial
        lo = max(r.lower, truncation)
        mass = r.mass(lo, r.upper)
        if math.isinf(mass):
            raise InfiniteMassError("diffuse mass above the truncation is infinite")
        if mass > 0:
            ang = part.angular_mass(d)
            diff[:] = [1.0, r.scale, r.exponent, lo, r.upper, 0.0, ang, ang * mass]
            if not isinstance(part.directions, str):
                diff[5] = 1.0
                dir_vecs, probs = part.direction_table(d)
                dir_cum = np.cumsum(probs)
                dir_cum[-1] = 1.0
    return marks, np.asarray(atom_cum, dtype=float), atom_total, diff, np.ascontiguousarray(dir_vecs), dir_cum


def draws_per_jump(d: int) -> int:
    """Stream slots consumed per jump: arrival, category, radius, direction pick, normals."""
    return 4 + 2 * ((d + 1) // 2)


def _marks_from_uniforms(table, d: int, u_cat, u_rad, u_dir, u_norm):
    """Map uniforms to marks; shared by the numpy samplers (mirrors the kernel)."""
    marks, atom_cum, atom_total, diff, dir_vecs, dir_cum = table
    rate = atom_total + diff[7]
    n = len(u_cat)
    out = np.zeros((n, d))
    w = u_cat * rate
    is_atom = w < atom_total
    if is_atom.any():
        idx = np.searchsorted(atom_cum, w[is_atom], side="right")
        idx = np.minimum(idx, len(atom_cum) - 1)
        out[is_atom] = marks[idx]
    rest = ~is_atom
    if rest.any():
        radial = PowerLawRadial(diff[1], diff[2], 0.0, diff[4])
        rho = radial.inverse_cdf(u_rad[rest], diff[3], diff[4])
        if diff[5] == 0.0:
            g = _box_muller(u_norm[rest], d)
            nrm = np.linalg.norm(g, axis=1, keepdims=True)
            theta = g / nrm
        else:
            k = np.searchsorted(dir_cum, u_dir[rest], side="right")
            theta = dir_vecs[np.minimum(k, len(dir_cum) - 1)]
        out[rest] = rho[:, None] * theta
    return out


def _box_muller(u: np.ndarray, d: int) -> np.ndarray:
    """Normals from pairs of uniforms; ``u`` has shape (n, 2*ceil(d/2))."""
    n_pairs = (d + 1) // 2
    cols = []
    for j in range(n_pairs):
        r = np.sqrt(-2.0 * np.log(u[:, 2 * j]))
        a = 2.0 * math.pi * u[:, 2 * j + 1]
        cols.append(r * np.cos(a))
        cols.append(r * np.sin(a))
    return np.column_stack(cols)[:, :d]


def sample_point_measure(measure: LevyMeasure, horizon: float, truncation: float,
                         rng: np.random.Generator) -> PointMeasureRealization:
    """Compound-Poisson sample of the point measure restricted to ``||u|| >= truncation``.

    Event count is Poisson(rate * horizon), times are i.i.d. uniform on
    ``(0, horizon]`` and sorted, marks i.i.d. from the normalised measure.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rate = total_rate(measure, truncation)
    d = measure.dim
    n = int(rng.poisson(rate * horizon)) if rate > 0 else 0
    times = np.sort(horizon * (1.0 - rng.random(n)))
    table = _mark_table(measure, truncation)
    width = 2 * ((d + 1) // 2)
    marks = _marks_from_uniforms(table, d, rng.random(n), rng.random(n), rng.random(n),
                                 1.0 - rng.random((n, width)))
    return PointMeasureRealization(horizon, truncation, times, marks)


def realization_from_key(measure: LevyMeasure, horizon: float, truncation: float,
                         key: int) -> PointMeasureRealization:
    """The realisation the simulation kernels draw for stream ``key``.

    Arrivals are generated by exponential spacings; slot layout per jump
    follows :func:`draws_per_jump`, so this reproduces the in-kernel draws.
    """
    rate = total_rate(measure, truncation)
    d = measure.dim
    if rate == 0:
        return PointMeasureRealization(horizon, truncation, np.zeros(0), np.zeros((0, d)))
    slots = draws_per_jump(d)
    key64 = np.uint64(key)
    times: list[float] = []
    t = 0.0
    k = 0
    chunk = max(16, int(2 * rate * horizon) + 16)
    while True:
        ks = np.arange(k, k + chunk)
        u = _rng.uniforms(key64, ks * slots)
        gaps = -np.log(u) / rate
        stop = False
        for g in gaps:
            t += g
            if t > horizon:
                stop = True
                break
            times.append(t)
        if stop:
            break
        k += chunk
    n = len(times)
    base = np.arange(n, dtype=np.uint64) * np.uint64(slots)
    table = _mark_table(measure, truncation)
    width = 2 * ((d + 1) // 2)
    u_norm = np.column_stack([_rng.uniforms(key64, base + np.uint64(4 + j)) for j in range(width)]) \
        if n else np.zeros((0, width))
    marks = _marks_from_uniforms(table, d,
                                 _rng.uniforms(key64, base + np.uint64(1)),
                                 _rng.uniforms(key64, base + np.uint64(2)),
                                 _rng.uniforms(key64, base + np.uint64(3)), u_norm)
    return PointMeasureRealization(horizon, truncation, np.array(times), marks.reshape(n, d))
