"""Rectangular binnings and binned probability laws with an overflow cell."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np


class BinningMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Binning:
    """Axis-aligned grid: ``counts[i]`` cells of width ``width[i]`` starting at ``origin[i]``."""

    origin: tuple
    width: tuple
    counts: tuple

    def __post_init__(self):
        origin = tuple(float(v) for v in np.atleast_1d(self.origin))
        width = tuple(float(v) for v in np.atleast_1d(self.width))
        counts = tuple(int(v) for v in np.atleast_1d(self.counts))
        if not (len(origin) == len(width) == len(counts)):
            raise ValueError("origin, width and counts must have equal length")
        if any(c <= 0 for c in counts):
            raise ValueError("degenerate binning: every axis needs at least one cell")
        if any(not (w > 0 and math.isfinite(w)) for w in width):
            raise ValueError("cell widths must be positive and finite")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def regular(cls, lower, upper, counts) -> "Binning":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        counts = np.broadcast_to(np.atleast_1d(counts), lower.shape)
        if np.any(upper <= lower):
            raise ValueError("upper edges must exceed lower edges")
        return cls(tuple(lower), tuple((upper - lower) / counts), tuple(counts))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def n_cells(self) -> int:
        """In-range cells; the overflow cell has index ``n_cells``."""
        return int(np.prod(self.counts))

    @property
    def arrays(self):
        return (np.array(self.origin), np.array(self.width), np.array(self.counts, dtype=np.int64))

    def edges(self, axis: int = 0) -> np.ndarray:
        return self.origin[axis] + self.width[axis] * np.arange(self.counts[axis] + 1)

    def cell_index(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        lo, w, n = self.arrays
        c = np.floor((X - lo) / w)
        inside = np.all((c >= 0) & (c < n), axis=1) & np.all(np.isfinite(X), axis=1)
        flat = np.zeros(len(X), dtype=np.int64)
        for i in range(self.dim):
            flat = flat * int(n[i]) + np.where(inside, c[:, i], 0).astype(np.int64)
        return np.where(inside, flat, self.n_cells)

    def cell_lower_corner(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        lo, w, n = self.arrays
        multi = np.unravel_index(idx, tuple(n))
        return np.column_stack([lo[i] + w[i] * multi[i] for i in range(self.dim)])

    def cell_centers(self) -> np.ndarray:
        return self.cell_lower_corner(np.arange(self.n_cells)) + 0.5 * np.array(self.width)

    def to_config(self) -> dict:
        return {"origin": list(self.origin), "width": list(self.width), "counts": list(self.counts)}

    @classmethod
    def from_config(cls, cfg: dict) -> "Binning":
        if "lower" in cfg:
            return cls.regular(cfg["lower"], cfg["upper"], cfg["counts"])
        return cls(tuple(cfg["origin"]), tuple(cfg["width"]), tuple(cfg["counts"]))


@dataclass(frozen=True)
class EmpiricalLaw:
    """Cell masses on a binning plus one overflow cell (last entry).

    ``overflow_points`` optionally keeps the raw samples that landed outside
    the grid so the law can be resampled without losing that mass.
    """

    binning: Binning
    masses: np.ndarray
    sample_count: int
    overflow_points: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=float).reshape(-1)
        if masses.size != self.binning.n_cells + 1:
            raise ValueError("mass vector must have one entry per cell plus the overflow cell")
        if np.any(masses < 0):
            raise ValueError("masses must be nonnegative")
        total = masses.sum()
        if abs(total - 1.0) > 1e-12:
            if total <= 0:
                raise ValueError("masses must have positive total")
            masses = masses / total
        masses.setflags(write=False)
        object.__setattr__(self, "masses", masses)
        pts = self.overflow_points
        pts = np.zeros((0, self.binning.dim)) if pts is None else np.asarray(pts, dtype=float).reshape(-1, self.binning.dim)
        object.__setattr__(self, "overflow_points", pts)

    @classmethod
    def from_samples(cls, binning: Binning, X) -> "EmpiricalLaw":
        X = np.asarray(X, dtype=float).reshape(-1, binning.dim)
        if len(X) == 0:
            raise ValueError("cannot build a law from zero samples")
        idx = binning.cell_index(X)
        counts = np.bincount(idx, minlength=binning.n_cells + 1).astype(float)
        over = X[idx == binning.n_cells]
        return cls(binning, counts / len(X), len(X), over)

    @classmethod
    def from_weights(cls, binning: Binning, weights, sample_count: int) -> "EmpiricalLaw":
        weights = np.asarray(weights, dtype=float)
        return cls(binning, weights / weights.sum(), sample_count)

    @property
    def overflow_mass(self) -> float:
        return float(self.masses[-1])

    def mean(self) -> np.ndarray:
        """Mean from cell centres (in-range mass only, renormalised)."""
        inner = self.masses[:-1]
        return (inner[:, None] * self.binning.cell_centers()).sum(axis=0) / inner.sum()

    def variance(self) -> np.ndarray:
        inner = self.masses[:-1]
        c = self.binning.cell_centers()
        mu = self.mean()
        return (inner[:, None] * (c - mu) ** 2).sum(axis=0) / inner.sum()

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` points: a cell by mass, then uniform within it.

        Overflow draws reuse stored overflow points; with none stored the
        in-range part is renormalised.
        """
        masses = np.array(self.masses)
        if masses[-1] > 0 and len(self.overflow_points) == 0:
            warnings.warn("law has overflow mass but no stored overflow points; renormalising", RuntimeWarning)
            masses[-1] = 0.0
            masses /= masses.sum()
        cells = gen.choice(len(masses), size=n, p=masses)
        out = np.empty((n, self.binning.dim))
        inner = cells < self.binning.n_cells
        corner = self.binning.cell_lower_corner(cells[inner])
        out[inner] = corner + gen.random((int(inner.sum()), self.binning.dim)) * np.array(self.binning.width)
        n_over = int((~inner).sum())
        if n_over:
            out[~inner] = self.overflow_points[gen.integers(len(self.overflow_points), size=n_over)]
        return out

    def to_config(self) -> dict:
        return {"binning": self.binning.to_config(), "masses": self.masses.tolist(),
                "sample_count": self.sample_count}


def tv_distance(a: EmpiricalLaw, b: EmpiricalLaw) -> float:
    """Half the L1 distance between two laws on the same binning, overflow cell included."""
    if a.binning != b.binning:
        raise BinningMismatch("laws are binned differently")
    if not np.any(np.minimum(a.masses, b.masses) > 0):
        return 1.0  # disjoint supports: exact, regardless of rounding in the masses
    return float(min(1.0, 0.5 * np.abs(a.masses - b.masses).sum()))


def overlap(a: EmpiricalLaw, b: EmpiricalLaw) -> float:
    if a.binning != b.binning:
        raise BinningMismatch("laws are binned differently")
    return float(np.minimum(a.masses, b.masses).sum())
