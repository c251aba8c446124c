"""Registry of drift/jump coefficient families.

Coefficients are never accepted as code. A model is a registry name plus
numeric parameters, packed into a float array ``p`` and an int array ``ip``
so that the compiled kernels can evaluate them. ``ip`` always starts with
``(kind, m, d)``.

Every registered jump coefficient is linear in the mark,
``c(x, u) = sum_k u_k v_k(x)``, which lets the small-jump compensator be
evaluated as ``c(x, kappa)`` with ``kappa`` the truncated first moment of the
Lévy measure.

Two drift conventions are supported. ``"ito"`` reads the equation with small
jumps compensated, so between simulated jumps the state follows
``a(x) - c(x, kappa)``. ``"raw"`` takes ``a`` to be the drift between jumps
and applies no compensation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ._accel import jit
from .levy_noise import LevyMeasure, compensator_moment

POLY1D = 0
LINEAR_ND = 1
MULT_1D = 2
LINEAR_MULT_ND = 3
EXAMPLE_5_1 = 4
EXAMPLE_5_2 = 5

CONVENTIONS = ("ito", "raw")


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# kernel-side evaluation


@jit(no_alloc=True)
def _smoothstep(t):
    return t * t * (3.0 - 2.0 * t)


@jit(no_alloc=True)
def drift_into(p, ip, x, out):
    kind = ip[0]
    m = ip[1]
    # polynomial loops are written out: calling a helper that takes an array
    # from inside a branch defeats numba's refcount pruning
    if kind == POLY1D or kind == MULT_1D:
        acc = 0.0
        for k in range(ip[3] - 1, -1, -1):
            acc = acc * x[0] + p[k]
        out[0] = acc
    elif kind == LINEAR_ND or kind == LINEAR_MULT_ND:
        for i in range(m):
            acc = p[m * m + i]
            for j in range(m):
                acc += p[i * m + j] * x[j]
            out[i] = acc
    elif kind == EXAMPLE_5_1:
        ax = abs(x[0])
        h = 1.0 if ax >= 1.0 else x[0] * x[0] * (3.0 - 2.0 * ax)
        out[0] = -p[0] * h
    elif kind == EXAMPLE_5_2:
        v = x[0]
        ax = abs(v)
        if ax <= 1.0:
            out[0] = 0.0
        elif ax >= 2.0:
            out[0] = -v
        else:
            s = ax - 1.0
            f = s * s * (3.0 * s - 5.0)
            out[0] = f if v > 0 else -f


@jit(no_alloc=True)
def drift_jac_into(p, ip, x, out):
    kind = ip[0]
    m = ip[1]
    if kind == POLY1D or kind == MULT_1D:
        acc = 0.0
        for k in range(ip[3] - 1, 0, -1):
            acc = acc * x[0] + k * p[k]
        out[0, 0] = acc
    elif kind == LINEAR_ND or kind == LINEAR_MULT_ND:
        for i in range(m):
            for j in range(m):
                out[i, j] = p[i * m + j]
    elif kind == EXAMPLE_5_1:
        ax = abs(x[0])
        if ax >= 1.0:
            out[0, 0] = 0.0
        else:
            # h = 3x^2 - 2|x|^3, h' = 6x - 6x|x|
            out[0, 0] = -p[0] * (6.0 * x[0] - 6.0 * x[0] * ax)
    elif kind == EXAMPLE_5_2:
        ax = abs(x[0])
        if ax <= 1.0:
            out[0, 0] = 0.0
        elif ax >= 2.0:
            out[0, 0] = -1.0
        else:
            s = ax - 1.0
            out[0, 0] = 9.0 * s * s - 10.0 * s


@jit(no_alloc=True)
def _chi_ex52(v):
    ax = abs(v)
    if ax >= 2.0:
        mag = 1.0
    else:
        mag = _smoothstep(0.5 * ax)
    return mag if v >= 0 else -mag


@jit(no_alloc=True)
def _chi_ex52_deriv(v):
    ax = abs(v)
    if ax >= 2.0:
        return 0.0
    t = 0.5 * ax
    return 3.0 * t * (1.0 - t)


@jit(no_alloc=True)
def jump_into(p, ip, x, u, out):
    """out = c(x, u)."""
    kind = ip[0]
    m = ip[1]
    d = ip[2]
    if kind == POLY1D or kind == LINEAR_ND or kind == EXAMPLE_5_1:
        for i in range(m):
            out[i] = u[i]
    elif kind == MULT_1D:
        acc = 0.0
        for k in range(ip[4] - 1, -1, -1):
            acc = acc * x[0] + p[ip[3] + k]
        out[0] = acc * u[0]
    elif kind == EXAMPLE_5_2:
        out[0] = _chi_ex52(x[0]) * u[0]
    elif kind == LINEAR_MULT_ND:
        for i in range(m):
            out[i] = 0.0
        base = m * m + m
        stride = m * m + m
        for k in range(d):
            off = base + k * stride
            uk = u[k]
            if uk == 0.0:
                continue
            for i in range(m):
                acc = p[off + m * m + i]
                for j in range(m):
                    acc += p[off + i * m + j] * x[j]
                out[i] += uk * acc


@jit(no_alloc=True)
def jump_jac_into(p, ip, x, u, out):
    """out = grad_x c(x, u)."""
    kind = ip[0]
    m = ip[1]
    d = ip[2]
    for i in range(m):
        for j in range(m):
            out[i, j] = 0.0
    if kind == MULT_1D:
        acc = 0.0
        for k in range(ip[4] - 1, 0, -1):
            acc = acc * x[0] + k * p[ip[3] + k]
        out[0, 0] = acc * u[0]
    elif kind == EXAMPLE_5_2:
        out[0, 0] = _chi_ex52_deriv(x[0]) * u[0]
    elif kind == LINEAR_MULT_ND:
        base = m * m + m
        stride = m * m + m
        for k in range(d):
            off = base + k * stride
            for i in range(m):
                for j in range(m):
                    out[i, j] += u[k] * p[off + i * m + j]


@jit(no_alloc=True)
def eff_drift_into(p, ip, kappa, x, out, tmp):
    """out = a(x) - c(x, kappa); ``tmp`` is scratch of length m."""
    drift_into(p, ip, x, out)
    jump_into(p, ip, x, kappa, tmp)
    for i in range(ip[1]):
        out[i] -= tmp[i]


@jit(no_alloc=True)
def eff_drift_jac_into(p, ip, kappa, x, out, tmp):
    """out = grad a(x) - grad_x c(x, kappa); ``tmp`` is m-by-m scratch."""
    drift_jac_into(p, ip, x, out)
    jump_jac_into(p, ip, x, kappa, tmp)
    m = ip[1]
    for i in range(m):
        for j in range(m):
            out[i, j] -= tmp[i, j]


@jit(no_alloc=True)
def rk4_step(p, ip, kappa, x, h, ws):
    """Advance ``x`` in place by one classical Runge-Kutta step of size ``h``.

    ``ws`` is a (6, m) workspace: rows 0-3 hold the stages, row 4 the trial
    point and row 5 compensator scratch.
    """
    m = ip[1]
    k1 = ws[0]
    k2 = ws[1]
    k3 = ws[2]
    k4 = ws[3]
    y = ws[4]
    tmp = ws[5]
    eff_drift_into(p, ip, kappa, x, k1, tmp)
    for i in range(m):
        y[i] = x[i] + 0.5 * h * k1[i]
    eff_drift_into(p, ip, kappa, y, k2, tmp)
    for i in range(m):
        y[i] = x[i] + 0.5 * h * k2[i]
    eff_drift_into(p, ip, kappa, y, k3, tmp)
    for i in range(m):
        y[i] = x[i] + h * k3[i]
    eff_drift_into(p, ip, kappa, y, k4, tmp)
    for i in range(m):
        x[i] += h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0


# ---------------------------------------------------------------------------
# python-side model


@dataclass(frozen=True)
class Model:
    name: str
    params: dict
    kind: int
    m: int
    d: int
    case: str
    measure: LevyMeasure
    p: np.ndarray = field(repr=False)
    ip: np.ndarray = field(repr=False)
    convention: str = "ito"

    def __post_init__(self):
        if self.case not in ("A", "B"):
            raise ModelError("case must be 'A' or 'B'")
        if self.convention not in CONVENTIONS:
            raise ModelError(f"convention must be one of {CONVENTIONS}")
        if self.measure.dim != self.d:
            raise ModelError(f"Lévy measure lives in R^{self.measure.dim}, model noise dimension is {self.d}")
        if self.case == "B" and self.m != self.d:
            raise ModelError("additive-noise models need state and noise dimensions equal")
        for arr in (self.p, self.ip):
            arr.setflags(write=False)
        if self.case == "A":
            self._spot_check_growth()

    # scalar evaluation helpers (work on numpy arrays of shape (m,) / (d,))
    def drift(self, x) -> np.ndarray:
        out = np.empty(self.m)
        drift_into(self.p, self.ip, _vec(x, self.m), out)
        return out

    def drift_jacobian(self, x) -> np.ndarray:
        out = np.empty((self.m, self.m))
        drift_jac_into(self.p, self.ip, _vec(x, self.m), out)
        return out

    def jump(self, x, u) -> np.ndarray:
        out = np.empty(self.m)
        jump_into(self.p, self.ip, _vec(x, self.m), _vec(u, self.d), out)
        return out

    def jump_jacobian(self, x, u) -> np.ndarray:
        out = np.empty((self.m, self.m))
        jump_jac_into(self.p, self.ip, _vec(x, self.m), _vec(u, self.d), out)
        return out

    def jump_scale(self, x) -> float:
        """A growth bound ``psi(x)`` with ``||c(x, u)|| <= psi(x) ||u||``."""
        x = _vec(x, self.m)
        cols = np.column_stack([self.jump(x, e) for e in np.eye(self.d)])
        # Cauchy-Schwarz over the mark coordinates
        return float(np.sqrt((cols ** 2).sum()))

    def compensator(self, truncation: float) -> np.ndarray:
        """Mark vector ``kappa`` with ``c(x, kappa) = int c(x, u) Pi(du)`` over small jumps."""
        if self.convention == "raw":
            return np.zeros(self.d)
        return compensator_moment(self.measure, truncation)

    def with_measure(self, measure: LevyMeasure) -> "Model":
        return Model(self.name, self.params, self.kind, self.m, self.d, self.case, measure,
                     self.p.copy(), self.ip.copy(), self.convention)

    def with_convention(self, convention: str) -> "Model":
        return Model(self.name, self.params, self.kind, self.m, self.d, self.case, self.measure,
                     self.p.copy(), self.ip.copy(), convention)

    def to_config(self) -> dict:
        return {"name": self.name, "params": _jsonable(self.params),
                "measure": self.measure.to_config(), "convention": self.convention}

    def _spot_check_growth(self, n: int = 64):
        gen = np.random.default_rng(20240917)
        for _ in range(n):
            x = gen.normal(scale=3.0, size=self.m)
            u = gen.normal(size=self.d)
            lhs = np.linalg.norm(self.jump(x, u))
            rhs = self.jump_scale(x) * np.linalg.norm(u)
            if not lhs <= rhs * (1 + 1e-12) + 1e-14:
                raise ModelError(f"jump coefficient violates its growth bound at x={x}, u={u}")


def _vec(x, n: int) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(x, dtype=float).reshape(-1))
    if arr.size != n:
        raise ModelError(f"expected a vector of length {n}, got {arr.size}")
    return arr


def _jsonable(obj: Any):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# constructors


def _finite(arr, what):
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{what} must be finite")
    return arr


def _build(name, params, kind, m, d, case, measure, p, extra_ip=(), convention="ito"):
    ip = np.array([kind, m, d, *extra_ip], dtype=np.int64)
    return Model(name, dict(params), kind, m, d, case, measure,
                 np.ascontiguousarray(p, dtype=float), ip, convention)


def ou_jump(theta: float = 1.0, measure: LevyMeasure | None = None, convention: str = "ito") -> Model:
    """Scalar Ornstein-Uhlenbeck drift ``-theta x`` with additive jumps."""
    theta = float(_finite(theta, "theta"))
    measure = measure if measure is not None else LevyMeasure.from_atoms([(1.0, 1.0)])
    return _build("ou_jump", {"theta": theta}, POLY1D, 1, 1, "B", measure,
                  [0.0, -theta], (2,), convention)


def poly1d(coeffs, measure: LevyMeasure | None = None, convention: str = "ito") -> Model:
    """Scalar polynomial drift ``sum coeffs[k] x**k`` with additive jumps."""
    coeffs = _finite(coeffs, "coeffs").reshape(-1)
    if coeffs.size == 0:
        coeffs = np.zeros(1)
    measure = measure if measure is not None else LevyMeasure.zero(1)
    return _build("poly1d", {"coeffs": coeffs.tolist()}, POLY1D, 1, 1, "B", measure,
                  coeffs, (coeffs.size,), convention)


def linear_nd(matrix, offset=None, measure: LevyMeasure | None = None, convention: str = "ito") -> Model:
    """Affine drift ``M x + b`` with additive jumps in R^m."""
    mat = np.atleast_2d(_finite(matrix, "matrix"))
    m = mat.shape[0]
    if mat.shape != (m, m):
        raise ModelError("drift matrix must be square")
    off = np.zeros(m) if offset is None else _finite(offset, "offset").reshape(m)
    measure = measure if measure is not None else LevyMeasure.zero(m)
    params = {"matrix": mat.tolist(), "offset": off.tolist()}
    return _build("linear_nd", params, LINEAR_ND, m, m, "B", measure,
                  np.concatenate([mat.ravel(), off]), (), convention)


def multiplicative_1d(drift_coeffs, chi_coeffs, measure: LevyMeasure | None = None,
                      convention: str = "ito") -> Model:
    """Scalar polynomial drift with ``c(x, u) = chi(x) u`` for a polynomial ``chi``."""
    dc = _finite(drift_coeffs, "drift_coeffs").reshape(-1)
    cc = _finite(chi_coeffs, "chi_coeffs").reshape(-1)
    if dc.size == 0 or cc.size == 0:
        raise ModelError("coefficient lists must be nonempty")
    measure = measure if measure is not None else LevyMeasure.zero(1)
    params = {"drift_coeffs": dc.tolist(), "chi_coeffs": cc.tolist()}
    return _build("multiplicative_1d", params, MULT_1D, 1, 1, "A", measure,
                  np.concatenate([dc, cc]), (dc.size, cc.size), convention)


def linear_multiplicative(matrix, offset=None, jump_matrices=None, jump_vectors=None,
                          measure: LevyMeasure | None = None, convention: str = "ito") -> Model:
    """Affine drift with ``c(x, u) = sum_k u_k (B_k x + g_k)``; state-dependent jumps in R^m."""
    mat = np.atleast_2d(_finite(matrix, "matrix"))
    m = mat.shape[0]
    if mat.shape != (m, m):
        raise ModelError("drift matrix must be square")
    off = np.zeros(m) if offset is None else _finite(offset, "offset").reshape(m)
    if jump_matrices is None and jump_vectors is None:
        raise ModelError("give jump_matrices and/or jump_vectors")
    if jump_matrices is not None:
        bs = _finite(jump_matrices, "jump_matrices").reshape(-1, m, m)
        d = bs.shape[0]
    else:
        d = len(jump_vectors)
        bs = np.zeros((d, m, m))
    gs = np.zeros((d, m)) if jump_vectors is None else _finite(jump_vectors, "jump_vectors").reshape(d, m)
    measure = measure if measure is not None else LevyMeasure.zero(d)
    blocks = [mat.ravel(), off]
    for b, g in zip(bs, gs):
        blocks += [b.ravel(), g]
    params = {"matrix": mat.tolist(), "offset": off.tolist(),
              "jump_matrices": bs.tolist(), "jump_vectors": gs.tolist()}
    return _build("linear_multiplicative", params, LINEAR_MULT_ND, m, d, "A", measure,
                  np.concatenate(blocks), (), convention)


def example_5_1(c: float = 0.5, measure: LevyMeasure | None = None, convention: str = "raw") -> Model:
    """Constant drift ``-c`` outside ``[-1, 1]``, C^1 interpolant inside; jumps +1 (rate 2), -1 (rate 1)."""
    c = float(c)
    if not 0.0 < c < 1.0:
        raise ModelError("example_5_1 needs 0 < c < 1")
    measure = measure if measure is not None else LevyMeasure.from_atoms([(1.0, 2.0), (-1.0, 1.0)])
    return _build("example_5_1", {"c": c}, EXAMPLE_5_1, 1, 1, "B", measure, [c], (), convention)


def example_5_2(measure: LevyMeasure | None = None, convention: str = "raw") -> Model:
    """Flat drift on ``[-1, 1]``, ``-x`` beyond 2; sign-preserving jump coefficient; unit jumps."""
    measure = measure if measure is not None else LevyMeasure.from_atoms([(1.0, 1.0)])
    return _build("example_5_2", {}, EXAMPLE_5_2, 1, 1, "A", measure, [0.0], (), convention)


REGISTRY = {
    "ou_jump": ou_jump,
    "poly1d": poly1d,
    "linear_nd": linear_nd,
    "multiplicative_1d": multiplicative_1d,
    "linear_multiplicative": linear_multiplicative,
    "example_5_1": example_5_1,
    "example_5_2": example_5_2,
}


def build_model(name: str, params: dict | None = None, measure: LevyMeasure | dict | None = None,
                convention: str | None = None) -> Model:
    """Construct a registered model from its name and numeric parameters."""
    if name not in REGISTRY:
        raise ModelError(f"unknown model {name!r}; known: {sorted(REGISTRY)}")
    kwargs = dict(params or {})
    if isinstance(measure, dict):
        dim = _noise_dim(name, kwargs)
        measure = LevyMeasure.from_config(measure, dim=dim)
    if measure is not None:
        kwargs["measure"] = measure
    if convention is not None:
        kwargs["convention"] = convention
    try:
        return REGISTRY[name](**kwargs)
    except TypeError as exc:
        raise ModelError(f"bad parameters for {name}: {exc}") from exc


def _noise_dim(name: str, params: dict) -> int:
    if name == "linear_nd":
        return int(np.atleast_2d(params["matrix"]).shape[0])
    if name == "linear_multiplicative":
        if params.get("jump_matrices") is not None:
            m = int(np.atleast_2d(params["matrix"]).shape[0])
            return int(np.asarray(params["jump_matrices"], dtype=float).reshape(-1, m, m).shape[0])
        return len(params["jump_vectors"])
    return 1


def model_from_config(cfg: dict) -> Model:
    return build_model(cfg["name"], cfg.get("params"), cfg.get("measure"), cfg.get("convention"))


def numerical_jump_direction(model: Model, x, step: float = 1e-5) -> np.ndarray:
    """``chi(x)``: Jacobian of ``u -> c(x, u)`` at ``u = 0`` by central differences."""
    x = _vec(x, model.m)
    cols = []
    for e in np.eye(model.d):
        cols.append((model.jump(x, step * e) - model.jump(x, -step * e)) / (2 * step))
    return np.column_stack(cols)
