import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from levylab.gallery import (
    BirthDeathState, CircleState, PreconditionError, birth_death_path, circle_kernel, circle_occupation,
    circle_step, denominator_class, exact_tv, geometric_fit, run_example_5_1, run_example_5_2,
    run_example_5_3, run_prop_0_1,
)
from levylab.sde_core import SimParams

P = Fraction(1, 10)


def test_kernel_from_zero_merges_atoms():
    law = circle_kernel(CircleState.of(0), P)
    assert law == {CircleState.of(0): Fraction(4, 5), CircleState.of(Fraction(1, 3)): Fraction(1, 10),
                   CircleState.of(Fraction(2, 3)): Fraction(1, 10)}


def test_kernel_from_half():
    law = circle_kernel(CircleState.of(Fraction(1, 2)), P)
    assert law == {CircleState.of(Fraction(1, 2)): Fraction(4, 5), CircleState.of(Fraction(1, 6)): P,
                   CircleState.of(Fraction(5, 6)): P}
    assert sum(law.values()) == 1


@given(st.integers(0, 6), st.integers(0, 728), st.booleans())
def test_kernel_preserves_denominator_class(k, num, doubled):
    den = 3 ** k * (2 if doubled else 1)
    z = CircleState.of(Fraction(num % den, den))
    cls = denominator_class(z)
    if cls == "other":
        return
    law = circle_kernel(z, P)
    assert sum(law.values()) == 1
    assert {denominator_class(s) for s in law} == {cls}


def test_zero_and_half_have_different_classes():
    assert denominator_class(CircleState.of(0)) == "3^k"
    assert denominator_class(CircleState.of(Fraction(1, 2))) == "2*3^k"
    assert denominator_class(CircleState.of(Fraction(1, 5))) == "other"


def test_circle_state_validation():
    with pytest.raises(ValueError):
        CircleState(2, 4)
    with pytest.raises(ValueError):
        CircleState(3, 3)


@pytest.mark.parametrize("p", [0.0, 1 / 6, 0.2, -0.1])
def test_p_outside_range_rejected(p):
    with pytest.raises(PreconditionError, match="p < 1/6"):
        circle_step(CircleState.of(0), p, np.random.default_rng(0))
    with pytest.raises(PreconditionError):
        run_example_5_3(p=p)


def test_occupations_from_distinct_classes_are_disjoint(rng):
    a = circle_occupation(0, 0.1, 50, 20, rng, "3^k")
    b = circle_occupation(Fraction(1, 2), 0.1, 50, 20, rng, "2*3^k")
    assert exact_tv(a, b) == 1
    assert exact_tv(a, a) == 0


def test_exact_tv_arithmetic():
    assert exact_tv(Counter({1: 1, 2: 1}), Counter({1: 2})) == Fraction(1, 2)


def test_birth_death_up_frequency(rng):
    levels = birth_death_path(0.1, 200_000, rng)
    up = np.diff(levels) > 0
    assert abs(up.mean() - 0.3) <= 3 * math.sqrt(0.21 / len(up))
    assert levels.min() == 0
    with pytest.raises(ValueError):
        BirthDeathState(-1)


def test_geometric_fit_accepts_true_geometric(rng):
    r = 0.3 / 0.7
    samples = rng.geometric(1 - r, size=20_000) - 1
    _, pval, cells = geometric_fit(samples, r)
    assert pval > 0.001 and cells >= 3


def test_example_5_3_small_run():
    rep = run_example_5_3(n_steps=50, n_paths=50, chain_steps=100_000)
    assert rep.tv_occupation == 1
    assert rep.classes_from_zero == ["3^k"] and rep.classes_from_half == ["2*3^k"]


def test_example_5_1_rejects_bad_c():
    with pytest.raises(PreconditionError):
        run_example_5_1(c=1.0)


def test_example_5_1_slope_and_escapes():
    rep = run_example_5_1(c=0.5, horizon=50, n_paths=300)
    assert abs(rep.slope - 0.5) < 0.05
    assert rep.escape_count > 0 and rep.escape_wilson[0] > 0


@pytest.mark.slow
def test_example_5_1_strong_drift_slope_from_far_start():
    # from far away the early drift bias is small and the 5% tolerance holds
    rep = run_example_5_1(c=0.9, x0=50.0)
    assert rep.relative_error <= 0.05


@pytest.mark.slow
def test_example_5_1_strong_drift_slope_from_documented_start():
    rep = run_example_5_1(c=0.9, x0=5.0)
    assert abs(rep.slope - 0.1) < 0.03


def test_example_5_2_short_run():
    rep = run_example_5_2(horizon=10, n_paths=100, dt=0.01)
    assert rep.exits_plus == rep.exits_minus == 0
    assert rep.min_from_plus >= 1.0 and rep.max_from_minus <= -1.0
    assert rep.tv_khasminskii == 1.0 and rep.verdict == "pass"


HEAVY_TAIL = {"diffuse": {"radial": "power", "scale": 1.0, "exponent": 2.0, "lower": 1.0}}


def test_prop01_reports_infinite_tail_moment():
    rep = run_prop_0_1(measure_spec=HEAVY_TAIL, q=2.0)
    assert rep.verdict == "condition violated"
    assert any("tail moment" in v for v in rep.violations)


def test_prop01_reports_zero_measure():
    rep = run_prop_0_1(measure_spec={"atoms": []})
    assert rep.violations == ["the jump measure is zero"]


def test_prop01_reports_non_dissipative_drift():
    rep = run_prop_0_1(drift_spec={"name": "ou_jump", "params": {"theta": -1.0}, "convention": "raw"})
    assert any("dissipative" in v for v in rep.violations)


def test_prop01_small_moment_is_accepted():
    rep = run_prop_0_1(measure_spec=HEAVY_TAIL, q=0.5, params=SimParams(dt=0.05, horizon=2.0, n_paths=2000),
                       t_grid=(1.0, 2.0), invariant_horizon=10, invariant_paths=50)
    assert rep.violations == []
    assert math.isfinite(rep.tail_moment)
    assert rep.verdict in {"pass", "fail"}
