import math

import numpy as np
import pytest

from levylab.conditions import (
    check_N_mc, check_N_rank, check_N_static, check_R, check_S, numerical_rank, starting_points,
)
from levylab.levy_noise import LevyMeasure
from levylab.models import example_5_1, example_5_2, linear_multiplicative, linear_nd, ou_jump, poly1d
from levylab.sde_core import SimParams, square_norm

GRID = np.linspace(-10, 10, 201)


def rotation(theta):
    return np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])


def test_check_r_jump_ou_closed_form(jump_ou_ito):
    rep = check_R(jump_ou_ito, square_norm(), GRID, [0.5, 1.0, 2.0, 3.0])
    assert rep.alpha_hat == 2.0
    assert abs(rep.gamma_hat - 1.0) < 1e-10
    assert rep.verdict == "pass" and rep.violations == []
    assert rep.margin == pytest.approx(0.0, abs=1e-9)


def test_check_r_zero_model_fails():
    rep = check_R(poly1d([0.0], LevyMeasure.zero()), square_norm(), GRID, [0.1, 1.0])
    assert rep.verdict == "fail" and rep.alpha_hat is None


def test_check_r_example_5_1_fails():
    rep = check_R(example_5_1(0.5), square_norm(), GRID, [0.01, 0.1, 1.0])
    assert rep.verdict == "fail"


def test_check_r_fixed_gamma_lists_violations(jump_ou_ito):
    rep = check_R(jump_ou_ito, square_norm(), GRID, [2.0], gamma=0.5)
    assert len(rep.violations) == len(GRID) and rep.verdict == "fail"


def test_check_n_mc_jump_ou(jump_ou_ito):
    rep = check_N_mc(jump_ou_ito, [0.0], 1.0, SimParams(dt=0.01, horizon=1.0, n_paths=3000, seed=4))
    oracle = 1 - math.exp(-1)
    assert abs(rep.p_hat - oracle) <= 3 * math.sqrt(oracle * (1 - oracle) / 3000)
    assert rep.wilson_ci[0] <= rep.p_hat <= rep.wilson_ci[1]
    assert rep.verdict == "evidence for N"


def test_check_n_mc_monotone_in_time(jump_ou_ito):
    reps = [check_N_mc(jump_ou_ito, [0.0], t, SimParams(dt=0.02, horizon=t, n_paths=1500, seed=1))
            for t in (0.5, 1.0, 2.0)]
    for a, b in zip(reps, reps[1:]):
        assert a.p_hat <= b.p_hat or a.wilson_ci[0] <= b.wilson_ci[1]


def test_check_n_mc_without_jumps_is_zero():
    rep = check_N_mc(ou_jump(measure=LevyMeasure.zero()), [1.0], 1.0, SimParams(dt=0.05, horizon=1.0, n_paths=50))
    assert rep.p_hat == 0.0 and rep.verdict == "no evidence for N"


def test_check_n_mc_colinear_noise_is_zero():
    # diagonal drift, all marks along e1: influence vectors stay on the e1 axis
    model = linear_nd(np.diag([-1.0, -2.0]), measure=LevyMeasure.from_atoms([((1.0, 0.0), 2.0), ((-0.5, 0.0), 1.0)]))
    rep = check_N_mc(model, [0.0, 0.0], 1.0, SimParams(dt=0.05, horizon=1.0, n_paths=200))
    assert rep.p_hat == 0.0


def test_numerical_rank():
    assert numerical_rank(np.zeros((0, 2)), 1e-9) == 0
    assert numerical_rank(np.array([[1.0, 0.0], [2.0, 0.0]]), 1e-9) == 1
    assert numerical_rank(np.array([[1.0, 0.0], [0.0, 1e-3]]), 1e-9) == 2


def test_check_n_static_routes(jump_ou_ito):
    one = check_N_static(jump_ou_ito, [0.0])
    assert one.route == "1d" and one.min_mass[0] == 1.0 and one.verdict == "pass"
    forced = check_N_static(jump_ou_ito, [0.0], epsilon=[0.5], route="nd")
    assert forced.min_mass[0] == 0.0 and forced.verdict == "fail"
    assert one.min_mass[0] >= forced.min_mass[0]


def test_check_n_static_reports_smallest_passing_epsilon(jump_ou_ito):
    rep = check_N_static(jump_ou_ito, [0.0], epsilon=[0.5, 2.0, 4.0], route="nd")
    assert rep.smallest_passing_epsilon == 2.0


def test_check_n_static_zero_measure():
    assert check_N_static(ou_jump(measure=LevyMeasure.zero()), [0.0]).verdict == "fail"


def test_check_n_rank_additive_cases():
    assert check_N_rank(ou_jump(), [0.3]).determinant == pytest.approx(-1.0)
    rot = linear_nd([[0.0, 1.0], [-1.0, 0.0]], measure=LevyMeasure.from_atoms([((1.0, 0.0), 1.0)]))
    rep = check_N_rank(rot, [1.0, 2.0])
    assert rep.determinant == pytest.approx(1.0) and rep.verdict == "pass"
    const = poly1d([2.0])
    assert check_N_rank(const, [0.0]).verdict == "fail"


def test_check_n_rank_example_5_2_outside_flat_zone():
    rep = check_N_rank(example_5_2(), [3.0])
    assert rep.bracket[0][0] == pytest.approx(-1.0, abs=1e-6) and rep.verdict == "pass"


def test_rank_verdicts_invariant_under_rotation():
    rng = np.random.default_rng(0)
    Q = rotation(rng.uniform(0, 2 * np.pi))
    A = np.array([[-1.0, 0.3], [0.2, -0.5]])
    B = np.array([[0.2, 0.0], [0.1, -0.1]])
    g = np.array([1.0, 0.5])
    meas = LevyMeasure.from_atoms([(0.5, 1.0)])
    x = np.array([0.4, -0.2])
    plain = linear_multiplicative(A, [0.1, 0.0], [B], [g], meas)
    turned = linear_multiplicative(Q @ A @ Q.T, Q @ [0.1, 0.0], [Q @ B @ Q.T], [Q @ g], meas)
    r1, r2 = check_N_rank(plain, x), check_N_rank(turned, Q @ x)
    assert r1.verdict == r2.verdict
    assert np.allclose(r1.singular_values, r2.singular_values, rtol=1e-6, atol=1e-8)
    add1 = linear_nd(A, measure=LevyMeasure.from_atoms([((1.0, 0.0), 1.0)]))
    add2 = linear_nd(Q @ A @ Q.T, measure=LevyMeasure.from_atoms([((1.0, 0.0), 1.0)]))
    assert check_N_rank(add1, x).determinant == pytest.approx(check_N_rank(add2, Q @ x).determinant)


def test_check_s_jump_ou_reaches_three(jump_ou_raw):
    rep = check_S(jump_ou_raw, [3.0], [1.0], 20.0, 0.5, SimParams(dt=0.05, horizon=20.0, n_paths=300, seed=3))
    assert all(r.freq_path > 0 for r in rep.rows)
    assert rep.verdicts[1.0] == "evidence for S"


def test_check_s_example_5_2_never_crosses():
    rep = check_S(example_5_2(), [2.0], [2.0], 10.0, 0.5, SimParams(dt=0.05, horizon=10.0, n_paths=1000, seed=1))
    from_minus = [r for r in rep.rows if r.start[0] < 0]
    assert from_minus and all(r.freq_path == 0.0 and r.freq_at_t == 0.0 for r in from_minus)
    assert rep.verdicts[2.0] == "no evidence for S"


def test_check_s_trivial_target(jump_ou_raw):
    rep = check_S(jump_ou_raw, [0.0], [0.0], 1.0, 100.0, SimParams(dt=0.1, horizon=1.0, n_paths=20))
    assert rep.rows[0].freq_at_t == 1.0


def test_starting_points():
    assert starting_points(2, 0.0).shape == (1, 2)
    pts = starting_points(2, 3.0, 8)
    assert np.allclose(np.linalg.norm(pts[1:], axis=1), 3.0)
