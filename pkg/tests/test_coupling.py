import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from levylab.coupling import (
    BallEntry, Binning, CouplingRecord, EmpiricalLaw, FixedHorizon, beta_mixing_tail, doeblin_overlap,
    estimate_law, fit_exponential_decay, gluing_attempt, khasminskii_average, maximal_coupling,
    simple_coupling_run, switching_coupling, switching_coupling_runs, theoretical_rate_bound,
    tv_decay_curve, tv_distance,
)
from levylab.levy_noise import LevyMeasure
from levylab.models import example_5_2, ou_jump, poly1d
from levylab.rng import derive_key
from levylab.sde_core import SimParams

BENCH_BINS = Binning.regular([-2.0], [8.0], [200])


def test_estimate_law_deterministic_path():
    model = ou_jump(measure=LevyMeasure.zero())
    b = Binning.regular([0.0], [1.0], [100])
    emp = estimate_law(model, [1.0], 1.0, SimParams(dt=1e-3, horizon=1.0, n_paths=5), b)
    assert emp.masses[b.cell_index([math.exp(-1)])[0]] == 1.0


def test_estimate_law_mean_of_jump_ou(jump_ou_raw):
    emp = estimate_law(jump_ou_raw, [0.0], 10.0, SimParams(dt=0.05, horizon=10.0, n_paths=100_000, seed=5),
                       Binning.regular([-2.0], [10.0], [600]))
    assert abs(emp.mean()[0] - 1.0) < 0.02


def test_estimate_law_from_empirical_start(jump_ou_raw):
    start = EmpiricalLaw.from_samples(BENCH_BINS, np.linspace(0, 1, 50))
    same = estimate_law(jump_ou_raw, start, 0.0, SimParams(dt=0.1, horizon=1.0, n_paths=10), BENCH_BINS)
    assert np.array_equal(same.masses, start.masses)
    later = estimate_law(jump_ou_raw, start, 1.0, SimParams(dt=0.05, horizon=1.0, n_paths=2000), BENCH_BINS)
    assert later.sample_count == 2000


def test_maximal_coupling_pieces():
    b = Binning.regular([0.0], [2.0], [2])
    a = EmpiricalLaw(b, np.array([0.5, 0.5, 0.0]), 2)
    c = EmpiricalLaw(b, np.array([1.0, 0.0, 0.0]), 2)
    mc = maximal_coupling(a, c)
    assert mc.overlap == 0.5
    assert np.allclose(mc.residual1, [0, 0.5, 0]) and np.allclose(mc.residual2, [0.5, 0, 0])
    assert mc.overlap == pytest.approx(1 - tv_distance(a, c))


def test_simple_coupling_equal_starts_share_noise(jump_ou_raw):
    res = simple_coupling_run(jump_ou_raw, [1.0], [1.0], FixedHorizon(5.0), SimParams(dt=0.05, horizon=5.0, seed=3))
    assert np.array_equal(res.first.states, res.second.states)


def test_simple_coupling_distinct_starts_are_independent(jump_ou_raw):
    res = simple_coupling_run(jump_ou_raw, [1.0], [2.0], FixedHorizon(5.0), SimParams(dt=0.05, horizon=5.0, seed=3))
    assert not np.array_equal(res.first.jump_times, res.second.jump_times)


def test_simple_coupling_ball_entry(jump_ou_raw):
    times = []
    for i in range(200):
        res = simple_coupling_run(jump_ou_raw, [5.0], [-5.0], BallEntry(2.0, 50.0),
                                  SimParams(dt=0.01, horizon=50.0, seed=1), run_index=i)
        assert res.entered
        assert all(abs(z[0]) <= 2.0 for z in res.terminal)
        times.append(res.entry_time)
    assert np.isfinite(np.mean(times))
    # the -5 coordinate needs at least log(5/2) to reach the ball
    assert min(times) >= math.log(2.5) - 0.01


def test_gluing_equal_starts_always_glue(jump_ou_raw):
    p = SimParams(dt=0.05, horizon=1.0)
    for i in range(20):
        g = gluing_attempt(jump_ou_raw, [0.3], [0.3], 1.0, 50, BENCH_BINS, p, derive_key(1, i))
        assert g.glued and np.array_equal(g.terminal1, g.terminal2)


def test_gluing_disjoint_laws_never_glue():
    model = example_5_2()
    b = Binning.regular([-10.0], [10.0], [40])
    p = SimParams(dt=0.05, horizon=1.0)
    for i in range(50):
        g = gluing_attempt(model, [2.0], [-2.0], 1.0, 100, b, p, derive_key(2, i))
        assert not g.glued and g.overlap == 0.0


@pytest.mark.slow
def test_gluing_frequency_matches_known_overlap():
    # zero drift, unit jumps at rate ln 2: laws from 0 and 1 are Poisson shifted by one,
    # whose overlap is P(N >= 1) = 1/2 on integer cells
    model = poly1d([0.0], LevyMeasure.from_atoms([(1.0, math.log(2))]), convention="raw")
    b = Binning.regular([-0.5], [19.5], [20])
    p = SimParams(dt=1.0, horizon=1.0)
    n = 10_000
    glued = sum(gluing_attempt(model, [0.0], [1.0], 1.0, 1000, b, p, derive_key(3, i)).glued for i in range(n))
    assert abs(glued / n - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_gluing_needs_positive_window(jump_ou_raw):
    with pytest.raises(ValueError):
        gluing_attempt(jump_ou_raw, [0.0], [1.0], 0.0, 10, BENCH_BINS, SimParams(dt=0.1, horizon=1.0), 1)
    with pytest.raises(ValueError):
        gluing_attempt(jump_ou_raw, [0.0], [1.0], 1.0, 0, BENCH_BINS, SimParams(dt=0.1, horizon=1.0), 1)


def test_switching_equal_starts_glued_immediately(jump_ou_raw):
    rec = switching_coupling(jump_ou_raw, [1.0], [1.0], 2.0, 1.0, 10, SimParams(dt=0.05, horizon=5.0), BENCH_BINS,
                             record_times=[0.0, 1.0, 4.0])
    assert rec.glued and rec.Q_star == 0.0
    assert np.array_equal(rec.positions1, rec.positions2)


def test_switching_example_5_2_never_glues():
    b = Binning.regular([-10.0], [10.0], [40])
    recs = switching_coupling_runs(example_5_2(), [2.0], [-2.0], 2.5, 1.0, 5, SimParams(dt=0.05, horizon=30.0), b,
                                   n_aux=100, max_cycles=10)
    assert not any(r.glued for r in recs)
    tail = beta_mixing_tail(recs, [0.0, 5.0, 20.0])
    assert np.all(tail.tail == 1.0)


def test_switching_records_are_well_formed(jump_ou_raw):
    recs = switching_coupling_runs(jump_ou_raw, [0.0], [5.0], 2.0, 1.0, 30, SimParams(dt=0.05, horizon=40.0),
                                   BENCH_BINS, n_aux=200, record_times=np.arange(0.0, 40.0, 0.5))
    for rec in recs:
        rec.check()
        assert all(b >= a for a, b in zip(rec.Q_times, rec.Q_times[1:]))
        if rec.glued:
            assert rec.phases[-1] == "glued"
            assert rec.Q_star == rec.Q_times[-1]
    tail = beta_mixing_tail(recs, np.arange(0, 20.0))
    assert np.all(np.diff(tail.tail) <= 0)


def test_glue_permanence_violation_is_caught():
    rec = CouplingRecord(phases=["free", "gluing", "glued"], glued=True, Q_star=1.0, record_times=np.array([2.0]),
                         positions1=np.array([[0.0]]), positions2=np.array([[1.0]]))
    with pytest.raises(AssertionError):
        rec.check()
    bad = CouplingRecord(phases=["free", "glued", "free"], glued=True, Q_star=1.0)
    with pytest.raises(AssertionError):
        bad.check()


def test_beta_tail_all_glued_early():
    recs = [CouplingRecord(glued=True, Q_star=q) for q in (0.2, 0.5, 1.0)]
    tail = beta_mixing_tail(recs, [0.0, 1.0, 2.0])
    assert list(tail.tail) == [1.0, 0.0, 0.0]


def test_tv_curve_identical_starts_stay_below_floor(jump_ou_raw):
    curve = tv_decay_curve(jump_ou_raw, [0.0], [0.0], [1.0, 2.0, 3.0], SimParams(dt=0.05, horizon=3.0,
                           n_paths=5000, seed=2), BENCH_BINS)
    assert np.all(curve.tv <= curve.noise_floor)
    assert curve.fit.status == "faster than resolvable"


def test_tv_curve_requires_increasing_grid(jump_ou_raw):
    with pytest.raises(ValueError):
        tv_decay_curve(jump_ou_raw, [0.0], [1.0], [2.0, 1.0], SimParams(dt=0.1, horizon=2.0), BENCH_BINS)


@given(st.floats(0.1, 10.0), st.floats(0.05, 2.0))
def test_exponential_fit_recovers_exact_input(c1, c2):
    t = np.arange(1.0, 11.0)
    fit = fit_exponential_decay(t, c1 * np.exp(-c2 * t))
    assert fit.C1 == pytest.approx(c1, abs=1e-6, rel=1e-9) and fit.C2 == pytest.approx(c2, abs=1e-6)


def test_exponential_fit_injected_curve():
    t = np.arange(1.0, 11.0)
    fit = fit_exponential_decay(t, 2 * np.exp(-0.5 * t))
    assert abs(fit.C1 - 2) < 1e-6 and abs(fit.C2 - 0.5) < 1e-6


def test_khasminskii_ode_sink_concentrates():
    model = ou_jump(measure=LevyMeasure.zero())
    b = Binning.regular([-1.0], [1.0], [20])
    short = khasminskii_average(model, [0.9], 5.0, SimParams(dt=0.01, horizon=5.0), b)
    long = khasminskii_average(model, [0.9], 200.0, SimParams(dt=0.01, horizon=200.0), b)
    zero_cell = b.cell_index([0.0])[0]
    assert long.masses[zero_cell] > short.masses[zero_cell] > 0.0
    assert long.masses[zero_cell] > 0.95


def test_khasminskii_disjoint_for_example_5_2():
    b = Binning.regular([-10.0], [10.0], [40])
    p = SimParams(dt=0.05, horizon=50.0, n_paths=200)
    plus = khasminskii_average(example_5_2(), [2.0], 50.0, p, b)
    minus = khasminskii_average(example_5_2(), [-2.0], 50.0, p, b)
    assert tv_distance(plus, minus) == 1.0


def test_khasminskii_rejects_burn_in_beyond_horizon(jump_ou_raw):
    with pytest.raises(ValueError):
        khasminskii_average(jump_ou_raw, [0.0], 1.0, SimParams(dt=0.1, horizon=1.0), BENCH_BINS, burn_in=2.0)


def test_rate_bound_oracle():
    rb = theoretical_rate_bound(1, 1, 0.5, 1, 0.5, 4)
    D = 0.25 + math.log(20)
    p = max(1.0, -2 * D / math.log(0.5))
    assert abs(rb.D - D) < 1e-12 and abs(rb.D - 3.2457) < 1e-4
    assert abs(rb.p - 9.366) < 1e-3
    assert abs(rb.C2 - 0.5 / (4 * p)) < 1e-12 and abs(rb.C2 - 0.01335) < 1e-5
    c1_tilde = 2 * math.exp(0.25) / (1 - 0.5 ** 0.25)
    assert rb.C1_tilde == pytest.approx(c1_tilde) and rb.C1 == pytest.approx(2 * c1_tilde)


def test_rate_bound_limits():
    near_one = theoretical_rate_bound(1, 1, 0.5, 1, 1 - 1e-12, 4)
    assert near_one.p == 1.0 and near_one.C2 == pytest.approx(0.5 / 4)
    assert theoretical_rate_bound(1, 1, 1 - 1e-9, 1, 0.5, 4).C2 < 1e-9


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_rate_bound_monotone_in_c(c_a, c_b, delta):
    lo, hi = sorted((c_a, c_b))
    assert theoretical_rate_bound(1, 1, lo, 1, delta, 4).C2 >= theoretical_rate_bound(1, 1, hi, 1, delta, 4).C2


@pytest.mark.parametrize("args", [(1, 1, 0.5, 1, 0.0, 4), (1, 1, 1.0, 1, 0.5, 4), (0, 1, 0.5, 1, 0.5, 4),
                                  (1, 1, 0.5, -1, 0.5, 4)])
def test_rate_bound_domain_errors(args):
    with pytest.raises(ValueError):
        theoretical_rate_bound(*args)


def test_doeblin_overlap_bounds(jump_ou_raw):
    d = doeblin_overlap(jump_ou_raw, [-2.0, 0.0, 2.0], 1.0, SimParams(dt=0.05, horizon=1.0, n_paths=4000), BENCH_BINS)
    assert 0.0 < d < 1.0
    far = doeblin_overlap(example_5_2(), [-2.0, 2.0], 1.0, SimParams(dt=0.05, horizon=1.0, n_paths=500),
                          Binning.regular([-10.0], [10.0], [40]))
    assert far == 0.0
