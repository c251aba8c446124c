import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy import integrate, stats

from levylab.levy_noise import (
    DiffusePart, InfiniteMassError, LevyMeasure, PointMeasureRealization, PowerLawRadial,
    compensator_moment, realization_from_key, region_mass, sample_point_measure, sphere_area,
    sphere_covering, tail_moment, total_rate,
)


def power_tail(exponent=2.0, lower=1.0, scale=1.0, directions="uniform", dim=1):
    return LevyMeasure(dim=dim, atom_marks=np.zeros((0, dim)), atom_weights=np.zeros(0),
                       diffuse=DiffusePart(PowerLawRadial(scale, exponent, lower), directions))


def test_total_rate_of_atoms():
    m = LevyMeasure.from_atoms([(1.0, 2.0), (-1.0, 1.0)])
    assert total_rate(m, 0.0) == 3.0
    assert total_rate(m, 1.5) == 0.0


def test_total_rate_zero_measure():
    assert total_rate(LevyMeasure.zero(), 0.0) == 0.0


def test_total_rate_of_diffuse_tail_against_quadrature():
    m = power_tail(exponent=2.5, lower=0.5, scale=3.0)
    oracle = 2 * integrate.quad(lambda r: 3.0 * r ** -2.5, 0.5, np.inf)[0]
    assert total_rate(m, 0.0) == pytest.approx(oracle, rel=1e-10)
    oracle_trunc = 2 * integrate.quad(lambda r: 3.0 * r ** -2.5, 2.0, np.inf)[0]
    assert total_rate(m, 2.0) == pytest.approx(oracle_trunc, rel=1e-10)


def test_infinite_small_jump_mass_is_detected():
    m = power_tail(exponent=2.0, lower=0.0)
    with pytest.raises(InfiniteMassError):
        total_rate(m, 0.0)
    assert total_rate(m, 0.1) == pytest.approx(2 * 10.0)


def test_tail_moment_oracles():
    m = power_tail(exponent=2.0, lower=1.0)
    # 2 * int_1^inf rho^(q-2) = 2 / (1 - q) for q < 1
    assert tail_moment(m, 0.5) == pytest.approx(4.0)
    assert tail_moment(m, 2.0) == math.inf
    atoms = LevyMeasure.from_atoms([(3.0, 1.0), (0.5, 7.0)])
    assert tail_moment(atoms, 2.0) == pytest.approx(9.0)


def test_compensator_moment():
    atoms = LevyMeasure.from_atoms([(1.0, 2.0), (-1.0, 1.0), (4.0, 1.0)])
    assert compensator_moment(atoms, 0.0) == pytest.approx([1.0])
    assert np.all(compensator_moment(power_tail(lower=0.0), 0.1) == 0.0)
    one_sided = power_tail(exponent=1.5, lower=0.0, directions=(((1.0,), 1.0),))
    # int_0^1 rho * rho^-1.5 = 2
    assert compensator_moment(one_sided, 0.0) == pytest.approx([2.0])


@given(st.floats(0.2, 3.0), st.floats(0.01, 5.0), st.floats(0.01, 5.0), st.floats(0.01, 5.0))
def test_radial_mass_is_additive(exponent, a, b, c):
    a, b, c = sorted((a, b, c))
    assume(c - a > 1e-6)
    r = PowerLawRadial(1.5, exponent, 0.0, 10.0)
    assert r.mass(a, b) + r.mass(b, c) == pytest.approx(r.mass(a, c), rel=1e-9, abs=1e-12)


@given(st.floats(0.2, 3.0), st.floats(0.0, 1.0))
def test_inverse_cdf_hits_requested_mass_fraction(exponent, v):
    r = PowerLawRadial(1.0, exponent, 0.0, math.inf)
    a, b = 0.5, 8.0
    rho = float(r.inverse_cdf(v, a, b))
    assert a - 1e-12 <= rho <= b + 1e-9
    assert r.mass(a, rho) / r.mass(a, b) == pytest.approx(v, abs=1e-9)


def test_sphere_area():
    assert sphere_area(1) == 2.0
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


@pytest.mark.parametrize("d", [1, 2, 3, 5])
def test_sphere_covering_unit_vectors(d):
    pts = sphere_covering(d, 64)
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)


def test_validation_errors():
    with pytest.raises(ValueError):
        LevyMeasure.from_atoms([(0.0, 1.0)])
    with pytest.raises(ValueError):
        LevyMeasure.from_atoms([(1.0, -1.0)])
    with pytest.raises(ValueError):
        LevyMeasure.from_atoms([(1.0, 1.0), (1.0, 2.0)])
    with pytest.raises(ValueError):
        power_tail(directions=(((1.0,), 0.3),))


def test_config_round_trip():
    cfg = {"atoms": [{"mark": [1.0, 0.0], "weight": 2.0}],
           "diffuse": {"radial": "pareto", "alpha": 1.5, "lower": 1.0, "scale": 0.5}}
    m = LevyMeasure.from_config(cfg)
    again = LevyMeasure.from_config(m.to_config())
    assert total_rate(again, 0.0) == pytest.approx(total_rate(m, 0.0))
    assert np.array_equal(again.atom_marks, m.atom_marks)


def test_poisson_count_and_mark_frequencies(rng):
    m = LevyMeasure.from_atoms([(1.0, 2.0), (-1.0, 1.0)])
    counts, ups = [], 0
    for _ in range(2000):
        real = sample_point_measure(m, 10.0, 0.0, rng)
        counts.append(len(real))
        ups += int(np.sum(real.marks[:, 0] > 0))
    counts = np.array(counts)
    assert abs(counts.mean() - 30.0) < 4 * math.sqrt(30.0 / 2000)
    frac = ups / counts.sum()
    assert abs(frac - 2 / 3) < 4 * math.sqrt(2 / 9 / counts.sum())


def test_diffuse_radius_distribution_matches_pareto(rng):
    m = power_tail(exponent=2.5, lower=1.0)
    real = sample_point_measure(m, 2000.0, 0.0, rng)
    radii = np.abs(real.marks[:, 0])
    # radius law: P(R > r) = r^-1.5 on [1, inf)
    assert stats.kstest(radii, lambda r: 1 - r ** -1.5).pvalue > 0.001
    assert abs(np.mean(real.marks[:, 0] > 0) - 0.5) < 4 * math.sqrt(0.25 / len(radii))


@given(st.integers(0, 2**63), st.floats(0.5, 20.0))
def test_keyed_realisations_are_valid(key, horizon):
    m = LevyMeasure.from_atoms([(1.0, 1.0), (-2.0, 0.5)])
    real = realization_from_key(m, horizon, 0.0, key)
    assert np.all(np.diff(real.times) > 0)
    assert len(real) == 0 or (real.times[0] > 0 and real.times[-1] <= horizon)
    again = realization_from_key(m, horizon, 0.0, key)
    assert np.array_equal(real.times, again.times) and np.array_equal(real.marks, again.marks)


def test_keyed_truncation_respected():
    m = power_tail(exponent=2.0, lower=0.0)
    real = realization_from_key(m, 5.0, 0.3, 99)
    assert np.all(np.abs(real.marks[:, 0]) >= 0.3)


def test_realisation_validation():
    with pytest.raises(ValueError):
        PointMeasureRealization(1.0, 0.0, np.array([0.5, 0.2]), np.ones((2, 1)))
    with pytest.raises(ValueError):
        PointMeasureRealization(1.0, 0.5, np.array([0.5]), np.array([[0.1]]))


def test_region_mass_half_plane_by_symmetry():
    m = power_tail(exponent=3.5, lower=0.5, dim=2)
    rm = region_mass(m, lambda u: u[0] > 0)
    assert rm.value + rm.error_bound >= total_rate(m, 0.0) / 2 - 1e-9
    assert rm.value == pytest.approx(total_rate(m, 0.0) / 2, rel=0.05)


def test_region_mass_atoms_exact():
    m = LevyMeasure.from_atoms([(1.0, 2.0), (-1.0, 1.0)])
    rm = region_mass(m, lambda u: u[0] > 0)
    assert rm.value == 2.0 and rm.error_bound == 0.0
