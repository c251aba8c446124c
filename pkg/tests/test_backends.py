import numpy as np
import pytest

from levylab._accel import NUMBA_ENABLED, resolve_backend
from levylab.binning import Binning
from levylab.levy_noise import DiffusePart, LevyMeasure, PowerLawRadial
from levylab.models import example_5_1, example_5_2, linear_multiplicative, multiplicative_1d, ou_jump
from levylab.sde_core import SimParams, simulate_batch

pytestmark = pytest.mark.skipif(not NUMBA_ENABLED, reason="numba disabled")

CASES = [
    ou_jump(convention="raw"),
    ou_jump(measure=LevyMeasure(dim=1, atom_marks=np.zeros((0, 1)), atom_weights=np.zeros(0),
                                diffuse=DiffusePart(PowerLawRadial(1.0, 2.5, 0.0, 3.0)))),
    multiplicative_1d([0.0, -1.0], [0.5, 0.1], LevyMeasure.from_atoms([(0.5, 1.0), (-0.3, 2.0)])),
    linear_multiplicative(-np.eye(2), [0.0, 0.5], [0.1 * np.eye(2)], [[1.0, 0.0]],
                          LevyMeasure.from_atoms([(0.8, 2.0)])),
    example_5_1(0.5),
    example_5_2(),
]


@pytest.mark.parametrize("model", CASES, ids=lambda m: m.name)
def test_numba_and_numpy_backends_agree(model):
    params = SimParams(dt=0.05, horizon=3.0, n_paths=300, seed=5, truncation=0.05)
    b = Binning.regular([-3.0] * model.m, [5.0] * model.m, [16] * model.m)
    x0 = np.full(model.m, 0.5)
    kw = dict(obs_times=[0.5, 1.5, 3.0], target=np.zeros(model.m), binning=b)
    a = simulate_batch(model, x0, params, backend="numba", **kw)
    n = simulate_batch(model, x0, params, backend="numpy", **kw)
    assert np.allclose(a.states, n.states, atol=1e-10, equal_nan=True)
    assert np.array_equal(a.n_jumps, n.n_jumps)
    assert np.allclose(a.path_min, n.path_min, atol=1e-10)
    assert np.allclose(a.min_distance, n.min_distance, atol=1e-10)
    assert np.allclose(a.occupancy, n.occupancy, atol=1e-9)


def test_unknown_backend():
    with pytest.raises(ValueError):
        resolve_backend("fortran")
