import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from sddelab.brownian import generate
from sddelab.ensemble import simulate_ensemble
from sddelab.integrators import BEM, EM, NonFinite, simulate
from sddelab.measures import (EmpiricalDistribution, SizeMismatch, empirical_at, ensemble_ergodic_averages,
                              ergodic_average, ks_distance, measure_convergence_curve, running_average,
                              w1_distance)
from sddelab.model import IndexOutOfRange, InitialSegment, SddeSystem, make_grid

samples = st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=50)


def zero_drift(x, y):
    return np.zeros_like(x)


def zero_noise(x, y):
    return np.zeros(x.shape + (1,))


ZERO = SddeSystem(1, 1, 1.0, zero_drift, zero_noise)


def brute_ks(a, b):
    best = 0.0
    for x in list(a) + list(b):
        fa = sum(v <= x for v in a) / len(a)
        fb = sum(v <= x for v in b) / len(b)
        best = max(best, abs(fa - fb))
    return best


def dist(values):
    return EmpiricalDistribution(0.0, values)


def test_distribution_sorted_and_cdf():
    d = dist([3.0, 1.0, 2.0, 2.0])
    np.testing.assert_array_equal(d.samples, [1, 2, 2, 3])
    np.testing.assert_array_equal(d.cdf([0.5, 1.0, 2.0, 2.5, 3.0]), [0, 0.25, 0.75, 0.75, 1.0])
    with pytest.raises(ValueError):
        dist([])


def test_ks_oracles():
    assert ks_distance(dist([1, 2, 3]), dist([1, 2, 3])) == 0.0
    assert ks_distance(dist(np.linspace(0, 1, 7)), dist(np.linspace(10, 11, 5))) == 1.0
    # at x = 2.5: F_a = 1/2, F_b = 1
    assert ks_distance(dist([1, 2, 3, 4]), dist([1.5, 2.5])) == 0.5


@given(samples, samples)
def test_ks_matches_brute_force(a, b):
    assert ks_distance(dist(a), dist(b)) == pytest.approx(brute_ks(a, b), abs=1e-15)


@given(samples, samples, samples)
def test_ks_is_pseudometric(a, b, c):
    da, db, dc = dist(a), dist(b), dist(c)
    assert ks_distance(da, db) == ks_distance(db, da)
    assert ks_distance(da, da) == 0.0
    assert ks_distance(da, dc) <= ks_distance(da, db) + ks_distance(db, dc) + 1e-15


def test_w1_oracles():
    assert w1_distance(dist([0, 1]), dist([0.5, 0.5])) == 0.5
    assert w1_distance(dist([4, 5, 6]), dist([4, 5, 6])) == 0.0
    with pytest.raises(SizeMismatch):
        w1_distance(dist([1, 2]), dist([1]))


@given(samples, st.floats(-50, 50))
def test_w1_translation(a, shift):
    shifted = [v + shift for v in a]
    assume(all(np.isfinite(shifted)))
    assert w1_distance(dist(a), dist(shifted)) == pytest.approx(abs(shift), abs=1e-9)


def test_empirical_at_ensembles(ex1):
    system, init, _ = ex1
    grid = make_grid(1.0, 0.1, 1.0)
    const = simulate_ensemble(ZERO, EM(), grid, InitialSegment.constant([2.5]), seed=0, n_paths=4)
    assert np.all(empirical_at(const, 5).samples == 2.5)
    paths = [simulate(ZERO, EM(), grid, generate(0, i, 0.1, 10), InitialSegment.constant([v]))
             for i, v in enumerate([3.0, 1.0])]
    np.testing.assert_array_equal(empirical_at(paths, 4).samples, [1.0, 3.0])
    with pytest.raises(IndexOutOfRange):
        empirical_at(paths, 11)
    with pytest.raises(IndexOutOfRange):
        empirical_at(const, 3, component=1)


def test_running_average_constant_and_alternating():
    np.testing.assert_array_equal(running_average(np.full(6, 4.0)), np.full(6, 4.0))
    alt = running_average(np.array([(-1.0) ** k for k in range(101)]))
    assert np.all(np.abs(alt) <= 1.0 / np.arange(1, 102) + 1e-15)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60))
def test_running_average_recurrence(values):
    avg = running_average(np.array(values))
    for k in range(1, len(values)):
        assert abs(avg[k] - (avg[k - 1] + (values[k] - avg[k - 1]) / (k + 1))) <= 1e-14 * max(1, abs(avg[k]))


def test_ergodic_average_on_path():
    grid = make_grid(1.0, 0.1, 2.0)
    path = simulate(ZERO, EM(), grid, generate(0, 0, 0.1, 20), InitialSegment.constant([2.0]))
    np.testing.assert_array_equal(ergodic_average(path, lambda s: s[..., 0] ** 3), np.full(21, 8.0))
    assert ergodic_average(path, lambda s: s[..., 0], up_to_k=5).shape == (6,)
    with pytest.raises(NonFinite):
        ergodic_average(path, lambda s: np.log(s[..., 0] - 2.0))


def test_ensemble_ergodic_averages_shapes(ex1):
    system, _, _ = ex1
    grid = make_grid(1.0, 0.01, 2.0)
    hists = {"a": InitialSegment.constant([1.0]), "b": InitialSegment.constant([-1.0])}
    curves = ensemble_ergodic_averages(system, BEM(), grid, hists, {"id": lambda s: s[..., 0]}, 5, 2,
                                       sample_stride=100)
    assert set(curves) == {("a", "id"), ("b", "id")}
    assert curves[("a", "id")].value.shape == (3,)
    assert curves[("a", "id")].value[0] == 1.0


def test_measure_curve_self_reference(ex1):
    system, init, _ = ex1
    grid = make_grid(1.0, 0.01, 3.0)
    ens = simulate_ensemble(system, BEM(), grid, init, seed=8, n_paths=30)
    reference = empirical_at(ens, grid.horizon_steps)
    curve = measure_convergence_curve(system, BEM(), init, grid, 30, 8, reference, snapshot_times=(1.0,))
    assert curve.times.tolist() == [0.0, 1.0, 2.0, 3.0]
    assert curve.ks[-1] == 0.0 and curve.w1[-1] == 0.0
    assert np.all((curve.ks >= 0) & (curve.ks <= 1))
    assert curve.snapshots[1.0].n == 30


def test_measure_curve_scalar_only():
    system = SddeSystem(2, 1, 1.0, zero_drift, lambda x, y: np.zeros(x.shape + (1,)))
    grid = make_grid(1.0, 0.5, 1.0)
    with pytest.raises(NotImplementedError):
        measure_convergence_curve(system, EM(), InitialSegment.constant([0.0, 0.0]), grid, 2, 0, dist([0.0]))


def test_distribution_csv(tmp_path):
    dist([2.0, 1.0, 2.0]).write_csv(tmp_path / "cdf.csv")
    rows = (tmp_path / "cdf.csv").read_text().split()
    assert rows == ["x,F", "1,0.33333333333333331", "2,1"]
