import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sddelab.model import (AssumptionSpec, Grid, InitialSegment, NonCommensurate, SamplerConfig, SddeSystem,
                           UnknownExample, builtin_example, check_assumptions, example_histories,
                           jacobian_mismatch, make_grid, pointwise, step_ratio)


def zero_drift(x, y):
    return np.zeros_like(x)


def zero_noise(x, y):
    return np.zeros(x.shape + (1,))


# --- grids -----------------------------------------------------------------

def test_grid_example_one_coarse():
    grid = make_grid(1.0, 0.01, 100.0)
    assert grid == Grid(delta=0.01, delay_steps=100, horizon_steps=10000)


def test_unit_grid():
    assert make_grid(1.0, 1.0, 1.0) == Grid(1.0, 1, 1)


def test_non_commensurate_delay_rejected():
    with pytest.raises(NonCommensurate):
        make_grid(1.0, 0.3, 10.0)


def test_non_commensurate_horizon_rejected():
    with pytest.raises(NonCommensurate):
        make_grid(1.0, 0.1, 10.05)


def test_step_ratio():
    assert step_ratio(0.01, 0.0001) == 100
    with pytest.raises(NonCommensurate):
        step_ratio(0.01, 0.003)


@given(st.integers(1, 2000), st.integers(1, 50), st.integers(1, 40))
def test_grid_reconstructs_tau(m, mult, n_delays):
    delta = 1.0 / m * (1 + (mult % 7) / 8)
    tau = m * delta
    grid = make_grid(tau, delta, tau * n_delays)
    assert grid.delay_steps == m
    assert abs(grid.tau - tau) <= 1e-12 * tau
    assert grid.horizon_steps == m * n_delays


def test_grid_times_cover_history():
    grid = make_grid(1.0, 0.25, 1.0)
    assert np.allclose(grid.times(), [-1, -0.75, -0.5, -0.25, 0, 0.25, 0.5, 0.75, 1.0])
    assert np.allclose(grid.history_times(), [-1, -0.75, -0.5, -0.25, 0])


# --- systems ---------------------------------------------------------------

def test_system_validation():
    with pytest.raises(ValueError):
        SddeSystem(0, 1, 1.0, zero_drift, zero_noise)
    with pytest.raises(ValueError):
        SddeSystem(1, 1, 0.0, zero_drift, zero_noise)


def test_example_one_coefficients(ex1):
    system, init, spec = ex1
    assert system.drift_at([1.0], [2.0])[0] == -2.0
    assert system.diffusion_at([1.0], [2.0])[0, 0] == 4.0
    assert system.tau == 1.0
    assert init.needs_brownian


def test_example_two_coefficients(ex2):
    system, _, spec = ex2
    assert system.diffusion_at([0.0], [7.0])[0, 0] == 1.0
    assert system.drift_at([1.0], [1.0])[0] == -11.0
    assert spec["p"] > max(4 * spec["q"], 3 * spec["q"] + 8)


def test_unknown_example():
    with pytest.raises(UnknownExample):
        builtin_example("ex3")


def test_batched_call_shapes(ex1):
    system = ex1[0]
    x = np.ones((5, 3, 1))
    assert system.drift_at(x, x).shape == (5, 3, 1)
    assert system.diffusion_at(x, x).shape == (5, 3, 1, 1)


def test_pointwise_adapter_matches_vectorized(ex2):
    system = ex2[0]
    wrapped = SddeSystem(1, 1, 1.0, pointwise(lambda x, y: -2 * x - 10 * x ** 3 + y, (1,)),
                         pointwise(lambda x, y: np.array([[1 + 0.5 * x[0] ** 2]]), (1, 1)))
    x = np.linspace(-2, 2, 9)[:, None]
    y = x[::-1]
    np.testing.assert_allclose(wrapped.drift_at(x, y), system.drift_at(x, y), rtol=0, atol=0)
    np.testing.assert_allclose(wrapped.diffusion_at(x, y), system.diffusion_at(x, y), rtol=0, atol=0)


@pytest.mark.parametrize("example", ["ex1_bem", "ex2_tem"])
def test_analytic_jacobians_match_differences(example):
    system, _, _ = builtin_example(example)
    assert jacobian_mismatch(system, rtol=1e-5) <= 1e-5


def test_bad_jacobian_detected():
    system = SddeSystem(1, 1, 1.0, lambda x, y: -4 * x + y, zero_noise,
                        lambda x, y: np.full(x.shape + (1,), -3.0))
    assert jacobian_mismatch(system) > 0.1


# --- initial segments ------------------------------------------------------

def test_constant_segment_broadcasts():
    seg = InitialSegment.constant([-2.0])
    out = seg.evaluate(np.linspace(-1, 0, 5), 1)
    assert out.shape == (5, 1) and np.all(out == -2.0)


def test_deterministic_ramp():
    ramp = example_histories()["ramp"]
    out = ramp.evaluate(np.array([-1.0, -0.5, 0.0]), 1)
    np.testing.assert_array_equal(out[:, 0], [-2.0, -1.5, -1.0])


def test_brownian_functional_needs_values():
    seg = example_histories()["shifted_cos"]
    with pytest.raises(ValueError):
        seg.evaluate(np.zeros(3), 1)
    w = np.array([[0.3], [-0.1], [0.0]])
    out = seg.evaluate(np.array([-1.0, -0.5, 0.0]), 1, w)
    np.testing.assert_allclose(out[:, 0], 3 + np.cos(w[:, 0]))


def test_brownian_functional_batched_times():
    # times (n,), brownian (n, paths, m)
    seg = InitialSegment.brownian_functional(lambda t, w: t[..., None] + w)
    t = np.array([-1.0, 0.0])
    w = np.arange(6.0).reshape(2, 3, 1)
    out = seg.evaluate(t, 1, w)
    assert out.shape == (2, 3, 1)
    np.testing.assert_array_equal(out[0, :, 0], [-1.0, 0.0, 1.0])


def test_segment_requires_value_or_function():
    with pytest.raises(ValueError):
        InitialSegment("constant")
    with pytest.raises(ValueError):
        InitialSegment("deterministic")
    with pytest.raises(ValueError):
        InitialSegment("spline", fn=math.sin)


# --- assumption specs and checks ------------------------------------------

def test_spec_predicates_reject_bad_orderings():
    with pytest.raises(ValueError):
        AssumptionSpec("bem", dict(a1=1, b1=1, b2=2, b3=3, b4=1, b5=0))
    with pytest.raises(ValueError):
        AssumptionSpec("tem", dict(a1=20, q=2, p=14, b1=1, b2=3, b3=1, b4=3, b5=1,
                                   b1_bar=1, b2_bar=3, b3_bar=1, sigma=2))
    with pytest.raises(ValueError):
        AssumptionSpec("bem", dict(a1=1, b1=3))


@given(st.floats(0.1, 10), st.floats(0, 10), st.floats(0, 10))
def test_spec_accepts_iff_predicates(b1, b2, b3):
    consts = dict(a1=1.0, b1=b1, b2=b2, b3=b3, b4=1.0, b5=0.0)
    ok = b1 > b2 and b3 > 1.0
    if ok:
        AssumptionSpec("bem", consts)
    else:
        with pytest.raises(ValueError):
            AssumptionSpec("bem", consts)


def test_example_one_assumptions_hold(ex1):
    system, _, spec = ex1
    report = check_assumptions(system, spec, SamplerConfig(10_000, 10.0, 0))
    assert report.empty, report.summary()


def test_example_one_large_b3_is_caught(ex1):
    system, _, spec = ex1
    bad = AssumptionSpec("bem", {**spec.constants, "b3": 100.0})
    report = check_assumptions(system, bad, n_points=10_000, radius=10.0)
    assert not report.empty
    assert report.counts()["dissipativity"] > 0
    assert all(v.slack < 0 for v in report.violations)


def test_zero_system_degenerate_spec():
    system = SddeSystem(1, 1, 1.0, zero_drift, zero_noise)
    spec = AssumptionSpec("bem", dict(a1=1, b1=0, b2=0, b3=0, b4=0, b5=0), strict=False)
    assert check_assumptions(system, spec, n_points=2000).empty


@pytest.mark.xfail(strict=True, reason="the quoted constants do not satisfy the p-th moment bound")
def test_example_two_assumptions_hold(ex2):
    system, _, spec = ex2
    assert check_assumptions(system, spec, SamplerConfig(10_000, 10.0, 0)).empty


def test_example_two_only_moment_bound_fails(ex2):
    # x = 1, y = 0 already violates it: 2^7 * (2x f + 15 g^2) = 1248 > 512 - 1536
    system, _, spec = ex2
    report = check_assumptions(system, spec, SamplerConfig(10_000, 10.0, 0))
    failing = {name for name, count in report.counts().items() if count}
    assert failing == {"khasminskii_p"}


def test_non_finite_values_reported():
    system = SddeSystem(1, 1, 1.0, lambda x, y: np.exp(1000 * x), zero_noise)
    spec = AssumptionSpec("bem", dict(a1=1, b1=2, b2=1, b3=2, b4=1, b5=1))
    report = check_assumptions(system, spec, n_points=200)
    assert any(not math.isfinite(v.lhs) for v in report.violations)


def test_report_csv(tmp_path, ex1):
    system, _, spec = ex1
    bad = AssumptionSpec("bem", {**spec.constants, "b3": 100.0})
    report = check_assumptions(system, bad, n_points=500)
    report.write_csv(tmp_path / "v.csv")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "inequality,point,lhs,rhs,slack"
    assert len(lines) == len(report) + 1
