import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sddelab.integrators import tem_nu
from sddelab.theory import (DomainError, NoRoot, TheoryConstants, attraction_prefactor, bem_moment_constants,
                            horizon_constant, kappa1_residual, kappa_max, lambda1_residual, linear_growth_constants,
                            solve_gamma, solve_kappa1, solve_lambda1, theory_constants)


def test_example_one_constants(ex1):
    system, _, spec = ex1
    consts = theory_constants(spec, system)
    assert consts["c1"] == 64 and consts["c2"] == 2
    assert consts["lambda"] == 1.5
    lam = 1.5
    grow = math.exp(lam)
    c1_expected = (2 * grow + 8 * 64 * (grow - 1) / lam + (2 * 3.25 + 8) * (grow ** 2 - grow) / lam) * (
        1 + 3.25 / lam)
    assert consts["C1"] == pytest.approx(c1_expected, rel=1e-14)
    assert consts["C2"] == pytest.approx(3205.0, rel=1e-14)
    assert consts["horizon_segment"] == pytest.approx(4 + 4 * math.log(2 * consts["C1"]) / 1.5)
    assert "lambda = 1.5" in consts.table()


def test_c2_degenerate_arithmetic():
    _, _, c2 = bem_moment_constants(1.0, 0.0, 0.0, 0.0, 3.0, 2.0)
    assert c2 == pytest.approx(8 * 2.0 * 3.0)


def test_bem_domain():
    with pytest.raises(DomainError):
        bem_moment_constants(1.0, 1.0, 1.0, 1.0, 1.0, 1.0)


@given(st.floats(0.1, 10), st.floats(0.01, 0.99), st.floats(0.01, 5), st.floats(0.01, 50),
       st.floats(0.01, 5), st.floats(0.1, 3))
def test_bem_constants_positive(b3, frac, b5, c1, c2, tau):
    lam, big1, big2 = bem_moment_constants(b3, b3 * frac, b5, c1, c2, tau)
    assert lam > 0 and big1 > 0 and big2 > 0


def test_linear_growth_constants():
    assert linear_growth_constants(32, 0.0, 1.0) == (64, 2)
    assert linear_growth_constants(1, [3.0, 4.0], [[0.0]]) == (2, 50)


def test_example_two_roots(ex2):
    system, _, spec = ex2
    consts = theory_constants(spec, system)
    for name, value in consts.residuals.items():
        assert abs(value) <= 1e-10, name
    k1 = consts["kappa1"]
    assert abs(kappa1_residual(k1, 1536, 128, 16, 1.0)) <= 1e-10
    assert abs(lambda1_residual(consts["lambda1"], 1536, 128, 16, 1.0)) <= 1e-10
    assert consts["kappa_max"] == min(k1, (1536 - 128) / 2, 1.0)
    assert consts["kappa"] == consts["kappa_max"] / 2
    assert consts["nu"] == pytest.approx(2 / 7, abs=1e-15)
    gam = consts["gamma"]
    assert abs(3 - gam - math.exp(gam)) <= 1e-10
    assert consts["attraction_prefactor"] == pytest.approx(attraction_prefactor(1.0, gam, 1.0))


def test_degenerate_limits():
    b2, p = 1536.0, 16.0
    assert solve_kappa1(b2, 1e-12, p, 1.0) == pytest.approx(b2 / 2 ** 9, abs=1e-6)
    # e^(48 tau) is large, so b3 has to be much smaller before the limit shows
    assert solve_lambda1(b2, 1e-30, p, 1.0) == pytest.approx(p * b2 / 2 ** 9, abs=1e-6)
    assert solve_gamma(2.5, 0.0, 1.0) == 2.5


def test_no_root_cases():
    with pytest.raises(NoRoot):
        solve_kappa1(1.0, 2.0, 4.0, 1.0)
    with pytest.raises(NoRoot):
        solve_lambda1(1.0, 1.0, 4.0, 1.0)
    with pytest.raises(NoRoot):
        solve_gamma(1.0, 2.0, 1.0)


admissible = st.tuples(st.floats(0.01, 1e4), st.floats(0.001, 0.999), st.floats(2, 40), st.floats(0.01, 5))


@given(admissible)
def test_root_residuals(params):
    b2, frac, p, tau = params
    b3 = b2 * frac
    k = solve_kappa1(b2, b3, p, tau)
    r = solve_lambda1(b2, b3, p, tau)
    assert k > 0 and r > 0
    assert abs(kappa1_residual(k, b2, b3, p, tau)) <= 1e-10
    assert abs(lambda1_residual(r, b2, b3, p, tau)) <= 1e-10


@given(admissible)
def test_kappa1_decreases_with_delay(params):
    b2, frac, p, tau = params
    assert solve_kappa1(b2, b2 * frac, p, 2 * tau) < solve_kappa1(b2, b2 * frac, p, tau)


def test_kappa_max_caps_at_one():
    assert kappa_max(1536, 128, 16, 1.0) == 1.0


def test_horizon_constants():
    assert horizon_constant("state", 1.5, 0.5, 1.0) == 3.0
    assert horizon_constant("segment", 1.5, 0.5, 7.0) == 6.0
    assert horizon_constant("state", 1.0, 10.0, 1.5) == pytest.approx(2 + 2 * math.log(20) / 1.5)
    with pytest.raises(DomainError):
        horizon_constant("state", 1.0, 0.0, 1.0)
    with pytest.raises(DomainError):
        horizon_constant("unknown", 1.0, 1.0, 1.0)


def test_constants_object_rejects_bad_residual():
    with pytest.raises(NoRoot):
        TheoryConstants({"kappa1": 1.0}, {"kappa1": 1e-6})
    with pytest.raises(DomainError):
        TheoryConstants({"lambda": -1.0})
    consts = TheoryConstants({"a": 1.0})
    with pytest.raises(TypeError):
        consts.values["a"] = 2.0


def test_nu_rational():
    assert abs(tem_nu(2, 16) - 2 / 7) <= 1e-15
    assert np.isclose(tem_nu(1, 14), 0.25)
