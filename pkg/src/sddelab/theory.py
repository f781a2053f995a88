"""Closed-form and root-defined constants from the moment, attraction and
horizon bounds, so that simulated curves can be compared with them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping

import numpy as np

from .integrators import tem_nu

ROOT_TOL = 1e-10
BISECTION_ITERS = 200


class NoRoot(ValueError):
    pass


class DomainError(ValueError):
    pass


def bisect_decreasing(fn: Callable[[float], float], lo: float, hi: float) -> float:
    """Root of a function that is positive at ``lo`` and nonpositive at ``hi``.

    Plain bisection: the functions used here are monotone on their bracket,
    so this always converges, and 200 halvings reach machine resolution.
    """
    f_lo, f_hi = fn(lo), fn(hi)
    if not (f_lo > 0 >= f_hi):
        raise NoRoot(f"no sign change on [{lo}, {hi}]: f(lo)={f_lo}, f(hi)={f_hi}")
    for _ in range(BISECTION_ITERS):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if fn(mid) > 0:
            lo = mid
        else:
            hi = mid
    # return the endpoint with the smaller residual
    return lo if abs(fn(lo)) <= abs(fn(hi)) else hi


def _exp(x):
    # residuals only need the sign far out on the bracket, so overflow -> inf
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def kappa1_residual(kappa, b2, b3, p, tau):
    return b2 - 2 ** (p / 2 + 1) * kappa - b3 * _exp(2 * kappa * tau)


def lambda1_residual(rate, b2, b3, p, tau):
    return b2 - rate * 2 ** (p / 2 + 1) / p - b3 * _exp(rate * tau)


def gamma_residual(rate, b4, b5, tau):
    return b4 - rate - b5 * _exp(rate * tau)


def _check_pair(b2, b3, p, tau):
    if not (b2 > b3 > 0 and p >= 2 and tau > 0):
        raise NoRoot(f"need b2 > b3 > 0, p >= 2, tau > 0; got b2={b2}, b3={b3}, p={p}, tau={tau}")


def solve_kappa1(b2: float, b3: float, p: float, tau: float) -> float:
    """Positive root of ``b2 - 2**(p/2+1) k = b3 exp(2 k tau)``."""
    _check_pair(b2, b3, p, tau)
    upper = b2 / 2 ** (p / 2 + 1)
    return bisect_decreasing(lambda k: kappa1_residual(k, b2, b3, p, tau), 0.0, upper)


def solve_lambda1(b2: float, b3: float, p: float, tau: float) -> float:
    """Positive root of ``b2 - r 2**(p/2+1) / p = b3 exp(r tau)``."""
    _check_pair(b2, b3, p, tau)
    upper = p * b2 / 2 ** (p / 2 + 1)
    return bisect_decreasing(lambda r: lambda1_residual(r, b2, b3, p, tau), 0.0, upper)


def solve_gamma(b4: float, b5: float, tau: float) -> float:
    """Positive root of ``b4 - r = b5 exp(r tau)``, the mean-square attraction rate.

    With ``b5 = 0`` the root is ``b4`` itself.
    """
    if not (b4 > b5 >= 0 and tau > 0):
        raise NoRoot(f"need b4 > b5 >= 0 and tau > 0; got b4={b4}, b5={b5}")
    if b5 == 0:
        return float(b4)
    return bisect_decreasing(lambda r: gamma_residual(r, b4, b5, tau), 0.0, b4)


def kappa_max(b2: float, b3: float, p: float, tau: float) -> float:
    return min(solve_kappa1(b2, b3, p, tau), (b2 - b3) / 2, 1.0)


def linear_growth_constants(a1: float, f00, g00) -> tuple:
    """``(c1, c2)`` with ``|f|^2 v |g|^2 <= c1 (|x|^2 + |y|^2) + c2``."""
    f_sq = float(np.sum(np.square(f00)))
    g_sq = float(np.sum(np.square(g00)))
    return 2 * a1, 2 * max(f_sq, g_sq)


def bem_moment_constants(b3, b4, b5, c1, c2, tau) -> tuple:
    """``(rate, C1, C2)`` for ``E||x_t||^2 <= C1 E||xi||^2 exp(-rate t) + C2``."""
    if not b3 > b4:
        raise DomainError(f"need b3 > b4, got b3={b3}, b4={b4}")
    lam = b3 - b4
    grow = math.exp(lam * tau)
    head = (2 * grow + 8 * c1 * (grow - 1) / lam + (2 * b4 + 8) * (grow * grow - grow) / lam)
    c_first = head * (1 + b4 * tau / lam)
    c_second = (2 * b5 / lam + 8 * c1 * b5 * tau / lam + (2 * b4 + 8) * b5 * tau / lam
                + 2 * tau * (b5 + 4 * c2))
    return lam, c_first, c_second


def bem_attraction_constants(b1, b2, a1, tau) -> tuple:
    """``(rate, C3)`` for the segment attraction bound.

    No explicit formula is printed for this pair; it is obtained by running
    the moment argument on the difference of two solutions. Contractivity
    plays the role of dissipativity with no constant term, and the diffusion
    difference is bounded by ``a1`` times the state differences.
    """
    if not b1 > b2:
        raise DomainError(f"need b1 > b2, got b1={b1}, b2={b2}")
    rate, c3, _ = bem_moment_constants(b1, b2, 0.0, a1, 0.0, tau)
    return rate, c3


def tem_moment_constant(b1, b3, p, tau, rate) -> float:
    """Prefactor of the ``p``-th moment bound for the exact solution at decay ``rate``."""
    if not rate > 0:
        raise DomainError("rate must be positive")
    return (2 ** (p / 2) + (2 ** (p / 2) + p * b1 / (2 * rate))
            + p * b3 * (math.exp(rate * tau) - 1) / (2 * rate))


def attraction_prefactor(b5, gamma, tau) -> float:
    return 1 + b5 * (math.exp(gamma * tau) - 1) / gamma


def horizon_constant(kind: str, tau: float, first: float, second: float) -> float:
    """Length of the restart interval in the long-horizon error argument.

    ``"state"`` (pointwise error): ``2 tau + 2 log(2 M1) / M2``.
    ``"segment"`` (segment-process error): ``4 tau + 4 log(2 K1) / K2``.
    """
    if kind not in ("state", "segment"):
        raise DomainError(f"unknown horizon kind {kind!r}")
    if not (first > 0 and second > 0):
        raise DomainError("horizon constants need positive inputs")
    scale = 2 if kind == "state" else 4
    return scale * tau + scale * math.log(2 * first) / second


@dataclass(frozen=True, eq=False)
class TheoryConstants:
    """Named constants plus the residuals of every root that produced one.

    Construction fails if any residual exceeds ``1e-10``.
    """

    values: Mapping[str, float]
    residuals: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "values", MappingProxyType(dict(self.values)))
        object.__setattr__(self, "residuals", MappingProxyType(dict(self.residuals)))
        bad = {k: r for k, r in self.residuals.items() if not abs(r) <= ROOT_TOL}
        if bad:
            raise NoRoot(f"root residuals above {ROOT_TOL}: {bad}")
        if "lambda" in self.values and not self.values["lambda"] > 0:
            raise DomainError("lambda must be positive")

    def __getitem__(self, key):
        return self.values[key]

    def __contains__(self, key):
        return key in self.values

    def table(self) -> str:
        lines = [f"{k} = {v:.17g}" for k, v in self.values.items()]
        lines += [f"residual_{k} = {v:.3e}" for k, v in self.residuals.items()]
        return "\n".join(lines) + "\n"


def theory_constants(spec, system=None, *, tau: float | None = None, f00=None, g00=None,
                     m1: float | None = None, m2: float | None = None) -> TheoryConstants:
    """Compute every constant available for ``spec.flavor``.

    ``f00``/``g00`` default to the system's coefficients at the origin. The
    horizon constants need the pair ``(m1, m2)``; for the implicit scheme they
    default to the moment constants ``(C1, lambda)``.
    """
    if tau is None:
        if system is None:
            raise ValueError("give tau or a system")
        tau = system.tau
    dim = system.dim_state if system is not None else 1
    zero = np.zeros(dim)
    if f00 is None:
        f00 = system.drift_at(zero, zero) if system is not None else 0.0
    if g00 is None:
        g00 = system.diffusion_at(zero, zero) if system is not None else 0.0
    c = spec.constants
    vals, res = {}, {}
    c1, c2 = linear_growth_constants(c["a1"], f00, g00)
    vals["c1"], vals["c2"] = c1, c2
    if spec.flavor == "bem":
        lam, big1, big2 = bem_moment_constants(c["b3"], c["b4"], c["b5"], c1, c2, tau)
        vals["lambda"], vals["C1"], vals["C2"] = lam, big1, big2
        eps, c3 = bem_attraction_constants(c["b1"], c["b2"], c["a1"], tau)
        vals["epsilon"], vals["C3"] = eps, c3
        first = big1 if m1 is None else m1
        second = lam if m2 is None else m2
        vals["horizon_segment"] = horizon_constant("segment", tau, first, second)
        if m1 is not None:
            vals["horizon_state"] = horizon_constant("state", tau, m1, m2)
        return TheoryConstants(vals, res)
    p, b2, b3 = c["p"], c["b2"], c["b3"]
    vals["nu"] = tem_nu(c["q"], p)
    k1 = solve_kappa1(b2, b3, p, tau)
    res["kappa1"] = kappa1_residual(k1, b2, b3, p, tau)
    l1 = solve_lambda1(b2, b3, p, tau)
    res["lambda1"] = lambda1_residual(l1, b2, b3, p, tau)
    gam = solve_gamma(c["b4"], c["b5"], tau)
    if c["b5"] > 0:
        res["gamma"] = gamma_residual(gam, c["b4"], c["b5"], tau)
    vals["kappa1"] = k1
    vals["kappa_max"] = min(k1, (b2 - b3) / 2, 1.0)
    vals["kappa"] = vals["kappa_max"] / 2
    vals["lambda1"] = l1
    vals["C6"] = tem_moment_constant(c["b1"], b3, p, tau, l1)
    vals["gamma"] = gam
    vals["attraction_prefactor"] = attraction_prefactor(c["b5"], gam, tau)
    if m1 is not None and m2 is not None:
        vals["horizon_state"] = horizon_constant("state", tau, m1, m2)
    return TheoryConstants(vals, res)
