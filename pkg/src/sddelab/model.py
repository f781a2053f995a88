"""Problem definitions: delay systems, initial histories, time grids and
sampling-based checks of the structural inequalities behind the schemes."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from types import MappingProxyType
from typing import Callable, Mapping, Optional

import numpy as np

GRID_RTOL = 1e-12


class NonCommensurate(ValueError):
    """A time span is not an integer multiple of the step size."""


class UnknownExample(LookupError):
    pass


class IndexOutOfRange(IndexError):
    pass


@dataclass(frozen=True, eq=False)
class SddeSystem:
    """Coefficients of a delay SDE with state dimension ``dim_state`` and
    ``dim_noise`` driving Brownian components.

    ``drift(state, lagged)`` and ``diffusion(state, lagged)`` receive arrays of
    shape ``(..., dim_state)`` and must return shapes ``(..., dim_state)`` and
    ``(..., dim_state, dim_noise)``. Leading axes are batch axes, so a single
    call can evaluate every Monte Carlo path at once. Callables that cannot
    broadcast can be wrapped with :func:`pointwise`.

    Callables are shared between worker processes, so they must be re-entrant
    and, for ``workers > 1``, picklable (module-level functions).
    """

    dim_state: int
    dim_noise: int
    tau: float
    drift: Callable
    diffusion: Callable
    drift_jacobian_x: Optional[Callable] = None
    name: str = "sdde"

    def __post_init__(self):
        if int(self.dim_state) != self.dim_state or self.dim_state < 1:
            raise ValueError(f"dim_state must be a positive integer, got {self.dim_state}")
        if int(self.dim_noise) != self.dim_noise or self.dim_noise < 1:
            raise ValueError(f"dim_noise must be a positive integer, got {self.dim_noise}")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be positive and finite, got {self.tau}")

    def _call(self, fn, state, lagged, tail):
        state = np.asarray(state, dtype=float)
        lagged = np.asarray(lagged, dtype=float)
        out = np.asarray(fn(state, lagged), dtype=float)
        if state.shape == lagged.shape:
            batch = state.shape[:-1]
        else:
            batch = np.broadcast_shapes(state.shape[:-1], lagged.shape[:-1])
        shape = batch + tail
        return out if out.shape == shape else np.broadcast_to(out, shape)

    def drift_at(self, state, lagged) -> np.ndarray:
        return self._call(self.drift, state, lagged, (self.dim_state,))

    def diffusion_at(self, state, lagged) -> np.ndarray:
        return self._call(self.diffusion, state, lagged, (self.dim_state, self.dim_noise))

    def jacobian_at(self, state, lagged) -> Optional[np.ndarray]:
        if self.drift_jacobian_x is None:
            return None
        return self._call(self.drift_jacobian_x, state, lagged, (self.dim_state, self.dim_state))


class pointwise:
    """Adapt a callable written for single vectors to the batched contract."""

    def __init__(self, fn: Callable, out_shape: tuple):
        self.fn = fn
        self.out_shape = tuple(out_shape)

    def __call__(self, state, lagged):
        state, lagged = np.broadcast_arrays(np.asarray(state, float), np.asarray(lagged, float))
        batch = state.shape[:-1]
        flat_s = state.reshape(-1, state.shape[-1])
        flat_l = lagged.reshape(-1, lagged.shape[-1])
        out = np.empty((flat_s.shape[0],) + self.out_shape)
        for i in range(flat_s.shape[0]):
            out[i] = np.reshape(self.fn(flat_s[i], flat_l[i]), self.out_shape)
        return out.reshape(batch + self.out_shape)


def jacobian_mismatch(system: SddeSystem, n_points: int = 200, radius: float = 5.0,
                      seed: int = 0, rtol: float = 1e-5) -> float:
    """Largest relative gap between the analytic Jacobian and central
    differences over random points; ``0.0`` if no Jacobian is attached."""
    if system.drift_jacobian_x is None:
        return 0.0
    rng = np.random.default_rng(seed)
    dim = system.dim_state
    state = _ball(rng, n_points, dim, radius)
    lagged = _ball(rng, n_points, dim, radius)
    analytic = system.jacobian_at(state, lagged)
    numeric = np.empty_like(analytic)
    for col in range(dim):
        h = np.maximum(1.0, np.abs(state[:, col])) * np.finfo(float).eps ** (1 / 3)
        up = state.copy()
        down = state.copy()
        up[:, col] += h
        down[:, col] -= h
        numeric[:, :, col] = (system.drift_at(up, lagged) - system.drift_at(down, lagged)) / (2 * h)[:, None]
    scale = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / scale))


# ---------------------------------------------------------------------------
# initial segments


@dataclass(frozen=True, eq=False)
class InitialSegment:
    """History on ``[-tau, 0]``.

    ``kind`` is one of ``"constant"``, ``"deterministic"`` (``fn(t)``) or
    ``"brownian_functional"`` (``fn(t, w)`` where ``w`` is the value of an
    auxiliary Brownian motion at ``t``, pinned to 0 at ``t = 0``).
    Functions broadcast: ``t`` has shape ``S`` and ``w`` shape ``S + (m,)``;
    the result has shape ``S + (d,)``.
    """

    kind: str
    fn: Optional[Callable] = None
    value: Optional[np.ndarray] = None
    holder_constant: Optional[float] = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("constant", "deterministic", "brownian_functional"):
            raise ValueError(f"unknown initial segment kind {self.kind!r}")
        if self.kind == "constant":
            if self.value is None:
                raise ValueError("constant segment needs a value")
            object.__setattr__(self, "value", np.atleast_1d(np.asarray(self.value, dtype=float)))
        elif self.fn is None:
            raise ValueError(f"{self.kind} segment needs a function")
        if self.holder_constant is not None and not self.holder_constant > 0:
            raise ValueError("holder_constant must be positive")

    @classmethod
    def constant(cls, value, label: str = "", holder_constant=None) -> "InitialSegment":
        return cls("constant", value=value, label=label, holder_constant=holder_constant)

    @classmethod
    def deterministic(cls, fn, label: str = "", holder_constant=None) -> "InitialSegment":
        return cls("deterministic", fn=fn, label=label, holder_constant=holder_constant)

    @classmethod
    def brownian_functional(cls, fn, label: str = "", holder_constant=None) -> "InitialSegment":
        return cls("brownian_functional", fn=fn, label=label, holder_constant=holder_constant)

    @property
    def needs_brownian(self) -> bool:
        return self.kind == "brownian_functional"

    def evaluate(self, times, dim_state: int, brownian=None) -> np.ndarray:
        """Values at ``times`` (any shape ``S``), returned with shape ``S + (dim_state,)``.

        ``brownian`` holds the auxiliary Brownian values, shape ``S + (m,)``;
        required only for Brownian functionals.
        """
        times = np.asarray(times, dtype=float)
        if self.kind == "constant":
            out = self.value
            if out.shape[-1] != dim_state:
                raise ValueError(f"constant of length {out.shape[-1]} does not match dim {dim_state}")
            shape = times.shape
        elif self.kind == "deterministic":
            out = np.asarray(self.fn(times), dtype=float)
            shape = times.shape
        else:
            if brownian is None:
                raise ValueError("a Brownian functional segment needs Brownian values")
            brownian = np.asarray(brownian, dtype=float)
            shape = brownian.shape[:-1]
            out = np.asarray(self.fn(_expand_times(times, shape), brownian), dtype=float)
        return np.broadcast_to(out, shape + (dim_state,)).copy()


def _expand_times(times, shape):
    # times may be (n,) while the Brownian values are (n, paths, m)
    extra = len(shape) - times.ndim
    return np.broadcast_to(times.reshape(times.shape + (1,) * extra), shape)


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``t_k = k * delta`` with ``delay_steps * delta == tau``."""

    delta: float
    delay_steps: int
    horizon_steps: int

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.delay_steps < 1 or self.horizon_steps < 1:
            raise ValueError("delay_steps and horizon_steps must be at least 1")

    @property
    def tau(self) -> float:
        return self.delay_steps * self.delta

    @property
    def horizon(self) -> float:
        return self.horizon_steps * self.delta

    def time(self, k):
        return np.asarray(k) * self.delta

    def times(self, with_history: bool = True) -> np.ndarray:
        start = -self.delay_steps if with_history else 0
        return np.arange(start, self.horizon_steps + 1) * self.delta

    def history_times(self) -> np.ndarray:
        return np.arange(-self.delay_steps, 1) * self.delta


def _whole_multiple(span: float, delta: float, what: str) -> int:
    count = round(span / delta)
    if count < 1 or abs(count * delta - span) > GRID_RTOL * abs(span):
        raise NonCommensurate(f"{what}={span!r} is not an integer multiple of delta={delta!r}")
    return int(count)


def make_grid(tau: float, delta: float, horizon: float) -> Grid:
    if not (tau > 0 and delta > 0 and horizon > 0):
        raise ValueError("tau, delta and horizon must be positive")
    return Grid(delta=float(delta),
                delay_steps=_whole_multiple(tau, delta, "tau"),
                horizon_steps=_whole_multiple(horizon, delta, "horizon"))


def step_ratio(coarse: float, fine: float) -> int:
    """Integer ratio ``coarse / fine``; raises NonCommensurate otherwise."""
    return _whole_multiple(coarse, fine, "delta_coarse")


# ---------------------------------------------------------------------------
# assumption constants

_REQUIRED = {
    "bem": ("a1", "b1", "b2", "b3", "b4", "b5"),
    "tem": ("a1", "q", "p", "b1", "b2", "b3", "b4", "b5", "b1_bar", "b2_bar", "b3_bar", "sigma"),
}


@dataclass(frozen=True, eq=False)
class AssumptionSpec:
    """Named constants for one family of structural inequalities.

    ``flavor="bem"`` covers global Lipschitz, contractivity
    (``b1``, ``b2``) and dissipativity (``b3``, ``b4``, ``b5``).
    ``flavor="tem"`` covers polynomial Lipschitz (``a1``, ``q``), the
    Khasminskii-type bounds (``b1..b3`` in the ``p``-th moment form,
    ``b1_bar..b3_bar`` in the quadratic form) and contractivity with weight
    ``sigma`` (``b4``, ``b5``).

    The ordering predicates are checked on construction. ``strict=False``
    relaxes the strict inequalities to non-strict ones, which is only useful
    for degenerate sanity cases.
    """

    flavor: str
    constants: Mapping[str, float]
    strict: bool = True

    def __post_init__(self):
        if self.flavor not in _REQUIRED:
            raise ValueError(f"flavor must be 'bem' or 'tem', got {self.flavor!r}")
        consts = {key: float(val) for key, val in dict(self.constants).items()}
        missing = [key for key in _REQUIRED[self.flavor] if key not in consts]
        if missing:
            raise ValueError(f"missing constants for {self.flavor}: {missing}")
        for key, val in consts.items():
            if not math.isfinite(val) or val < 0:
                raise ValueError(f"constant {key} must be finite and nonnegative, got {val}")
        object.__setattr__(self, "constants", MappingProxyType(consts))
        failed = [name for name, ok in self.predicates().items() if not ok]
        if failed:
            raise ValueError(f"constants violate ordering predicates: {', '.join(failed)}")

    def __getitem__(self, key):
        return self.constants[key]

    def get(self, key, default=None):
        return self.constants.get(key, default)

    def predicates(self) -> dict:
        c = self.constants
        gt = (lambda a, b: a > b) if self.strict else (lambda a, b: a >= b)
        if self.flavor == "bem":
            return {"a1 > 0": gt(c["a1"], 0.0), "b1 > b2": gt(c["b1"], c["b2"]),
                    "b3 > b4": gt(c["b3"], c["b4"])}
        return {
            "a1 > 0": gt(c["a1"], 0.0),
            "q > 0": gt(c["q"], 0.0),
            "p > max(4q, 3q+8)": gt(c["p"], max(4 * c["q"], 3 * c["q"] + 8)),
            "b2 > b3": gt(c["b2"], c["b3"]),
            "b2_bar > b3_bar": gt(c["b2_bar"], c["b3_bar"]),
            "b4 > b5": gt(c["b4"], c["b5"]),
            "sigma > 1": gt(c["sigma"], 1.0),
        }


# ---------------------------------------------------------------------------
# sampling-based checks


@dataclass(frozen=True)
class SamplerConfig:
    n_points: int = 10_000
    radius: float = 10.0
    seed: int = 0
    rtol: float = 1e-10

    def __post_init__(self):
        if self.n_points < 1:
            raise ValueError("n_points must be at least 1")
        if not self.radius > 0:
            raise ValueError("radius must be positive")


@dataclass(frozen=True)
class Violation:
    inequality: str
    point: tuple
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        """``rhs - lhs``; negative for a violation (NaN if non-finite)."""
        return self.rhs - self.lhs


@dataclass(frozen=True)
class ViolationReport:
    flavor: str
    sampler: SamplerConfig
    checked: tuple
    violations: tuple = ()

    @property
    def empty(self) -> bool:
        return not self.violations

    def __len__(self):
        return len(self.violations)

    def counts(self) -> dict:
        out = {name: 0 for name in self.checked}
        for v in self.violations:
            out[v.inequality] += 1
        return out

    def worst(self) -> dict:
        out = {}
        for v in self.violations:
            cur = out.get(v.inequality)
            if cur is None or not (v.slack >= cur.slack):
                out[v.inequality] = v
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["inequality", "point", "lhs", "rhs", "slack"])
            for v in self.violations:
                writer.writerow([v.inequality, " ".join(f"{c:.17g}" for c in v.point),
                                 f"{v.lhs:.17g}", f"{v.rhs:.17g}", f"{v.slack:.17g}"])

    def summary(self) -> str:
        lines = [f"flavor: {self.flavor}",
                 f"points: {self.sampler.n_points} radius: {self.sampler.radius} seed: {self.sampler.seed}"]
        worst = self.worst()
        for name, count in self.counts().items():
            line = f"{name}: {count} violations"
            if name in worst:
                line += f" (worst slack {worst[name].slack:.6g})"
            lines.append(line)
        lines.append("no violation found" if self.empty else f"total violations: {len(self.violations)}")
        return "\n".join(lines)


def _ball(rng, count, dim, radius):
    direction = rng.standard_normal((count, dim))
    norms = np.linalg.norm(direction, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    scale = radius * rng.random((count, 1)) ** (1.0 / dim)
    return direction / norms * scale


def _sq(a):
    return np.sum(a * a, axis=tuple(range(1, a.ndim)))


def _inner(a, b):
    return np.sum(a * b, axis=-1)


def _norm(a):
    return np.sqrt(_sq(a))


def _inequalities(system, spec, xa, xb, ya, yb):
    """Return ``{name: (lhs, rhs)}`` arrays over the sample."""
    c = spec.constants
    fa = system.drift_at(xa, ya)
    fb = system.drift_at(xb, yb)
    ga = system.diffusion_at(xa, ya)
    gb = system.diffusion_at(xb, yb)
    dx2 = _sq(xa - xb)
    dy2 = _sq(ya - yb)
    df = fa - fb
    dg2 = _sq(ga - gb)
    out = {}
    if spec.flavor == "bem":
        out["lipschitz_drift"] = (_sq(df), c["a1"] * (dx2 + dy2))
        out["lipschitz_diffusion"] = (dg2, c["a1"] * (dx2 + dy2))
        out["contractivity"] = (2 * _inner(xa - xb, df) + dg2, -c["b1"] * dx2 + c["b2"] * dy2)
        out["dissipativity"] = (2 * _inner(xa, fa) + _sq(ga),
                                -c["b3"] * _sq(xa) + c["b4"] * _sq(ya) + c["b5"])
        return out
    q, p = c["q"], c["p"]
    growth = 1 + _norm(xa) ** q + _norm(xb) ** q + _norm(ya) ** q + _norm(yb) ** q
    out["poly_lipschitz_drift"] = (_norm(df), c["a1"] * (np.sqrt(dx2) + np.sqrt(dy2)) * growth)
    out["poly_lipschitz_diffusion"] = (dg2, c["a1"] * (dx2 + dy2) * growth)
    core = 2 * _inner(xa, fa) + (p - 1) * _sq(ga)
    out["khasminskii_p"] = ((1 + _sq(xa)) ** (p / 2 - 1) * core,
                            c["b1"] - c["b2"] * _norm(xa) ** p + c["b3"] * _norm(ya) ** p)
    out["khasminskii_2"] = (core, c["b1_bar"] - c["b2_bar"] * _sq(xa) + c["b3_bar"] * _sq(ya))
    out["contractivity"] = (2 * _inner(xa - xb, df) + c["sigma"] * dg2, -c["b4"] * dx2 + c["b5"] * dy2)
    return out


def check_assumptions(system: SddeSystem, spec: AssumptionSpec,
                      sampler: SamplerConfig | None = None, **kwargs) -> ViolationReport:
    """Evaluate every inequality of ``spec.flavor`` on random points.

    Points ``x, x_bar, y, y_bar`` are drawn independently and uniformly from
    the ball of radius ``sampler.radius``. A sample violates an inequality
    when ``lhs - rhs`` exceeds ``rtol * (1 + |lhs| + |rhs|)`` or either side is
    not finite. An empty report means no counterexample was found; it is not
    a proof.
    """
    sampler = sampler or SamplerConfig(**kwargs)
    rng = np.random.default_rng(sampler.seed)
    dim, count = system.dim_state, sampler.n_points
    xa, xb, ya, yb = (_ball(rng, count, dim, sampler.radius) for _ in range(4))
    with np.errstate(all="ignore"):
        table = _inequalities(system, spec, xa, xb, ya, yb)
    violations = []
    for name, (lhs, rhs) in table.items():
        lhs = np.broadcast_to(lhs, (count,))
        rhs = np.broadcast_to(rhs, (count,))
        with np.errstate(all="ignore"):
            bad = ~(np.isfinite(lhs) & np.isfinite(rhs)) | (
                lhs - rhs > sampler.rtol * (1 + np.abs(lhs) + np.abs(rhs)))
        for i in np.flatnonzero(bad):
            point = tuple(np.concatenate([xa[i], xb[i], ya[i], yb[i]]).tolist())
            violations.append(Violation(name, point, float(lhs[i]), float(rhs[i])))
    return ViolationReport(spec.flavor, sampler, tuple(table), tuple(violations))


# ---------------------------------------------------------------------------
# built-in examples (module level so they pickle into worker processes)


def linear_drift(state, lagged):
    return -4.0 * state + lagged


def linear_drift_jac(state, lagged):
    return np.full(np.broadcast_shapes(state.shape, lagged.shape) + (1,), -4.0)


def affine_noise(state, lagged):
    return (state + lagged + 1.0)[..., None]


def cubic_drift(state, lagged):
    return -2.0 * state - 10.0 * state ** 3 + lagged


def cubic_drift_jac(state, lagged):
    return (-2.0 - 30.0 * state ** 2 + 0.0 * lagged)[..., None]


def quadratic_noise(state, lagged):
    return (1.0 + 0.5 * state ** 2 + 0.0 * lagged)[..., None]


def cos_of_brownian(times, brownian):
    return np.cos(brownian)


def shifted_cos_of_brownian(times, brownian):
    return 3.0 + np.cos(brownian)


def ramp_history(times):
    return (-1.0 + times)[..., None]


def cos_history() -> InitialSegment:
    return InitialSegment.brownian_functional(cos_of_brownian, label="cos(W)", holder_constant=1.0)


def example_histories() -> dict:
    """The three histories used for the ergodicity and attraction runs."""
    return {
        "shifted_cos": InitialSegment.brownian_functional(shifted_cos_of_brownian, label="3+cos(W)",
                                                          holder_constant=1.0),
        "ramp": InitialSegment.deterministic(ramp_history, label="-1+t", holder_constant=1.0),
        "minus_two": InitialSegment.constant([-2.0], label="-2"),
    }


EXAMPLES = ("ex1_bem", "ex2_tem")


def builtin_example(example_id: str):
    """Return ``(system, initial_segment, assumption_spec)`` for a shipped example."""
    if example_id == "ex1_bem":
        system = SddeSystem(1, 1, 1.0, linear_drift, affine_noise, linear_drift_jac, name="ex1_bem")
        spec = AssumptionSpec("bem", dict(a1=32, b1=5, b2=3, b3=4.75, b4=3.25, b5=9, holder=1.0))
        return system, cos_history(), spec
    if example_id == "ex2_tem":
        system = SddeSystem(1, 1, 1.0, cubic_drift, quadratic_noise, cubic_drift_jac, name="ex2_tem")
        spec = AssumptionSpec("tem", dict(a1=20, q=2, p=16, b1=512, b2=1536, b3=128, b4=3, b5=1,
                                          b1_bar=30, b2_bar=3, b3_bar=1, sigma=2.0))
        return system, cos_history(), spec
    raise UnknownExample(f"unknown example {example_id!r}; choose from {', '.join(EXAMPLES)}")
