"""Explicit, truncated explicit and drift-implicit Euler-Maruyama steps for
delay SDEs, plus single-path simulation and interpolation.

All step functions accept batched states of shape ``(..., d)`` so that the
ensemble engine can advance many paths per call. Every operation is
elementwise along the batch axes, which keeps a path's result independent of
how paths are grouped.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .brownian import BrownianLattice
from .model import Grid, InitialSegment, SddeSystem, step_ratio


class StepTooLarge(ValueError):
    """The truncation level lies below the domain of the inverse bound."""


class ExponentsInvalid(ValueError):
    pass


class OffGrid(ValueError):
    pass


class NumericalFailure(ArithmeticError):
    """Base class for failures while stepping; carries the grid index."""

    def __init__(self, message, step=None, path_id=None):
        super().__init__(message)
        self.step = step
        self.path_id = path_id

    def __str__(self):
        base = super().__str__()
        where = []
        if self.path_id is not None:
            where.append(f"path {self.path_id}")
        if self.step is not None:
            where.append(f"step {self.step}")
        return f"{base} ({', '.join(where)})" if where else base


class NonFinite(NumericalFailure):
    pass


class NoConvergence(NumericalFailure):
    def __init__(self, message, residual=float("nan"), step=None, path_id=None):
        super().__init__(message, step, path_id)
        self.residual = residual


class SingularJacobian(NumericalFailure):
    pass


def _delta(grid) -> float:
    return grid.delta if isinstance(grid, Grid) else float(grid)


def _norm(a):
    if a.shape[-1] == 1:
        return np.abs(a[..., 0])
    return np.sqrt(np.sum(a * a, axis=-1))


def _noise(diff, dw):
    """``diff @ dw`` over the last axes, summed in ascending column order."""
    if diff.shape[-1] == 1:
        return diff[..., 0] * dw
    out = diff[..., :, 0] * dw[..., None, 0]
    for j in range(1, diff.shape[-1]):
        out = out + diff[..., :, j] * dw[..., None, j]
    return out


def _finite_or_raise(values, what):
    if not np.isfinite(values).all():
        raise NonFinite(f"{what} produced a non-finite value")


# ---------------------------------------------------------------------------
# truncation


def tem_nu(q: float, p: float) -> float:
    """Truncation exponent ``(q + 2) / (p - 2)``; requires ``p > max(4q, 3q + 8)``."""
    if not (q >= 0 and p > max(4 * q, 3 * q + 8)):
        raise ExponentsInvalid(f"need p > max(4q, 3q+8); got q={q}, p={p}")
    nu = (q + 2) / (p - 2)
    if not 0 < nu <= 1 / 3:
        raise ExponentsInvalid(f"nu={nu} outside (0, 1/3]")
    return nu


@dataclass(frozen=True, eq=False)
class TruncationSpec:
    """Bound function ``phi`` and the derived radius ``phi_inv(level * delta**-nu)``.

    ``domain_min`` is the smallest argument accepted by ``phi_inv``. It is at
    least ``phi(1)`` because ``phi_inv`` maps onto ``[1, inf)``.
    """

    growth_exp: float
    moment_exp: float
    c_drift: float
    c_diff: float
    level: float
    nu: float
    phi: Callable[[float], float]
    phi_inv: Callable[[float], float]
    domain_min: float

    def admissible(self, delta: float) -> bool:
        return self.level * delta ** (-self.nu) >= self.domain_min

    def radius(self, delta: float) -> float:
        arg = self.level * delta ** (-self.nu)
        if not arg >= self.domain_min:
            raise StepTooLarge(
                f"delta={delta}: truncation argument {arg:.6g} is below the admissible minimum "
                f"{self.domain_min:.6g}; use a smaller step or a larger level")
        return float(self.phi_inv(arg))

    def max_admissible_delta(self) -> float:
        return (self.level / self.domain_min) ** (1 / self.nu)


def _level(phi_at_one, f00, g00):
    f_size = float(np.linalg.norm(np.atleast_1d(f00)))
    g_size = float(np.linalg.norm(np.atleast_1d(g00)))
    return max(1.0, phi_at_one, f_size, g_size ** 2)


def default_truncation(a1: float, q: float, p: float, f00, g00) -> TruncationSpec:
    """Polynomial majorant ``phi(r) = A + B r**(q+2)`` with its closed-form inverse.

    Here ``A = c1 + 2 c2**2`` and ``B = 2 c1 + 8 c2**2`` with
    ``c1 = 3 a1 + |f(0,0)|`` and ``c2 = 3 sqrt(a1) + |g(0,0)|``. The inverse is
    used on ``[3 c1 + 10 c2**2, inf)``, which equals ``[phi(1), inf)``.
    """
    if not a1 > 0:
        raise ExponentsInvalid(f"a1 must be positive, got {a1}")
    nu = tem_nu(q, p)
    c_drift = 3 * a1 + float(np.linalg.norm(np.atleast_1d(f00)))
    c_diff = 3 * math.sqrt(a1) + float(np.linalg.norm(np.atleast_1d(g00)))
    offset = c_drift + 2 * c_diff ** 2
    slope = 2 * c_drift + 8 * c_diff ** 2
    power = q + 2

    def phi(r):
        return offset + slope * np.asarray(r, dtype=float) ** power

    def phi_inv(value):
        return ((np.asarray(value, dtype=float) - offset) / slope) ** (1 / power)

    threshold = 3 * c_drift + 10 * c_diff ** 2
    level = _level(float(phi(1.0)), f00, g00)
    return TruncationSpec(q, p, c_drift, c_diff, level, nu, phi, phi_inv, threshold)


def custom_truncation(phi: Callable, phi_inv: Callable, q: float, p: float, *, f00=0.0, g00=0.0,
                      a1: float | None = None, level: float | None = None) -> TruncationSpec:
    """User-supplied ``phi``/``phi_inv`` pair. ``level`` defaults to
    ``max(1, phi(1), |f(0,0)|, |g(0,0)|**2)``."""
    nu = tem_nu(q, p)
    phi_one = float(phi(1.0))
    if level is None:
        level = _level(phi_one, f00, g00)
    c_drift = c_diff = float("nan")
    if a1 is not None:
        c_drift = 3 * a1 + float(np.linalg.norm(np.atleast_1d(f00)))
        c_diff = 3 * math.sqrt(a1) + float(np.linalg.norm(np.atleast_1d(g00)))
    return TruncationSpec(q, p, c_drift, c_diff, float(level), nu, phi, phi_inv, phi_one)


def truncate(spec: TruncationSpec, delta: float, x, radius: float | None = None) -> np.ndarray:
    """Radial projection onto the ball of radius ``spec.radius(delta)``.

    Zero maps to zero. Projected points never exceed the radius, even after
    rounding. ``radius`` may be passed to skip recomputing it.
    """
    if radius is None:
        radius = spec.radius(delta)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] == 1:
        return np.where(np.abs(x) > radius, np.copysign(radius, x), x)
    size = _norm(x)[..., None]
    outside = size > radius
    factor = np.ones_like(size)
    # the 4 ulp margin keeps projected points inside the ball under any
    # reasonable way of evaluating the Euclidean norm
    np.divide(radius * (1 - 4 * np.finfo(float).eps), size, out=factor, where=outside)
    return x * factor


# ---------------------------------------------------------------------------
# implicit solve


@dataclass(frozen=True)
class ImplicitSolveConfig:
    """Options for the implicit drift solve ``X - delta * f(X, lagged) = rhs``.

    ``method``: ``"newton"``, ``"fixed_point"`` or ``"closed_form"``. The
    closed form needs ``g_inverse(z, delta)`` and ``f_lagged(lagged, delta)``
    such that ``X - delta f(X, y) = G(X) - F(y)``; the step is then
    ``X = g_inverse(F(y) + rhs)``.

    ``jacobian``: ``"auto"`` (analytic when the system provides one),
    ``"analytic"`` or ``"central_difference"``.
    """

    method: str = "newton"
    rel_tol: float = 1e-12
    abs_tol: float = 1e-14
    max_iters: int = 50
    jacobian: str = "auto"
    h_scale: float = 1.0
    g_inverse: Optional[Callable] = None
    f_lagged: Optional[Callable] = None

    def __post_init__(self):
        if self.method not in ("newton", "fixed_point", "closed_form"):
            raise ValueError(f"unknown implicit method {self.method!r}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.jacobian not in ("auto", "analytic", "central_difference"):
            raise ValueError(f"unknown jacobian mode {self.jacobian!r}")
        if self.method == "closed_form" and (self.g_inverse is None or self.f_lagged is None):
            raise ValueError("closed_form needs g_inverse and f_lagged")


def _jacobian(system, cfg, x, lagged):
    mode = cfg.jacobian
    if mode == "auto":
        mode = "analytic" if system.drift_jacobian_x is not None else "central_difference"
    if mode == "analytic":
        jac = system.jacobian_at(x, lagged)
        if jac is None:
            raise ValueError("analytic Jacobian requested but the system has none")
        return jac
    dim = x.shape[-1]
    jac = np.empty(x.shape + (dim,))
    eps3 = np.finfo(float).eps ** (1 / 3) * cfg.h_scale
    for col in range(dim):
        h = np.maximum(1.0, np.abs(x[..., col])) * eps3
        up = x.copy()
        down = x.copy()
        up[..., col] += h
        down[..., col] -= h
        jac[..., :, col] = (system.drift_at(up, lagged) - system.drift_at(down, lagged)) / (2 * h)[..., None]
    return jac


def _linear_solve(matrix, rhs, active):
    """Solve ``matrix @ s = rhs`` on the batch; singular active entries raise."""
    if matrix.shape[-1] == 1:
        pivot = matrix[..., 0, 0]
        if np.any(active & ~(np.abs(pivot) > 0)):
            raise SingularJacobian("Newton matrix is singular")
        safe = np.where(active, pivot, 1.0)
        return rhs / safe[..., None]
    safe = np.where(active[..., None, None], matrix, np.eye(matrix.shape[-1]))
    try:
        return np.linalg.solve(safe, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularJacobian("Newton matrix is singular") from exc


def solve_implicit(system: SddeSystem, cfg: ImplicitSolveConfig, delta: float, rhs, lagged, guess=None):
    """Solve ``X - delta * f(X, lagged) = rhs`` for a batch of right-hand sides."""
    rhs = np.asarray(rhs, dtype=float)
    lagged = np.asarray(lagged, dtype=float)
    if cfg.method == "closed_form":
        out = np.asarray(cfg.g_inverse(cfg.f_lagged(lagged, delta) + rhs, delta), dtype=float)
        _finite_or_raise(out, "closed-form implicit step")
        return out
    x = rhs.copy() if guess is None else np.array(guess, dtype=float)
    for it in range(cfg.max_iters + 1):
        drift = system.drift_at(x, lagged)
        resid = x - delta * drift - rhs
        size = _norm(resid)
        active = ~(size <= cfg.abs_tol + cfg.rel_tol * _norm(x))
        if not active.any():
            if cfg.method == "newton" and it > 0:
                # one more update: Newton squares the residual, so the
                # returned root is far inside the stopping tolerance
                matrix = np.eye(x.shape[-1]) - delta * _jacobian(system, cfg, x, lagged)
                polished = x - _linear_solve(matrix, resid, np.ones(size.shape, dtype=bool))
                if np.isfinite(polished).all():
                    x = polished
            return x
        if it == cfg.max_iters:
            worst = float(np.max(np.where(active, size, 0.0)))
            raise NoConvergence(f"implicit solve did not converge in {cfg.max_iters} iterations "
                                f"(residual {worst:.3g})", residual=worst)
        if not np.isfinite(x[active]).all():
            raise NonFinite("implicit solve diverged")
        if cfg.method == "fixed_point":
            update = rhs + delta * drift
        else:
            jac = _jacobian(system, cfg, x, lagged)
            matrix = np.eye(x.shape[-1]) - delta * jac
            update = x - _linear_solve(matrix, resid, active)
        x = np.where(active[..., None], update, x)
    return x  # pragma: no cover


# ---------------------------------------------------------------------------
# steps


def _em(system, delta, y_prev, y_prev_delay, dw):
    out = (y_prev + system.drift_at(y_prev, y_prev_delay) * delta
           + _noise(system.diffusion_at(y_prev, y_prev_delay), dw))
    _finite_or_raise(out, "explicit step")
    return out


def _bem(system, cfg, delta, x_prev, x_delay, x_delay_prev, dw):
    rhs = x_prev + _noise(system.diffusion_at(x_prev, x_delay_prev), dw)
    _finite_or_raise(rhs, "implicit step right-hand side")
    guess = None
    if cfg.method == "newton":
        guess = rhs + delta * system.drift_at(x_prev, x_delay)
        if not np.isfinite(guess).all():
            guess = rhs
    out = solve_implicit(system, cfg, delta, rhs, x_delay, guess)
    _finite_or_raise(out, "implicit step")
    return out


def step_em(system: SddeSystem, grid, y_prev, y_prev_delay, dw):
    with np.errstate(over="ignore", invalid="ignore"):
        return _em(system, _delta(grid), np.asarray(y_prev, dtype=float),
                   np.asarray(y_prev_delay, dtype=float), np.asarray(dw, dtype=float))


def step_tem(system: SddeSystem, spec: TruncationSpec, grid, y_prev, y_prev_delay, dw, radius=None):
    """Return ``(y_tilde, y)``: the explicit update and its projection."""
    delta = _delta(grid)
    if radius is None:
        radius = spec.radius(delta)
    y_tilde = step_em(system, delta, y_prev, y_prev_delay, dw)
    return y_tilde, truncate(spec, delta, y_tilde, radius)


def step_bem(system: SddeSystem, cfg: ImplicitSolveConfig, grid, x_prev, x_delay, x_delay_prev, dw):
    """Drift-implicit step: solve ``X - f(X, x_delay) delta = x_prev + g(x_prev, x_delay_prev) dw``."""
    with np.errstate(over="ignore", invalid="ignore"):
        return _bem(system, cfg, _delta(grid), np.asarray(x_prev, dtype=float),
                    np.asarray(x_delay, dtype=float), np.asarray(x_delay_prev, dtype=float),
                    np.asarray(dw, dtype=float))


# ---------------------------------------------------------------------------
# schemes


@dataclass(frozen=True)
class EM:
    name: str = field(default="em", init=False)

    def prepare(self, delta):
        return None

    def advance(self, system, delta, prepared, prev, lag_cur, lag_prev, dw):
        return _em(system, delta, prev, lag_prev, dw), None


@dataclass(frozen=True, eq=False)
class TEM:
    spec: TruncationSpec
    name: str = field(default="tem", init=False)

    def prepare(self, delta):
        return self.spec.radius(delta)

    def advance(self, system, delta, radius, prev, lag_cur, lag_prev, dw):
        y_tilde = _em(system, delta, prev, lag_prev, dw)
        return truncate(self.spec, delta, y_tilde, radius), y_tilde


@dataclass(frozen=True)
class BEM:
    cfg: ImplicitSolveConfig = ImplicitSolveConfig()
    name: str = field(default="bem", init=False)

    def prepare(self, delta):
        return None

    def advance(self, system, delta, prepared, prev, lag_cur, lag_prev, dw):
        return _bem(system, self.cfg, delta, prev, lag_cur, lag_prev, dw), None


Scheme = Union[EM, TEM, BEM]


class Stepper:
    """Advance a batch of paths with a ring buffer of the last ``M + 1`` states.

    ``history`` has shape ``(M + 1, P, d)`` holding grid indices ``-M .. 0``.
    """

    def __init__(self, system: SddeSystem, scheme, delta: float, history: np.ndarray, path_ids=None):
        self.system = system
        self.scheme = scheme
        self.delta = float(delta)
        self.delay_steps = history.shape[0] - 1
        # grid index j lives in slot j % (M + 1): index 0 in slot 0, index -M in slot 1
        self.buffer = np.roll(np.asarray(history, dtype=float), 1, axis=0)
        self.step = 0
        self.prepared = scheme.prepare(self.delta)
        self.path_ids = path_ids

    def _slot(self, index):
        return index % (self.delay_steps + 1)

    @property
    def current(self):
        return self.buffer[self._slot(self.step)]

    def advance(self, dw_block, keep_every: int = 1, on_step=None):
        """Take ``len(dw_block)`` steps; return states at every ``keep_every``-th new index."""
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return self._advance(dw_block, keep_every, on_step)

    def _advance(self, dw_block, keep_every, on_step):
        n = dw_block.shape[0]
        kept = []
        pre_kept = []
        for i in range(n):
            k = self.step + 1
            prev = self.buffer[self._slot(k - 1)]
            lag_cur = self.buffer[self._slot(k - self.delay_steps)]
            lag_prev = self.buffer[self._slot(k - 1 - self.delay_steps)]
            try:
                new, pre = self.scheme.advance(self.system, self.delta, self.prepared,
                                               prev, lag_cur, lag_prev, dw_block[i])
            except NumericalFailure as exc:
                exc.step = k
                if self.path_ids is not None and exc.path_id is None:
                    exc.path_id = self._culprit(prev, lag_cur, lag_prev, dw_block[i])
                raise
            self.buffer[self._slot(k)] = new
            self.step = k
            if on_step is not None:
                on_step(new, pre)
            if k % keep_every == 0:
                kept.append(new)
                if pre is not None:
                    pre_kept.append(pre)
        return kept, pre_kept

    def _culprit(self, prev, lag_cur, lag_prev, dw):
        # replay each path alone to name the first failing one
        for i in range(prev.shape[0]):
            try:
                self.scheme.advance(self.system, self.delta, self.prepared, prev[i:i + 1],
                                    lag_cur[i:i + 1], lag_prev[i:i + 1], dw[i:i + 1])
            except NumericalFailure:
                return int(self.path_ids[i])
        return None

    def segment(self) -> np.ndarray:
        """Current window ``(M + 1, P, d)`` in time order."""
        order = [self._slot(self.step - self.delay_steps + j) for j in range(self.delay_steps + 1)]
        return self.buffer[order].copy()


# ---------------------------------------------------------------------------
# single paths


@dataclass(frozen=True, eq=False)
class DiscretePath:
    """Grid values ``values[k + M]`` for ``k = -M .. N``."""

    grid: Grid
    values: np.ndarray
    scheme: str
    system: Optional[SddeSystem] = None
    pre_truncation: Optional[np.ndarray] = None
    start_step: int = 0

    def __post_init__(self):
        expected = self.grid.delay_steps + self.grid.horizon_steps + 1
        if self.values.shape[0] != expected:
            raise ValueError(f"expected {expected} rows, got {self.values.shape[0]}")

    @property
    def times(self) -> np.ndarray:
        return (np.arange(-self.grid.delay_steps, self.grid.horizon_steps + 1) + self.start_step) * self.grid.delta

    def at(self, k: int) -> np.ndarray:
        if not -self.grid.delay_steps <= k <= self.grid.horizon_steps:
            raise IndexError(f"index {k} outside [-{self.grid.delay_steps}, {self.grid.horizon_steps}]")
        return self.values[k + self.grid.delay_steps]

    def history(self) -> np.ndarray:
        return self.values[:self.grid.delay_steps + 1]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"component_{j}" for j in range(self.values.shape[1])])
            for t, row in zip(self.times, self.values):
                writer.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])


def history_brownian(init_lattice: BrownianLattice | None, delay_steps: int) -> np.ndarray:
    """Brownian values at the grid points of ``[-tau, 0]`` (shape ``(M + 1, m)``),
    pinned to zero at ``t = 0``. The lattice may be finer than the grid."""
    if init_lattice is None:
        raise ValueError("this initial segment needs a Brownian lattice on [-tau, 0]")
    if init_lattice.n_steps % delay_steps:
        raise ValueError(f"history lattice of {init_lattice.n_steps} steps does not refine "
                         f"{delay_steps} delay steps")
    stride = init_lattice.n_steps // delay_steps
    cum = init_lattice.values()
    return (cum - cum[-1])[::stride]


def history_values(init: InitialSegment, grid: Grid, dim_state: int, init_lattice=None) -> np.ndarray:
    times = grid.history_times()
    brownian = history_brownian(init_lattice, grid.delay_steps) if init.needs_brownian else None
    return init.evaluate(times, dim_state, brownian)


def simulate(system: SddeSystem, scheme, grid: Grid, lattice: BrownianLattice,
             init: Union[InitialSegment, np.ndarray], init_brownian: BrownianLattice | None = None) -> DiscretePath:
    """Integrate one path on ``grid`` driven by ``lattice``.

    ``init`` is an initial segment or an explicit ``(M + 1, d)`` array of
    history values (for restarts). ``init_brownian`` drives Brownian
    functional segments; it may be finer than ``grid``.
    """
    if abs(lattice.delta - grid.delta) > 1e-12 * grid.delta:
        raise ValueError(f"lattice step {lattice.delta} differs from grid step {grid.delta}")
    if lattice.n_steps < grid.horizon_steps:
        raise ValueError("lattice shorter than the horizon")
    if isinstance(init, InitialSegment):
        hist = history_values(init, grid, system.dim_state, init_brownian)
    else:
        hist = np.array(init, dtype=float).reshape(grid.delay_steps + 1, system.dim_state)
    stepper = Stepper(system, scheme, grid.delta, hist[:, None, :])
    dw = lattice.increments[:grid.horizon_steps, None, :]
    kept, pre = stepper.advance(dw)
    values = np.concatenate([hist, np.asarray(kept)[:, 0, :]])
    pre_arr = np.asarray(pre)[:, 0, :] if pre else None
    return DiscretePath(grid, values, scheme.name, system, pre_arr, lattice.start)


def _fine_index(path: DiscretePath, lattice: BrownianLattice, t: float):
    ratio = step_ratio(path.grid.delta, lattice.delta)
    pos = t / lattice.delta - lattice.start
    idx = round(pos)
    if abs(idx - pos) > 1e-9 * max(1.0, abs(pos)):
        raise OffGrid(f"t={t} is not on the lattice grid of step {lattice.delta}")
    if not 0 <= idx <= min(lattice.n_steps, path.grid.horizon_steps * ratio):
        raise OffGrid(f"t={t} outside the simulated range")
    return int(idx), ratio


def interpolate(path: DiscretePath, lattice_fine: BrownianLattice, t: float, mode: str = "continuous"):
    """Evaluate the step interpolant at a fine-lattice time ``t >= 0``.

    ``mode="piecewise"`` returns the grid value at the left end of the cell.
    ``mode="continuous"`` adds the drift and Brownian contributions over
    ``[t_k, t]``; for the implicit scheme the drift is evaluated at the right
    end value ``X_{k+1}`` and the diffusion at ``X_k``.
    """
    if mode not in ("piecewise", "continuous"):
        raise ValueError(f"unknown mode {mode!r}")
    idx, ratio = _fine_index(path, lattice_fine, t)
    k, offset = divmod(idx, ratio)
    if k == path.grid.horizon_steps:
        k, offset = k - 1, ratio
    if offset == ratio:
        return path.at(k + 1)
    left = path.at(k)
    if offset == 0 or mode == "piecewise":
        return left
    system = path.system
    if system is None:
        raise ValueError("continuous interpolation needs the path's system")
    m = path.grid.delay_steps
    lag = path.at(k - m)
    w = lattice_fine.increments[k * ratio:k * ratio + offset]
    dw = w[0].copy()
    for row in w[1:]:
        dw = dw + row
    elapsed = offset * lattice_fine.delta
    if path.scheme == "bem":
        drift = system.drift_at(path.at(k + 1), path.at(k + 1 - m))
    else:
        drift = system.drift_at(left, lag)
    return left + drift * elapsed + _noise(system.diffusion_at(left, lag), dw)
