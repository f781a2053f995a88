"""Empirical marginals, two-sample distances and ergodic time averages.

Laws of the segment process live on a function space; here they are probed
through the scalar marginal at grid points, which is what can be estimated
from finitely many sample paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .analysis import write_table
from .ensemble import Ensemble, path_mean, simulate_ensemble
from .integrators import DiscretePath, NonFinite
from .model import Grid, IndexOutOfRange, SddeSystem, make_grid


class SizeMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    t: float
    samples: np.ndarray

    def __post_init__(self):
        arr = np.sort(np.asarray(self.samples, dtype=float).ravel())
        if arr.size < 1:
            raise ValueError("an empirical distribution needs at least one sample")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def n(self) -> int:
        return self.samples.size

    def cdf(self, points) -> np.ndarray:
        """Right-continuous empirical CDF."""
        return np.searchsorted(self.samples, points, side="right") / self.n

    def step_points(self):
        """``(x, F(x))`` at every distinct jump, for plotting the step function."""
        xs = np.unique(self.samples)
        return xs, self.cdf(xs)

    def write_csv(self, path) -> None:
        xs, fs = self.step_points()
        write_table(path, ["x", "F"], [xs, fs])


def empirical_at(ensemble, k: int, component: int = 0) -> EmpiricalDistribution:
    """Cross-path sample at grid index ``k``.

    ``ensemble`` is an :class:`Ensemble` or a sequence of :class:`DiscretePath`.
    """
    if isinstance(ensemble, Ensemble):
        if not 0 <= component < ensemble.values.shape[-1]:
            raise IndexOutOfRange(f"component {component} out of range")
        try:
            column = ensemble.at_step(k)[:, component]
        except IndexError as exc:
            raise IndexOutOfRange(str(exc)) from None
        return EmpiricalDistribution(k * ensemble.grid.delta, column)
    paths: Sequence[DiscretePath] = list(ensemble)
    if not paths:
        raise ValueError("empty ensemble")
    grid = paths[0].grid
    if not (-grid.delay_steps <= k <= grid.horizon_steps) or not 0 <= component < paths[0].values.shape[-1]:
        raise IndexOutOfRange(f"index {k} / component {component} out of range")
    return EmpiricalDistribution(k * grid.delta, [p.at(k)[component] for p in paths])


def ks_distance(a: EmpiricalDistribution, b: EmpiricalDistribution) -> float:
    """Two-sample Kolmogorov-Smirnov statistic ``sup |F_a - F_b|``."""
    merged = np.concatenate([a.samples, b.samples])
    return float(np.max(np.abs(a.cdf(merged) - b.cdf(merged))))


def w1_distance(a: EmpiricalDistribution, b: EmpiricalDistribution) -> float:
    """Wasserstein-1 distance between equal-size samples (sorted pairing)."""
    if a.n != b.n:
        raise SizeMismatch(f"sample sizes differ: {a.n} vs {b.n}")
    return float(np.mean(np.abs(a.samples - b.samples)))


def running_average(values) -> np.ndarray:
    """``A_k = A_{k-1} + (v_k - A_{k-1}) / (k + 1)`` along axis 0."""
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    acc = values[0].copy() if values.ndim > 1 else values[0]
    out[0] = acc
    for k in range(1, values.shape[0]):
        acc = acc + (values[k] - acc) / (k + 1)
        out[k] = acc
    return out


def ergodic_average(path: DiscretePath, fn: Callable, up_to_k: int | None = None) -> np.ndarray:
    """Running averages of ``fn`` over the grid values ``k = 0 .. up_to_k``."""
    last = path.grid.horizon_steps if up_to_k is None else up_to_k
    if not 0 <= last <= path.grid.horizon_steps:
        raise IndexOutOfRange(f"up_to_k={last} outside [0, {path.grid.horizon_steps}]")
    states = path.values[path.grid.delay_steps:path.grid.delay_steps + last + 1]
    with np.errstate(all="ignore"):
        vals = np.asarray(fn(states), dtype=float).reshape(states.shape[0])
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise NonFinite("observable is not finite on the path", step=int(bad[0]))
    return running_average(vals)


@dataclass(frozen=True, eq=False)
class ErgodicCurve:
    times: np.ndarray
    value: np.ndarray
    stderr: np.ndarray
    observable: str
    history: str

    def write_csv(self, path) -> None:
        write_table(path, ["t", "value", "stderr"], [self.times, self.value, self.stderr])


def ensemble_ergodic_averages(system: SddeSystem, scheme, grid: Grid, histories: Mapping[str, object],
                              observables: Mapping[str, Callable], n_paths: int, seed: int, *,
                              sample_stride: int = 1, noise_delta=None, workers: int = 1) -> dict:
    """Path-averaged running time averages for each (history, observable) pair.

    Every history is driven by the same Brownian paths, so differences
    between curves reflect the histories rather than sampling noise.
    Returns ``{(history_name, observable_name): ErgodicCurve}``.
    """
    out = {}
    for hname, init in histories.items():
        ens = simulate_ensemble(system, scheme, grid, init, seed=seed, n_paths=n_paths, noise_delta=noise_delta,
                                record_stride=sample_stride, workers=workers, observables=observables)
        for oname in observables:
            data = ens.averages[oname]
            if not np.isfinite(data).all():
                raise NonFinite(f"observable {oname} is not finite")
            mean, stderr = path_mean(data)
            out[(hname, oname)] = ErgodicCurve(ens.times, mean, stderr, oname, hname)
    return out


@dataclass(frozen=True, eq=False)
class MeasureCurve:
    times: np.ndarray
    ks: np.ndarray
    w1: np.ndarray
    snapshots: dict

    def write_csv(self, path) -> None:
        write_table(path, ["t", "ks", "w1"], [self.times, self.ks, self.w1])


def reference_sample(system: SddeSystem, scheme, init, delta: float, at_time: float, n_paths: int, seed: int,
                     *, workers: int = 1) -> EmpiricalDistribution:
    """Marginal at ``at_time`` of a fine-step ensemble, the stand-in for the invariant law."""
    grid = make_grid(system.tau, delta, at_time)
    ens = simulate_ensemble(system, scheme, grid, init, seed=seed, n_paths=n_paths,
                            record_stride=grid.horizon_steps, workers=workers)
    return EmpiricalDistribution(at_time, ens.values[-1, :, 0])


def measure_convergence_curve(system: SddeSystem, scheme, init, grid: Grid, n_paths: int, seed: int,
                              reference: EmpiricalDistribution, *, every: float = 1.0,
                              snapshot_times: Sequence[float] = (), noise_delta=None,
                              workers: int = 1) -> MeasureCurve:
    """KS (and W1 when sizes match) to ``reference`` at multiples of ``every``."""
    if system.dim_state != 1:
        raise NotImplementedError("measure diagnostics are implemented for scalar states only")
    stride = round(every / grid.delta)
    if stride < 1 or abs(stride * grid.delta - every) > 1e-12 * every:
        raise ValueError(f"every={every} is not a multiple of delta={grid.delta}")
    ens = simulate_ensemble(system, scheme, grid, init, seed=seed, n_paths=n_paths, noise_delta=noise_delta,
                            record_stride=stride, workers=workers)
    ks, w1 = [], []
    for k in ens.record_steps:
        dist = empirical_at(ens, int(k))
        ks.append(ks_distance(dist, reference))
        w1.append(w1_distance(dist, reference) if dist.n == reference.n else np.nan)
    snaps = {}
    for t in snapshot_times:
        k = round(t / grid.delta)
        snaps[t] = empirical_at(ens, k)
    return MeasureCurve(ens.times, np.asarray(ks), np.asarray(w1), snaps)
