"""Vectorized Monte Carlo engine.

Paths are advanced together in a batch, with Brownian increments generated
per path from the counter-based streams in :mod:`sddelab.brownian`. Every
path's trajectory depends only on ``(seed, path_id)`` and the configuration,
so results do not change with the number of workers or the chunk size.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .brownian import DRIVING, HISTORY, increments, sum_blocks
from .integrators import NumericalFailure, Stepper
from .model import Grid, InitialSegment, SddeSystem, step_ratio

CHUNK_TARGET = 2_000_000


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Recorded states of a batch of paths.

    ``values[i]`` holds all paths at grid index ``record_steps[i]``;
    ``history`` is the initial segment on the grid, shape ``(M + 1, P, d)``.
    """

    grid: Grid
    scheme: str
    path_ids: np.ndarray
    record_steps: np.ndarray
    values: np.ndarray
    history: np.ndarray
    max_norm: Optional[np.ndarray] = None
    averages: Mapping[str, np.ndarray] = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.record_steps * self.grid.delta

    @property
    def n_paths(self) -> int:
        return self.values.shape[1]

    def at_step(self, k: int) -> np.ndarray:
        pos = np.searchsorted(self.record_steps, k)
        if pos >= self.record_steps.size or self.record_steps[pos] != k:
            raise IndexError(f"step {k} was not recorded")
        return self.values[pos]

    def history_sup_norm(self) -> np.ndarray:
        """Grid sup-norm of each path's initial segment, shape ``(P,)``."""
        return np.max(np.sqrt(np.sum(self.history ** 2, axis=-1)), axis=0)


def history_brownian_batch(seed: int, path_ids, grid: Grid, dim_noise: int, noise_delta: float) -> np.ndarray:
    """Auxiliary Brownian values on the history grid, shape ``(M + 1, P, m)``,
    pinned to zero at ``t = 0`` and sampled from a lattice of step ``noise_delta``."""
    ratio = step_ratio(grid.delta, noise_delta)
    n_fine = grid.delay_steps * ratio
    out = np.empty((grid.delay_steps + 1, len(path_ids), dim_noise))
    for col, pid in enumerate(path_ids):
        cum = np.zeros((n_fine + 1, dim_noise))
        np.cumsum(increments(seed, pid, noise_delta, 0, n_fine, dim_noise, HISTORY), axis=0, out=cum[1:])
        out[:, col] = (cum - cum[-1])[::ratio]
    return out


def history_batch(init: InitialSegment, system: SddeSystem, grid: Grid, seed: int, path_ids,
                  noise_delta: float) -> np.ndarray:
    times = grid.history_times()
    if init.needs_brownian:
        brownian = history_brownian_batch(seed, path_ids, grid, system.dim_noise, noise_delta)
        return init.evaluate(times, system.dim_state, brownian)
    one = init.evaluate(times, system.dim_state)
    return np.repeat(one[:, None, :], len(path_ids), axis=1)


def _noise_chunk(seed, path_ids, noise_delta, ratio, first_step, n_steps, dim_noise):
    fine = np.empty((n_steps * ratio, len(path_ids), dim_noise))
    for col, pid in enumerate(path_ids):
        fine[:, col] = increments(seed, pid, noise_delta, first_step * ratio, n_steps * ratio, dim_noise, DRIVING)
    return sum_blocks(fine, ratio) if ratio > 1 else fine


@dataclass(frozen=True, eq=False)
class _Job:
    system: SddeSystem
    scheme: object
    grid: Grid
    init: object
    seed: int
    path_ids: np.ndarray
    noise_delta: float
    record_stride: int
    track_max_norm: bool
    observables: tuple
    chunk_target: int


def _run(job: _Job):
    system, grid = job.system, job.grid
    ids = job.path_ids
    ratio = step_ratio(grid.delta, job.noise_delta)
    if isinstance(job.init, InitialSegment):
        hist = history_batch(job.init, system, grid, job.seed, ids, job.noise_delta)
    else:
        hist = np.array(job.init, dtype=float)
    stepper = Stepper(system, job.scheme, grid.delta, hist, ids)
    max_norm = np.zeros(len(ids)) if job.track_max_norm else None
    names = [name for name, _ in job.observables]
    funcs = [fn for _, fn in job.observables]
    running = [np.asarray(fn(hist[-1]), dtype=float) for fn in funcs]
    recorded_avg = {name: [run.copy()] for name, run in zip(names, running)}
    count = [1]

    def on_step(new, pre):
        if max_norm is not None:
            np.maximum(max_norm, np.sqrt(np.sum(new * new, axis=-1)), out=max_norm)
        if funcs:
            count[0] += 1
            for i, fn in enumerate(funcs):
                running[i] = running[i] + (np.asarray(fn(new), dtype=float) - running[i]) / count[0]
                if stepper.step % job.record_stride == 0:
                    recorded_avg[names[i]].append(running[i].copy())

    per_step = max(1, ratio * len(ids) * system.dim_noise)
    chunk = max(1, min(grid.horizon_steps, job.chunk_target // per_step))
    values = [hist[-1].copy()]
    done = 0
    while done < grid.horizon_steps:
        n = min(chunk, grid.horizon_steps - done)
        dw = _noise_chunk(job.seed, ids, job.noise_delta, ratio, done, n, system.dim_noise)
        kept, _ = stepper.advance(dw, job.record_stride, on_step)
        values.extend(kept)
        done += n
    averages = {name: np.asarray(vals) for name, vals in recorded_avg.items()}
    return hist, np.asarray(values), max_norm, averages


def simulate_ensemble(system: SddeSystem, scheme, grid: Grid, init, *, seed: int,
                      n_paths: int | None = None, path_ids=None, noise_delta: float | None = None,
                      record_stride: int = 1, workers: int = 1, track_max_norm: bool = False,
                      observables: Mapping[str, Callable] | None = None,
                      chunk_target: int = CHUNK_TARGET) -> Ensemble:
    """Simulate many paths of ``system`` on ``grid``.

    ``noise_delta`` is the step of the underlying Brownian lattice (defaults
    to ``grid.delta``); coarser grids sum blocks of its increments, so runs at
    different steps with the same seed share Brownian paths. ``init`` is an
    :class:`InitialSegment` or an explicit history array ``(M + 1, P, d)``.
    ``observables`` maps names to functions of the state batch ``(P, d)``
    whose running time averages over all grid points are recorded.
    """
    if path_ids is None:
        if n_paths is None or n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        path_ids = np.arange(n_paths, dtype=np.uint64)
    path_ids = np.asarray(path_ids, dtype=np.uint64)
    noise_delta = grid.delta if noise_delta is None else noise_delta
    step_ratio(grid.delta, noise_delta)
    if record_stride < 1 or grid.horizon_steps % record_stride:
        raise ValueError(f"record_stride {record_stride} must divide {grid.horizon_steps}")
    obs = tuple((observables or {}).items())
    workers = max(1, min(int(workers), len(path_ids)))
    if not isinstance(init, InitialSegment) and workers > 1:
        blocks_init = np.array_split(np.asarray(init), workers, axis=1)
    else:
        blocks_init = [init] * workers
    blocks = np.array_split(path_ids, workers)
    jobs = [_Job(system, scheme, grid, bi, int(seed), ids, float(noise_delta), int(record_stride),
                 track_max_norm, obs, int(chunk_target)) for ids, bi in zip(blocks, blocks_init)]
    if workers == 1:
        parts = [_run(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run, jobs))
    hist = np.concatenate([p[0] for p in parts], axis=1)
    values = np.concatenate([p[1] for p in parts], axis=1)
    max_norm = np.concatenate([p[2] for p in parts]) if track_max_norm else None
    averages = {name: np.concatenate([p[3][name] for p in parts], axis=1) for name, _ in obs}
    steps = np.arange(0, grid.horizon_steps + 1, record_stride)
    return Ensemble(grid, scheme.name, path_ids, steps, values, hist, max_norm, averages)


def path_mean(samples: np.ndarray):
    """Mean and standard error over axis 1 (paths), folded in path order.

    Uses Welford's recurrence so the result depends only on the ordered
    samples, never on how they were produced.
    """
    samples = np.asarray(samples, dtype=float)
    n_paths = samples.shape[1]
    mean = np.zeros(samples.shape[:1] + samples.shape[2:])
    m2 = np.zeros_like(mean)
    for i in range(n_paths):
        x = samples[:, i]
        diff = x - mean
        mean = mean + diff / (i + 1)
        m2 = m2 + diff * (x - mean)
    if n_paths > 1:
        stderr = np.sqrt(m2 / (n_paths - 1) / n_paths)
    else:
        stderr = np.full_like(mean, math.nan)
    return mean, stderr
