"""Segment views, strong-error curves, moment curves and attraction decay."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ensemble import Ensemble, path_mean, simulate_ensemble
from .integrators import DiscretePath, NumericalFailure
from .model import Grid, IndexOutOfRange, InitialSegment, SddeSystem, make_grid, step_ratio


class FitDegenerate(UserWarning):
    """The decay curve hit zero before the fit window; the rate is reported as +inf."""


def fmt(value) -> str:
    return f"{float(value):.17g}"


def write_table(path, header, columns) -> None:
    """CSV with a header row and every number printed with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([fmt(v) for v in row])


# ---------------------------------------------------------------------------
# segments


@dataclass(frozen=True)
class SegmentView:
    base_index: int
    window: np.ndarray

    def sup_norm(self) -> float:
        return float(np.max(np.sqrt(np.sum(self.window ** 2, axis=-1))))


def segment_at(path: DiscretePath, k: int) -> SegmentView:
    """The ``M + 1`` grid values ending at index ``k``."""
    m = path.grid.delay_steps
    if not 0 <= k <= path.grid.horizon_steps:
        raise IndexOutOfRange(f"segment index {k} outside [0, {path.grid.horizon_steps}]")
    return SegmentView(k, path.values[k:k + m + 1].copy())


def window_max(err: np.ndarray, width: int) -> np.ndarray:
    """``out[k] = max(err[max(0, k - width) .. k])`` along axis 0."""
    out = err.copy()
    for lag in range(1, min(width, err.shape[0] - 1) + 1):
        np.maximum(out[lag:], err[:-lag], out=out[lag:])
    return out


# ---------------------------------------------------------------------------
# strong error


@dataclass(frozen=True, eq=False)
class ErrorCurve:
    times: np.ndarray
    e_strong: np.ndarray
    stderr: np.ndarray
    power: float
    window_w: int
    n_paths: int
    q_target: float
    delta_coarse: float
    max_norm_fine: Optional[np.ndarray] = None
    max_norm_coarse: Optional[np.ndarray] = None

    @property
    def ratio(self) -> np.ndarray:
        return self.e_strong / self.delta_coarse ** self.q_target

    def write_csv(self, path) -> None:
        write_table(path, ["t", "value", "stderr", "ratio"],
                    [self.times, self.e_strong, self.stderr, self.ratio])


def strong_error_curve(system: SddeSystem, scheme, init, delta_fine: float, delta_coarse: float,
                       horizon: float, power: float, window_w: int, n_paths: int, seed: int, *,
                       q_target: float = 1.0, reference_scheme=None, workers: int = 1,
                       track_max_norm: bool = False) -> ErrorCurve:
    """Windowed strong error between a fine-step reference and a coarse run.

    Both runs use the same Brownian paths (coarse increments are exact sums
    of fine ones) and the same initial histories. At each coarse grid point
    ``t_k`` the per-path error is ``max_{0<=i<=W} |x_ref(t_{k-i}) - z(t_{k-i})|**power``
    over recorded points ``k - i >= 0``; the curve is its mean over paths.
    """
    if window_w < 0:
        raise ValueError("window_w must be nonnegative")
    ratio = step_ratio(delta_coarse, delta_fine)
    fine = make_grid(system.tau, delta_fine, horizon)
    coarse = make_grid(system.tau, delta_coarse, horizon)
    ids = np.arange(n_paths, dtype=np.uint64)
    ref = simulate_ensemble(system, reference_scheme or scheme, fine, init, seed=seed, path_ids=ids,
                            noise_delta=delta_fine, record_stride=ratio, workers=workers,
                            track_max_norm=track_max_norm)
    test = simulate_ensemble(system, scheme, coarse, init, seed=seed, path_ids=ids,
                             noise_delta=delta_fine, workers=workers, track_max_norm=track_max_norm)
    diff = ref.values - test.values
    err = np.sqrt(np.sum(diff * diff, axis=-1)) ** power
    err = window_max(err, window_w)
    mean, stderr = path_mean(err)
    return ErrorCurve(test.times, mean, stderr, power, window_w, n_paths, q_target, delta_coarse,
                      ref.max_norm, test.max_norm)


# ---------------------------------------------------------------------------
# moments


@dataclass(frozen=True, eq=False)
class MomentCurve:
    times: np.ndarray
    value: np.ndarray
    stderr: np.ndarray
    power: float
    history_moment: float

    def write_csv(self, path) -> None:
        write_table(path, ["t", "value", "stderr"], [self.times, self.value, self.stderr])


def moment_curve(system: SddeSystem, scheme, init, grid: Grid, power: float, n_paths: int, seed: int,
                 sample_stride: int = 1, *, noise_delta=None, workers: int = 1) -> MomentCurve:
    """Monte Carlo estimate of ``E|z(t_k)|**power`` every ``sample_stride`` steps.

    ``history_moment`` is the path average of the grid sup-norm of the
    initial segment raised to ``power``.
    """
    if power < 1:
        raise ValueError("power must be at least 1")
    ens = simulate_ensemble(system, scheme, grid, init, seed=seed, n_paths=n_paths, noise_delta=noise_delta,
                            record_stride=sample_stride, workers=workers)
    sizes = np.sqrt(np.sum(ens.values ** 2, axis=-1)) ** power
    mean, stderr = path_mean(sizes)
    hist_mean, _ = path_mean(ens.history_sup_norm()[None, :] ** power)
    return MomentCurve(ens.times, mean, stderr, power, float(hist_mean[0]))


# ---------------------------------------------------------------------------
# attraction


@dataclass(frozen=True, eq=False)
class AttractionResult:
    times: np.ndarray
    curve: np.ndarray
    stderr: np.ndarray
    initial: float
    rate: float
    degenerate: bool
    power: float

    def write_csv(self, path) -> None:
        write_table(path, ["t", "value", "stderr"], [self.times, self.curve, self.stderr])


def fit_decay_rate(times: np.ndarray, curve: np.ndarray, start: float | None = None):
    """Least-squares slope of ``-log(curve)`` over ``t >= start`` (default: second half).

    Returns ``(rate, degenerate)``. Zero entries are skipped; with fewer than
    two positive points left the curve has collapsed and the rate is +inf.
    """
    if start is None:
        start = times[-1] / 2
    sel = (times >= start) & (curve > 0) & np.isfinite(curve)
    if sel.sum() < 2:
        warnings.warn("decay curve vanished before the fit window; rate reported as +inf", FitDegenerate)
        return math.inf, True
    slope = np.polyfit(times[sel], np.log(curve[sel]), 1)[0]
    return float(-slope), False


def attraction_decay(system: SddeSystem, scheme, init_a, init_b, grid: Grid, power: float,
                     n_paths: int, seed: int, *, sample_stride: int = 1, noise_delta=None,
                     workers: int = 1) -> AttractionResult:
    """Mean ``|x_a(t) - x_b(t)|**power`` for two histories driven by the same
    Brownian paths, with an exponential decay rate fitted on the second half."""
    kw = dict(seed=seed, n_paths=n_paths, noise_delta=noise_delta, record_stride=sample_stride,
              workers=workers)
    ens_a = simulate_ensemble(system, scheme, grid, init_a, **kw)
    ens_b = simulate_ensemble(system, scheme, grid, init_b, **kw)
    diff = ens_a.values - ens_b.values
    sizes = np.sqrt(np.sum(diff * diff, axis=-1)) ** power
    mean, stderr = path_mean(sizes)
    hist_gap = ens_a.history - ens_b.history
    init_sizes = np.max(np.sqrt(np.sum(hist_gap ** 2, axis=-1)), axis=0) ** power
    initial, _ = path_mean(init_sizes[None, :])
    rate, degenerate = fit_decay_rate(ens_a.times, mean)
    return AttractionResult(ens_a.times, mean, stderr, float(initial[0]), rate, degenerate, power)
