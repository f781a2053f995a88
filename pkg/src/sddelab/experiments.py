"""Experiment definitions shared by the command line, the scripts and the
acceptance suite."""

from __future__ import annotations

import importlib.util
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis, measures, theory
from .analysis import fmt, write_table
from .integrators import BEM, TEM, ImplicitSolveConfig, custom_truncation, default_truncation
from .model import (AssumptionSpec, SamplerConfig, UnknownExample, builtin_example, check_assumptions,
                    make_grid, example_histories, step_ratio)
from .plotting import line_chart

EXPERIMENTS = ("convergence", "invariant", "ergodic", "moments", "attraction", "constants", "check")
OUT_ENV = "SDDELAB_OUT"

_SQRT20 = math.sqrt(20.0)
EX2_PHI_OFFSET = 421 + 12 * _SQRT20
EX2_PHI_SLOPE = 1568 + 48 * _SQRT20


def ex2_phi(r):
    return EX2_PHI_OFFSET + EX2_PHI_SLOPE * np.asarray(r, dtype=float) ** 4


def ex2_phi_inv(value):
    return ((np.asarray(value, dtype=float) - EX2_PHI_OFFSET) / EX2_PHI_SLOPE) ** 0.25


def example2_truncation(level: float | None = None):
    """Quartic bound used for the cubic example. ``level`` defaults to
    ``max(1, phi(1), |f(0,0)|, |g(0,0)|**2) = phi(1)``."""
    return custom_truncation(ex2_phi, ex2_phi_inv, 2, 16, f00=0.0, g00=1.0, a1=20.0, level=level)


@dataclass(frozen=True, eq=False)
class Problem:
    name: str
    system: object
    init: object
    spec: Optional[AssumptionSpec]
    scheme: object
    histories: dict = field(default_factory=dict)


_EXAMPLE_DEFAULTS = {
    "ex1_bem": dict(delta_fine=1e-4, delta_coarse=0.01, horizon=100.0, power=2.0, q_target=2.0),
    "ex2_tem": dict(delta_fine=1e-3, delta_coarse=0.01, horizon=100.0, power=16.0, q_target=8.0),
}
_PATH_DEFAULTS = {
    "convergence": {"ex1_bem": 500, "ex2_tem": 1000},
    "invariant": 100,
    "ergodic": 200,
    "moments": 500,
    "attraction": 200,
}


def load_problem(example: str) -> Problem:
    """Built-in example id, or ``custom:<file.py>`` whose ``build()`` returns a
    dict with ``system``, ``init`` and optionally ``spec``, ``scheme`` and
    ``histories``."""
    if example == "ex1_bem":
        system, init, spec = builtin_example(example)
        return Problem(example, system, init, spec, BEM(ImplicitSolveConfig()), example_histories())
    if example == "ex2_tem":
        system, init, spec = builtin_example(example)
        return Problem(example, system, init, spec, TEM(example2_truncation()), example_histories())
    if example.startswith("custom:"):
        file = Path(example.split(":", 1)[1])
        if not file.is_file():
            raise UnknownExample(f"custom definition file {file} not found")
        mod_spec = importlib.util.spec_from_file_location(f"sddelab_custom_{file.stem}", file)
        module = importlib.util.module_from_spec(mod_spec)
        mod_spec.loader.exec_module(module)
        built = module.build()
        if "system" not in built or "init" not in built:
            raise ValueError("custom build() must return at least 'system' and 'init'")
        spec = built.get("spec")
        scheme = built.get("scheme")
        if scheme is None:
            if spec is not None and spec.flavor == "tem":
                zero = np.zeros(built["system"].dim_state)
                scheme = TEM(default_truncation(spec["a1"], spec["q"], spec["p"],
                                                built["system"].drift_at(zero, zero),
                                                built["system"].diffusion_at(zero, zero)))
            else:
                scheme = BEM()
        return Problem(file.stem, built["system"], built["init"], spec, scheme,
                       built.get("histories") or {"default": built["init"]})
    raise UnknownExample(f"unknown example {example!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment settings; ``None`` means "use the example's default"."""

    experiment: str = "convergence"
    example: str = "ex1_bem"
    delta_fine: Optional[float] = None
    delta_coarse: Optional[float] = None
    horizon: Optional[float] = None
    n_paths: Optional[int] = None
    seed: int = 20250101
    power: Optional[float] = None
    q_target: Optional[float] = None
    window_w: int = 100
    output_dir: Optional[str] = None
    plot: bool = False
    workers: int = 1
    cdf_times: tuple = (10.0, 95.0, 96.0, 100.0)
    reference_paths: Optional[int] = None
    sample_stride: Optional[int] = None
    check_points: int = 10_000
    check_radius: float = 10.0

    def resolved(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        base = _EXAMPLE_DEFAULTS.get(self.example, _EXAMPLE_DEFAULTS["ex1_bem"])
        updates = {key: val for key, val in base.items() if getattr(self, key) is None}
        if self.n_paths is None:
            per = _PATH_DEFAULTS.get(self.experiment, 1)
            updates["n_paths"] = per.get(self.example, 500) if isinstance(per, dict) else per
        if self.output_dir is None:
            updates["output_dir"] = os.environ.get(OUT_ENV) or "sddelab_out"
        cfg = replace(self, **updates)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.n_paths is not None and self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.window_w < 0:
            raise ValueError("window must be nonnegative")
        for name in ("delta_fine", "delta_coarse", "horizon"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be positive")
        if self.delta_fine and self.delta_coarse:
            step_ratio(self.delta_coarse, self.delta_fine)

    def as_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


def _out(cfg) -> Path:
    path = Path(cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def run_convergence(cfg: ExperimentConfig, problem: Problem) -> dict:
    curve = analysis.strong_error_curve(
        problem.system, problem.scheme, problem.init, cfg.delta_fine, cfg.delta_coarse, cfg.horizon,
        cfg.power, cfg.window_w, cfg.n_paths, cfg.seed, q_target=cfg.q_target, workers=cfg.workers,
        track_max_norm=isinstance(problem.scheme, TEM))
    out = _out(cfg)
    curve.write_csv(out / "error_curve.csv")
    markers = []
    if problem.spec is not None and problem.spec.flavor == "bem":
        consts = theory.theory_constants(problem.spec, problem.system)
        markers.append(("theory_horizon", consts["horizon_segment"]))
    with open(out / "markers.csv", "w", newline="") as fh:
        fh.write("marker,t\r\n")
        for name, val in markers:
            fh.write(f"{name},{fmt(val)}\r\n")
    if isinstance(problem.scheme, TEM):
        radius_f = problem.scheme.spec.radius(cfg.delta_fine)
        radius_c = problem.scheme.spec.radius(cfg.delta_coarse)
        with open(out / "truncation.txt", "w") as fh:
            fh.write(f"radius_fine = {fmt(radius_f)}\nmax_norm_fine = {fmt(curve.max_norm_fine.max())}\n")
            fh.write(f"radius_coarse = {fmt(radius_c)}\nmax_norm_coarse = {fmt(curve.max_norm_coarse.max())}\n")
    if cfg.plot:
        line_chart(out / "error_ratio.svg", {"ratio": (curve.times, curve.ratio)},
                   title=f"e_strong / delta^{cfg.q_target:g}", ylabel="ratio")
    return {"curve": curve}


def run_invariant(cfg: ExperimentConfig, problem: Problem) -> dict:
    ref_paths = cfg.reference_paths or cfg.n_paths
    reference = measures.reference_sample(problem.system, problem.scheme, problem.init, cfg.delta_fine,
                                          cfg.horizon, ref_paths, cfg.seed, workers=cfg.workers)
    grid = make_grid(problem.system.tau, cfg.delta_coarse, cfg.horizon)
    snaps = tuple(t for t in cfg.cdf_times if t <= cfg.horizon)
    curve = measures.measure_convergence_curve(problem.system, problem.scheme, problem.init, grid, cfg.n_paths,
                                               cfg.seed, reference, every=problem.system.tau,
                                               snapshot_times=snaps, noise_delta=cfg.delta_fine,
                                               workers=cfg.workers)
    out = _out(cfg)
    curve.write_csv(out / "ks_curve.csv")
    reference.write_csv(out / "reference_cdf.csv")
    for t, dist in curve.snapshots.items():
        dist.write_csv(out / f"cdf_t{t:g}.csv")
    if cfg.plot:
        line_chart(out / "ks_curve.svg", {"KS": (curve.times, curve.ks)}, title="KS distance to reference")
        line_chart(out / "cdf_snapshots.svg",
                   {f"t={t:g}": dist.step_points() for t, dist in curve.snapshots.items()},
                   title="empirical CDFs", xlabel="x", ylabel="F")
    return {"curve": curve, "reference": reference}


def _observables():
    return {"cube": cube, "exp_neg": exp_neg}


def cube(states):
    return states[..., 0] ** 3


def exp_neg(states):
    return np.exp(-states[..., 0])


def run_ergodic(cfg: ExperimentConfig, problem: Problem) -> dict:
    grid = make_grid(problem.system.tau, cfg.delta_coarse, cfg.horizon)
    stride = cfg.sample_stride or max(1, round(problem.system.tau / cfg.delta_coarse))
    curves = measures.ensemble_ergodic_averages(problem.system, problem.scheme, grid, problem.histories,
                                                _observables(), cfg.n_paths, cfg.seed, sample_stride=stride,
                                                workers=cfg.workers)
    out = _out(cfg)
    for (hname, oname), curve in curves.items():
        curve.write_csv(out / f"ergodic_{oname}_{hname}.csv")
    if cfg.plot:
        for oname in _observables():
            line_chart(out / f"ergodic_{oname}.svg",
                       {h: (c.times, c.value) for (h, o), c in curves.items() if o == oname},
                       title=f"time average of {oname}")
    return {"curves": curves}


def run_moments(cfg: ExperimentConfig, problem: Problem) -> dict:
    grid = make_grid(problem.system.tau, cfg.delta_coarse, cfg.horizon)
    stride = cfg.sample_stride or max(1, round(0.1 / cfg.delta_coarse))
    curve = analysis.moment_curve(problem.system, problem.scheme, problem.init, grid, cfg.power, cfg.n_paths,
                                  cfg.seed, stride, workers=cfg.workers)
    out = _out(cfg)
    columns = [curve.times, curve.value, curve.stderr]
    header = ["t", "value", "stderr"]
    bound = None
    if problem.spec is not None and problem.spec.flavor == "bem" and cfg.power == 2:
        consts = theory.theory_constants(problem.spec, problem.system)
        bound = consts["C1"] * curve.history_moment * np.exp(-consts["lambda"] * curve.times) + consts["C2"]
        columns.append(bound)
        header.append("bound")
    write_table(out / "moment_curve.csv", header, columns)
    if cfg.plot:
        line_chart(out / "moment_curve.svg", {"moment": (curve.times, curve.value)},
                   title=f"E|z(t)|^{cfg.power:g}")
    return {"curve": curve, "bound": bound}


def run_attraction(cfg: ExperimentConfig, problem: Problem) -> dict:
    names = list(problem.histories)
    if len(names) < 2:
        raise ValueError("attraction needs two initial histories")
    first = "shifted_cos" if "shifted_cos" in problem.histories else names[0]
    second = "minus_two" if "minus_two" in problem.histories else names[1]
    grid = make_grid(problem.system.tau, cfg.delta_coarse, cfg.horizon)
    stride = cfg.sample_stride or max(1, round(0.1 / cfg.delta_coarse))
    result = analysis.attraction_decay(problem.system, problem.scheme, problem.histories[first],
                                       problem.histories[second], grid, cfg.power, cfg.n_paths, cfg.seed,
                                       sample_stride=stride, workers=cfg.workers)
    out = _out(cfg)
    result.write_csv(out / "attraction_curve.csv")
    with open(out / "attraction_rate.txt", "w") as fh:
        fh.write(f"histories = {first} vs {second}\n")
        fh.write(f"initial = {fmt(result.initial)}\n")
        fh.write(f"terminal = {fmt(result.curve[-1])}\n")
        fh.write(f"rate = {fmt(result.rate)}\n")
        fh.write(f"degenerate = {result.degenerate}\n")
    if cfg.plot:
        line_chart(out / "attraction_curve.svg", {"E|xa-xb|^p": (result.times, result.curve)}, logy=True,
                   title="attraction")
    return {"result": result}


def run_constants(cfg: ExperimentConfig, problem: Problem) -> dict:
    if problem.spec is None:
        raise ValueError("this example has no assumption constants")
    consts = theory.theory_constants(problem.spec, problem.system)
    text = consts.table()
    if isinstance(problem.scheme, TEM):
        spec = problem.scheme.spec
        text += f"truncation_level = {fmt(spec.level)}\n"
        text += f"truncation_domain_min = {fmt(spec.domain_min)}\n"
        for delta in sorted({cfg.delta_fine, cfg.delta_coarse}):
            if spec.admissible(delta):
                text += f"radius_at_{delta:g} = {fmt(spec.radius(delta))}\n"
            else:
                text += f"radius_at_{delta:g} = inadmissible\n"
    out = _out(cfg)
    (out / "constants.txt").write_text(text)
    return {"constants": consts, "text": text}


def run_check(cfg: ExperimentConfig, problem: Problem) -> dict:
    if problem.spec is None:
        raise ValueError("this example has no assumption constants")
    report = check_assumptions(problem.system, problem.spec,
                               SamplerConfig(cfg.check_points, cfg.check_radius, cfg.seed % (1 << 63)))
    out = _out(cfg)
    report.write_csv(out / "violations.csv")
    (out / "violations.txt").write_text(report.summary() + "\n")
    return {"report": report}


RUNNERS = {
    "convergence": run_convergence,
    "invariant": run_invariant,
    "ergodic": run_ergodic,
    "moments": run_moments,
    "attraction": run_attraction,
    "constants": run_constants,
    "check": run_check,
}


def run(cfg: ExperimentConfig) -> dict:
    cfg = cfg.resolved()
    problem = load_problem(cfg.example)
    result = RUNNERS[cfg.experiment](cfg, problem)
    (Path(cfg.output_dir) / "config.txt").write_text(cfg.as_text())
    result["config"] = cfg
    return result
