"""Command line runner: ``sddelab <experiment> [options]``.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines, then command-line flags (flags win). Exit status is 0
on success, 2 for invalid input and 3 when a simulation fails numerically.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

from .experiments import EXPERIMENTS, OUT_ENV, ExperimentConfig, run
from .integrators import NumericalFailure

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

_HELP = {
    "convergence": "windowed strong error of the coarse scheme against a coupled fine-step run",
    "invariant": "KS/W1 distance of coarse marginals to a fine-step reference sample",
    "ergodic": "ensemble time averages of x^3 and exp(-x) from each initial segment",
    "moments": "E|z(t)|^p with the theoretical bound when one applies",
    "attraction": "decay of E|x_a - x_b|^p between two initial segments on shared noise",
    "constants": "print the derived theory constants",
    "check": "sample the assumption inequalities and list violations",
}

_ALIASES = {
    "p": "power", "paths": "n_paths", "window": "window_w", "out": "output_dir",
    "delta-fine": "delta_fine", "delta-coarse": "delta_coarse", "q-target": "q_target",
    "cdf-times": "cdf_times", "reference-paths": "reference_paths", "sample-stride": "sample_stride",
}
_FLOATS = {"delta_fine", "delta_coarse", "horizon", "power", "q_target", "check_radius"}
_INTS = {"n_paths", "seed", "window_w", "workers", "reference_paths", "sample_stride", "check_points"}


def _convert(key: str, raw: str):
    raw = raw.strip()
    if key in _FLOATS:
        return float(raw)
    if key in _INTS:
        return int(raw)
    if key == "plot":
        low = raw.lower()
        if low not in ("1", "0", "true", "false", "yes", "no"):
            raise ValueError(f"plot must be a boolean, got {raw!r}")
        return low in ("1", "true", "yes")
    if key == "cdf_times":
        return tuple(float(v) for v in raw.replace(",", " ").split())
    return raw


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    known = {f.name for f in fields(ExperimentConfig)}
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = _ALIASES.get(key, key).replace("-", "_")
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, raw)
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    opt = common.add_argument
    sup = argparse.SUPPRESS
    opt("--config", default=None, help="key = value settings file")
    opt("--example", default=sup, help="ex1_bem, ex2_tem or custom:<file.py>")
    opt("--delta-fine", dest="delta_fine", type=float, default=sup)
    opt("--delta-coarse", dest="delta_coarse", type=float, default=sup)
    opt("--horizon", type=float, default=sup)
    opt("--paths", dest="n_paths", type=int, default=sup)
    opt("--seed", type=int, default=sup)
    opt("--p", dest="power", type=float, default=sup, help="moment exponent")
    opt("--q-target", dest="q_target", type=float, default=sup)
    opt("--window", dest="window_w", type=int, default=sup)
    opt("--out", dest="output_dir", default=sup, help=f"output directory (default ${OUT_ENV} or ./sddelab_out)")
    opt("--plot", action="store_true", default=sup, help="also write SVG charts")
    opt("--workers", type=int, default=sup)
    opt("--cdf-times", dest="cdf_times", default=sup, help="comma-separated snapshot times")
    opt("--reference-paths", dest="reference_paths", type=int, default=sup)
    opt("--sample-stride", dest="sample_stride", type=int, default=sup)
    parser = argparse.ArgumentParser(prog="sddelab", description="Delay SDE scheme experiments")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sub.add_parser(name, parents=[common], help=_HELP[name])
    return parser


def config_from_args(argv=None) -> ExperimentConfig:
    args = vars(build_parser().parse_args(argv))
    settings = {}
    config_path = args.pop("config", None)
    if config_path:
        settings.update(read_config(config_path))
    if "cdf_times" in args:
        args["cdf_times"] = _convert("cdf_times", args["cdf_times"])
    settings.update(args)
    return ExperimentConfig(**settings)


def _summary(result) -> str:
    cfg = result["config"]
    return f"{cfg.experiment} on {cfg.example}: outputs in {cfg.output_dir}"


def main(argv=None) -> int:
    try:
        cfg = config_from_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        result = run(cfg)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, LookupError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(_summary(result))
    if cfg.experiment == "check":
        print(result["report"].summary())
    elif cfg.experiment == "constants":
        print(result["text"], end="")
    elif cfg.experiment == "attraction":
        print(f"fitted rate: {result['result'].rate:.6g}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
