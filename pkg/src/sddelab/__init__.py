"""Simulation of stochastic delay equations over long horizons.

Most users need :func:`builtin_example`, one of the schemes (``EM``, ``TEM``,
``BEM``) and either :func:`simulate` for single paths or
:func:`simulate_ensemble` for batches.
"""

from .brownian import BrownianLattice, coarsen, generate
from .ensemble import Ensemble, simulate_ensemble
from .integrators import (BEM, EM, TEM, DiscretePath, ImplicitSolveConfig, NumericalFailure, StepTooLarge,
                          custom_truncation, default_truncation, simulate, step_bem, step_em, step_tem)
from .model import (AssumptionSpec, Grid, InitialSegment, SddeSystem, builtin_example, check_assumptions,
                    make_grid)

__all__ = [
    "AssumptionSpec", "BEM", "BrownianLattice", "DiscretePath", "EM", "Ensemble", "Grid",
    "ImplicitSolveConfig", "InitialSegment", "NumericalFailure", "SddeSystem", "StepTooLarge", "TEM",
    "builtin_example", "check_assumptions", "coarsen", "custom_truncation", "default_truncation",
    "generate", "make_grid", "simulate", "simulate_ensemble", "step_bem", "step_em", "step_tem",
]
