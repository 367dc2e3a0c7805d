"""Kinetic flocking particles coupled to an incompressible fluid: solvers and diagnostics."""

from .errors import (CflViolation, ConfigError, InvariantViolation, KinFlockError, LinearSolveFailure,
                     NonUnitMass, TailOverflow, VacuumBreach)
from .fields import (DistributionField, FluidField, MacroState, PhaseGrid, SimParams, compute_moments,
                     moment_interpolation_check, sample_maxwellian)

__all__ = [
    "CflViolation", "ConfigError", "DistributionField", "FluidField", "InvariantViolation",
    "KinFlockError", "LinearSolveFailure", "MacroState", "NonUnitMass", "PhaseGrid", "SimParams",
    "TailOverflow", "VacuumBreach", "compute_moments", "moment_interpolation_check", "sample_maxwellian",
]
