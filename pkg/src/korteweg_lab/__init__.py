"""Periodic-domain numerical lab for Euler-Korteweg flows with non-convex energy."""
from .constitutive import (BumpSpec, CapillarityLaw, EnergyLaw, FluidState, korteweg_stress, set2_check,
                           total_energy, variational_derivative)
from .dynamics import (CahnHilliardSystem, EKSystem, FrictionEKSystem, SolverAbort, SolverConfig, Trajectory,
                       integrate)
from .grid import ScalarField, TensorField, TorusGrid, VectorField
from .lab import ExperimentConfig, InitialRecipe, fit_rate
from .mollify import MollifierSpec, mollify_pair

__version__ = "0.1.0"

__all__ = [
    "BumpSpec", "CapillarityLaw", "EnergyLaw", "FluidState", "korteweg_stress", "set2_check", "total_energy",
    "variational_derivative", "CahnHilliardSystem", "EKSystem", "FrictionEKSystem", "SolverAbort",
    "SolverConfig", "Trajectory", "integrate", "ScalarField", "TensorField", "TorusGrid", "VectorField",
    "ExperimentConfig", "InitialRecipe", "fit_rate", "MollifierSpec", "mollify_pair",
]
