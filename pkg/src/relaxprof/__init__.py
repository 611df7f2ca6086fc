"""Small-amplitude shock profiles of hyperbolic relaxation systems.

Profiles of ``A(U) U' = Q(U)`` are built from a Chapman-Enskog approximant
and corrected by a Nash-Moser (or Newton) iteration on a uniform grid in the
slow variable ``x_tilde = eps * x``.  Each stage comes with numerical checks:
structural assumptions, residual orders, tame linear estimates, smoothing
axioms and fitted convergence rates.
"""

from .chapman_enskog import CEApproximation, ShockPair, build_ce, hugoniot_pair, solve_reduced_profile
from .discretization import Grid, GridProfile, NormSpec, derivative_matrix, smooth, weighted_norm
from .linear import LinearizedSystem, SolveReport, assemble, solve
from .model import (
    Broadwell,
    BuiltinModelId,
    FunctionModel,
    JinXinBurgers,
    KineticModel,
    ModelSpec,
    SyntheticQuasilinearDegenerate,
    make_builtin,
)
from .oracle import MarchConfig, march_to_steady, quadrature_profile
from .solver import IterationConfig, IterationTrace, RateFit, iterate, sweep, uniqueness_probe
from .structure import ReducedSystem, StructureReport, construct_kawashima, reduce, structure_report

__version__ = "0.1.0"

__all__ = [
    "Broadwell",
    "BuiltinModelId",
    "CEApproximation",
    "FunctionModel",
    "Grid",
    "GridProfile",
    "IterationConfig",
    "IterationTrace",
    "JinXinBurgers",
    "KineticModel",
    "LinearizedSystem",
    "MarchConfig",
    "ModelSpec",
    "NormSpec",
    "RateFit",
    "ReducedSystem",
    "ShockPair",
    "SolveReport",
    "StructureReport",
    "SyntheticQuasilinearDegenerate",
    "assemble",
    "build_ce",
    "construct_kawashima",
    "derivative_matrix",
    "hugoniot_pair",
    "iterate",
    "make_builtin",
    "march_to_steady",
    "quadrature_profile",
    "reduce",
    "smooth",
    "solve",
    "solve_reduced_profile",
    "structure_report",
    "sweep",
    "uniqueness_probe",
    "weighted_norm",
]
