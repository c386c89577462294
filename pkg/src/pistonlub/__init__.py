"""Lubrication dynamics of the piston/bore film in an axial piston pump.

Modules
-------
geometry   pump data, shaft kinematics, textures and film thickness
assembly   finite-volume Reynolds system in diagonal band storage
krylov     banded kernels, deterministic reductions, preconditioners, PCG
joint      the nine-condition block system and its convergence strategies
loads      film wrench integration and generalised forces
dynamics   finite-difference Jacobians, Picard updates, time marching
config     strict YAML run configuration
cli        command line modes and report output
"""

from .assembly import BoundaryCondition, DiaSystem, assemble, expand_dense
from .dynamics import (JacobianPair, SimulationTrace, Waveform, build_jacobians,
                       picard_step, time_march)
from .geometry import (FilmMesh, KinematicState, PumpConfig, TexturePattern,
                       build_texture_pattern, film_thickness, film_thickness_rate,
                       shaft_kinematics)
from .joint import JointSystem, build_joint, sequential_solve, solve_joint
from .krylov import Preconditioner, PcgReport, build_preconditioner, pcg_solve, spmv
from .loads import GeneralForce, WrenchBreakdown, general_oil_force, oil_wrench

__all__ = [
    "BoundaryCondition", "DiaSystem", "assemble", "expand_dense",
    "JacobianPair", "SimulationTrace", "Waveform", "build_jacobians",
    "picard_step", "time_march",
    "FilmMesh", "KinematicState", "PumpConfig", "TexturePattern",
    "build_texture_pattern", "film_thickness", "film_thickness_rate",
    "shaft_kinematics",
    "JointSystem", "build_joint", "sequential_solve", "solve_joint",
    "Preconditioner", "PcgReport", "build_preconditioner", "pcg_solve", "spmv",
    "GeneralForce", "WrenchBreakdown", "general_oil_force", "oil_wrench",
]

__version__ = "0.1.0"
