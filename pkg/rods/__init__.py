"""
Curved Rod Structures

Limit models of structures made of thin curved rods: skeleton geometry,
finite-element spaces on the skeleton, the extensional and inextensional
limit problems, tube-field decompositions and result exports.
"""

from rods.errors import RodError
from rods.geometry import Knot, Skeleton, build_arc, validate_skeleton
from rods.io import load_loads, load_skeleton
from rods.loads import LoadCase, LoadSet
from rods.solver import LimitSolution, Material, solve_limit
from rods.spaces import build_mesh

__version__ = "1.0.0"

__all__ = [
    "Knot",
    "LimitSolution",
    "LoadCase",
    "LoadSet",
    "Material",
    "RodError",
    "Skeleton",
    "build_arc",
    "build_mesh",
    "load_loads",
    "load_skeleton",
    "solve_limit",
    "validate_skeleton",
]
