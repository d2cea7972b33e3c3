"""Evolutionary inclusions with maximal monotone relations on exponentially weighted time grids."""

__version__ = "0.1.0"

from .timegrid import Signal, TimeGrid, integrate, differentiate, wnorm, winner  # noqa: E402
from .material import MaterialLaw, check_H1, solve_linear  # noqa: E402
from .monotone import MonotoneRelation, check_monotone, sandwich, yosida  # noqa: E402
from .boundary import BoundaryOperator, bd_basis, build_1d_pair  # noqa: E402
from .solver import EvoProblem, SolveOptions, causality_check, lipschitz_check, solve  # noqa: E402
from .apps import build_viscoelastic_friction, build_wave_impedance, postprocess  # noqa: E402

__all__ = [
    "Signal", "TimeGrid", "integrate", "differentiate", "wnorm", "winner",
    "MaterialLaw", "check_H1", "solve_linear",
    "MonotoneRelation", "check_monotone", "sandwich", "yosida",
    "BoundaryOperator", "bd_basis", "build_1d_pair",
    "EvoProblem", "SolveOptions", "causality_check", "lipschitz_check", "solve",
    "build_viscoelastic_friction", "build_wave_impedance", "postprocess",
]
