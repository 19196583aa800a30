"""Periodic homogenization of elasto-dielectric composites carrying microscopic space charges."""

from .cell import CellSolution, solve_cell
from .effective import EffectiveTensors, effective_tensors, enhanced_permittivity
from .errors import ElastodielError
from .microstructure import (
    ChargeSpec,
    Inclusion,
    Material,
    PhaseGeometry,
    PhaseTensors,
    assemble_coefficients,
    build_charge_family,
    build_indicator,
    isotropic_elasticity,
    isotropic_electrostriction,
)
from .torus import Field, TorusGrid

__version__ = "0.1.0"

__all__ = [
    "CellSolution",
    "ChargeSpec",
    "EffectiveTensors",
    "ElastodielError",
    "Field",
    "Inclusion",
    "Material",
    "PhaseGeometry",
    "PhaseTensors",
    "TorusGrid",
    "assemble_coefficients",
    "build_charge_family",
    "build_indicator",
    "effective_tensors",
    "enhanced_permittivity",
    "isotropic_elasticity",
    "isotropic_electrostriction",
    "solve_cell",
]
