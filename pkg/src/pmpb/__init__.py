"""Finite-difference Poisson-Boltzmann solver for polarizable atomic
multipoles: Green's-function regularization, matched-interface fictitious
values, self-consistent induced dipoles, and solvation energies."""
from .energy import (SolvationResult, g_delta, kirkwood_order_table,
                     solvation_energy, vacuum_energy)
from .errors import (ConvergenceError, GeometryError, InputError, PmpbError,
                     SingularEvaluation)
from .fileio import (MoleculeInput, RunConfig, load_config,
                     parse_multipole_pqr, parse_xyzr, serialize_multipole_pqr)
from .geometry import (Crossing, InterfaceGeometry, classify, find_crossing,
                       surface_normal)
from .kirkwood import KirkwoodCase, default_case, energies, onsager_factor
from .kirkwood import potential as kirkwood_potential
from .kirkwood import reaction_potential
from .linsolve import SolveReport, boundary_values, defect_refine, solve
from .mibgrid import (FictitiousRule, Grid, MibSystem, assemble, build_grid,
                      fictitious_rules, jump_data)
from .multipole import (IdentityDamping, MultipoleSite, ScaledDamping, Units,
                        green_gradient, green_hessian, green_potential,
                        interaction_tensor, total_coulomb)
from .polarization import (InducedDipoleState, dense_vacuum, direct_field,
                           site_reaction_data, sor_solvated, sor_vacuum)
from .solver import converge_study, reaction_field, solve_molecule

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "Crossing", "FictitiousRule", "GeometryError",
    "Grid", "IdentityDamping", "InducedDipoleState", "InputError",
    "InterfaceGeometry",
    "KirkwoodCase", "MibSystem", "MoleculeInput", "MultipoleSite",
    "PmpbError", "RunConfig", "SingularEvaluation", "SolvationResult",
    "ScaledDamping", "SolveReport", "Units", "assemble", "boundary_values", "build_grid",
    "classify", "converge_study", "default_case", "defect_refine",
    "dense_vacuum", "direct_field", "energies", "fictitious_rules",
    "find_crossing", "g_delta", "green_gradient", "green_hessian",
    "green_potential", "interaction_tensor", "jump_data",
    "kirkwood_order_table", "kirkwood_potential", "load_config",
    "onsager_factor", "parse_multipole_pqr", "parse_xyzr",
    "reaction_field", "reaction_potential", "serialize_multipole_pqr",
    "site_reaction_data", "solvation_energy", "solve", "solve_molecule",
    "sor_solvated", "sor_vacuum", "surface_normal", "total_coulomb",
    "vacuum_energy",
]
