"""Travelling waves of the 2D Zakharov system by a fixed-point construction.

Typical use::

    from zsf import make_grid, compute_Q, solve_profile
    grid = make_grid(256, 40.0)
    gs = compute_Q(grid)
    prof = solve_profile(0.1, gs.Q)
"""
from .field import Field, Grid2D, GridError, Symmetry, make_grid, project, read_zkf, sobolev_norm, symmetry_defect, write_zkf
from .ground_state import GroundState, compute_Q, q_decay_check
from .operators import (
    LinearizedOp, MultiplierSpec, apply_L, apply_multiplier, invert_L_on_subspace,
    logkernel_Sc_oracle, multiplier_norm_certificate,
)
from .solver import ContractionError, EtaPair, SolitonProfile, rotate_frame, solve_eta, solve_profile

__version__ = "0.1.0"

__all__ = [
    "Field", "Grid2D", "GridError", "Symmetry", "make_grid", "project", "read_zkf",
    "sobolev_norm", "symmetry_defect", "write_zkf", "GroundState", "compute_Q", "q_decay_check",
    "LinearizedOp", "MultiplierSpec", "apply_L", "apply_multiplier", "invert_L_on_subspace",
    "logkernel_Sc_oracle", "multiplier_norm_certificate", "ContractionError", "EtaPair",
    "SolitonProfile", "rotate_frame", "solve_eta", "solve_profile",
]
