"""Minimum-residual DPG / least-squares finite elements for semilinear elliptic problems."""

from .adaptivity import adapt_loop, compute_indicators, doerfler_mark
from .dpg_core import assemble_linear, dual_residual, local_B, local_gram, local_load
from .fespace import build_trial_dofmap, triangle_quadrature
from .mesh2d import Mesh, bisect, build_lshape, build_unit_square
from .problems import ProblemSpec, example1, example2, manufactured
from .semilinear import (
    el_jacobian,
    el_residual,
    error_norms,
    initial_guess,
    newton_solve,
)

__version__ = "0.1.0"
