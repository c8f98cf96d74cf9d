"""Neural multigrid solver for masked linear elliptic PDEs on 2D lattices."""

from .grid import l2_norm, masked_compose, read_field, relative_residual, write_field
from .net import forward, init_params, load_checkpoint, save_checkpoint
from .solver import SolveConfig, SolveReport, jacobi_solve, mg_solve, solve, ugrid_iterate
from .stencils import cdr, helmholtz, poisson, residual, smooth

__version__ = "0.1.0"

__all__ = [
    "SolveConfig", "SolveReport", "cdr", "forward", "helmholtz", "init_params", "jacobi_solve",
    "l2_norm", "load_checkpoint", "masked_compose", "mg_solve", "poisson", "read_field",
    "relative_residual", "residual", "save_checkpoint", "smooth", "solve", "ugrid_iterate",
    "write_field",
]
