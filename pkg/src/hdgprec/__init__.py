"""HDG discretisation of the backward-Euler Stokes/Brinkman system with
parameter-robust block preconditioners for the statically condensed face system."""
from .condense import (LocalFactors, ReducedOperator, SingularBlockError, back_substitute, build_schur,
                       factor_local, local_solve, reduce_rhs)
from .fe import FormParams, build_local_blocks, eval_basis, quadrature_rule
from .krylov import MinresBreakdown, SolveReport, minres
from .mesh import Mesh, MeshError, generate_square, generate_unit_square, load_mesh, mesh_stats, mesh_to_text
from .precon import Preconditioner, build_preconditioner, optimal_splitting, projector, sum_norm_gram
from .solver import StokesSolution, solve_stokes
from .spectral import (SpectralRecord, SpectralReport, condition_number, generalized_extreme_eigs, infsup_bh,
                       verify_aux_bounds, verify_face_conditions, verify_theorem_A)
from .system import (BlockOperator, BlockVector, DofMap, IncompatibleDataError, assemble, assemble_rhs,
                     build_dof_maps, constant_mode, deflation_vector)

__version__ = "0.1.0"
