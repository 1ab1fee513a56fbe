"""Direct and inverse spectral problems for Dirac-type systems with rectangular potentials.

The package covers the fundamental solution and Weyl function of
``y' = i (z j + j V) y``, the similarity operator that maps the system's
semi-separable operator to the integration operator, the resulting S-node
and transfer matrix, and the recovery of the potential from Weyl data.
"""
from .direct import (BlockRows, DiracPotential, PropertyJMatrix, WeylLineSamples,
                     block_rows, fundamental_solution, hamiltonian, signature_matrix,
                     weyl_approximant, weyl_line, weyl_values)
from .errors import (ConditioningError, DataQualityError, DegenerateHamiltonianError,
                     DiracError, DomainError, FactorizationError, InversionError,
                     SeriesError, ShapeError, SNodeError, StageError)
from .grid import (Grid, GridMatrixFunction, cholesky_lower, finite_difference,
                   integration_operator, matrix_exponential, solve_linear_ode)
from .inverse import (HamiltonianPath, ReconstructionParams, SchurCoefficientPath,
                      borg_marchenko_experiment, build_S_closed_form, hamiltonian_from_snode,
                      inverse_pipeline, phi1_from_weyl, recover_beta, recover_gamma,
                      recover_potential, schur_coefficient, weyl_from_phi1)
from .snode import (DiscreteSNode, KernelFactors, TriangularKernelOperator, assemble_snode,
                    build_similarity_operator, check_representation, kernel_factors,
                    kernel_series, normalize_similarity, phi1_from_gamma, similarity_path,
                    transfer_matrix, transfer_matrix_path)

__version__ = "0.1.0"
