"""Variable-order nonlocal diffusion on bounded domains with interaction collars."""
__version__ = "0.1.0"

from .kernel import (DiffusionTensor, KernelDomainError, KernelSpec, OrderField,
                     ValidationReport, eval_alpha, eval_gamma, validate_spec)
from .mesh import Mesh, build_box_mesh, build_interval_mesh, pair_rule
from .quadrature import QuadratureOptions
from .calculus import (Field, StiffnessOperator, apply_adjoint, apply_diffusion,
                       apply_divergence, apply_interaction, assemble_stiffness,
                       diffusion_at, flux_field, gauss_residual, green_residual)
from .spaces import (EmbeddingAudit, NormReport, audit_embeddings, constraint_value,
                     energy_norm, l2_norm, norm_report, poincare_constant, variable_seminorm)
from .solver import (TimeGrid, Trajectory, manufactured_rhs, regularity_monitor,
                     solve_forward)
from .carleman import CarlemanReport, CarlemanWeight, carleman_terms, certify, weight_eval
from .inverse import (BackwardProblem, SourceProblem, backward_reconstruct,
                      source_forward_map, source_reconstruct, stability_audit)
