from .adjoint import (
    GradientPair,
    IterationRecord,
    IterationTrace,
    MisfitModel,
    OptimizerSettings,
    Subdomain,
    TRACE_COLUMNS,
    descend,
    frechet_gradient,
    gradient_check,
    local_problem,
    misfit,
    random_directions,
    reconstruct,
    reconstruct_local,
)
from .direct import (
    DivisionLog,
    HybridParts,
    estimate_pressure_gradient,
    algebraic_inversion,
    hybrid_initial_guess,
    material_from_modulus,
    rotational_potential,
)
