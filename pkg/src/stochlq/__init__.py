"""Galerkin-truncated stochastic LQ control of parabolic equations.

Spectral discretization, forward simulation, backward Riccati solvers and
Monte Carlo checks of the optimality identities.
"""
__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AssumptionError,
    ConfigurationError,
    RegressionWarning,
    SimulationError,
    SingularKError,
    SolverError,
)
from .forward import (  # noqa: E402
    CostReport,
    LinearFeedback,
    OpenLoop,
    TimeGrid,
    TrajectoryBundle,
    evaluate_cost,
    flow_map,
    simulate,
)
from .problem import (  # noqa: E402
    AssumptionReport,
    CoefficientProcess,
    CoefficientSnapshot,
    LQProblem,
    SeparableField,
    check_assumptions,
    evaluate_coefficients,
    from_parabolic_spec,
)
from .riccati import (  # noqa: E402
    RiccatiSolution,
    compute_KL,
    solve_lyapunov_bsde,
    solve_lyapunov_ode,
    solve_riccati_bsde_direct,
    solve_riccati_ode,
    synthesize_feedback,
    theta_fixed_point,
)
from .spectral import (  # noqa: E402
    GalerkinMatrix,
    SpectralBasis,
    build_basis,
    hs_embedding_partial_sum,
    multiplication_matrix,
    semigroup_apply,
    weighted_norms,
)
from .verify import (  # noqa: E402
    IdentityReport,
    TestInputSet,
    check_cost_decomposition,
    check_hlambda_transposition,
    check_optimality,
    check_stationarity_and_K,
    check_transposition_identity,
    check_value_identity,
)
