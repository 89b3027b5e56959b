"""surplusdec: surplus decomposition for multi-state with-profit life insurance.

The package decomposes the revaluation surplus of a policy into additive
per-risk-source contributions: sequential-updating decompositions over
partitions, their order-independent vanishing-mesh limits in closed form,
one-at-a-time decompositions with interaction effects, order-averaged
decompositions, and Monte Carlo cross-checks.
"""

from .engine import EngineOptions
from .errors import (
    AdmissibilityError,
    ConfigError,
    DomainError,
    EvaluationError,
    SingularJumpError,
    SurplusDecError,
    ValidationError,
)
from .processes import (
    DoleansExponential,
    FVProcess,
    ReturnProcess,
    TimeGrid,
    assert_no_simultaneous_jumps,
    doleans_exponential,
    evaluate,
    evaluate_left,
    jump_covariation,
    stieltjes_integral,
    stop_process,
    tilde_transform,
)
from .markov import (
    IntensityMatrix,
    PolicyPath,
    StateSpace,
    TransitionField,
    counting_process,
    inverse_transition,
    kolmogorov_forward,
    state_indicator,
)
from .contract import (
    ContractSpec,
    TransitionPayment,
    ValuationBasis,
    asset_value,
    check_no_simultaneous_jumps,
    functional_H,
    hypothetical_surplus,
    prospective_reserve,
    sum_at_risk,
    total_surplus_direct,
)
from .surplus import (
    DecompositionScheme,
    RiskFactor,
    SCHEME_NAMES,
    SurplusSurface,
    build_scheme,
    revaluation_individual,
    revaluation_mean,
    spliced_basis,
    surface_eval,
)
from .decomp import (
    ConvergenceReport,
    DecompositionResult,
    Partition,
    aggregate,
    averaged_isu,
    dyadic_partition,
    integral_representation,
    ioat_limit,
    isu_closed_form,
    isu_individual,
    isu_limit_estimate,
    isu_mean,
    oat_decompose,
    su_decompose,
)
from .simulate import (
    PathFunctionals,
    SimulationConfig,
    monte_carlo_mean,
    simulate_path,
)

__version__ = "0.1.0"
