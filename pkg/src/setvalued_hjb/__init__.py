"""Set-valued value functions of multiobjective variational problems with
non-constant discount, computed by a Hopf-Lax formula and checked against
the Bellman principle and the HJB equation direction by direction."""

from .bellman_hjb import (
    BellmanReport,
    HjbReport,
    bellman_rhs,
    check_bellman,
    check_hjb,
    discount_gap_cost,
    fenchel_conjugate,
    grad_u,
    hjb_source,
    random_arcs,
    ut_scalar,
)
from .config import dump_scenario, load_scenario, parse_scenario
from .estimator import HopfLaxValueFunction
from .exceptions import (
    ConditioningError,
    ConfigurationError,
    DomainError,
    HypothesisError,
    InversionError,
    OracleError,
    SetValuedHJBError,
    SolverError,
    UsageError,
)
from .hopflax import (
    Arc,
    PSolveResult,
    ValueSurface,
    arc_position,
    arc_velocity,
    cost_set,
    scalar_cost,
    solve_p,
    stationarity_F,
    stationarity_jacobian,
    value_function,
    value_surface,
)
from .lattice import (
    ConeSpec,
    HalfSpace,
    UpperSet,
    includes,
    lattice_inf,
    lattice_sup,
    linear_set,
    minkowski_sum_closed,
    zeta_difference,
)
from .oracle import DirectMethodConfig, compare_with_direct, direct_minimize, pgrid_minimize
from .problem import (
    DiscountSpec,
    LagrangianSpec,
    Scenario,
    TerminalSpec,
    discount,
    discount_dt,
    grad_L_zeta,
    hess_L_zeta,
    invert_grad_L,
    scalarize_L,
)

__version__ = "0.1.0"
