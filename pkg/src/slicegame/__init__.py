"""Share-constrained proportional allocation games for network slicing."""

from .baselines import (
    BaselineResult,
    project_simplex,
    social_gradient,
    social_optimum_log,
    social_optimum_numeric,
    static_slicing,
)
from .best_response import (
    BestResponseOptions,
    SolverError,
    UnsupportedAlphaError,
    beta_coefficients,
    best_response,
    protective_allocation,
    stationarity_residual,
    with_slice_weights,
)
from .dynamics import (
    DynamicsOptions,
    EquilibriumReport,
    GameTrace,
    lyapunov,
    nash_residual,
    round_deltas,
    run_dynamics,
    solve_equilibrium,
)
from .metrics import (
    MetricsReport,
    capacity_equivalent_gain,
    envy,
    envy_matrix,
    envy_upper_bound_constant,
    exchange_allocation,
    poa_gap,
)
from .model import (
    DegenerateAllocationError,
    LoadVector,
    NetworkScenario,
    RateVector,
    ScenarioError,
    SliceSpec,
    UserSpec,
    ValidationReport,
    WeightAllocation,
    alpha_fair_deriv,
    alpha_fair_value,
    compute_loads,
    compute_rates,
    network_utility,
    slice_utility,
    validate_scenario,
)
from .scenarios import (
    RandomScenarioParams,
    envy_instance_family,
    patterned_scenario,
    poa_tight_instance,
    random_scenario,
)

__version__ = "0.1.0"
