"""Risk-sensitive average-cost analysis for finite MDPs."""

__version__ = "0.1.0"

from .certify import (
    ActionRestriction,
    Certificate,
    CharacterizationReport,
    action_restriction,
    check_membership,
    construct_g_alpha,
    deviation_function,
    extract_policy,
    monotone_trajectory_check,
    verify_characterization,
)
from .chain import (
    check_doeblin,
    expected_hitting_time,
    reachable_set,
    spectral_radius,
    strongly_connected_components,
    tail_bound,
)
from .evaluation import MarkovPolicy, certain_equivalent, finite_horizon_cost, long_run_average, verify_growth
from .model import (
    Mdp,
    StationaryPolicy,
    enumerate_stationary_policies,
    load_model,
    load_model_file,
    max_cost_norm,
)
from .optimal import (
    level_sets,
    optimal_average,
    optimal_finite_horizon,
    relative_value,
    solve_optimality_equation,
    verify_minmax,
)
from .simulate import mc_certain_equivalent, mc_hitting_tail, sample_trajectory
