"""flowtracker-lab: continuous-time distributed optimization over time-varying
directed graphs, with mixing-flow classification and convergence diagnostics."""

from .errors import (
    CapabilityError,
    ConfigError,
    DegenerateWeightsError,
    FlowtrackerError,
    InvalidInputError,
    NumericalFailureError,
)
from .graphnet import (
    DirectedGraph,
    Laplacian,
    LaplacianProcess,
    common_stationary_distribution,
    constant_process,
    cut_value,
    graph_from_edges,
    integrated_min_cut,
    is_weight_balanced,
    make_laplacian,
    min_cut,
    process_from_dict,
    process_to_dict,
    random_process,
)
from .flowcore import (
    ErgodicityReport,
    FlowGrid,
    FlowMatrix,
    adaptive_grid,
    default_grid,
    distance_to_rank_one,
    ergodicity_report,
    semigroup_defect,
    transition_matrix,
)
from .objectives import (
    Box,
    ObjectiveFamily,
    custom_table,
    family_from_dict,
    family_to_dict,
    global_gradient,
    global_objective,
    gradient_bound,
    huberized_quadratic,
    logistic_scalar,
    mirror_pair,
    optimizer_oracle,
    stacked_gradient,
)
from .schedules import (
    StepSchedule,
    check_validity,
    constant,
    custom_piecewise,
    evaluate,
    lemma_aux_check,
    power_law,
    schedule_from_dict,
    schedule_to_dict,
)
from .dynamics import (
    GradientFeedback,
    SystemState,
    ZeroControl,
    averaging_system,
    gradient_feedback,
    make_system,
    predicted_spps_rate,
    push_sum_system,
    saddle_point_system,
    spps_system,
)
from .simulate import (
    Trajectory,
    closed_form_two_agent,
    estimate_limit,
    integrate,
)
from . import diagnostics
from . import harness

__version__ = "0.1.0"
