"""Mean-variance control of switching diffusions driven by two-time-scale
Markov chains: generator aggregation, Riccati solvers, feedback laws,
Monte Carlo simulation and the complexity-reduction experiments."""

from .cli_io import ExperimentConfig, bundled_config, load_config
from .control import (
    FeedbackLaw,
    LawKind,
    calibrate_lambda,
    feasibility_check,
    near_optimal_feedback,
    near_optimal_feedback_transient,
    near_optimal_law,
    optimal_feedback,
    optimal_law,
)
from .experiment import (
    ErrorMetrics,
    ExperimentReport,
    QuadraticTestFunction,
    dynkin_residual,
    error_P,
    error_x,
    estimate_cost,
    estimate_value,
    run_experiment,
)
from .generators import (
    Partition,
    aggregate_coefficients,
    aggregate_generator,
    aggregate_generator_transient,
    assemble_fast_slow,
    stationary_distribution,
    transient_absorption_weights,
    validate_generator,
)
from .model import RegimeCoefficients, TwoTimeScaleModel, risk_premium
from .riccati import SolutionGrid, extend_transient, solve, solve_H, solve_P, value_head
from .simulation import (
    ChainPath,
    FlowPath,
    LimitControl,
    RandomStream,
    aggregate_path,
    coupled_compare,
    sample_regime_grid,
    simulate_ctmc,
    simulate_flow,
    simulate_limit_flow,
)

__version__ = "0.1.0"
