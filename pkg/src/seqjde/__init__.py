"""Optimal truncated Bayesian sequential joint detection-estimation tests.

Pipeline: define a problem (`model`), discretize it (`grid`), compute cost
tables under given loss weights (`bellman`), pick the weights meeting error
constraints at minimum expected run-length (`coeffopt`), validate by Monte
Carlo against a truncated SPRT + MMSE baseline (`simulate`), and persist /
verify the result (`persist`, `verify`, `cli`).
"""

from .bellman import (
    CONTINUE,
    STOP_H0,
    STOP_H1,
    Coefficients,
    CostTables,
    PolicyAction,
    Regions,
    backward_induction,
    evaluate_policy,
    extract_regions,
    stopping_costs,
)
from .coeffopt import (
    Constraints,
    DesignedTest,
    DesignOptions,
    ErrorTables,
    LinearProgram,
    assemble_lp,
    design,
    dual_ascent,
    dual_objective_and_gradient,
    default_epsilon,
    epsilon_bound,
    error_tables,
    solve_design_lp,
)
from .grid import (
    Axis,
    DiscretizedModel,
    ForwardMarginals,
    GridCoverageError,
    GridSpec,
    TransitionOperator,
    build,
    forward_marginals,
    transition_row,
)
from .model import (
    HypothesisPriors,
    ParameterPrior,
    ProblemModel,
    StatisticDef,
    make_shift_in_mean,
    make_shift_in_variance,
)
from .persist import (
    ArtifactError,
    export_regions_csv,
    load_artifact,
    save_artifact,
)
from .simulate import (
    SimulationReport,
    SprtPolicy,
    TrialOutcome,
    monte_carlo,
    run_trial,
    sprt_design,
    sprt_monte_carlo,
)
from .verify import CheckResult, run_invariant_suite

__version__ = "0.1.0"
