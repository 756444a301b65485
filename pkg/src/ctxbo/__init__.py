"""ctxbo: Bayesian optimization with contextual improvement.

A Gaussian-process surrogate with a squared-exponential ARD kernel,
improvement-based acquisition rules (PI, margin EI, and adaptive EI whose
exploration margin tracks the model's mean posterior variance), Sobol
candidate search, and a reproducible benchmark harness with bootstrap
confidence analysis.
"""

__version__ = "0.1.0"

from .acquisition import (
    AcquisitionKind,
    AcquisitionSpec,
    MarginConvention,
    PosteriorSummary,
    contextual_improvement,
    contextual_variance,
    expected_improvement,
    improvement,
    probability_of_improvement,
    score,
)
from .gp import (
    Dataset,
    FitError,
    GpPosterior,
    KernelParams,
    check_kernel_validity,
    fit_posterior,
    kernel_eval,
    log_marginal_likelihood,
    optimize_hyperparameters,
)
from .objectives import (
    Direction,
    Objective,
    ObjectiveError,
    as_internal_max,
    builtin_objective,
    subprocess_objective,
)
from .runner import (
    ExperimentConfig,
    RunAbortedError,
    StudyError,
    StudySummary,
    SweepResult,
    Trace,
    bootstrap_ci,
    delta_ci,
    epsilon_sweep,
    risk_area,
    run_bo,
    run_study,
    z_score,
)
from .sampling import (
    CandidateSet,
    SearchBudget,
    SobolStream,
    maximize_acquisition,
    mean_posterior_variance,
    sobol_points,
)
