"""Stochastic filtering and hypothesis testing for continuous qubit readout."""

__version__ = "0.1.0"

from .core import (
    HiddenTrajectory,
    HypothesisModel,
    InvariantBreach,
    ModelError,
    RateSchedule,
    Schedule,
    TimeGrid,
    derive_seed,
    empirical_occupation,
    kolmogorov_propagate,
    sample_trajectories,
    sample_trajectory,
    transition_matrices,
)
from .gaussian import (
    FilterState,
    GaussianRecord,
    LLRTrace,
    dmz_filter_numeric,
    dmz_solve_no_decay,
    dmz_solve_no_excitation,
    dmz_step_numeric,
    estimator_mu,
    filter_and_llr,
    llr_estimator_correlator,
    simulate_gaussian,
)
from .poisson import (
    CountRecord,
    PoissonLLRTrace,
    estimator_nu,
    gaussian_limit_gaps,
    gaussian_limit_transform,
    llr_poisson,
    poisson_dmz_step,
    poisson_filter_and_llr,
    poisson_filter_numeric,
    poisson_solve_no_decay,
    poisson_solve_no_excitation,
    simulate_poisson,
)
from .decision import (
    DecisionResult,
    HypothesisSet,
    MonteCarloResult,
    decide,
    matched_filter_pe,
    monte_carlo_error_rate,
)
from .quantum import (
    ConditionalDensityMatrix,
    DecouplingReport,
    QubitRates,
    decoupling_report,
    integrate_sme,
    quantum_estimator,
    sme_step,
)
from .config import ConfigError, ExperimentConfig, parse_config
from .runner import RunSummary, run
