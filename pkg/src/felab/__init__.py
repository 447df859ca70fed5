"""Numerical laboratory for Bayesian free-energy asymptotics when the
optimal probability distribution is not unique."""

from .asymptotics import (
    AsymptoticCoefficients,
    GaussianMaxProblem,
    branch_probabilities,
    build_coefficients,
    expected_max_mc,
    mu_closed_form_two,
    predicted_free_energy,
    predicted_gen_loss,
)
from .bayes import (
    FreeEnergyEstimate,
    GridConfig,
    QuadratureGrid,
    branch_weights,
    build_grid,
    empirical_log_loss,
    free_energy,
    free_energy_from_losses,
    gen_loss_direct,
    max_statistic,
    node_empirical_losses,
)
from .harness import (
    ExperimentPlan,
    ExperimentReport,
    clt_diagnostic,
    fit_expansion,
    free_energy_ensemble,
    gen_loss_identity_ensemble,
    run_experiment,
)
from .model import (
    Dataset,
    ModelSpec,
    Parameter,
    dataset_rng,
    load_model_config,
    log_model_density,
    sample_dataset,
    sigmoid,
    true_regression,
)
from .population import (
    Branch,
    ConfigurationError,
    OptimumSet,
    avg_error,
    covariance,
    find_optima,
    log_loss,
    variance_condition_check,
)

__version__ = "0.1.0"
