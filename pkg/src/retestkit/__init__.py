"""retestkit: variance decomposition and retest decisions for conditionally
repeated biomarker measurements."""

from .data import MeasurementPair, PairDataset
from .errors import (
    DataFormatError,
    DomainError,
    EstimationError,
    EvaluationError,
    RetestKitError,
)
from .stats_core import (
    MeasurementDensity,
    QuadratureRule,
    TruncationFactors,
    bivariate_normal_logpdf,
    conditional_delta_variance,
    density_logpdf,
    gauss_hermite,
    std_normal_lambda,
    truncated_error_variance,
)
from .simulate import (
    GeneratorSpec,
    RetestPolicy,
    recheck_probability,
    simulate_dgp,
    simulate_pairs,
)
from .freq import (
    BootstrapSummary,
    FrequentistEstimate,
    bootstrap,
    estimate_naive,
    estimate_rho_ce,
    estimate_rho_mle,
    fit_strata,
    naive_sigma_meas_sq,
    sample_mean_var,
    theoretical_naive_bias,
)

__version__ = "0.1.0"


def __getattr__(name):
    # heavier subsystems load lazily so `import retestkit` stays light
    if name in ("ModelSpec", "PriorSpec", "PosteriorDraws", "fit_mcmc",
                "posterior_summary", "record_marginal_loglik",
                "total_log_posterior"):
        from . import bayes_engine
        return getattr(bayes_engine, name)
    if name in ("kfold_split", "clppd", "compare_models", "cross_validate",
                "CvReport"):
        from . import model_select
        return getattr(model_select, name)
    if name in ("eligibility_probability", "misclassification_table",
                "DecisionReport"):
        from . import decision
        return getattr(decision, name)
    if name in ("ingest", "write_csv", "RunArtifact", "load_fit_file"):
        from . import io
        return getattr(io, name)
    raise AttributeError(f"module 'retestkit' has no attribute {name!r}")
