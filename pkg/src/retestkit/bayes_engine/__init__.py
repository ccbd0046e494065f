from .model import MODEL_IDS, ModelSpec, PriorSpec, default_bounds, default_priors
from .likelihood import (
    StratumArrays,
    prepare_arrays,
    record_marginal_loglik,
    stratum_loglik,
    total_log_posterior,
)
from .sampler import (
    PosteriorDraws,
    adaptive_metropolis,
    effective_sample_size,
    fit_mcmc,
    measurement_share,
    posterior_summary,
    split_rhat,
)
