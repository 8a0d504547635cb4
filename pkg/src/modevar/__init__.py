"""Mode differences in interviewer variances for mixed-mode surveys.

Estimation of probit mixed models with mode-specific interviewer variance
components, by adaptive-quadrature maximum likelihood and by MCMC, plus
interviewer-level descriptive statistics and a seeded simulation harness
for bias, coverage, SE ratio, and power.
"""

from .data import (
    ColumnSchema,
    DataError,
    Dataset,
    Design,
    Engine,
    ModelSpec,
    ParameterVector,
    RespondentRecord,
    dataset_report,
    infer_design,
    load_dataset,
    write_dataset,
)
from .descriptives import InterviewerSummary, ModeSummary, interviewer_means, mode_summary
from .ml import (
    MLFit,
    alpha_from_variances,
    cluster_loglik_crossed,
    cluster_loglik_nested,
    delta_var_alpha,
    fit_ml,
    icc,
    mode_effect_probability_scale,
    total_loglik,
)
from .mcmc import (
    McmcBudget,
    PosteriorDraws,
    PosteriorSummary,
    diagnostics,
    fit_mcmc,
    hpd_interval,
    posterior_summary,
)
from .simulate import (
    Population,
    ScenarioConfig,
    SimulationMetrics,
    Truth,
    builtin_scenarios,
    generate_crossed,
    generate_nested,
    run_scenario,
)

__version__ = "0.1.0"
