"""Model checking and local robustness analysis for latent Gaussian models.

Fit a Gaussian-response model exactly given its hyperparameters, score the
latent-Gaussianity assumption against heavy-tailed alternatives in closed
form, compare the observed score with its replication reference, and (when
the check flags misfit) quantify how posterior summaries would move.
"""

from . import errors
from .check import (
    CheckReport,
    GaussianReference,
    McReference,
    ReferenceMethod,
    WorkflowConfig,
    pvalue,
    pvalue_grid,
    ref_gaussian,
    ref_i0_approx,
    ref_mc,
    run_workflow,
)
from .inference import (
    HyperGrid,
    JointPosterior,
    conditional_posterior,
    empirical_bayes,
    hyper_grid,
    log_marginal,
)
from .latent import (
    LatentStructure,
    block_structure,
    build_iid,
    build_rw1,
    build_sar,
    custom_structure,
    load_custom,
    save_custom,
)
from .matern import MaternParams, gp_log_marginal, matern_cov, matern_smoothness_check
from .mc import McEstimate, fd_perturbation, mc_i0, mc_s0, mc_sensitivity
from .model import GammaPrior, GaussianLGM, HyperParams, assemble_lgm
from .perturbation import (
    PerturbationGeometry,
    SensitivityReport,
    TargetSensitivity,
    d_scores,
    i0_analytic,
    local_pert_g,
    local_pert_p,
    nig_logpdf,
    perturb_geometry,
    prediction_sensitivity,
    sens_linear_targets,
    w_sensitivities,
)
from .samplers import (
    NigNoiseSpec,
    PredictiveScheme,
    RngStream,
    predictive_draw,
    sample_invgaussian,
    sample_nig_noise,
    simulate_latent,
)
from .simstudy import (
    SimStudyConfig,
    SimStudyResult,
    estimate_detectability,
    normality_diagnostic,
    run_sim_study,
)

__version__ = "0.1.0"
