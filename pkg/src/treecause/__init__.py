"""Bayesian tree ensembles for causal inference.

BART/DART regression and probit classification, Bayesian Causal Forests,
counterfactual treatment-effect estimation, ICE/PDP sensitivity curves,
Dirichlet-prior variable selection, and a reproducible simulation benchmark.
"""

__version__ = "0.1.0"

from .data import (
    DataError,
    Dataset,
    ResponseScaler,
    SplitCandidates,
    build_split_candidates,
    load_csv,
    read_table,
    standardize_response,
)
from .effects import (
    EffectDraws,
    cate,
    credible_interval,
    estimate_ite_bart,
    estimate_ite_bcf,
    rmse,
)
from .icepdp import (
    CurveSet,
    ice_curves,
    ice_ite_curves,
    pdp_cate_curve,
    pdp_curve,
    subsample_grid,
)
from .models import (
    BcfFit,
    FitResult,
    fit_bart,
    fit_bcf,
    fit_glm_propensity,
    fit_probit,
)
from .priors import (
    BcfPriorParams,
    LeafPriorParams,
    SigmaPriorParams,
    SplitVarPrior,
    TreePriorParams,
    bcf_eta_from_alpha0,
    calibrate_lambda,
    compute_sigma_mu,
    log_tree_prior,
    split_probability,
)
from .sampler import SamplerConfig
from .selection import (
    SelectionReport,
    compute_pip,
    dirichlet_summary,
    make_report,
    ps_usage,
    selection_metrics,
)
from .simbench import (
    BenchmarkReport,
    BenchmarkScale,
    DgpSample,
    gen_friedman,
    gen_hahn,
    gen_hill_synthetic,
    run_benchmark,
)
from .trees import Forest, Internal, Leaf, Tree, evaluate_forest, evaluate_tree

__all__ = [
    "__version__",
    "DataError",
    "Dataset",
    "ResponseScaler",
    "SplitCandidates",
    "build_split_candidates",
    "load_csv",
    "read_table",
    "standardize_response",
    "EffectDraws",
    "cate",
    "credible_interval",
    "estimate_ite_bart",
    "estimate_ite_bcf",
    "rmse",
    "CurveSet",
    "ice_curves",
    "ice_ite_curves",
    "pdp_cate_curve",
    "pdp_curve",
    "subsample_grid",
    "BcfFit",
    "FitResult",
    "fit_bart",
    "fit_bcf",
    "fit_glm_propensity",
    "fit_probit",
    "BcfPriorParams",
    "LeafPriorParams",
    "SigmaPriorParams",
    "SplitVarPrior",
    "TreePriorParams",
    "bcf_eta_from_alpha0",
    "calibrate_lambda",
    "compute_sigma_mu",
    "log_tree_prior",
    "split_probability",
    "SamplerConfig",
    "SelectionReport",
    "compute_pip",
    "dirichlet_summary",
    "make_report",
    "ps_usage",
    "selection_metrics",
    "BenchmarkReport",
    "BenchmarkScale",
    "DgpSample",
    "gen_friedman",
    "gen_hahn",
    "gen_hill_synthetic",
    "run_benchmark",
    "Forest",
    "Internal",
    "Leaf",
    "Tree",
    "evaluate_forest",
    "evaluate_tree",
]
