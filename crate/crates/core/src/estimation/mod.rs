//! Parameter estimation: criteria, the bound-constrained optimizer, working
//! weights and the estimators built on them.

pub mod fit;
pub mod objective;
pub mod optimize;
pub mod weights;

pub use fit::{fit_first_step, fit_qmle, fit_two_stage, initial_params, Estimator, FitResult, StageSummary, SCORE_TOL};
pub use objective::{default_lambda_init, identity_weights, qmle_loglik, qmle_score, wls_objective, wls_score};
pub use optimize::{optimize, optimize_with_curvature, Constraints, Evaluation, LinearBudget, OptimOptions, OptimResult, Termination};
pub use weights::{
    build_weights, eqc_inverse, eqc_matrix, estimate_r, pearson_residual_correlations, Correlation, REstimate,
    PlanSummary, REstimator, VarianceFn, VarianceInput, WeightPlan, Weights,
};
