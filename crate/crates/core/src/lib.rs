//! Multivariate linear conditional-mean models for count, binary and
//! categorical panels, estimated by two-stage weighted least squares with a
//! working correlation structure.

pub mod dgp;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod inference;
pub mod io;
pub mod model;
pub mod stocks;

pub use error::{Error, Result};
pub use estimation::{fit_first_step, fit_qmle, fit_two_stage, FitResult, WeightPlan};
pub use model::{Family, MatrixShape, MeanPath, ModelSpec, Series, Theta};
