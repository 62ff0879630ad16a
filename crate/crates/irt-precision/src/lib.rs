//! Precision estimates for IRT-based reliability coefficients.
//!
//! The crate fits unidimensional graded response models (the two-parameter
//! logistic model being the two-category case) by marginal maximum
//! likelihood, scores respondents by EAP, and reports two reliability
//! coefficients for the EAP score — the proportional reduction in mean
//! squared error of the latent variable and the classical test theory
//! reliability — each with an analytic asymptotic standard error and Wald
//! confidence interval that account for item parameter estimation error.

pub mod data;
pub mod error;
pub mod estimation;
pub mod model;
pub mod quadrature;
pub mod reliability;
pub mod scoring;
pub mod simulation;

pub use data::ResponseMatrix;
pub use error::{IrtError, Result};
pub use estimation::{
    default_init, fit_em, louis_information, observed_information, FitResult, InfoMatrix,
    PatternGroups, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
pub use model::{Item, ItemParams, ParamVector};
pub use quadrature::QuadratureGrid;
pub use reliability::{
    population_oracle, reliability_with_se, CoefficientKind, OracleMode, ReliabilityReport,
};
pub use scoring::{posterior_summary, PosteriorSummary};
pub use simulation::{run_study, SimDesign, SimSummary};
