//! Estimators of the average treatment effect transported from a source
//! population to a target population, with optional restriction to a
//! sufficient subset of effect modifiers.
//!
//! The crate provides four one-step estimators — the full-covariate
//! estimator (`lambda`), the known-subset estimator (`theta`), a
//! collaborative estimator for unknown subsets (`lambda_c`), and a
//! variant for targets where only the transport subset is measured
//! (`theta_alt`) — together with the regression learners they share,
//! cross-fitting, analytic efficiency bounds for the built-in synthetic
//! mechanisms, and a Monte Carlo harness.

pub mod data;
pub mod error;
pub mod estimators;
pub mod learners;
pub mod simulation;

pub use data::{
    load_csv, make_folds, positivity_report, write_csv, CsvSchema, Dataset, FoldAssignment,
    PositivityReport, SubsetSpec,
};
pub use error::{Error, Result};
pub use estimators::{
    eif_inference, estimate_lambda, estimate_lambda_collab, estimate_source_ate, estimate_theta,
    estimate_theta_alt, pseudo_outcome_t, pseudo_outcome_u, Diagnostics, Estimand, Estimate,
    EstimatorConfig, NuisanceConfig, NuisanceModel,
};
pub use learners::{
    clip_probabilities, cross_fit, fit_adaptive_lasso, fit_ensemble, fit_glm, DesignBasis,
    EnsembleSpec, Family, FitSpec, FittedModel, LearnerKind, LearnerSpec, Link,
};
pub use simulation::{
    child_seed, efficiency_bounds, eif_mean_at_truth, run_monte_carlo, sample_dgm, true_value,
    BoundsResult, DgmSpec, EifKind, MetricsRow, MonteCarloOptions,
};
