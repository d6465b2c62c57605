//! Synthetic data-generating mechanisms, exact enumeration oracles for
//! their transported effects and efficiency bounds, and the Monte Carlo
//! harness that measures estimator operating characteristics.

mod dgm;
mod mc;

pub use dgm::{
    efficiency_bounds, eif_mean_at_truth, sample_dgm, true_source_value, true_value,
    BoundsResult, Covariate, DgmSpec, EifKind,
};
pub use mc::{
    child_seed, metrics_to_csv, metrics_to_table, run_monte_carlo, MetricsRow, MonteCarloOptions,
};
