//! Monte Carlo study harness: replicated sampling, estimator runs, and
//! the bias/coverage/variance metrics table.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_lambda, estimate_lambda_collab, estimate_theta, estimate_theta_alt, Estimand,
    EstimatorConfig,
};

use super::dgm::{sample_dgm, true_value, DgmSpec};

/// Stateless, injective replication-seed derivation (SplitMix64 output
/// function over a fixed-stride counter), so replications are
/// reproducible independently and in any order.
pub fn child_seed(master: u64, replication: u64) -> u64 {
    let mut z = master.wrapping_add(replication.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Aggregated operating characteristics of one estimator across
/// replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub estimator: String,
    pub n: usize,
    pub reps_requested: usize,
    pub reps_completed: usize,
    pub abs_bias: f64,
    pub coverage95: f64,
    /// Between-replication variance of the point estimates, scaled by n.
    pub n_times_var: f64,
    /// Mean of the within-replication estimated variances, scaled by n.
    pub mean_est_var: f64,
    /// mean_est_var relative to the full-covariate estimator's.
    pub rel_eff: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MonteCarloOptions {
    pub estimators: Vec<Estimand>,
    pub folds: usize,
    pub seed: u64,
    pub clip: (f64, f64),
    /// Report efficiency relative to the full-covariate estimator
    /// (which must then be part of the run).
    pub rel_eff: bool,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self {
            estimators: vec![Estimand::Lambda, Estimand::Theta, Estimand::LambdaCollab],
            folds: 5,
            seed: 0,
            clip: (0.01, 0.99),
            rel_eff: true,
        }
    }
}

fn run_one(
    spec: &DgmSpec,
    ds: &Dataset,
    estimand: Estimand,
    cfg: &EstimatorConfig,
) -> Result<(f64, f64, (f64, f64))> {
    let subset = spec.subset();
    let est = match estimand {
        Estimand::Lambda => estimate_lambda(ds, cfg)?,
        Estimand::Theta => estimate_theta(ds, &subset, cfg)?,
        Estimand::LambdaCollab => estimate_lambda_collab(ds, cfg)?,
        Estimand::ThetaAlt => estimate_theta_alt(ds, &subset, cfg)?,
        Estimand::SourceAte => {
            return Err(Error::Config(
                "the source ATE has a different estimand; run it directly".into(),
            ))
        }
    };
    Ok((est.point, est.se, est.ci95))
}

/// Runs `reps` independent replications of size `n` and aggregates
/// per-estimator metrics. Replications use independent child seeds, so
/// the output does not depend on execution order or parallelism; failed
/// replications are dropped per estimator with a logged count.
pub fn run_monte_carlo(
    spec: &DgmSpec,
    n: usize,
    reps: usize,
    opts: &MonteCarloOptions,
) -> Result<Vec<MetricsRow>> {
    if reps < 2 {
        return Err(Error::Argument("need at least 2 replications".into()));
    }
    if opts.estimators.is_empty() {
        return Err(Error::Argument("no estimators requested".into()));
    }
    if opts.estimators.contains(&Estimand::SourceAte) {
        return Err(Error::Config(
            "the Monte Carlo harness covers the transported estimators only".into(),
        ));
    }
    if opts.rel_eff && !opts.estimators.contains(&Estimand::Lambda) {
        return Err(Error::Config(
            "relative efficiency requires the lambda estimator in the run".into(),
        ));
    }
    spec.validate()?;
    let truth = true_value(spec);

    type RepResult = Vec<Option<(f64, f64, (f64, f64))>>;
    let results: Vec<RepResult> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = child_seed(opts.seed, rep as u64);
            let ds = match sample_dgm(spec, n, rep_seed) {
                Ok(ds) => ds,
                Err(e) => {
                    log::warn!("replication {rep}: sampling failed: {e}");
                    return vec![None; opts.estimators.len()];
                }
            };
            let cfg = EstimatorConfig {
                folds: opts.folds,
                seed: rep_seed,
                clip: opts.clip,
                ..Default::default()
            };
            opts.estimators
                .iter()
                .map(|&estimand| match run_one(spec, &ds, estimand, &cfg) {
                    Ok(out) => Some(out),
                    Err(e) => {
                        log::warn!(
                            "replication {rep}, {}: {e}",
                            estimand.label()
                        );
                        None
                    }
                })
                .collect()
        })
        .collect();

    let nf = n as f64;
    let mut rows = Vec::with_capacity(opts.estimators.len());
    for (idx, &estimand) in opts.estimators.iter().enumerate() {
        let mut points = Vec::with_capacity(reps);
        let mut est_vars = Vec::with_capacity(reps);
        let mut covered = 0usize;
        for rep in &results {
            if let Some((point, se, ci)) = rep[idx] {
                points.push(point);
                est_vars.push(nf * se * se);
                if ci.0 <= truth && truth <= ci.1 {
                    covered += 1;
                }
            }
        }
        let completed = points.len();
        if completed < 2 {
            return Err(Error::Inference(format!(
                "estimator {} completed only {completed} replications",
                estimand.label()
            )));
        }
        let mean = points.iter().sum::<f64>() / completed as f64;
        let var = points.iter().map(|p| (p - mean).powi(2)).sum::<f64>()
            / (completed as f64 - 1.0);
        rows.push(MetricsRow {
            estimator: estimand.label().to_string(),
            n,
            reps_requested: reps,
            reps_completed: completed,
            abs_bias: (mean - truth).abs(),
            coverage95: covered as f64 / completed as f64,
            n_times_var: nf * var,
            mean_est_var: est_vars.iter().sum::<f64>() / completed as f64,
            rel_eff: None,
        });
    }
    if opts.rel_eff {
        let lambda_var = rows
            .iter()
            .find(|r| r.estimator == "lambda")
            .map(|r| r.mean_est_var)
            .expect("lambda presence checked above");
        for row in &mut rows {
            row.rel_eff = Some(row.mean_est_var / lambda_var);
        }
    }
    Ok(rows)
}

/// Metrics as CSV, one row per estimator.
pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(
        "estimator,n,reps_requested,reps_completed,abs_bias,coverage95,n_times_var,mean_est_var,rel_eff\n",
    );
    for r in rows {
        let rel = r.rel_eff.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.estimator,
            r.n,
            r.reps_requested,
            r.reps_completed,
            r.abs_bias,
            r.coverage95,
            r.n_times_var,
            r.mean_est_var,
            rel
        ));
    }
    out
}

/// Monospace summary table.
pub fn metrics_to_table(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>8} {:>6} {:>10} {:>10} {:>12} {:>14} {:>10}\n",
        "Estimator", "n", "Reps", "|Bias|", "Coverage", "n x Var", "Mean Est Var", "Rel Eff"
    ));
    for r in rows {
        let rel = r
            .rel_eff
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "-".to_string());
        out.push_str(&format!(
            "{:<12} {:>8} {:>6} {:>10.4} {:>10.3} {:>12.3} {:>14.3} {:>10}\n",
            r.estimator, r.n, r.reps_completed, r.abs_bias, r.coverage95, r.n_times_var,
            r.mean_est_var, rel
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn child_seeds_are_distinct_and_stateless() {
        assert_ne!(child_seed(42, 0), child_seed(42, 1));
        assert_eq!(child_seed(42, 7), child_seed(42, 7));
        let mut seen = HashSet::new();
        for rep in 0..100_000u64 {
            assert!(seen.insert(child_seed(42, rep)), "collision at {rep}");
        }
    }

    #[test]
    fn smoke_run_produces_finite_metrics() {
        let spec = DgmSpec::builtin(3).unwrap();
        let opts = MonteCarloOptions {
            estimators: vec![Estimand::Lambda, Estimand::Theta],
            folds: 2,
            seed: 5,
            ..Default::default()
        };
        let rows = run_monte_carlo(&spec, 100, 2, &opts).unwrap();
        assert_eq!(rows.len(), 2);
        for row in &rows {
            assert!(row.abs_bias.is_finite());
            assert!((0.0..=1.0).contains(&row.coverage95));
            assert!(row.n_times_var.is_finite());
            assert!(row.mean_est_var.is_finite());
        }
        assert_eq!(rows[0].rel_eff, Some(1.0));
    }

    #[test]
    fn rel_eff_requires_lambda() {
        let spec = DgmSpec::builtin(3).unwrap();
        let opts = MonteCarloOptions {
            estimators: vec![Estimand::Theta],
            rel_eff: true,
            folds: 2,
            ..Default::default()
        };
        assert!(matches!(
            run_monte_carlo(&spec, 100, 2, &opts),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn results_do_not_depend_on_parallelism() {
        let spec = DgmSpec::builtin(3).unwrap();
        let opts = MonteCarloOptions {
            estimators: vec![Estimand::Lambda],
            folds: 2,
            seed: 1,
            rel_eff: false,
            ..Default::default()
        };
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_monte_carlo(&spec, 120, 4, &opts).unwrap());
        let parallel = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| run_monte_carlo(&spec, 120, 4, &opts).unwrap());
        assert_eq!(serial, parallel);
    }
}
