//! One-step estimators of the transported average treatment effect with
//! influence-function-based inference.
//!
//! All four transported estimators share the same skeleton: cross-fitted
//! nuisance regressions, a plug-in estimate, a one-step correction equal
//! to the sample mean of the estimated influence function, and a standard
//! error from the influence function's sample variance.

mod collab;
mod pipeline;
mod onestep;

pub use collab::estimate_lambda_collab;
pub use onestep::{estimate_lambda, estimate_source_ate, estimate_theta, estimate_theta_alt};

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::FoldAssignment;
use crate::error::{Error, Result};
use crate::learners::{EnsembleSpec, Family, LearnerKind, LearnerSpec};

/// Which transported (or source) effect an [`Estimate`] refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    /// Full-covariate transported ATE.
    Lambda,
    /// Transported ATE restricted to known effect-modifier subsets.
    Theta,
    /// Collaborative transported ATE for unknown subsets.
    LambdaCollab,
    /// Known-subset variant usable when only Z is measured in the target.
    ThetaAlt,
    /// Non-transported ATE within the source population.
    SourceAte,
}

impl Estimand {
    pub fn label(&self) -> &'static str {
        match self {
            Estimand::Lambda => "lambda",
            Estimand::Theta => "theta",
            Estimand::LambdaCollab => "lambda_c",
            Estimand::ThetaAlt => "theta_alt",
            Estimand::SourceAte => "source_ate",
        }
    }
}

impl FromStr for Estimand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Estimand::Lambda),
            "theta" => Ok(Estimand::Theta),
            "lambda_c" | "lambda_collab" => Ok(Estimand::LambdaCollab),
            "theta_alt" => Ok(Estimand::ThetaAlt),
            "source_ate" => Ok(Estimand::SourceAte),
            other => Err(Error::Argument(format!(
                "unknown estimator '{other}' (expected lambda, theta, lambda_c, theta_alt, source_ate)"
            ))),
        }
    }
}

/// How one nuisance function is obtained: fit by a learner or ensemble,
/// or supplied externally as per-row values (length n), which bypasses
/// fitting entirely — useful for oracle checks and robustness studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NuisanceModel {
    Ensemble(EnsembleSpec),
    Learner(LearnerSpec),
    FixedProbs(Vec<f64>),
    FixedValues(Vec<f64>),
    FixedOutcome { m1: Vec<f64>, m0: Vec<f64> },
}

/// Per-role nuisance configuration. Roles not used by a given estimator
/// are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceConfig {
    /// P(A = 1 | W, S = 1).
    pub treatment: NuisanceModel,
    /// E(Y | A, W, S = 1), fit on the design [A, W].
    pub outcome: NuisanceModel,
    /// Regression of the doubly robust pseudo-outcome on V (or W).
    pub cate: NuisanceModel,
    /// P(S = 1 | W) or P(S = 1 | Z), depending on the estimator.
    pub selection: NuisanceModel,
    /// E{f(V) | Z} (pooled) or E{f(V) | Z, S = 1} (source only).
    pub conditional: NuisanceModel,
    /// Regression of the transported pseudo-outcome U on Z.
    pub u_conditional: NuisanceModel,
    /// P(S = 1 | f(W)): logistic on the basis {f, f^2} by default.
    pub h_s: NuisanceModel,
    /// E{f(W) | e_S(W)}: least squares on {e_S, e_S^2} by default.
    pub k: NuisanceModel,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            treatment: NuisanceModel::Ensemble(EnsembleSpec::default_for(Family::Binomial)),
            outcome: NuisanceModel::Ensemble(EnsembleSpec::default_for(Family::Gaussian)),
            cate: NuisanceModel::Ensemble(EnsembleSpec::default_for(Family::Gaussian)),
            selection: NuisanceModel::Ensemble(EnsembleSpec::default_for(Family::Binomial)),
            conditional: NuisanceModel::Ensemble(EnsembleSpec::default_for(Family::Gaussian)),
            u_conditional: NuisanceModel::Ensemble(EnsembleSpec::default_for(Family::Gaussian)),
            h_s: NuisanceModel::Learner(LearnerSpec::new(LearnerKind::GlmMain, Family::Binomial)),
            k: NuisanceModel::Learner(LearnerSpec::new(LearnerKind::GlmMain, Family::Gaussian)),
        }
    }
}

/// Run configuration shared by every estimator call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Number of cross-fitting folds; 1 disables cross-fitting.
    pub folds: usize,
    /// Explicit fold assignment; overrides `folds`/`seed` when present.
    #[serde(skip)]
    pub fold_assignment: Option<FoldAssignment>,
    pub seed: u64,
    /// Probability clipping bounds applied to every propensity.
    pub clip: (f64, f64),
    pub nuisances: NuisanceConfig,
    /// Collaborative estimator only: adaptive-lasso selection of the
    /// modifier subsets, reported alongside the estimate.
    pub interpretable: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            fold_assignment: None,
            seed: 0,
            clip: (0.01, 0.99),
            nuisances: NuisanceConfig::default(),
            interpretable: false,
        }
    }
}

impl EstimatorConfig {
    pub fn with_folds(mut self, folds: usize) -> Self {
        self.folds = folds;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 1 {
            return Err(Error::Argument("folds must be >= 1".into()));
        }
        let (lo, hi) = self.clip;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::Argument(format!(
                "clip bounds must satisfy 0 < lo < hi < 1, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// Bookkeeping attached to every estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub folds: usize,
    pub clip: (f64, f64),
    /// Clipped-prediction counts per nuisance role.
    pub clip_counts: BTreeMap<String, usize>,
    /// Selected learner per role, one entry per fold.
    pub learner_choices: BTreeMap<String, Vec<String>>,
    pub notes: Vec<String>,
}

/// A point estimate with influence-function-based inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimand: Estimand,
    pub point: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    /// Per-row estimated influence function values, centered at `point`.
    pub eif: Vec<f64>,
    pub diagnostics: Diagnostics,
    /// Covariates retained as effect modifiers (interpretable mode only).
    pub selected_v: Option<Vec<String>>,
    /// Covariates retained as the transport subset (interpretable mode only).
    pub selected_z: Option<Vec<String>>,
}

/// Doubly robust pseudo-outcome whose conditional mean given covariates
/// recovers the conditional average treatment effect:
/// `(2a - 1) / P(A = a) * (y - m_a) + (m1 - m0)`.
/// Defined for source rows; `e_a` must already be clipped into (0, 1).
pub fn pseudo_outcome_t(a: u8, y: f64, m1: f64, m0: f64, e_a: f64) -> Result<f64> {
    if !(e_a > 0.0 && e_a < 1.0) {
        return Err(Error::Argument(format!(
            "treatment propensity {e_a} outside (0, 1); clip before calling"
        )));
    }
    let (sign, p_obs, m_obs) = if a == 1 {
        (1.0, e_a, m1)
    } else {
        (-1.0, 1.0 - e_a, m0)
    };
    Ok(sign / p_obs * (y - m_obs) + (m1 - m0))
}

/// Doubly robust pseudo-outcome whose conditional mean given Z recovers
/// `E{f(V) | Z, S = 1}`: `1{s=1}/e_sz * (f - ef) + ef`. For target rows
/// the indicator removes the first term, so `f_hat` is never read there.
pub fn pseudo_outcome_u(s: u8, f_hat: f64, ef_z_s1: f64, e_s_z: f64) -> Result<f64> {
    if !(e_s_z > 0.0 && e_s_z < 1.0) {
        return Err(Error::Argument(format!(
            "selection propensity {e_s_z} outside (0, 1); clip before calling"
        )));
    }
    if s == 1 {
        Ok((f_hat - ef_z_s1) / e_s_z + ef_z_s1)
    } else {
        Ok(ef_z_s1)
    }
}

/// Standard error and 95% confidence interval from an estimated influence
/// function: `se = sqrt(Var(eif) / n)` with the unbiased sample variance.
pub fn eif_inference(eif: &[f64], point: f64) -> Result<(f64, (f64, f64))> {
    let n = eif.len();
    if n < 2 {
        return Err(Error::Inference(format!(
            "need at least 2 observations for a variance, got {n}"
        )));
    }
    if eif.iter().any(|v| !v.is_finite()) {
        return Err(Error::Inference("influence function contains non-finite values".into()));
    }
    let nf = n as f64;
    let mean = eif.iter().sum::<f64>() / nf;
    let var = eif.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let se = (var / nf).sqrt();
    Ok((se, (point - 1.96 * se, point + 1.96 * se)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_outcome_t_formula_cases() {
        let t = pseudo_outcome_t(1, 2.0, 1.5, 0.5, 0.5).unwrap();
        assert!((t - 2.0).abs() < 1e-15);

        // Zero residual: T reduces to the model contrast.
        let t = pseudo_outcome_t(0, 0.7, 1.9, 0.7, 0.3).unwrap();
        assert!((t - 1.2).abs() < 1e-15);

        assert!(pseudo_outcome_t(1, 0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn pseudo_outcome_u_indicator_cases() {
        let u = pseudo_outcome_u(0, f64::NAN, 1.25, 0.4).unwrap();
        assert_eq!(u, 1.25);
        let u = pseudo_outcome_u(1, 1.25, 1.25, 0.4).unwrap();
        assert!((u - 1.25).abs() < 1e-15);
        assert!(pseudo_outcome_u(1, 0.0, 0.0, 0.0).is_err());
    }

    /// Enumerates E[U | Z] on a discrete toy law and verifies the double
    /// robustness of the transported pseudo-outcome: the conditional mean
    /// equals E[f | Z, S=1] when either nuisance is correct.
    #[test]
    fn pseudo_outcome_u_double_robustness_by_enumeration() {
        // Law over (v, z): independent Bernoulli(0.4), Bernoulli(0.7);
        // P(S=1 | v, z) varies with both; f depends on (v, z).
        let pv = 0.4;
        let pz = 0.7;
        let e_s = |v: f64, z: f64| 0.2 + 0.3 * v + 0.25 * z;
        let f = |v: f64, z: f64| 1.0 + 2.0 * v - 0.5 * z + v * z;

        for z_val in [0.0, 1.0] {
            // True P(S=1 | Z) and E[f | Z, S=1] by enumeration over v.
            let mut pz_s1 = 0.0;
            let mut ef_num = 0.0;
            let mut pmass = 0.0;
            for v_val in [0.0, 1.0] {
                let pv_mass = if v_val == 1.0 { pv } else { 1.0 - pv };
                pz_s1 += pv_mass * e_s(v_val, z_val);
                ef_num += pv_mass * e_s(v_val, z_val) * f(v_val, z_val);
                pmass += pv_mass;
            }
            assert!((pmass - 1.0).abs() < 1e-12);
            let e_sz_true = pz_s1;
            let ef_true = ef_num / pz_s1;

            // Case 1: selection correct, conditional-mean guess wrong.
            let wrong_ef = ef_true + 3.21;
            let mut mean_u = 0.0;
            for v_val in [0.0, 1.0] {
                let pv_mass = if v_val == 1.0 { pv } else { 1.0 - pv };
                let ps1 = e_s(v_val, z_val);
                let u1 = pseudo_outcome_u(1, f(v_val, z_val), wrong_ef, e_sz_true).unwrap();
                let u0 = pseudo_outcome_u(0, f64::NAN, wrong_ef, e_sz_true).unwrap();
                mean_u += pv_mass * (ps1 * u1 + (1.0 - ps1) * u0);
            }
            assert!(
                (mean_u - ef_true).abs() < 1e-12,
                "selection-correct case: {mean_u} vs {ef_true}"
            );

            // Case 2: conditional mean correct, selection wrong.
            let wrong_e = (e_sz_true * 0.5).max(0.05);
            let mut mean_u = 0.0;
            for v_val in [0.0, 1.0] {
                let pv_mass = if v_val == 1.0 { pv } else { 1.0 - pv };
                let ps1 = e_s(v_val, z_val);
                let u1 = pseudo_outcome_u(1, f(v_val, z_val), ef_true, wrong_e).unwrap();
                let u0 = pseudo_outcome_u(0, f64::NAN, ef_true, wrong_e).unwrap();
                mean_u += pv_mass * (ps1 * u1 + (1.0 - ps1) * u0);
            }
            assert!(
                (mean_u - ef_true).abs() < 1e-12,
                "outcome-correct case: {mean_u} vs {ef_true}"
            );
        }
        let _ = pz;
    }

    #[test]
    fn eif_inference_arithmetic() {
        let (se, ci) = eif_inference(&[0.0; 10], 2.0).unwrap();
        assert_eq!(se, 0.0);
        assert_eq!(ci, (2.0, 2.0));

        let mut eif = Vec::new();
        for _ in 0..50 {
            eif.push(-1.0);
            eif.push(1.0);
        }
        let (se, _) = eif_inference(&eif, 0.0).unwrap();
        let expected = ((100.0 / 99.0) / 100.0f64).sqrt();
        assert!((se - expected).abs() < 1e-12);
        assert!((se - 0.1005).abs() < 1e-4);

        assert!(eif_inference(&[1.0], 0.0).is_err());
    }

    #[test]
    fn estimand_labels_round_trip() {
        for label in ["lambda", "theta", "lambda_c", "theta_alt", "source_ate"] {
            let e: Estimand = label.parse().unwrap();
            assert_eq!(e.label(), label);
        }
        assert!("gamma".parse::<Estimand>().is_err());
    }
}
