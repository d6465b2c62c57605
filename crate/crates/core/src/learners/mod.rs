//! Regression learners for the nuisance functions: intercept-only and
//! main/two-way GLMs, the adaptive lasso, and a cross-validated discrete
//! ensemble over them, plus out-of-fold prediction.

mod design;
mod ensemble;
mod glm;
mod lasso;

pub use design::DesignBasis;
pub use ensemble::fit_ensemble;
pub use glm::fit_glm;
pub use lasso::{fit_adaptive_lasso, fit_adaptive_lasso_with_grid};

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::FoldAssignment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Binomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Intercept,
    GlmMain,
    GlmTwoway,
    AdaptiveLasso,
}

/// Configuration of a single regression learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub family: Family,
    pub link: Link,
    /// Adaptive-lasso weight exponent.
    pub gamma: f64,
    pub lambda_grid_size: usize,
    pub cv_folds: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl LearnerSpec {
    /// Canonical link for the family; override `link` afterwards if needed.
    pub fn new(kind: LearnerKind, family: Family) -> Self {
        let link = match family {
            Family::Gaussian => Link::Identity,
            Family::Binomial => Link::Logit,
        };
        Self {
            kind,
            family,
            link,
            gamma: 1.0,
            lambda_grid_size: 50,
            cv_folds: 5,
            max_iter: 100,
            tol: 1e-8,
        }
    }

    /// Linear-probability variant: binomial responses, identity link,
    /// predictions clipped into (0, 1) after fitting.
    pub fn with_identity_link(mut self) -> Self {
        self.link = Link::Identity;
        self
    }

    pub fn adaptive_lasso(family: Family) -> Self {
        let mut spec = Self::new(LearnerKind::AdaptiveLasso, family);
        // The lasso path is fit by least squares regardless of family.
        spec.link = Link::Identity;
        spec.max_iter = 500;
        spec
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            LearnerKind::Intercept => "intercept",
            LearnerKind::GlmMain => "glm_main",
            LearnerKind::GlmTwoway => "glm_twoway",
            LearnerKind::AdaptiveLasso => "adaptive_lasso",
        }
    }

    pub fn basis(&self) -> DesignBasis {
        match self.kind {
            LearnerKind::Intercept => DesignBasis::Intercept,
            LearnerKind::GlmMain | LearnerKind::AdaptiveLasso => DesignBasis::Main,
            LearnerKind::GlmTwoway => DesignBasis::TwoWay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tol <= 0.0 {
            return Err(Error::Argument("tol must be > 0".into()));
        }
        if self.max_iter < 1 {
            return Err(Error::Argument("max_iter must be >= 1".into()));
        }
        if self.family == Family::Gaussian && self.link == Link::Logit {
            return Err(Error::Argument("gaussian + logit is unsupported".into()));
        }
        if self.kind == LearnerKind::AdaptiveLasso && self.link == Link::Logit {
            return Err(Error::Argument(
                "adaptive lasso supports the identity link only (clipped for binomial)".into(),
            ));
        }
        Ok(())
    }
}

/// Discrete-ensemble configuration: candidates scored by `selection_folds`-
/// fold cross-validated loss (squared error for gaussian, negative log
/// likelihood for binomial).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub candidates: Vec<LearnerSpec>,
    pub selection_folds: usize,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn new(candidates: Vec<LearnerSpec>, selection_folds: usize, seed: u64) -> Self {
        Self {
            candidates,
            selection_folds,
            seed,
        }
    }

    /// The default nuisance ensemble: intercept-only, main-effects GLM,
    /// and a GLM with all two-way interactions.
    pub fn default_for(family: Family) -> Self {
        Self::new(
            vec![
                LearnerSpec::new(LearnerKind::Intercept, family),
                LearnerSpec::new(LearnerKind::GlmMain, family),
                LearnerSpec::new(LearnerKind::GlmTwoway, family),
            ],
            5,
            0,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::Argument("ensemble needs at least one candidate".into()));
        }
        if self.selection_folds < 2 {
            return Err(Error::Argument("ensemble selection_folds must be >= 2".into()));
        }
        let family = self.candidates[0].family;
        for c in &self.candidates {
            c.validate()?;
            if c.family != family {
                return Err(Error::Argument(
                    "ensemble candidates must share a family".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Either a single learner or an ensemble; the unit estimators train with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FitSpec {
    Learner(LearnerSpec),
    Ensemble(EnsembleSpec),
}

impl FitSpec {
    pub fn fit(&self, x: ArrayView2<f64>, y: &[f64], seed: u64) -> Result<FittedModel> {
        match self {
            FitSpec::Learner(spec) => fit_learner(spec, x, y, seed),
            FitSpec::Ensemble(spec) => fit_ensemble(&spec.clone().with_seed(seed), x, y),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            FitSpec::Learner(spec) => spec.family,
            FitSpec::Ensemble(spec) => spec.candidates[0].family,
        }
    }
}

/// A fitted regression: coefficients over an explicit design basis on the
/// original predictor scale. Prediction is deterministic; binomial-family
/// predictions are clipped into (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: LearnerSpec,
    pub basis: DesignBasis,
    pub n_inputs: usize,
    pub coef: Vec<f64>,
    /// Raw predictor indices with nonzero coefficients (lasso only).
    pub active: Option<Vec<usize>>,
}

impl FittedModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_inputs {
            return Err(Error::Argument(format!(
                "model expects {} predictors, got {}",
                self.n_inputs,
                x.ncols()
            )));
        }
        let design = self.basis.expand(x);
        let beta = Array1::from_vec(self.coef.clone());
        let eta = design.dot(&beta);
        let out = match (self.spec.family, self.spec.link) {
            (Family::Gaussian, _) => eta.to_vec(),
            (Family::Binomial, Link::Logit) => {
                eta.mapv(|e| 1.0 / (1.0 + (-e).exp())).to_vec()
            }
            (Family::Binomial, Link::Identity) => {
                eta.mapv(|e| e.clamp(1e-10, 1.0 - 1e-10)).to_vec()
            }
        };
        Ok(out)
    }
}

/// Dispatches a learner fit on raw predictors.
pub fn fit_learner(
    spec: &LearnerSpec,
    x: ArrayView2<f64>,
    y: &[f64],
    seed: u64,
) -> Result<FittedModel> {
    spec.validate()?;
    match spec.kind {
        LearnerKind::AdaptiveLasso => fit_adaptive_lasso(spec, x, y, seed),
        _ => fit_glm(spec, x, y, None),
    }
}

/// Elementwise clamp of probabilities into [lo, hi]; returns the clipped
/// vector and how many entries moved.
pub fn clip_probabilities(p: &[f64], lo: f64, hi: f64) -> Result<(Vec<f64>, usize)> {
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(Error::Argument(format!(
            "clip bounds must satisfy 0 < lo < hi < 1, got ({lo}, {hi})"
        )));
    }
    let mut count = 0usize;
    let clipped = p
        .iter()
        .map(|&v| {
            let c = v.clamp(lo, hi);
            if c != v {
                count += 1;
            }
            c
        })
        .collect();
    Ok((clipped, count))
}

/// Out-of-fold predictions for every row: the prediction for row i comes
/// from the model trained on the other folds intersected with
/// `row_filter`. With a single fold the model is trained once on the
/// filtered rows and predicts everywhere.
pub fn cross_fit(
    model: &FitSpec,
    x: ArrayView2<f64>,
    y: &[f64],
    row_filter: &[bool],
    folds: &FoldAssignment,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = x.nrows();
    if row_filter.len() != n || y.len() != n || folds.n != n {
        return Err(Error::Argument("cross_fit length mismatch".into()));
    }
    let mut out = vec![f64::NAN; n];
    for fold in 0..folds.j {
        let train: Vec<usize> = folds
            .training_rows(fold)
            .into_iter()
            .filter(|&i| row_filter[i])
            .collect();
        if train.is_empty() {
            return Err(Error::Fold(format!(
                "fold {fold} has no training rows after filtering"
            )));
        }
        let xt = x.select(ndarray::Axis(0), &train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let fitted = model.fit(xt.view(), &yt, seed)?;
        let val = folds.fold_rows(fold);
        let xv = x.select(ndarray::Axis(0), &val);
        let pred = fitted.predict(xv.view())?;
        for (k, &i) in val.iter().enumerate() {
            out[i] = pred[k];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_folds;
    use ndarray::Array2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clip_counts_and_is_idempotent() {
        let (c, k) = clip_probabilities(&[0.5], 0.01, 0.99).unwrap();
        assert_eq!((c, k), (vec![0.5], 0));
        let (c, k) = clip_probabilities(&[0.001, 0.9999], 0.01, 0.99).unwrap();
        assert_eq!((c, k), (vec![0.01, 0.99], 2));

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>()).collect();
        let (once, _) = clip_probabilities(&p, 0.05, 0.95).unwrap();
        let (twice, second_count) = clip_probabilities(&once, 0.05, 0.95).unwrap();
        assert_eq!(once, twice);
        assert_eq!(second_count, 0);

        assert!(clip_probabilities(&[0.5], 0.6, 0.4).is_err());
    }

    #[test]
    fn cross_fit_single_fold_is_fit_then_predict() {
        let n = 10;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let y: Vec<f64> = (0..n)
            .map(|i| if i < 5 { 0.3 } else { 999.0 })
            .collect();
        let filter: Vec<bool> = (0..n).map(|i| i < 5).collect();
        let folds = make_folds(n, 1, 0).unwrap();
        let spec = FitSpec::Learner(LearnerSpec::new(LearnerKind::Intercept, Family::Gaussian));
        let pred = cross_fit(&spec, x.view(), &y, &filter, &folds, 0).unwrap();
        for v in pred {
            assert!((v - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_fit_predictions_are_out_of_fold() {
        let n = 4;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let folds = FoldAssignment {
            n,
            j: 2,
            fold_of: vec![0, 0, 1, 1],
        };
        let spec = FitSpec::Learner(LearnerSpec::new(LearnerKind::Intercept, Family::Gaussian));
        let filter = vec![true; n];
        let y1 = vec![1.0, 2.0, 10.0, 20.0];
        let base = cross_fit(&spec, x.view(), &y1, &filter, &folds, 0).unwrap();
        // Perturb a fold-0 response: row 0's prediction (trained on fold 1)
        // must not move.
        let y2 = vec![1.0, 777.0, 10.0, 20.0];
        let perturbed = cross_fit(&spec, x.view(), &y2, &filter, &folds, 0).unwrap();
        assert_eq!(base[0].to_bits(), perturbed[0].to_bits());
        assert_ne!(base[2], perturbed[2]);
    }

    #[test]
    fn cross_fit_empty_training_intersection_errors() {
        let n = 4;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let folds = FoldAssignment {
            n,
            j: 2,
            fold_of: vec![0, 0, 1, 1],
        };
        // Filter keeps only fold-1 rows, so fold 1's training set is empty.
        let filter = vec![false, false, true, true];
        let spec = FitSpec::Learner(LearnerSpec::new(LearnerKind::Intercept, Family::Gaussian));
        let err = cross_fit(&spec, x.view(), &[0.0; 4], &filter, &folds, 0).unwrap_err();
        assert!(matches!(err, Error::Fold(_)));
    }

    #[test]
    fn fits_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Array2::from_shape_fn((120, 3), |_| rng.gen::<f64>());
        let y: Vec<f64> = (0..120)
            .map(|i| f64::from(rng.gen::<f64>() < 0.3 + 0.4 * x[[i, 0]]))
            .collect();
        let spec = EnsembleSpec::default_for(Family::Binomial).with_seed(4);
        let a = fit_ensemble(&spec, x.view(), &y).unwrap();
        let b = fit_ensemble(&spec, x.view(), &y).unwrap();
        assert_eq!(a.coef, b.coef);
        assert_eq!(a.spec.kind, b.spec.kind);
    }
}
