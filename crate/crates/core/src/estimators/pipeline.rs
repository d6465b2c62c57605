//! Shared cross-fitting plumbing: per-fold training plans, design-matrix
//! construction, stage fitting with fixed-value bypasses, and clipping
//! with diagnostics.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};

use crate::data::{make_folds, Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::learners::{FitSpec, FittedModel};
use crate::simulation::child_seed;

use super::{Diagnostics, EstimatorConfig, NuisanceModel};

/// Stable role identifiers mixed into per-stage seeds.
#[derive(Debug, Clone, Copy)]
pub(super) enum Role {
    Treatment = 1,
    Outcome = 2,
    Cate = 3,
    Selection = 4,
    Conditional = 5,
    UConditional = 6,
    HS = 7,
    K = 8,
}

impl Role {
    pub(super) fn name(self) -> &'static str {
        match self {
            Role::Treatment => "treatment",
            Role::Outcome => "outcome",
            Role::Cate => "cate",
            Role::Selection => "selection",
            Role::Conditional => "conditional",
            Role::UConditional => "u_conditional",
            Role::HS => "h_s",
            Role::K => "k",
        }
    }
}

pub(super) fn stage_seed(seed: u64, fold: usize, role: Role) -> u64 {
    child_seed(child_seed(seed, role as u64), fold as u64)
}

/// One fold's training/validation split, with the source-row subset of the
/// training rows precomputed.
pub(super) struct FoldPlan {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub train_src: Vec<usize>,
}

pub(super) struct Ctx<'a> {
    pub ds: &'a Dataset,
    pub cfg: &'a EstimatorConfig,
    pub folds: FoldAssignment,
    pub plans: Vec<FoldPlan>,
    pub p_hat: f64,
}

impl<'a> Ctx<'a> {
    pub fn new(ds: &'a Dataset, cfg: &'a EstimatorConfig) -> Result<Self> {
        cfg.validate()?;
        let folds = match &cfg.fold_assignment {
            Some(f) => {
                if f.n != ds.n {
                    return Err(Error::Argument(
                        "fold assignment length does not match the dataset".into(),
                    ));
                }
                f.clone()
            }
            None => make_folds(ds.n, cfg.folds, cfg.seed)?,
        };
        let mut plans = Vec::with_capacity(folds.j);
        for fold in 0..folds.j {
            let train = folds.training_rows(fold);
            let val = folds.fold_rows(fold);
            let train_src: Vec<usize> = train.iter().copied().filter(|&i| ds.s[i] == 1).collect();
            if train_src.is_empty() {
                return Err(Error::Fold(format!(
                    "fold {fold} has no source rows to train on"
                )));
            }
            plans.push(FoldPlan {
                train,
                val,
                train_src,
            });
        }
        let p_hat = ds.target_fraction();
        if p_hat <= 0.0 || p_hat >= 1.0 {
            return Err(Error::Validation(format!(
                "degenerate target fraction {p_hat}"
            )));
        }
        Ok(Self {
            ds,
            cfg,
            folds,
            plans,
            p_hat,
        })
    }

    pub fn diagnostics(&self) -> Diagnostics {
        let n_source = self.ds.s.iter().filter(|&&s| s == 1).count();
        Diagnostics {
            n: self.ds.n,
            n_source,
            n_target: self.ds.n - n_source,
            folds: self.folds.j,
            clip: self.cfg.clip,
            clip_counts: BTreeMap::new(),
            learner_choices: BTreeMap::new(),
            notes: Vec::new(),
        }
    }
}

/// Covariate submatrix for the given rows and columns. An empty column
/// set yields an n x 0 matrix (intercept-only designs).
pub(super) fn covariate_matrix(ds: &Dataset, cols: &[usize], rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), cols.len()));
    for (r, &i) in rows.iter().enumerate() {
        for (c, &j) in cols.iter().enumerate() {
            out[[r, c]] = ds.w[[i, j]];
        }
    }
    out
}

/// Design [a | w] for the outcome regression; `a_override` substitutes a
/// fixed treatment arm for counterfactual predictions.
pub(super) fn outcome_design(ds: &Dataset, rows: &[usize], a_override: Option<f64>) -> Array2<f64> {
    let p = ds.n_covariates();
    let mut out = Array2::zeros((rows.len(), p + 1));
    for (r, &i) in rows.iter().enumerate() {
        out[[r, 0]] = a_override.unwrap_or(f64::from(ds.a[i]));
        for j in 0..p {
            out[[r, 1 + j]] = ds.w[[i, j]];
        }
    }
    out
}

/// Quadratic basis {x, x^2} used by the collaborative estimator's
/// propensity-on-effect and effect-on-propensity regressions.
pub(super) fn quadratic_basis(values: &[f64]) -> Array2<f64> {
    let mut out = Array2::zeros((values.len(), 2));
    for (r, &v) in values.iter().enumerate() {
        out[[r, 0]] = v;
        out[[r, 1]] = v * v;
    }
    out
}

/// A fitted (or externally supplied) nuisance stage.
pub(super) enum StageModel {
    Fitted(FittedModel),
    Fixed(Vec<f64>),
}

impl StageModel {
    /// Predictions for `rows`; `x` must be the design built for exactly
    /// those rows (ignored for fixed stages, which index by row).
    pub fn predict(&self, rows: &[usize], x: ArrayView2<f64>) -> Result<Vec<f64>> {
        match self {
            StageModel::Fitted(model) => model.predict(x),
            StageModel::Fixed(values) => rows
                .iter()
                .map(|&i| {
                    values.get(i).copied().ok_or_else(|| {
                        Error::Argument("fixed nuisance vector shorter than the dataset".into())
                    })
                })
                .collect(),
        }
    }

    pub fn choice_label(&self) -> String {
        match self {
            StageModel::Fitted(model) => model.spec.label().to_string(),
            StageModel::Fixed(_) => "fixed".to_string(),
        }
    }
}

/// Fits a single-response stage, honoring fixed-value bypasses.
pub(super) fn fit_stage(
    model: &NuisanceModel,
    x_train: ArrayView2<f64>,
    y_train: &[f64],
    seed: u64,
) -> Result<StageModel> {
    match model {
        NuisanceModel::Ensemble(spec) => Ok(StageModel::Fitted(
            FitSpec::Ensemble(spec.clone()).fit(x_train, y_train, seed)?,
        )),
        NuisanceModel::Learner(spec) => Ok(StageModel::Fitted(
            FitSpec::Learner(spec.clone()).fit(x_train, y_train, seed)?,
        )),
        NuisanceModel::FixedProbs(values) | NuisanceModel::FixedValues(values) => {
            Ok(StageModel::Fixed(values.clone()))
        }
        NuisanceModel::FixedOutcome { .. } => Err(Error::Config(
            "FixedOutcome is only valid for the outcome role".into(),
        )),
    }
}

/// The outcome stage produces arm-specific predictions.
pub(super) enum OutcomeStage {
    Fitted(FittedModel),
    Fixed { m1: Vec<f64>, m0: Vec<f64> },
}

impl OutcomeStage {
    pub fn fit(ds: &Dataset, model: &NuisanceModel, train_src: &[usize], seed: u64) -> Result<Self> {
        match model {
            NuisanceModel::FixedOutcome { m1, m0 } => Ok(OutcomeStage::Fixed {
                m1: m1.clone(),
                m0: m0.clone(),
            }),
            NuisanceModel::FixedProbs(_) | NuisanceModel::FixedValues(_) => Err(Error::Config(
                "the outcome role needs FixedOutcome, not a single vector".into(),
            )),
            NuisanceModel::Ensemble(spec) => {
                let x = outcome_design(ds, train_src, None);
                let y: Vec<f64> = train_src.iter().map(|&i| ds.y[i]).collect();
                Ok(OutcomeStage::Fitted(
                    FitSpec::Ensemble(spec.clone()).fit(x.view(), &y, seed)?,
                ))
            }
            NuisanceModel::Learner(spec) => {
                let x = outcome_design(ds, train_src, None);
                let y: Vec<f64> = train_src.iter().map(|&i| ds.y[i]).collect();
                Ok(OutcomeStage::Fitted(
                    FitSpec::Learner(spec.clone()).fit(x.view(), &y, seed)?,
                ))
            }
        }
    }

    /// (m1, m0) predictions for `rows`.
    pub fn predict_arms(&self, ds: &Dataset, rows: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            OutcomeStage::Fitted(model) => {
                let m1 = model.predict(outcome_design(ds, rows, Some(1.0)).view())?;
                let m0 = model.predict(outcome_design(ds, rows, Some(0.0)).view())?;
                Ok((m1, m0))
            }
            OutcomeStage::Fixed { m1, m0 } => {
                let take = |v: &Vec<f64>| -> Result<Vec<f64>> {
                    rows.iter()
                        .map(|&i| {
                            v.get(i).copied().ok_or_else(|| {
                                Error::Argument(
                                    "fixed outcome vector shorter than the dataset".into(),
                                )
                            })
                        })
                        .collect()
                };
                Ok((take(m1)?, take(m0)?))
            }
        }
    }

    pub fn choice_label(&self) -> String {
        match self {
            OutcomeStage::Fitted(model) => model.spec.label().to_string(),
            OutcomeStage::Fixed { .. } => "fixed".to_string(),
        }
    }
}

/// Clamp probabilities in place, skipping unfilled (non-finite) slots.
/// Returns the number of entries moved.
pub(super) fn clip_filled(values: &mut [f64], lo: f64, hi: f64) -> usize {
    let mut count = 0;
    for v in values.iter_mut() {
        if v.is_finite() {
            let c = v.clamp(lo, hi);
            if c != *v {
                *v = c;
                count += 1;
            }
        }
    }
    count
}

/// Sample mean over rows selected by a predicate on s.
pub(super) fn mean_where(values: &[f64], s: &[u8], keep: u8) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (v, &si) in values.iter().zip(s) {
        if si == keep {
            sum += v;
            count += 1;
        }
    }
    sum / count as f64
}

pub(super) fn record_choice(
    diag: &mut Diagnostics,
    role: Role,
    label: String,
) {
    diag.learner_choices
        .entry(role.name().to_string())
        .or_default()
        .push(label);
}

/// Validates that named covariate columns are finite on the given rows;
/// errors name the offending columns.
pub(super) fn require_finite(
    ds: &Dataset,
    cols: &[usize],
    rows: impl Iterator<Item = usize>,
    context: &str,
) -> Result<()> {
    let mut bad: Vec<String> = Vec::new();
    let rows: Vec<usize> = rows.collect();
    for &j in cols {
        if rows.iter().any(|&i| !ds.w[[i, j]].is_finite()) {
            bad.push(ds.column_names[j].clone());
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{context}: non-finite values in columns {bad:?}"
        )))
    }
}
