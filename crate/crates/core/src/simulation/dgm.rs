//! The built-in synthetic data-generating mechanisms: binary covariates,
//! a linear selection model, randomized treatment, and a normal outcome
//! model with additive effect modification. All truths (transported
//! effect, efficiency bounds, influence-function means) are computed by
//! exact enumeration over the binary covariate support.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SubsetSpec};
use crate::error::{Error, Result};

/// One binary covariate and its Bernoulli marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    pub prob: f64,
}

/// Parameters of a synthetic mechanism: independent Bernoulli covariates,
/// S from a linear-probability selection model, A ~ Bernoulli(treat), and
/// Y normal with mean `g(W) + A * f(W)` and standard deviation linear in
/// the covariates (zero allowed: degenerate outcomes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgmSpec {
    pub id: Option<u8>,
    pub covariates: Vec<Covariate>,
    pub selection_intercept: f64,
    pub selection_coefs: Vec<f64>,
    pub treatment_prob: f64,
    pub outcome_intercept: f64,
    pub outcome_main: Vec<f64>,
    /// Coefficient on A: the constant part of the treatment effect.
    pub treatment_effect: f64,
    /// Coefficients on A x covariate: the effect-modification part.
    pub effect_interactions: Vec<f64>,
    pub noise_sd_intercept: f64,
    pub noise_sd_coefs: Vec<f64>,
    /// True effect-modifier columns (for estimators that take them).
    pub v_idx: Vec<usize>,
    /// True transport-subset columns.
    pub z_idx: Vec<usize>,
}

impl DgmSpec {
    /// The four built-in mechanisms (ids 1-4).
    ///
    /// Mechanisms 3 and 4 carry unit outcome noise: their published
    /// operating characteristics (estimator variances, relative
    /// efficiencies) are only attainable with a non-degenerate outcome,
    /// and a zero-noise variant is expressible via the public fields.
    pub fn builtin(id: u8) -> Result<Self> {
        let spec = match id {
            1 => Self {
                id: Some(1),
                covariates: vec![
                    Covariate { name: "W".into(), prob: 0.5 },
                    Covariate { name: "V".into(), prob: 0.33 },
                    Covariate { name: "Z".into(), prob: 0.66 },
                ],
                selection_intercept: 0.4,
                selection_coefs: vec![0.5, 0.0, -0.3],
                treatment_prob: 0.5,
                outcome_intercept: 0.0,
                outcome_main: vec![1.0, 0.0, 0.0],
                treatment_effect: 1.0,
                effect_interactions: vec![0.0, 1.0, 2.5],
                noise_sd_intercept: 0.1,
                noise_sd_coefs: vec![0.8, 0.0, 0.0],
                v_idx: vec![1, 2],
                z_idx: vec![2],
            },
            2 => Self {
                id: Some(2),
                covariates: vec![
                    Covariate { name: "W".into(), prob: 0.5 },
                    Covariate { name: "V".into(), prob: 0.33 },
                    Covariate { name: "Z".into(), prob: 0.66 },
                ],
                selection_intercept: 0.5,
                selection_coefs: vec![-0.4, 0.0, 0.3],
                treatment_prob: 0.5,
                outcome_intercept: 0.0,
                outcome_main: vec![1.0, 0.0, 0.0],
                treatment_effect: 1.0,
                effect_interactions: vec![0.0, 1.0, 2.5],
                noise_sd_intercept: 0.1,
                noise_sd_coefs: vec![0.5, 0.0, 0.0],
                v_idx: vec![1, 2],
                z_idx: vec![2],
            },
            3 => Self {
                id: Some(3),
                covariates: vec![
                    Covariate { name: "W".into(), prob: 0.25 },
                    Covariate { name: "Z".into(), prob: 0.5 },
                ],
                selection_intercept: 0.8,
                selection_coefs: vec![-0.18, -0.6],
                treatment_prob: 0.5,
                outcome_intercept: 1.2,
                outcome_main: vec![0.5, 0.5],
                treatment_effect: 0.25,
                effect_interactions: vec![0.0, 1.0],
                noise_sd_intercept: 1.0,
                noise_sd_coefs: vec![0.0, 0.0],
                v_idx: vec![1],
                z_idx: vec![1],
            },
            4 => Self {
                id: Some(4),
                covariates: vec![
                    Covariate { name: "W".into(), prob: 0.5 },
                    Covariate { name: "V1".into(), prob: 0.75 },
                    Covariate { name: "V2".into(), prob: 0.33 },
                    Covariate { name: "Z".into(), prob: 0.25 },
                ],
                selection_intercept: 0.8,
                selection_coefs: vec![-0.25, 0.0, 0.0, -0.5],
                treatment_prob: 0.5,
                outcome_intercept: 1.2,
                outcome_main: vec![0.5, 0.0, 0.0, 0.5],
                treatment_effect: 0.25,
                effect_interactions: vec![0.0, 0.4, -0.75, 1.0],
                noise_sd_intercept: 1.0,
                noise_sd_coefs: vec![0.0, 0.0, 0.0, 0.0],
                v_idx: vec![1, 2, 3],
                z_idx: vec![3],
            },
            other => {
                return Err(Error::Argument(format!(
                    "unknown mechanism id {other}; valid ids are 1, 2, 3, 4"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name.clone()).collect()
    }

    pub fn subset(&self) -> SubsetSpec {
        SubsetSpec::new(self.v_idx.clone(), self.z_idx.clone(), None)
    }

    pub fn selection_prob(&self, cell: &[f64]) -> f64 {
        self.selection_intercept
            + self
                .selection_coefs
                .iter()
                .zip(cell)
                .map(|(c, x)| c * x)
                .sum::<f64>()
    }

    /// Conditional average treatment effect at a covariate cell.
    pub fn cate(&self, cell: &[f64]) -> f64 {
        self.treatment_effect
            + self
                .effect_interactions
                .iter()
                .zip(cell)
                .map(|(c, x)| c * x)
                .sum::<f64>()
    }

    /// Untreated conditional mean at a covariate cell.
    pub fn baseline(&self, cell: &[f64]) -> f64 {
        self.outcome_intercept
            + self
                .outcome_main
                .iter()
                .zip(cell)
                .map(|(c, x)| c * x)
                .sum::<f64>()
    }

    pub fn noise_sd(&self, cell: &[f64]) -> f64 {
        self.noise_sd_intercept
            + self
                .noise_sd_coefs
                .iter()
                .zip(cell)
                .map(|(c, x)| c * x)
                .sum::<f64>()
    }

    /// All 2^p covariate cells with their probabilities.
    pub fn enumerate_cells(&self) -> Vec<(Vec<f64>, f64)> {
        let p = self.n_covariates();
        let mut cells = Vec::with_capacity(1 << p);
        for mask in 0..(1u32 << p) {
            let mut cell = Vec::with_capacity(p);
            let mut prob = 1.0;
            for (j, cov) in self.covariates.iter().enumerate() {
                if mask >> j & 1 == 1 {
                    cell.push(1.0);
                    prob *= cov.prob;
                } else {
                    cell.push(0.0);
                    prob *= 1.0 - cov.prob;
                }
            }
            cells.push((cell, prob));
        }
        cells
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.n_covariates();
        if self.selection_coefs.len() != p
            || self.outcome_main.len() != p
            || self.effect_interactions.len() != p
            || self.noise_sd_coefs.len() != p
        {
            return Err(Error::Argument(
                "coefficient vectors must match the covariate count".into(),
            ));
        }
        for cov in &self.covariates {
            if !(0.0..=1.0).contains(&cov.prob) {
                return Err(Error::Argument(format!(
                    "covariate probability {} outside [0, 1]",
                    cov.prob
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.treatment_prob) {
            return Err(Error::Argument("treatment probability outside [0, 1]".into()));
        }
        for (cell, _) in self.enumerate_cells() {
            let e_s = self.selection_prob(&cell);
            if !(0.0..=1.0).contains(&e_s) {
                return Err(Error::Argument(format!(
                    "selection probability {e_s} outside [0, 1] at cell {cell:?}"
                )));
            }
            if self.noise_sd(&cell) < 0.0 {
                return Err(Error::Argument(format!(
                    "negative noise sd at cell {cell:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Draws a sample: covariates, then S, then A, then the outcome noise,
/// row by row. Outcomes are generated for every row and masked on target
/// rows, so estimators can never read target-population outcomes.
pub fn sample_dgm(spec: &DgmSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n < 1 {
        return Err(Error::Argument("sample size must be >= 1".into()));
    }
    spec.validate()?;
    let p = spec.n_covariates();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut s = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut y_observed = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n * p);
    let mut cell = vec![0.0; p];
    for _ in 0..n {
        for (j, cov) in spec.covariates.iter().enumerate() {
            cell[j] = f64::from(rng.gen::<f64>() < cov.prob);
        }
        let si = u8::from(rng.gen::<f64>() < spec.selection_prob(&cell));
        let ai = u8::from(rng.gen::<f64>() < spec.treatment_prob);
        let eps: f64 = normal.sample(&mut rng);
        let mean = spec.baseline(&cell) + f64::from(ai) * spec.cate(&cell);
        let yi = mean + spec.noise_sd(&cell) * eps;
        s.push(si);
        a.push(ai);
        if si == 1 {
            y.push(yi);
            y_observed.push(true);
        } else {
            y.push(f64::NAN);
            y_observed.push(false);
        }
        w.extend_from_slice(&cell);
    }
    let w = Array2::from_shape_vec((n, p), w).map_err(|e| Error::Validation(e.to_string()))?;
    Dataset::new(s, a, y, y_observed, w, spec.column_names())
}

/// Exact transported effect by enumeration: the target-weighted mean of
/// the conditional treatment effect.
pub fn true_value(spec: &DgmSpec) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (cell, prob) in spec.enumerate_cells() {
        let target_mass = prob * (1.0 - spec.selection_prob(&cell));
        num += target_mass * spec.cate(&cell);
        den += target_mass;
    }
    num / den
}

/// Exact source-population average effect by enumeration.
pub fn true_source_value(spec: &DgmSpec) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (cell, prob) in spec.enumerate_cells() {
        let source_mass = prob * spec.selection_prob(&cell);
        num += source_mass * spec.cate(&cell);
        den += source_mass;
    }
    num / den
}

/// Per-Z-stratum quantities shared by the bound and EIF enumerations.
struct StratumTables {
    /// P(S = 1 | Z = z-pattern of the cell), indexed per cell.
    e_s_given_z: Vec<f64>,
    /// Pooled E{f(V) | Z}, per cell.
    ef_given_z: Vec<f64>,
    /// Source-conditional E{f(V) | Z, S = 1}, per cell.
    ef_given_z_s1: Vec<f64>,
}

fn stratum_tables(spec: &DgmSpec, cells: &[(Vec<f64>, f64)]) -> StratumTables {
    let key = |cell: &[f64]| -> Vec<u64> {
        spec.z_idx.iter().map(|&j| cell[j].to_bits()).collect()
    };
    let mut keys: Vec<Vec<u64>> = Vec::new();
    let mut mass = Vec::new();
    let mut mass_s1 = Vec::new();
    let mut f_mass = Vec::new();
    let mut f_mass_s1 = Vec::new();
    let mut cell_stratum = Vec::with_capacity(cells.len());
    for (cell, prob) in cells {
        let k = key(cell);
        let idx = match keys.iter().position(|existing| *existing == k) {
            Some(idx) => idx,
            None => {
                keys.push(k);
                mass.push(0.0);
                mass_s1.push(0.0);
                f_mass.push(0.0);
                f_mass_s1.push(0.0);
                keys.len() - 1
            }
        };
        let e_s = spec.selection_prob(cell);
        let f = spec.cate(cell);
        mass[idx] += prob;
        mass_s1[idx] += prob * e_s;
        f_mass[idx] += prob * f;
        f_mass_s1[idx] += prob * e_s * f;
        cell_stratum.push(idx);
    }
    let e_s_given_z = cell_stratum
        .iter()
        .map(|&idx| mass_s1[idx] / mass[idx])
        .collect();
    let ef_given_z = cell_stratum
        .iter()
        .map(|&idx| f_mass[idx] / mass[idx])
        .collect();
    let ef_given_z_s1 = cell_stratum
        .iter()
        .map(|&idx| f_mass_s1[idx] / mass_s1[idx])
        .collect();
    StratumTables {
        e_s_given_z,
        ef_given_z,
        ef_given_z_s1,
    }
}

/// Analytic efficiency bounds for the full-covariate and known-subset
/// estimators, evaluated exactly by enumeration. Each bound is reported
/// as its three displayed terms plus the total.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsResult {
    pub bound_lambda: f64,
    pub bound_theta: f64,
    /// (variance-amplification, conditional-effect spread, transport) terms.
    pub terms_lambda: [f64; 3],
    pub terms_theta: [f64; 3],
    /// P(S = 0).
    pub q: f64,
    /// tau^2 per covariate cell: (cell values, tau^2).
    pub tau2_table: Vec<(Vec<f64>, f64)>,
}

pub fn efficiency_bounds(spec: &DgmSpec) -> Result<BoundsResult> {
    spec.validate()?;
    let cells = spec.enumerate_cells();
    let tables = stratum_tables(spec, &cells);
    let theta = true_value(spec);
    let pa = spec.treatment_prob;
    if !(0.0 < pa && pa < 1.0) {
        return Err(Error::Argument(
            "bounds need a non-degenerate treatment probability".into(),
        ));
    }

    let q: f64 = cells
        .iter()
        .map(|(cell, prob)| prob * (1.0 - spec.selection_prob(cell)))
        .sum();

    let mut tau2_table = Vec::with_capacity(cells.len());
    let mut first_lambda = 0.0;
    let mut first_theta = 0.0;
    let mut middle_lambda = 0.0;
    let mut middle_theta = 0.0;
    let mut third = 0.0;
    for (idx, (cell, prob)) in cells.iter().enumerate() {
        let e_s = spec.selection_prob(cell);
        let sigma2 = spec.noise_sd(cell).powi(2);
        let tau2 = e_s * sigma2 * (1.0 / pa + 1.0 / (1.0 - pa));
        tau2_table.push((cell.clone(), tau2));

        if e_s > 0.0 {
            first_lambda += prob * tau2 * ((1.0 - e_s) / e_s).powi(2);
        }
        let e_sz = tables.e_s_given_z[idx];
        first_theta += prob * tau2 * ((1.0 - e_sz) / e_sz).powi(2);

        let spread = (spec.cate(cell) - tables.ef_given_z[idx]).powi(2);
        middle_lambda += prob * (1.0 - e_sz) * spread;
        middle_theta += prob * (1.0 - e_sz).powi(2) * spread;

        third += prob * (1.0 - e_s) * (tables.ef_given_z[idx] - theta).powi(2);
    }
    first_lambda /= q * q;
    first_theta /= q * q;
    third /= q * q;

    let terms_lambda = [first_lambda, middle_lambda, third];
    let terms_theta = [first_theta, middle_theta, third];
    Ok(BoundsResult {
        bound_lambda: terms_lambda.iter().sum(),
        bound_theta: terms_theta.iter().sum(),
        terms_lambda,
        terms_theta,
        q,
        tau2_table,
    })
}

/// Which influence function to enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EifKind {
    Lambda,
    Theta,
    ThetaAlt,
    LambdaCollab,
}

/// Exact E[D] at the true nuisance functions, enumerating the covariate
/// cells and integrating the outcome residual analytically to zero (its
/// conditional mean is zero at the truth, so the weighted residual terms
/// vanish term by term).
pub fn eif_mean_at_truth(spec: &DgmSpec, kind: EifKind) -> Result<f64> {
    spec.validate()?;
    let cells = spec.enumerate_cells();
    let tables = stratum_tables(spec, &cells);
    let theta = true_value(spec);
    let q: f64 = cells
        .iter()
        .map(|(cell, prob)| prob * (1.0 - spec.selection_prob(cell)))
        .sum();

    // Collaborative estimator: group cells by the value of e_S(W) to form
    // k(w) = E{f(W) | e_S(W)}.
    let k_of_cell: Vec<f64> = {
        let mut keys: Vec<u64> = Vec::new();
        let mut mass = Vec::new();
        let mut f_mass = Vec::new();
        let mut index = Vec::with_capacity(cells.len());
        for (cell, prob) in &cells {
            let key = spec.selection_prob(cell).to_bits();
            let idx = match keys.iter().position(|&k| k == key) {
                Some(idx) => idx,
                None => {
                    keys.push(key);
                    mass.push(0.0);
                    f_mass.push(0.0);
                    keys.len() - 1
                }
            };
            mass[idx] += prob;
            f_mass[idx] += prob * spec.cate(cell);
            index.push(idx);
        }
        index.iter().map(|&idx| f_mass[idx] / mass[idx]).collect()
    };

    let theta_alt: f64 = cells
        .iter()
        .enumerate()
        .map(|(idx, (cell, prob))| {
            prob * (1.0 - spec.selection_prob(cell)) * tables.ef_given_z_s1[idx]
        })
        .sum::<f64>()
        / q;

    let mut total = 0.0;
    for (idx, (cell, prob)) in cells.iter().enumerate() {
        let e_s = spec.selection_prob(cell);
        let f = spec.cate(cell);
        let contribution = match kind {
            EifKind::Lambda => (1.0 - e_s) * (f - theta),
            EifKind::Theta => {
                let e_sz = tables.e_s_given_z[idx];
                (1.0 - e_sz) * (f - tables.ef_given_z[idx])
                    + (1.0 - e_s) * (tables.ef_given_z[idx] - theta)
            }
            EifKind::ThetaAlt => {
                let e_sz = tables.e_s_given_z[idx];
                e_s * (1.0 - e_sz) / e_sz * (f - tables.ef_given_z_s1[idx])
                    + (1.0 - e_s) * (tables.ef_given_z_s1[idx] - theta_alt)
            }
            EifKind::LambdaCollab => {
                (1.0 - e_s) * (f - k_of_cell[idx]) + (1.0 - e_s) * (k_of_cell[idx] - theta)
            }
        };
        total += prob * contribution;
    }
    Ok(total / q)
}
