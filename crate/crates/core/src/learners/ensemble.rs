//! Discrete super learner: each candidate is scored by cross-validated
//! loss, the minimizer is refit on the full data. Ties break toward the
//! earlier candidate.

use ndarray::ArrayView2;

use crate::data::make_folds;
use crate::error::{Error, Result};

use super::{fit_learner, EnsembleSpec, Family, FittedModel};

fn loss(family: Family, truth: &[f64], pred: &[f64]) -> f64 {
    match family {
        Family::Gaussian => truth
            .iter()
            .zip(pred)
            .map(|(t, p)| (t - p).powi(2))
            .sum::<f64>(),
        Family::Binomial => truth
            .iter()
            .zip(pred)
            .map(|(t, p)| {
                let p = p.clamp(1e-12, 1.0 - 1e-12);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum::<f64>(),
    }
}

/// Cross-validated candidate selection followed by a full-data refit.
pub fn fit_ensemble(spec: &EnsembleSpec, x: ArrayView2<f64>, y: &[f64]) -> Result<FittedModel> {
    spec.validate()?;
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(Error::Argument("empty data or length mismatch".into()));
    }
    if spec.candidates.len() == 1 {
        return fit_learner(&spec.candidates[0], x, y, spec.seed);
    }
    let j_sl = spec.selection_folds.min(n);
    if j_sl < 2 {
        return Err(Error::Argument(
            "ensemble selection needs at least 2 usable folds".into(),
        ));
    }
    let folds = make_folds(n, j_sl, spec.seed)?;

    let mut cv_loss: Vec<Option<f64>> = vec![Some(0.0); spec.candidates.len()];
    let mut causes: Vec<String> = vec![String::new(); spec.candidates.len()];
    for fold in 0..j_sl {
        let train = folds.training_rows(fold);
        let val = folds.fold_rows(fold);
        let xt = x.select(ndarray::Axis(0), &train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let xv = x.select(ndarray::Axis(0), &val);
        let yv: Vec<f64> = val.iter().map(|&i| y[i]).collect();
        for (c, cand) in spec.candidates.iter().enumerate() {
            if cv_loss[c].is_none() {
                continue;
            }
            match fit_learner(cand, xt.view(), &yt, spec.seed).and_then(|m| m.predict(xv.view()))
            {
                Ok(pred) => {
                    let l = loss(cand.family, &yv, &pred);
                    if l.is_finite() {
                        *cv_loss[c].as_mut().unwrap() += l;
                    } else {
                        cv_loss[c] = None;
                        causes[c] = format!("{}: non-finite validation loss", cand.label());
                    }
                }
                Err(e) => {
                    cv_loss[c] = None;
                    causes[c] = format!("{}: {e}", cand.label());
                }
            }
        }
    }

    // Rank candidates by loss, earliest first on ties, then refit the best
    // that also fits on the full data.
    let mut order: Vec<usize> = (0..spec.candidates.len())
        .filter(|&c| cv_loss[c].is_some())
        .collect();
    order.sort_by(|&a, &b| {
        cv_loss[a]
            .unwrap()
            .partial_cmp(&cv_loss[b].unwrap())
            .unwrap()
            .then(a.cmp(&b))
    });
    for &c in &order {
        match fit_learner(&spec.candidates[c], x, y, spec.seed) {
            Ok(model) => return Ok(model),
            Err(e) => causes[c] = format!("{}: refit: {e}", spec.candidates[c].label()),
        }
    }
    Err(Error::EnsembleExhausted {
        causes: causes.into_iter().filter(|c| !c.is_empty()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{LearnerKind, LearnerSpec};
    use ndarray::Array2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn main_effects_beat_intercept_on_linear_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((100, 1), |_| rng.gen::<f64>());
        let y: Vec<f64> = (0..100).map(|i| 2.0 + 3.0 * x[[i, 0]]).collect();
        let spec = EnsembleSpec::new(
            vec![
                LearnerSpec::new(LearnerKind::Intercept, Family::Gaussian),
                LearnerSpec::new(LearnerKind::GlmMain, Family::Gaussian),
            ],
            5,
            42,
        );
        let model = fit_ensemble(&spec, x.view(), &y).unwrap();
        assert_eq!(model.spec.kind, LearnerKind::GlmMain);
    }

    #[test]
    fn single_candidate_is_identical_to_direct_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((50, 2), |_| rng.gen::<f64>());
        let y: Vec<f64> = (0..50).map(|i| x[[i, 0]] - x[[i, 1]] + rng.gen::<f64>()).collect();
        let cand = LearnerSpec::new(LearnerKind::GlmMain, Family::Gaussian);
        let spec = EnsembleSpec::new(vec![cand.clone()], 5, 7);
        let via_ensemble = fit_ensemble(&spec, x.view(), &y).unwrap();
        let direct = fit_learner(&cand, x.view(), &y, 7).unwrap();
        assert_eq!(via_ensemble.coef, direct.coef);
    }

    #[test]
    fn duplicated_candidates_tie_break_to_earliest() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((80, 1), |_| rng.gen::<f64>());
        let y: Vec<f64> = (0..80).map(|i| 1.0 + x[[i, 0]] + 0.1 * rng.gen::<f64>()).collect();
        let main = LearnerSpec::new(LearnerKind::GlmMain, Family::Gaussian);
        let spec_dup = EnsembleSpec::new(
            vec![
                LearnerSpec::new(LearnerKind::Intercept, Family::Gaussian),
                main.clone(),
                main.clone(),
            ],
            5,
            11,
        );
        let spec_plain = EnsembleSpec::new(
            vec![
                LearnerSpec::new(LearnerKind::Intercept, Family::Gaussian),
                main,
            ],
            5,
            11,
        );
        let a = fit_ensemble(&spec_dup, x.view(), &y).unwrap();
        let b = fit_ensemble(&spec_plain, x.view(), &y).unwrap();
        assert_eq!(a.coef, b.coef);
    }
}
