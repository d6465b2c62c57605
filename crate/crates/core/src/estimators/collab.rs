//! Collaborative one-step estimator for unknown effect-modifier subsets.
//! Instead of conditioning the selection propensity on raw covariates, it
//! conditions on the estimated treatment-effect function itself, so only
//! covariates that actually drive the effect (and actually shift between
//! populations) enter the transport step. The interpretable mode fits the
//! effect and selection regressions with the adaptive lasso and reports
//! the retained covariate sets.

use crate::data::Dataset;
use crate::error::Result;
use crate::learners::{fit_adaptive_lasso, Family, LearnerKind, LearnerSpec};

use super::pipeline::{
    clip_filled, covariate_matrix, fit_stage, mean_where, quadratic_basis, record_choice,
    require_finite, stage_seed, Ctx, Role,
};
use super::onestep::{fit_common, one_step};
use super::{pseudo_outcome_t, Estimand, Estimate, EstimatorConfig, NuisanceModel};

/// Treats the validation-fold effect estimates as constant when their
/// spread is at floating-point noise level.
fn is_constant(values: &[f64]) -> bool {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    let scale = 1.0 + (sum / values.len() as f64).abs();
    (max - min) <= 1e-10 * scale
}

/// Full-sample adaptive-lasso selection pass: returns (selected V indices,
/// selected Z indices).
fn select_subsets(
    ds: &Dataset,
    cfg: &EstimatorConfig,
    lasso_spec: &LearnerSpec,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let all_cols: Vec<usize> = (0..ds.n_covariates()).collect();
    let src = ds.source_rows();
    let (lo, hi) = cfg.clip;

    // Full-sample treatment and outcome fits feed the pseudo-outcome.
    let x_src = covariate_matrix(ds, &all_cols, &src);
    let a_src: Vec<f64> = src.iter().map(|&i| f64::from(ds.a[i])).collect();
    let e_a_model = fit_stage(
        &cfg.nuisances.treatment,
        x_src.view(),
        &a_src,
        stage_seed(cfg.seed, usize::MAX, Role::Treatment),
    )?;
    let outcome = super::pipeline::OutcomeStage::fit(
        ds,
        &cfg.nuisances.outcome,
        &src,
        stage_seed(cfg.seed, usize::MAX, Role::Outcome),
    )?;
    let e_a = e_a_model.predict(&src, x_src.view())?;
    let (m1, m0) = outcome.predict_arms(ds, &src)?;
    let mut t = Vec::with_capacity(src.len());
    for (k, &i) in src.iter().enumerate() {
        t.push(pseudo_outcome_t(
            ds.a[i],
            ds.y[i],
            m1[k],
            m0[k],
            e_a[k].clamp(lo, hi),
        )?);
    }

    let fit_v = fit_adaptive_lasso(
        lasso_spec,
        x_src.view(),
        &t,
        stage_seed(cfg.seed, usize::MAX, Role::Cate),
    )?;
    let selected_v = fit_v.active.clone().unwrap_or_default();
    if selected_v.is_empty() {
        return Ok((vec![], vec![]));
    }

    let all_rows: Vec<usize> = (0..ds.n).collect();
    let xv_all = covariate_matrix(ds, &selected_v, &all_rows);
    let s_all: Vec<f64> = ds.s.iter().map(|&si| f64::from(si)).collect();
    let fit_z = fit_adaptive_lasso(
        lasso_spec,
        xv_all.view(),
        &s_all,
        stage_seed(cfg.seed, usize::MAX, Role::Selection),
    )?;
    let selected_z: Vec<usize> = fit_z
        .active
        .clone()
        .unwrap_or_default()
        .into_iter()
        .map(|local| selected_v[local])
        .collect();
    Ok((selected_v, selected_z))
}

/// Collaborative one-step estimator of the transported ATE. Does not
/// require the effect-modifier subsets; relies on consistent estimation
/// of the effect function itself.
pub fn estimate_lambda_collab(ds: &Dataset, cfg: &EstimatorConfig) -> Result<Estimate> {
    let ctx = Ctx::new(ds, cfg)?;
    let n = ds.n;
    let all_cols: Vec<usize> = (0..ds.n_covariates()).collect();
    require_finite(ds, &all_cols, 0..n, "lambda_c")?;
    let mut diag = ctx.diagnostics();

    // Interpretable mode selects the subsets once on the full sample so
    // the reported sets are unambiguous; the cross-fitted nuisances then
    // use the selected columns.
    let lasso_spec = LearnerSpec::adaptive_lasso(Family::Gaussian);
    let mut selection_result: Option<(Vec<usize>, Vec<usize>)> = None;
    if cfg.interpretable {
        let (v, z) = select_subsets(ds, cfg, &lasso_spec)?;
        diag.notes.push(format!(
            "interpretable selection: v={:?} z={:?}",
            v.iter().map(|&j| ds.column_names[j].clone()).collect::<Vec<_>>(),
            z.iter().map(|&j| ds.column_names[j].clone()).collect::<Vec<_>>(),
        ));
        selection_result = Some((v, z));
    }
    let cate_cols: &[usize] = match &selection_result {
        Some((v, _)) => v,
        None => &all_cols,
    };

    let mut e_a = vec![f64::NAN; n];
    let mut g_hat = vec![f64::NAN; n];
    let mut f_hat = vec![f64::NAN; n];
    let mut e_s = vec![f64::NAN; n];
    let mut h_s = vec![f64::NAN; n];
    let mut k_hat = vec![f64::NAN; n];

    let (lo, hi) = cfg.clip;
    let intercept_fallback =
        |family: Family| NuisanceModel::Learner(LearnerSpec::new(LearnerKind::Intercept, family));

    for (fold, plan) in ctx.plans.iter().enumerate() {
        let common = fit_common(&ctx, plan, fold, &all_cols)?;
        record_choice(&mut diag, Role::Treatment, common.e_a_model.choice_label());
        record_choice(&mut diag, Role::Outcome, common.outcome.choice_label());

        // Effect-function regression on W (or on the selected columns).
        let x_cate_src = covariate_matrix(ds, cate_cols, &plan.train_src);
        let cate_model: NuisanceModel = if cfg.interpretable {
            if cate_cols.is_empty() {
                intercept_fallback(Family::Gaussian)
            } else {
                NuisanceModel::Learner(lasso_spec.clone())
            }
        } else {
            cfg.nuisances.cate.clone()
        };
        let cate = fit_stage(
            &cate_model,
            x_cate_src.view(),
            &common.t_train,
            stage_seed(cfg.seed, fold, Role::Cate),
        )?;
        record_choice(&mut diag, Role::Cate, cate.choice_label());

        let x_cate_tr = covariate_matrix(ds, cate_cols, &plan.train);
        let f_tr = cate.predict(&plan.train, x_cate_tr.view())?;
        let s_tr: Vec<f64> = plan.train.iter().map(|&i| f64::from(ds.s[i])).collect();

        // A constant effect function leaves nothing for the collaborative
        // propensity to condition on; fall back to marginal fits.
        let constant_f = is_constant(&f_tr);
        if constant_f {
            diag.notes.push(format!(
                "fold {fold}: effect function is constant; h_s and k fall back to marginal fits"
            ));
        }

        let hs_model = if constant_f {
            intercept_fallback(Family::Binomial)
        } else {
            cfg.nuisances.h_s.clone()
        };
        let basis_f_tr = quadratic_basis(&f_tr);
        let hs = fit_stage(
            &hs_model,
            basis_f_tr.view(),
            &s_tr,
            stage_seed(cfg.seed, fold, Role::HS),
        )?;
        record_choice(&mut diag, Role::HS, hs.choice_label());

        // Selection propensity on W; interpretable mode regresses S on the
        // selected modifier columns with the adaptive lasso.
        let (sel_cols, sel_model): (&[usize], NuisanceModel) = if cfg.interpretable {
            if cate_cols.is_empty() {
                (&[][..], intercept_fallback(Family::Binomial))
            } else {
                (
                    cate_cols,
                    NuisanceModel::Learner(lasso_spec.clone().with_identity_link()),
                )
            }
        } else {
            (&all_cols[..], cfg.nuisances.selection.clone())
        };
        let x_sel_tr = covariate_matrix(ds, sel_cols, &plan.train);
        let sel = fit_stage(
            &sel_model,
            x_sel_tr.view(),
            &s_tr,
            stage_seed(cfg.seed, fold, Role::Selection),
        )?;
        record_choice(&mut diag, Role::Selection, sel.choice_label());

        // Effect on selection propensity: k(w) = E{f(W) | e_S(W)}.
        let mut es_tr = sel.predict(&plan.train, x_sel_tr.view())?;
        clip_filled(&mut es_tr, lo, hi);
        let k_model = if constant_f {
            intercept_fallback(Family::Gaussian)
        } else {
            cfg.nuisances.k.clone()
        };
        let basis_es_tr = quadratic_basis(&es_tr);
        let k_stage = fit_stage(
            &k_model,
            basis_es_tr.view(),
            &f_tr,
            stage_seed(cfg.seed, fold, Role::K),
        )?;
        record_choice(&mut diag, Role::K, k_stage.choice_label());

        // Validation predictions.
        let x_val = covariate_matrix(ds, &all_cols, &plan.val);
        let ea_v = common.e_a_model.predict(&plan.val, x_val.view())?;
        let (_, m0_v) = common.outcome.predict_arms(ds, &plan.val)?;
        let x_cate_val = covariate_matrix(ds, cate_cols, &plan.val);
        let f_v = cate.predict(&plan.val, x_cate_val.view())?;
        let basis_f_val = quadratic_basis(&f_v);
        let hs_v = hs.predict(&plan.val, basis_f_val.view())?;
        let x_sel_val = covariate_matrix(ds, sel_cols, &plan.val);
        let es_v_raw = sel.predict(&plan.val, x_sel_val.view())?;
        let mut es_v_clipped = es_v_raw.clone();
        clip_filled(&mut es_v_clipped, lo, hi);
        let basis_es_val = quadratic_basis(&es_v_clipped);
        let k_v = k_stage.predict(&plan.val, basis_es_val.view())?;
        for (k, &i) in plan.val.iter().enumerate() {
            e_a[i] = ea_v[k];
            g_hat[i] = m0_v[k];
            f_hat[i] = f_v[k];
            e_s[i] = es_v_raw[k];
            h_s[i] = hs_v[k];
            k_hat[i] = k_v[k];
        }
    }

    let c_ea = clip_filled(&mut e_a, lo, hi);
    let c_es = clip_filled(&mut e_s, lo, hi);
    let c_hs = clip_filled(&mut h_s, lo, hi);
    diag.clip_counts.insert("treatment".into(), c_ea);
    diag.clip_counts.insert("selection".into(), c_es);
    diag.clip_counts.insert("h_s".into(), c_hs);
    if 2 * c_hs > n {
        diag.notes.push(format!(
            "clipping saturated {c_hs}/{n} collaborative propensity predictions"
        ));
    }

    let plug_in = mean_where(&k_hat, &ds.s, 0);
    let inv_p = 1.0 / ctx.p_hat;
    let eif_at = |i: usize, lambda: f64| -> f64 {
        let mut d = (1.0 - e_s[i]) * (f_hat[i] - k_hat[i]);
        if ds.s[i] == 1 {
            let sign = if ds.a[i] == 1 {
                1.0 / e_a[i]
            } else {
                -1.0 / (1.0 - e_a[i])
            };
            let ratio = (1.0 - h_s[i]) / h_s[i];
            d += sign * ratio * (ds.y[i] - f64::from(ds.a[i]) * f_hat[i] - g_hat[i]);
        } else {
            d += k_hat[i] - lambda;
        }
        d * inv_p
    };
    let mut estimate = one_step(ds, plug_in, eif_at, Estimand::LambdaCollab, diag)?;
    if let Some((v, z)) = selection_result {
        estimate.selected_v = Some(v.iter().map(|&j| ds.column_names[j].clone()).collect());
        estimate.selected_z = Some(z.iter().map(|&j| ds.column_names[j].clone()).collect());
    }
    Ok(estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::NuisanceConfig;
    use ndarray::Array2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Constant effect c with zero residuals: the estimate must be exactly c.
    #[test]
    fn constant_effect_fallback_is_exact() {
        let n = 100;
        let c = 2.5;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = Vec::new();
        let mut a = Vec::new();
        let mut y = Vec::new();
        let mut y_obs = Vec::new();
        let mut w = Vec::new();
        for i in 0..n {
            let si = u8::from(i % 2 == 0);
            let ai = u8::from(rng.gen::<f64>() < 0.5);
            s.push(si);
            a.push(ai);
            let wi = rng.gen::<f64>();
            if si == 1 {
                y.push(c * f64::from(ai) + 0.7 * wi);
                y_obs.push(true);
            } else {
                y.push(f64::NAN);
                y_obs.push(false);
            }
            w.push(wi);
        }
        let ds = Dataset::new(
            s,
            a,
            y,
            y_obs,
            Array2::from_shape_vec((n, 1), w).unwrap(),
            vec!["w".into()],
        )
        .unwrap();

        let glm = |family| {
            NuisanceModel::Learner(LearnerSpec::new(crate::learners::LearnerKind::GlmMain, family))
        };
        let cfg = EstimatorConfig {
            folds: 1,
            nuisances: NuisanceConfig {
                treatment: NuisanceModel::FixedProbs(vec![0.5; n]),
                outcome: glm(Family::Gaussian),
                // Force a constant effect estimate to exercise the fallback.
                cate: NuisanceModel::Learner(LearnerSpec::new(
                    crate::learners::LearnerKind::Intercept,
                    Family::Gaussian,
                )),
                selection: glm(Family::Binomial),
                ..NuisanceConfig::default()
            },
            ..Default::default()
        };
        let est = estimate_lambda_collab(&ds, &cfg).unwrap();
        assert!(
            (est.point - c).abs() < 1e-6,
            "expected {c}, got {}",
            est.point
        );
        assert!(est
            .diagnostics
            .notes
            .iter()
            .any(|note| note.contains("constant")));
    }

    #[test]
    fn interpretable_mode_reports_selected_sets() {
        // Effect modified by v and z; only z shifts between populations.
        let n = 1500;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut s = Vec::new();
        let mut a = Vec::new();
        let mut y = Vec::new();
        let mut y_obs = Vec::new();
        let mut w = Vec::new();
        for _ in 0..n {
            let v = f64::from(rng.gen::<f64>() < 0.4);
            let z = f64::from(rng.gen::<f64>() < 0.5);
            let noise = f64::from(rng.gen::<f64>() < 0.5);
            let si = u8::from(rng.gen::<f64>() < 0.7 - 0.4 * z);
            let ai = u8::from(rng.gen::<f64>() < 0.5);
            s.push(si);
            a.push(ai);
            if si == 1 {
                let mean = 0.5 + 0.4 * noise + f64::from(ai) * (0.5 + 1.5 * v + 2.0 * z);
                y.push(mean + 0.05 * (rng.gen::<f64>() - 0.5));
                y_obs.push(true);
            } else {
                y.push(f64::NAN);
                y_obs.push(false);
            }
            w.push(v);
            w.push(z);
            w.push(noise);
        }
        let ds = Dataset::new(
            s,
            a,
            y,
            y_obs,
            Array2::from_shape_vec((n, 3), w).unwrap(),
            vec!["v".into(), "z".into(), "u".into()],
        )
        .unwrap();
        let cfg = EstimatorConfig {
            folds: 2,
            interpretable: true,
            ..Default::default()
        };
        let est = estimate_lambda_collab(&ds, &cfg).unwrap();
        let v_sel = est.selected_v.unwrap();
        let z_sel = est.selected_z.unwrap();
        assert!(v_sel.contains(&"v".to_string()) && v_sel.contains(&"z".to_string()));
        assert_eq!(z_sel, vec!["z".to_string()]);
    }
}
