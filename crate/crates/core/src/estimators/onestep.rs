//! The one-step estimators with known (or unrestricted) modifier subsets:
//! full-covariate `lambda`, known-subset `theta`, the target-incomplete
//! variant `theta_alt`, and the non-transported source ATE.


use crate::data::{Dataset, SubsetSpec};
use crate::error::Result;

use super::pipeline::{
    clip_filled, covariate_matrix, fit_stage, mean_where, record_choice, require_finite,
    stage_seed, Ctx, FoldPlan, OutcomeStage, Role, StageModel,
};
use super::{
    eif_inference, pseudo_outcome_t, pseudo_outcome_u, Diagnostics, Estimand, Estimate,
    EstimatorConfig,
};

/// Treatment and outcome models for one fold, plus the doubly robust
/// pseudo-outcome evaluated in-sample on the fold's source training rows.
pub(super) struct CommonFit {
    pub e_a_model: StageModel,
    pub outcome: OutcomeStage,
    pub t_train: Vec<f64>,
}

pub(super) fn fit_common(
    ctx: &Ctx,
    plan: &FoldPlan,
    fold: usize,
    cols: &[usize],
) -> Result<CommonFit> {
    let ds = ctx.ds;
    let cfg = ctx.cfg;
    let (lo, hi) = cfg.clip;
    let x_tr = covariate_matrix(ds, cols, &plan.train_src);
    let a_tr: Vec<f64> = plan.train_src.iter().map(|&i| f64::from(ds.a[i])).collect();
    let e_a_model = fit_stage(
        &cfg.nuisances.treatment,
        x_tr.view(),
        &a_tr,
        stage_seed(cfg.seed, fold, Role::Treatment),
    )?;
    let outcome = OutcomeStage::fit(
        ds,
        &cfg.nuisances.outcome,
        &plan.train_src,
        stage_seed(cfg.seed, fold, Role::Outcome),
    )?;

    let e_a_in = e_a_model.predict(&plan.train_src, x_tr.view())?;
    let (m1_in, m0_in) = outcome.predict_arms(ds, &plan.train_src)?;
    let mut t_train = Vec::with_capacity(plan.train_src.len());
    for (k, &i) in plan.train_src.iter().enumerate() {
        let ea = e_a_in[k].clamp(lo, hi);
        t_train.push(pseudo_outcome_t(ds.a[i], ds.y[i], m1_in[k], m0_in[k], ea)?);
    }
    Ok(CommonFit {
        e_a_model,
        outcome,
        t_train,
    })
}

/// Assembles point estimate, correction, influence function, and interval
/// from per-row EIF contributions that are linear in the estimand with
/// slope -1{s=0}/p_hat (all four transported estimators have this shape).
pub(super) fn one_step<F>(
    ds: &Dataset,
    plug_in: f64,
    eif_at: F,
    estimand: Estimand,
    diagnostics: Diagnostics,
) -> Result<Estimate>
where
    F: Fn(usize, f64) -> f64,
{
    let n = ds.n;
    let correction = (0..n).map(|i| eif_at(i, plug_in)).sum::<f64>() / n as f64;
    let point = plug_in + correction;
    let eif: Vec<f64> = (0..n).map(|i| eif_at(i, point)).collect();
    let (se, ci95) = eif_inference(&eif, point)?;
    Ok(Estimate {
        estimand,
        point,
        se,
        ci95,
        eif,
        diagnostics,
        selected_v: None,
        selected_z: None,
    })
}

fn residual(ds: &Dataset, i: usize, f_hat: &[f64], g_hat: &[f64]) -> f64 {
    ds.y[i] - f64::from(ds.a[i]) * f_hat[i] - g_hat[i]
}

fn inverse_weighted_sign(ds: &Dataset, i: usize, e_a: &[f64]) -> f64 {
    if ds.a[i] == 1 {
        1.0 / e_a[i]
    } else {
        -1.0 / (1.0 - e_a[i])
    }
}

fn note_heavy_clipping(diag: &mut Diagnostics, role: &str, count: usize, total: usize) {
    if 2 * count > total {
        diag.notes.push(format!(
            "clipping saturated {count}/{total} {role} predictions; weights are unreliable"
        ));
    }
}

/// One-step estimator of the transported ATE treating every covariate as
/// a potential effect modifier with a shifted distribution.
pub fn estimate_lambda(ds: &Dataset, cfg: &EstimatorConfig) -> Result<Estimate> {
    let ctx = Ctx::new(ds, cfg)?;
    let n = ds.n;
    let all_cols: Vec<usize> = (0..ds.n_covariates()).collect();
    require_finite(ds, &all_cols, 0..n, "lambda")?;
    let mut diag = ctx.diagnostics();

    let mut e_a = vec![f64::NAN; n];
    let mut g_hat = vec![f64::NAN; n];
    let mut f_hat = vec![f64::NAN; n];
    let mut e_s = vec![f64::NAN; n];

    for (fold, plan) in ctx.plans.iter().enumerate() {
        let common = fit_common(&ctx, plan, fold, &all_cols)?;
        record_choice(&mut diag, Role::Treatment, common.e_a_model.choice_label());
        record_choice(&mut diag, Role::Outcome, common.outcome.choice_label());

        let x_src = covariate_matrix(ds, &all_cols, &plan.train_src);
        let cate = fit_stage(
            &cfg.nuisances.cate,
            x_src.view(),
            &common.t_train,
            stage_seed(cfg.seed, fold, Role::Cate),
        )?;
        record_choice(&mut diag, Role::Cate, cate.choice_label());

        let x_all_tr = covariate_matrix(ds, &all_cols, &plan.train);
        let s_tr: Vec<f64> = plan.train.iter().map(|&i| f64::from(ds.s[i])).collect();
        let sel = fit_stage(
            &cfg.nuisances.selection,
            x_all_tr.view(),
            &s_tr,
            stage_seed(cfg.seed, fold, Role::Selection),
        )?;
        record_choice(&mut diag, Role::Selection, sel.choice_label());

        let x_val = covariate_matrix(ds, &all_cols, &plan.val);
        let ea_v = common.e_a_model.predict(&plan.val, x_val.view())?;
        let (_, m0_v) = common.outcome.predict_arms(ds, &plan.val)?;
        let f_v = cate.predict(&plan.val, x_val.view())?;
        let es_v = sel.predict(&plan.val, x_val.view())?;
        for (k, &i) in plan.val.iter().enumerate() {
            e_a[i] = ea_v[k];
            g_hat[i] = m0_v[k];
            f_hat[i] = f_v[k];
            e_s[i] = es_v[k];
        }
    }

    let (lo, hi) = cfg.clip;
    let c_ea = clip_filled(&mut e_a, lo, hi);
    let c_es = clip_filled(&mut e_s, lo, hi);
    diag.clip_counts.insert("treatment".into(), c_ea);
    diag.clip_counts.insert("selection".into(), c_es);
    note_heavy_clipping(&mut diag, "selection", c_es, n);

    let plug_in = mean_where(&f_hat, &ds.s, 0);
    let inv_p = 1.0 / ctx.p_hat;
    let eif_at = |i: usize, lambda: f64| -> f64 {
        let d = if ds.s[i] == 1 {
            let ratio = (1.0 - e_s[i]) / e_s[i];
            inverse_weighted_sign(ds, i, &e_a) * ratio * residual(ds, i, &f_hat, &g_hat)
        } else {
            f_hat[i] - lambda
        };
        d * inv_p
    };
    one_step(ds, plug_in, eif_at, Estimand::Lambda, diag)
}

/// One-step estimator of the transported ATE when the effect modifiers V
/// and the shifted subset Z within them are known.
pub fn estimate_theta(ds: &Dataset, subset: &SubsetSpec, cfg: &EstimatorConfig) -> Result<Estimate> {
    subset.validate(ds.n_covariates())?;
    let ctx = Ctx::new(ds, cfg)?;
    let n = ds.n;
    let all_cols: Vec<usize> = (0..ds.n_covariates()).collect();
    // Theta needs V (and hence Z) measured in both populations.
    require_finite(ds, &all_cols, 0..n, "theta")?;
    let mut diag = ctx.diagnostics();

    let mut e_a = vec![f64::NAN; n];
    let mut g_hat = vec![f64::NAN; n];
    let mut f_hat = vec![f64::NAN; n];
    let mut ef_z = vec![f64::NAN; n];
    let mut e_sz = vec![f64::NAN; n];

    for (fold, plan) in ctx.plans.iter().enumerate() {
        let common = fit_common(&ctx, plan, fold, &all_cols)?;
        record_choice(&mut diag, Role::Treatment, common.e_a_model.choice_label());
        record_choice(&mut diag, Role::Outcome, common.outcome.choice_label());

        let xv_src = covariate_matrix(ds, &subset.v_idx, &plan.train_src);
        let cate = fit_stage(
            &cfg.nuisances.cate,
            xv_src.view(),
            &common.t_train,
            stage_seed(cfg.seed, fold, Role::Cate),
        )?;
        record_choice(&mut diag, Role::Cate, cate.choice_label());

        // Pooled regression of f(V) on Z over all training rows.
        let xv_tr = covariate_matrix(ds, &subset.v_idx, &plan.train);
        let f_tr = cate.predict(&plan.train, xv_tr.view())?;
        let xz_tr = covariate_matrix(ds, &subset.z_idx, &plan.train);
        let cond = fit_stage(
            &cfg.nuisances.conditional,
            xz_tr.view(),
            &f_tr,
            stage_seed(cfg.seed, fold, Role::Conditional),
        )?;
        record_choice(&mut diag, Role::Conditional, cond.choice_label());

        let s_tr: Vec<f64> = plan.train.iter().map(|&i| f64::from(ds.s[i])).collect();
        let sel = fit_stage(
            &cfg.nuisances.selection,
            xz_tr.view(),
            &s_tr,
            stage_seed(cfg.seed, fold, Role::Selection),
        )?;
        record_choice(&mut diag, Role::Selection, sel.choice_label());

        let x_val = covariate_matrix(ds, &all_cols, &plan.val);
        let xv_val = covariate_matrix(ds, &subset.v_idx, &plan.val);
        let xz_val = covariate_matrix(ds, &subset.z_idx, &plan.val);
        let ea_v = common.e_a_model.predict(&plan.val, x_val.view())?;
        let (_, m0_v) = common.outcome.predict_arms(ds, &plan.val)?;
        let f_v = cate.predict(&plan.val, xv_val.view())?;
        let ef_v = cond.predict(&plan.val, xz_val.view())?;
        let es_v = sel.predict(&plan.val, xz_val.view())?;
        for (k, &i) in plan.val.iter().enumerate() {
            e_a[i] = ea_v[k];
            g_hat[i] = m0_v[k];
            f_hat[i] = f_v[k];
            ef_z[i] = ef_v[k];
            e_sz[i] = es_v[k];
        }
    }

    let (lo, hi) = cfg.clip;
    let c_ea = clip_filled(&mut e_a, lo, hi);
    let c_es = clip_filled(&mut e_sz, lo, hi);
    diag.clip_counts.insert("treatment".into(), c_ea);
    diag.clip_counts.insert("selection".into(), c_es);
    note_heavy_clipping(&mut diag, "selection", c_es, n);

    let plug_in = mean_where(&ef_z, &ds.s, 0);
    let inv_p = 1.0 / ctx.p_hat;
    let eif_at = |i: usize, theta: f64| -> f64 {
        let mut d = (1.0 - e_sz[i]) * (f_hat[i] - ef_z[i]);
        if ds.s[i] == 1 {
            let ratio = (1.0 - e_sz[i]) / e_sz[i];
            d += inverse_weighted_sign(ds, i, &e_a) * ratio * residual(ds, i, &f_hat, &g_hat);
        } else {
            d += ef_z[i] - theta;
        }
        d * inv_p
    };
    one_step(ds, plug_in, eif_at, Estimand::Theta, diag)
}

/// One-step estimator of the transported ATE when only the transport
/// subset Z is measured in the target population. Never reads V \ Z (or
/// any other covariate) on target rows.
pub fn estimate_theta_alt(
    ds: &Dataset,
    subset: &SubsetSpec,
    cfg: &EstimatorConfig,
) -> Result<Estimate> {
    subset.validate(ds.n_covariates())?;
    let ctx = Ctx::new(ds, cfg)?;
    let n = ds.n;
    let all_cols: Vec<usize> = (0..ds.n_covariates()).collect();
    require_finite(ds, &subset.z_idx, 0..n, "theta_alt")?;
    require_finite(
        ds,
        &all_cols,
        (0..n).filter(|&i| ds.s[i] == 1),
        "theta_alt (source rows)",
    )?;
    let mut diag = ctx.diagnostics();

    let mut e_a = vec![f64::NAN; n];
    let mut g_hat = vec![f64::NAN; n];
    let mut f_hat = vec![f64::NAN; n];
    let mut ef_z_s1 = vec![f64::NAN; n];
    let mut e_sz = vec![f64::NAN; n];
    let mut eu_z = vec![f64::NAN; n];

    let (lo, hi) = cfg.clip;
    for (fold, plan) in ctx.plans.iter().enumerate() {
        let common = fit_common(&ctx, plan, fold, &all_cols)?;
        record_choice(&mut diag, Role::Treatment, common.e_a_model.choice_label());
        record_choice(&mut diag, Role::Outcome, common.outcome.choice_label());

        let xv_src = covariate_matrix(ds, &subset.v_idx, &plan.train_src);
        let cate = fit_stage(
            &cfg.nuisances.cate,
            xv_src.view(),
            &common.t_train,
            stage_seed(cfg.seed, fold, Role::Cate),
        )?;
        record_choice(&mut diag, Role::Cate, cate.choice_label());

        // Source-only regression of f(V) on Z.
        let f_tr_src = cate.predict(&plan.train_src, xv_src.view())?;
        let xz_src = covariate_matrix(ds, &subset.z_idx, &plan.train_src);
        let cond = fit_stage(
            &cfg.nuisances.conditional,
            xz_src.view(),
            &f_tr_src,
            stage_seed(cfg.seed, fold, Role::Conditional),
        )?;
        record_choice(&mut diag, Role::Conditional, cond.choice_label());

        let xz_tr = covariate_matrix(ds, &subset.z_idx, &plan.train);
        let s_tr: Vec<f64> = plan.train.iter().map(|&i| f64::from(ds.s[i])).collect();
        let sel = fit_stage(
            &cfg.nuisances.selection,
            xz_tr.view(),
            &s_tr,
            stage_seed(cfg.seed, fold, Role::Selection),
        )?;
        record_choice(&mut diag, Role::Selection, sel.choice_label());

        // Transported pseudo-outcome on the training rows; the indicator
        // keeps target rows from touching f(V).
        let ef_tr = cond.predict(&plan.train, xz_tr.view())?;
        let es_tr = sel.predict(&plan.train, xz_tr.view())?;
        let mut f_tr_lookup = vec![f64::NAN; n];
        for (k, &i) in plan.train_src.iter().enumerate() {
            f_tr_lookup[i] = f_tr_src[k];
        }
        let mut u_tr = Vec::with_capacity(plan.train.len());
        for (k, &i) in plan.train.iter().enumerate() {
            let es = es_tr[k].clamp(lo, hi);
            u_tr.push(pseudo_outcome_u(ds.s[i], f_tr_lookup[i], ef_tr[k], es)?);
        }
        let u_cond = fit_stage(
            &cfg.nuisances.u_conditional,
            xz_tr.view(),
            &u_tr,
            stage_seed(cfg.seed, fold, Role::UConditional),
        )?;
        record_choice(&mut diag, Role::UConditional, u_cond.choice_label());

        // Validation predictions; covariate-based stages only on source rows.
        let val_src: Vec<usize> = plan.val.iter().copied().filter(|&i| ds.s[i] == 1).collect();
        let x_val_src = covariate_matrix(ds, &all_cols, &val_src);
        let ea_v = common.e_a_model.predict(&val_src, x_val_src.view())?;
        let (_, m0_v) = common.outcome.predict_arms(ds, &val_src)?;
        let xv_val_src = covariate_matrix(ds, &subset.v_idx, &val_src);
        let f_v = cate.predict(&val_src, xv_val_src.view())?;
        for (k, &i) in val_src.iter().enumerate() {
            e_a[i] = ea_v[k];
            g_hat[i] = m0_v[k];
            f_hat[i] = f_v[k];
        }
        let xz_val = covariate_matrix(ds, &subset.z_idx, &plan.val);
        let ef_v = cond.predict(&plan.val, xz_val.view())?;
        let es_v = sel.predict(&plan.val, xz_val.view())?;
        let eu_v = u_cond.predict(&plan.val, xz_val.view())?;
        for (k, &i) in plan.val.iter().enumerate() {
            ef_z_s1[i] = ef_v[k];
            e_sz[i] = es_v[k];
            eu_z[i] = eu_v[k];
        }
    }

    let c_ea = clip_filled(&mut e_a, lo, hi);
    let c_es = clip_filled(&mut e_sz, lo, hi);
    diag.clip_counts.insert("treatment".into(), c_ea);
    diag.clip_counts.insert("selection".into(), c_es);
    note_heavy_clipping(&mut diag, "selection", c_es, n);

    let plug_in = mean_where(&eu_z, &ds.s, 0);
    let inv_p = 1.0 / ctx.p_hat;
    let eif_at = |i: usize, theta: f64| -> f64 {
        let d = if ds.s[i] == 1 {
            let ratio = (1.0 - e_sz[i]) / e_sz[i];
            inverse_weighted_sign(ds, i, &e_a) * ratio * residual(ds, i, &f_hat, &g_hat)
                + ratio * (f_hat[i] - ef_z_s1[i])
        } else {
            ef_z_s1[i] - theta
        };
        d * inv_p
    };
    one_step(ds, plug_in, eif_at, Estimand::ThetaAlt, diag)
}

/// Augmented IPW one-step ATE within the source sample: the mean of the
/// doubly robust pseudo-outcome over source rows.
pub fn estimate_source_ate(ds: &Dataset, cfg: &EstimatorConfig) -> Result<Estimate> {
    let ctx = Ctx::new(ds, cfg)?;
    let n = ds.n;
    let all_cols: Vec<usize> = (0..ds.n_covariates()).collect();
    require_finite(
        ds,
        &all_cols,
        (0..n).filter(|&i| ds.s[i] == 1),
        "source_ate",
    )?;
    let mut diag = ctx.diagnostics();

    let mut e_a = vec![f64::NAN; n];
    let mut m1 = vec![f64::NAN; n];
    let mut m0 = vec![f64::NAN; n];

    for (fold, plan) in ctx.plans.iter().enumerate() {
        let common = fit_common(&ctx, plan, fold, &all_cols)?;
        record_choice(&mut diag, Role::Treatment, common.e_a_model.choice_label());
        record_choice(&mut diag, Role::Outcome, common.outcome.choice_label());

        let val_src: Vec<usize> = plan.val.iter().copied().filter(|&i| ds.s[i] == 1).collect();
        let x_val = covariate_matrix(ds, &all_cols, &val_src);
        let ea_v = common.e_a_model.predict(&val_src, x_val.view())?;
        let (m1_v, m0_v) = common.outcome.predict_arms(ds, &val_src)?;
        for (k, &i) in val_src.iter().enumerate() {
            e_a[i] = ea_v[k];
            m1[i] = m1_v[k];
            m0[i] = m0_v[k];
        }
    }

    let (lo, hi) = cfg.clip;
    let c_ea = clip_filled(&mut e_a, lo, hi);
    diag.clip_counts.insert("treatment".into(), c_ea);

    let mut t = vec![0.0; n];
    for i in 0..n {
        if ds.s[i] == 1 {
            t[i] = pseudo_outcome_t(ds.a[i], ds.y[i], m1[i], m0[i], e_a[i])?;
        }
    }
    let point = mean_where(&t, &ds.s, 1);
    let q_hat = 1.0 - ctx.p_hat;
    let eif: Vec<f64> = (0..n)
        .map(|i| {
            if ds.s[i] == 1 {
                (t[i] - point) / q_hat
            } else {
                0.0
            }
        })
        .collect();
    let (se, ci95) = eif_inference(&eif, point)?;
    Ok(Estimate {
        estimand: Estimand::SourceAte,
        point,
        se,
        ci95,
        eif,
        diagnostics: diag,
        selected_v: None,
        selected_z: None,
    })
}
