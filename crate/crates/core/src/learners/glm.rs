//! Generalized linear models fit by iteratively reweighted least squares.
//! Gaussian/identity collapses to a single weighted least-squares solve;
//! binomial/identity is a linear-probability fit whose predictions are
//! clipped into (0, 1).

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

use super::{Family, FittedModel, LearnerSpec, Link};

/// Cholesky solve of a symmetric positive-definite system.
/// Returns None when the factorization breaks down.
pub(crate) fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Option<Array1<f64>> {
    let p = a.nrows();
    let mut l = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    // Forward then backward substitution.
    let mut y = Array1::<f64>::zeros(p);
    for i in 0..p {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(p);
    for i in (0..p).rev() {
        let mut sum = y[i];
        for k in (i + 1)..p {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    Some(x)
}

/// Solve normal equations, falling back to an escalating ridge jitter when
/// the Gram matrix is rank deficient.
pub(crate) fn solve_normal_equations(
    xtwx: &Array2<f64>,
    xtwz: &Array1<f64>,
) -> Result<Array1<f64>> {
    if let Some(beta) = solve_spd(xtwx, xtwz) {
        return Ok(beta);
    }
    let mut jitter = 1e-8;
    let scale = xtwx.diag().iter().cloned().fold(1.0f64, f64::max);
    for _ in 0..12 {
        let mut a = xtwx.clone();
        for i in 0..a.nrows() {
            a[[i, i]] += jitter * scale.max(1.0);
        }
        if let Some(beta) = solve_spd(&a, xtwz) {
            return Ok(beta);
        }
        jitter *= 100.0;
    }
    Err(Error::Argument(
        "normal equations unsolvable even with ridge jitter".into(),
    ))
}

fn weighted_gram(
    design: &Array2<f64>,
    weights: &Array1<f64>,
    target: &Array1<f64>,
) -> (Array2<f64>, Array1<f64>) {
    let wx = design * &weights.view().insert_axis(Axis(1));
    let xtwx = design.t().dot(&wx);
    let xtwz = wx.t().dot(target);
    (xtwx, xtwz)
}

/// Fits a GLM on raw predictors `x` (expanded per the spec's basis).
/// `weights` are optional nonnegative observation weights.
pub fn fit_glm(
    spec: &LearnerSpec,
    x: ArrayView2<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
) -> Result<FittedModel> {
    let n = x.nrows();
    if n == 0 || y.is_empty() {
        return Err(Error::Argument("cannot fit a model on zero rows".into()));
    }
    if y.len() != n {
        return Err(Error::Argument(format!(
            "{} responses for {} rows",
            y.len(),
            n
        )));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::Argument("weight length mismatch".into()));
        }
        if w.iter().any(|&wi| wi < 0.0 || !wi.is_finite()) {
            return Err(Error::Argument("weights must be finite and >= 0".into()));
        }
    }
    if spec.family == Family::Binomial && y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Argument(
            "binomial responses must lie in [0, 1]".into(),
        ));
    }

    let basis = spec.basis();
    let design = basis.expand(x);
    let y_arr = Array1::from_vec(y.to_vec());
    let prior = match weights {
        Some(w) => Array1::from_vec(w.to_vec()),
        None => Array1::ones(n),
    };

    let coef = match (spec.family, spec.link) {
        // One weighted least-squares step; also the linear-probability fit.
        (Family::Gaussian, Link::Identity) | (Family::Binomial, Link::Identity) => {
            let (xtwx, xtwz) = weighted_gram(&design, &prior, &y_arr);
            solve_normal_equations(&xtwx, &xtwz)?
        }
        (Family::Binomial, Link::Logit) => irls_logit(spec, &design, &y_arr, &prior)?,
        (Family::Gaussian, Link::Logit) => {
            return Err(Error::Argument(
                "gaussian family does not support the logit link".into(),
            ))
        }
    };

    Ok(FittedModel {
        spec: spec.clone(),
        basis,
        n_inputs: x.ncols(),
        coef: coef.to_vec(),
        active: None,
    })
}

fn irls_logit(
    spec: &LearnerSpec,
    design: &Array2<f64>,
    y: &Array1<f64>,
    prior: &Array1<f64>,
) -> Result<Array1<f64>> {
    let n = design.nrows();
    let p = design.ncols();
    let weight_sum: f64 = prior.sum();
    if weight_sum <= 0.0 {
        return Err(Error::Argument("all weights are zero".into()));
    }

    let mut beta = Array1::<f64>::zeros(p);
    let mut mu = y.mapv(|yi| (yi + 0.5) / 2.0);
    let mut eta = mu.mapv(|m: f64| (m / (1.0 - m)).ln());
    let mut last_score = f64::INFINITY;

    for iter in 0..spec.max_iter {
        // Score of the weighted log-likelihood at the current iterate,
        // scaled by the total weight so `tol` is sample-size free.
        let resid = y - &mu;
        let score_vec = design.t().dot(&(&resid * prior));
        let score = score_vec.iter().fold(0.0f64, |m, v| m.max(v.abs())) / weight_sum;
        last_score = score;
        if score <= spec.tol {
            return Ok(beta);
        }

        let var = mu.mapv(|m| (m * (1.0 - m)).max(1e-10));
        let w = &var * prior;
        let z = &eta + &(&resid / &var);
        let (xtwx, xtwz) = weighted_gram(design, &w, &z);
        beta = solve_normal_equations(&xtwx, &xtwz)?;
        eta = design.dot(&beta);
        mu = eta.mapv(|e| {
            let m = 1.0 / (1.0 + (-e).exp());
            m.clamp(1e-12, 1.0 - 1e-12)
        });
        // Separated or near-saturated fits stop moving once every residual
        // is numerically zero; the score check above will catch that on the
        // next pass.
        let _ = iter;
    }

    // Final check after max_iter sweeps.
    let resid = y - &mu;
    let score_vec = design.t().dot(&(&resid * prior));
    let score = score_vec.iter().fold(0.0f64, |m, v| m.max(v.abs())) / weight_sum;
    if score <= spec.tol {
        return Ok(beta);
    }
    let _ = n;
    Err(Error::Convergence {
        iterations: spec.max_iter,
        score: score.min(last_score),
        last: beta.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{Family, LearnerKind, LearnerSpec};
    use ndarray::{array, Array2};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn intercept_only_logit_matches_closed_form() {
        let spec = LearnerSpec::new(LearnerKind::Intercept, Family::Binomial);
        let x = Array2::<f64>::zeros((8, 0));
        let y = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let fit = fit_glm(&spec, x.view(), &y, None).unwrap();
        let expected = (0.25f64 / 0.75).ln();
        assert!(
            (fit.coef[0] - expected).abs() < 1e-8,
            "got {}, want {}",
            fit.coef[0],
            expected
        );
    }

    #[test]
    fn gaussian_interpolates_exact_line() {
        let spec = LearnerSpec::new(LearnerKind::GlmMain, Family::Gaussian);
        let xs: Vec<f64> = (0..20).map(|i| i as f64 / 4.0).collect();
        let x = Array2::from_shape_vec((20, 1), xs.clone()).unwrap();
        let y: Vec<f64> = xs.iter().map(|v| 2.0 + 3.0 * v).collect();
        let fit = fit_glm(&spec, x.view(), &y, None).unwrap();
        assert!((fit.coef[0] - 2.0).abs() < 1e-10);
        assert!((fit.coef[1] - 3.0).abs() < 1e-10);
    }

    /// Independent oracle: dense Gaussian elimination on the normal equations.
    fn normal_equation_solution(x: &Array2<f64>, y: &[f64]) -> Vec<f64> {
        let n = x.nrows();
        let p = x.ncols() + 1;
        let mut a = vec![vec![0.0f64; p + 1]; p];
        let design: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row = vec![1.0];
                row.extend(x.row(i).iter());
                row
            })
            .collect();
        for r in 0..p {
            for c in 0..p {
                a[r][c] = (0..n).map(|i| design[i][r] * design[i][c]).sum();
            }
            a[r][p] = (0..n).map(|i| design[i][r] * y[i]).sum();
        }
        // Gaussian elimination with partial pivoting.
        for col in 0..p {
            let pivot = (col..p)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            for row in 0..p {
                if row != col {
                    let factor = a[row][col] / a[col][col];
                    for c in col..=p {
                        a[row][c] -= factor * a[col][c];
                    }
                }
            }
        }
        (0..p).map(|r| a[r][p] / a[r][r]).collect()
    }

    #[test]
    fn gaussian_matches_normal_equation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = Array2::from_shape_fn((50, 3), |_| rng.gen::<f64>() * 4.0 - 2.0);
        let y: Vec<f64> = (0..50)
            .map(|i| {
                1.5 - 0.7 * x[[i, 0]] + 0.2 * x[[i, 1]] + 2.0 * x[[i, 2]] + rng.gen::<f64>() - 0.5
            })
            .collect();
        let spec = LearnerSpec::new(LearnerKind::GlmMain, Family::Gaussian);
        let fit = fit_glm(&spec, x.view(), &y, None).unwrap();
        let oracle = normal_equation_solution(&x, &y);
        for (a, b) in fit.coef.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-8, "coef {a} vs oracle {b}");
        }
    }

    #[test]
    fn logit_score_is_small_at_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Array2::from_shape_fn((400, 2), |_| rng.gen::<f64>() * 2.0 - 1.0);
        let y: Vec<f64> = (0..400)
            .map(|i| {
                let p = 1.0 / (1.0 + (-(0.3 + x[[i, 0]] - 0.8 * x[[i, 1]])).exp());
                f64::from(rng.gen::<f64>() < p)
            })
            .collect();
        let spec = LearnerSpec::new(LearnerKind::GlmMain, Family::Binomial);
        let fit = fit_glm(&spec, x.view(), &y, None).unwrap();
        // Independent score check at the returned coefficients.
        let design = spec.basis().expand(x.view());
        let beta = Array1::from_vec(fit.coef.clone());
        let eta = design.dot(&beta);
        let mu = eta.mapv(|e| 1.0 / (1.0 + (-e).exp()));
        let resid = Array1::from_vec(y.clone()) - &mu;
        let score = design
            .t()
            .dot(&resid)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            / 400.0;
        assert!(score <= spec.tol * 1.01, "score {score}");
    }

    #[test]
    fn rank_deficient_design_is_handled() {
        // Duplicate column: singular normal equations, jitter must kick in.
        let x = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]];
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let spec = LearnerSpec::new(LearnerKind::GlmMain, Family::Gaussian);
        let fit = fit_glm(&spec, x.view(), &y, None).unwrap();
        let pred = fit.predict(x.view()).unwrap();
        for (p, t) in pred.iter().zip(y.iter()) {
            assert!((p - t).abs() < 1e-4);
        }
    }

    #[test]
    fn zero_rows_error() {
        let x = Array2::<f64>::zeros((0, 2));
        let spec = LearnerSpec::new(LearnerKind::GlmMain, Family::Gaussian);
        assert!(fit_glm(&spec, x.view(), &[], None).is_err());
    }
}
