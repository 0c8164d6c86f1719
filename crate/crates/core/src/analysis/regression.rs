//! Weighted least squares through a Householder QR, and IRLS for the
//! binomial-logit and gaussian-identity families on top of it.

use nalgebra::{DMatrix, DVector};

use super::AnalysisError;

/// Column `j` counts as collinear when its residual after projecting on the
/// earlier columns is this small relative to its own norm.
const RANK_TOL: f64 = 1e-9;
pub const IRLS_TOL: f64 = 1e-8;
pub const IRLS_MAX_ITER: usize = 100;
/// Linear predictors beyond this are treated as fitted probabilities of 0 or 1.
const SEPARATION_ETA: f64 = 30.0;

#[derive(Debug, Clone)]
pub struct WlsFit {
    pub beta: Vec<f64>,
    /// `(X'WX)^-1`, not yet scaled by the residual variance.
    pub xtwx_inv: DMatrix<f64>,
    pub fitted: Vec<f64>,
    pub rss: f64,
}

/// Minimizes `sum w_i (y_i - x_i b)^2`. `names` label the columns of `x` for
/// the singularity diagnostic.
pub fn wls(x: &DMatrix<f64>, y: &[f64], w: &[f64], names: &[String]) -> Result<WlsFit, AnalysisError> {
    let (n, p) = x.shape();
    assert_eq!(y.len(), n);
    assert_eq!(w.len(), n);
    if let Some(i) = w.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(AnalysisError::InvalidArgument(format!("row {i} has non-positive weight {}", w[i])));
    }
    if n < p {
        return Err(AnalysisError::InvalidArgument(format!("{n} rows for {p} coefficients")));
    }
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let mut a = x.clone();
    for i in 0..n {
        for j in 0..p {
            a[(i, j)] *= sw[i];
        }
    }
    let b = DVector::from_iterator(n, y.iter().zip(&sw).map(|(y, s)| y * s));
    let qr = a.clone().qr();
    let r = qr.r();
    for j in 0..p {
        let norm = a.column(j).norm();
        if norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * norm {
            return Err(AnalysisError::Singular(collinear_columns(&r, &a, j, names)));
        }
    }
    let qtb = qr.q().transpose() * &b;
    let beta = r.solve_upper_triangular(&qtb.rows(0, p).into_owned()).ok_or_else(|| AnalysisError::Singular(names.to_vec()))?;
    let r_inv = r.solve_upper_triangular(&DMatrix::identity(p, p)).ok_or_else(|| AnalysisError::Singular(names.to_vec()))?;
    let xtwx_inv = &r_inv * r_inv.transpose();
    let fitted: Vec<f64> = (x * &beta).iter().copied().collect();
    let rss = fitted.iter().zip(y).zip(w).map(|((f, y), w)| w * (y - f).powi(2)).sum();
    Ok(WlsFit { beta: beta.iter().copied().collect(), xtwx_inv, fitted, rss })
}

/// Column `j` plus the earlier columns it is a combination of.
fn collinear_columns(r: &DMatrix<f64>, a: &DMatrix<f64>, j: usize, names: &[String]) -> Vec<String> {
    let name = |k: usize| names.get(k).cloned().unwrap_or_else(|| format!("column {k}"));
    if j == 0 {
        return vec![name(0)];
    }
    let head = r.view((0, 0), (j, j)).into_owned();
    let rhs = r.view((0, j), (j, 1)).into_owned();
    let mut out = Vec::new();
    if let Some(c) = head.solve_upper_triangular(&rhs) {
        let nj = a.column(j).norm().max(f64::MIN_POSITIVE);
        for k in 0..j {
            if (c[k] * a.column(k).norm() / nj).abs() > 1e-8 {
                out.push(name(k));
            }
        }
    }
    out.push(name(j));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Identity link, constant variance.
    Gaussian,
    /// Logit link; `y` is a proportion and the prior weight its trial count.
    Binomial,
}

#[derive(Debug, Clone)]
pub struct GlmFit {
    pub beta: Vec<f64>,
    /// Unscaled `(X'WX)^-1` at convergence.
    pub xtwx_inv: DMatrix<f64>,
    /// Pearson chi-square over residual degrees of freedom.
    pub dispersion: f64,
    pub deviance: f64,
    pub iterations: usize,
    pub mu: Vec<f64>,
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Iteratively reweighted least squares; stops when no coefficient moves by
/// `IRLS_TOL` or more, fails after `IRLS_MAX_ITER` iterations.
pub fn irls(x: &DMatrix<f64>, y: &[f64], prior: &[f64], family: Family, names: &[String]) -> Result<GlmFit, AnalysisError> {
    let (n, p) = x.shape();
    if n <= p {
        return Err(AnalysisError::InvalidArgument(format!("{n} rows for {p} coefficients")));
    }
    if family == Family::Binomial {
        if let Some(v) = y.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(AnalysisError::InvalidArgument(format!("binomial outcome {v} outside [0, 1]")));
        }
        if y.iter().all(|&v| v == 0.0) || y.iter().all(|&v| v == 1.0) {
            return Err(AnalysisError::Separation(format!("outcome is {} in every row; the logit is unbounded", y[0])));
        }
    }
    let mut eta: Vec<f64> = match family {
        Family::Gaussian => y.to_vec(),
        // Start from the shrunken observed proportions.
        Family::Binomial => y.iter().zip(prior).map(|(y, m)| {
            let mu = (m * y + 0.5) / (m + 1.0);
            (mu / (1.0 - mu)).ln()
        }).collect(),
    };
    let mut beta: Option<Vec<f64>> = None;
    for iter in 1..=IRLS_MAX_ITER {
        let (z, w): (Vec<f64>, Vec<f64>) = match family {
            Family::Gaussian => (y.to_vec(), prior.to_vec()),
            Family::Binomial => eta.iter().zip(y).zip(prior).map(|((&e, &y), &m)| {
                let mu = logistic(e);
                let v = mu * (1.0 - mu);
                (e + (y - mu) / v, m * v)
            }).unzip(),
        };
        let fit = wls(x, &z, &w, names)?;
        let delta = beta.as_ref().map(|b| b.iter().zip(&fit.beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        eta = fit.fitted.clone();
        if family == Family::Binomial {
            if let Some(i) = eta.iter().position(|e| e.abs() > SEPARATION_ETA) {
                return Err(AnalysisError::Separation(format!(
                    "linear predictor reached {:.1} at row {i} after {iter} iterations; fitted probabilities are degenerate",
                    eta[i]
                )));
            }
        }
        beta = Some(fit.beta.clone());
        if delta.is_some_and(|d| d < IRLS_TOL) {
            return Ok(finish(fit, y, prior, family, iter, n, p));
        }
    }
    Err(AnalysisError::Separation(format!("IRLS did not converge within {IRLS_MAX_ITER} iterations (max |change| stayed at or above {IRLS_TOL})")))
}

fn finish(fit: WlsFit, y: &[f64], prior: &[f64], family: Family, iterations: usize, n: usize, p: usize) -> GlmFit {
    let mu: Vec<f64> = match family {
        Family::Gaussian => fit.fitted.clone(),
        Family::Binomial => fit.fitted.iter().map(|&e| logistic(e)).collect(),
    };
    let (pearson, deviance) = match family {
        Family::Gaussian => {
            let rss: f64 = mu.iter().zip(y).zip(prior).map(|((m, y), w)| w * (y - m).powi(2)).sum();
            (rss, rss)
        }
        Family::Binomial => {
            let mut pearson = 0.0;
            let mut dev = 0.0;
            for ((&m, &y), &w) in mu.iter().zip(y).zip(prior) {
                pearson += w * (y - m).powi(2) / (m * (1.0 - m));
                let term = |a: f64, b: f64| if a > 0.0 { a * (a / b).ln() } else { 0.0 };
                dev += 2.0 * w * (term(y, m) + term(1.0 - y, 1.0 - m));
            }
            (pearson, dev)
        }
    };
    GlmFit { beta: fit.beta, xtwx_inv: fit.xtwx_inv, dispersion: pearson / (n - p) as f64, deviance, iterations, mu }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, Uniform};

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    fn design(cols: &[Vec<f64>]) -> DMatrix<f64> {
        let n = cols[0].len();
        DMatrix::from_fn(n, cols.len() + 1, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] })
    }

    #[test]
    fn exact_line_is_recovered() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.37).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let f = wls(&design(&[x]), &y, &[1.0; 20], &names(2)).unwrap();
        assert!((f.beta[0] - 1.0).abs() < 1e-9 && (f.beta[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_and_constant_columns_are_named() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let other: Vec<f64> = (0..10).map(|i| ((i * 7) % 5) as f64).collect();
        let names = vec!["(intercept)".to_string(), "x".into(), "noise".into(), "x_again".into()];
        let err = wls(&design(&[x.clone(), other.clone(), x.iter().map(|v| 3.0 * v).collect()]), &x, &[1.0; 10], &names).unwrap_err();
        match err {
            AnalysisError::Singular(cols) => assert_eq!(cols, vec!["x".to_string(), "x_again".into()]),
            e => panic!("{e}"),
        }
        let err = wls(&design(&[vec![4.0; 10]]), &x, &[1.0; 10], &names[..2]).unwrap_err();
        assert!(matches!(err, AnalysisError::Singular(ref c) if c == &vec!["(intercept)".to_string(), "x".into()]));
    }

    #[test]
    fn unit_weights_match_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = Uniform::new(-2.0, 2.0).unwrap();
        let a: Vec<f64> = (0..50).map(|_| u.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..50).map(|_| u.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..50).map(|i| 0.5 + a[i] - 2.0 * b[i] + u.sample(&mut rng)).collect();
        let x = design(&[a, b]);
        let f = wls(&x, &y, &[1.0; 50], &names(3)).unwrap();
        // Normal equations solved by Gauss-Jordan on the 3x3 system.
        let xt = x.transpose();
        let m = &xt * &x;
        let v = &xt * DVector::from_vec(y);
        let mut aug = [[0.0; 4]; 3];
        for i in 0..3 {
            for j in 0..3 {
                aug[i][j] = m[(i, j)];
            }
            aug[i][3] = v[i];
        }
        for c in 0..3 {
            let piv = aug[c][c];
            for j in 0..4 {
                aug[c][j] /= piv;
            }
            for r in 0..3 {
                if r != c {
                    let f = aug[r][c];
                    for j in 0..4 {
                        aug[r][j] -= f * aug[c][j];
                    }
                }
            }
        }
        for i in 0..3 {
            assert!((f.beta[i] - aug[i][3]).abs() < 1e-8);
        }
    }

    #[test]
    fn weights_act_like_replication() {
        let x = vec![0.0, 1.0, 2.0, 3.0];
        let y = vec![1.0, 2.5, 2.9, 4.4];
        let f = wls(&design(&[x.clone()]), &y, &[1.0, 2.0, 1.0, 3.0], &names(2)).unwrap();
        let xr = vec![0.0, 1.0, 1.0, 2.0, 3.0, 3.0, 3.0];
        let yr = vec![1.0, 2.5, 2.5, 2.9, 4.4, 4.4, 4.4];
        let g = wls(&design(&[xr]), &yr, &[1.0; 7], &names(2)).unwrap();
        for i in 0..2 {
            assert!((f.beta[i] - g.beta[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_irls_equals_wls() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let nrm = Normal::new(0.0, 1.0).unwrap();
        let a: Vec<f64> = (0..40).map(|_| nrm.sample(&mut rng)).collect();
        let y: Vec<f64> = a.iter().map(|v| 3.0 - v + nrm.sample(&mut rng)).collect();
        let w: Vec<f64> = (0..40).map(|i| 1.0 + (i % 5) as f64).collect();
        let x = design(&[a]);
        let l = wls(&x, &y, &w, &names(2)).unwrap();
        let g = irls(&x, &y, &w, Family::Gaussian, &names(2)).unwrap();
        for i in 0..2 {
            assert!((l.beta[i] - g.beta[i]).abs() < 1e-8);
        }
        assert!((g.dispersion - l.rss / 38.0).abs() < 1e-8);
    }

    #[test]
    fn logistic_recovers_known_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let u = Uniform::new(-1.5, 1.5).unwrap();
        let x: Vec<f64> = (0..300).map(|_| u.sample(&mut rng)).collect();
        let trials = 40.0;
        let y: Vec<f64> = x
            .iter()
            .map(|v| {
                let p = logistic(-0.3 + 1.2 * v);
                let k = (0..trials as usize).filter(|_| rand::Rng::random::<f64>(&mut rng) < p).count();
                k as f64 / trials
            })
            .collect();
        let f = irls(&design(&[x]), &y, &[trials; 300], Family::Binomial, &names(2)).unwrap();
        assert!((f.beta[0] + 0.3).abs() < 0.1 && (f.beta[1] - 1.2).abs() < 0.1, "{:?}", f.beta);
        assert!((f.dispersion - 1.0).abs() < 0.25);
    }

    #[test]
    fn separation_is_reported() {
        let x = vec![-2.0, -1.0, 1.0, 2.0];
        assert!(matches!(irls(&design(&[x.clone()]), &[0.0; 4], &[10.0; 4], Family::Binomial, &names(2)), Err(AnalysisError::Separation(_))));
        assert!(matches!(irls(&design(&[x]), &[0.0, 0.0, 1.0, 1.0], &[10.0; 4], Family::Binomial, &names(2)), Err(AnalysisError::Separation(_))));
    }
}
